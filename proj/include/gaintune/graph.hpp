#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gaintune/kernels.hpp"
#include "gaintune/tensor.hpp"

namespace gt {

enum class OpKind {
  Constant,   // leaf, never differentiated
  Input,      // leaf, gradient available on request
  Param,      // leaf bound to a parameter slot
  Conv2d,     // (x, w[, b])
  TConv2d,    // (x, w[, b])
  Relu,
  ChannelScale,  // (x, gains)
  MaxPool2,      // crops odd extents by one row/column first
  Upsample2,
  ConcatCh,
  Add,
  Sub,
  Mse,        // scalar: mean squared difference
  Dot,        // scalar: full inner product
  MaskedMse,  // scalar: mean squared difference over masked elements
  LinComb,    // scalar: sum of coeff[i] * scalar child i, plus a constant
};

/// Which gradients a backward sweep must produce. Conv weight gradients are
/// the dominant cost; restricting slots makes gain-only training cheap.
struct BackwardWants {
  bool inputs = false;
  bool all_slots = false;
  std::unordered_set<int> slots;

  static BackwardWants for_slots(std::unordered_set<int> s) {
    return BackwardWants{false, false, std::move(s)};
  }
  static BackwardWants everything() { return BackwardWants{true, true, {}}; }
  bool wants_slot(int s) const { return all_slots || slots.contains(s); }
};

struct GradientSet {
  std::unordered_map<int, Tensor> by_slot;   // parameter slot id -> gradient
  std::unordered_map<int, Tensor> by_input;  // input node id -> gradient
};

/// Reverse-mode tape. Nodes are appended in topological order with forward
/// values computed eagerly; one backward sweep visits each node exactly once.
class Tape {
 public:
  int constant(Tensor v);
  int input(Tensor v);
  int param(int slot, Tensor v);

  int conv2d(int x, int w, int b, const kernels::ConvGeom& geom);  // b = -1: no bias
  int tconv2d(int x, int w, int b, int stride, int pad);
  int relu(int x);
  int channel_scale(int x, int gains);
  int maxpool2(int x);
  int upsample2(int x);
  int concat_channels(int a, int b);
  int add(int a, int b);
  int sub(int a, int b);
  int mse(int a, int b);
  int dot(int a, int b);
  int masked_mse(int pred, int target, std::vector<std::uint8_t> mask);
  int lincomb(std::vector<int> xs, std::vector<double> coeffs, double bias);

  const Tensor& value(int id) const { return nodes_[check(id)].val; }
  double scalar(int id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of nodes_[out] (a scalar, or one selected element of a larger
  /// output) with respect to the requested leaves.
  GradientSet backward(int out, const BackwardWants& wants,
                       std::optional<std::int64_t> element = std::nullopt) const;

  /// Sign of every ReLU pre-activation, in recording order. Two evaluations
  /// lie on the same linear piece of the network iff the patterns match.
  std::vector<std::uint8_t> relu_pattern() const;

 private:
  struct Node {
    OpKind kind;
    std::vector<int> in;
    int slot = -1;
    kernels::ConvGeom geom;
    Tensor val;
    std::vector<double> coeffs;
    double coeff_bias = 0.0;
    std::vector<std::uint8_t> mask;
    std::int64_t mask_count = 0;
    std::vector<std::int64_t> argmax;
    Shape pool_in;  // maxpool input shape after the even-crop
  };

  int push(Node n);
  int check(int id) const;
  const Node& node(int id) const { return nodes_[check(id)]; }

  std::vector<Node> nodes_;
};

/// Drops the last row/column of odd spatial extents.
Tensor crop_to_even(const Tensor& t);

}  // namespace gt
