#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gaintune/graph.hpp"
#include "gaintune/rng.hpp"
#include "gaintune/tensor.hpp"

namespace gt {

enum class LayerKind {
  Conv,
  TConv,
  Relu,
  MaxPool2,
  Upsample2,
  Concat,                 // appends the output of an earlier layer
  ResidualSubtractInput,  // network output = input - current value
};

struct Layer {
  LayerKind kind = LayerKind::Relu;
  int cin = 0, cout = 0, k = 0;
  int stride = 1, pad = 0, dilation = 1;
  bool has_bias = true;
  bool gain_tunable = false;
  int concat_src = -1;
};

struct ArchitectureSpec {
  std::string name;
  bool bias_free = false;
  std::vector<Layer> layers;

  /// Channel chaining, gain/bias flags, final-layer gain exclusion. Throws
  /// naming the first inconsistent layer.
  void validate() const;
  std::string canonical_text() const;
  static ArchitectureSpec parse_text(const std::string& text);

  /// Channels the network consumes (cin of the first conv).
  int input_channels() const;
};

/// Per conv/tconv layer: weight tensor plus optional (1,cout,1,1) bias.
struct ConvParams {
  Tensor weights;
  Tensor bias;  // numel 0 when the layer has no bias
};
struct ParamSet {
  std::vector<ConvParams> layers;  // indexed by layer id; empty for non-conv layers
};

/// One multiplier per output channel of every gain-tunable layer, 1.0 at build.
struct GainSet {
  std::vector<std::vector<double>> layers;  // empty vector for non-tunable layers
};

// Parameter slot ids, stable across tapes for a given spec.
inline int weight_slot(int layer) { return 3 * layer; }
inline int bias_slot(int layer) { return 3 * layer + 1; }
inline int gain_slot(int layer) { return 3 * layer + 2; }

/// dncnn-s: depth 3x3 conv+relu stages, residual prediction. unet-s: the fixed
/// 9-layer encoder/decoder (depth ignored), channel counts scaled by width/32.
/// bf-dncnn-s: dncnn-s with every additive bias removed.
ArchitectureSpec preset(const std::string& name, int depth, int width);

std::pair<ParamSet, GainSet> build(const ArchitectureSpec& spec, RngStream& stream);

std::int64_t count_params(const ArchitectureSpec& spec);
std::int64_t count_gains(const ArchitectureSpec& spec);

/// Smallest square input extent the layer stack accepts.
int min_input_extent(const ArchitectureSpec& spec);

struct ModelNodes {
  int input = -1;
  int output = -1;
  std::vector<int> layer_out;
};

/// Records the network onto a tape. gains may be null (gain-free function).
ModelNodes record_forward(Tape& tape, const ArchitectureSpec& spec,
                          const ParamSet& params, const GainSet* gains,
                          int input_node);

/// Plain evaluation; with all gains 1 this is exactly the pre-trained function.
Tensor forward(const ArchitectureSpec& spec, const ParamSet& params,
               const GainSet* gains, const Tensor& input);

/// Folds gains into the weights and biases: forward(spec, params, gains, y) ==
/// forward(spec, scale_params(...), ones, y) up to rounding.
ParamSet scale_params(const ArchitectureSpec& spec, const ParamSet& params,
                      const GainSet& gains);

struct CheckpointMeta {
  double sigma_lo = 0.0, sigma_hi = 0.0;  // training noise range, 0-255 scale
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  std::string timestamp;
};

struct Checkpoint {
  ArchitectureSpec spec;
  ParamSet params;
  GainSet gains;
  CheckpointMeta meta;
};

std::string checkpoint_serialize(const Checkpoint& ckpt);
Checkpoint checkpoint_deserialize(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Raw bytes of the weights/biases section inside a serialized checkpoint;
/// gain-only adaptation must leave this slice untouched.
std::string checkpoint_param_section(const std::string& bytes);

}  // namespace gt
