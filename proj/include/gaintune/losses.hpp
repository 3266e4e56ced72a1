#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gaintune/graph.hpp"
#include "gaintune/rng.hpp"
#include "gaintune/tensor.hpp"

namespace gt {

/// Plain denoiser evaluation, used by the numeric loss estimators.
using ForwardFn = std::function<Tensor(const Tensor&)>;

/// Differentiable denoiser: appends the network to a tape, input node to
/// output node. Used by the tape-building loss variants during training.
using NetApplier = std::function<int(Tape&, int)>;

struct SureConfig {
  double sigma255 = 0.0;
  double eps_factor = 1.4e-4;  // probe step is sigma * eps_factor
  int probes_per_eval = 1;
  RngStream stream;

  double sigma() const { return sigma255 / 255.0; }
  double eps() const { return sigma() * eps_factor; }
};

enum class MaskFill { NeighborMean3x3ExclCenter, RandomUniform };

struct MaskConfig {
  double mask_fraction = 0.03;  // in (0, 0.5]
  MaskFill fill = MaskFill::NeighborMean3x3ExclCenter;
  RngStream stream;
};

/// Frozen initial estimate for noise resampling; never updated during
/// adaptation.
struct ResampleState {
  Tensor x_hat;
  double sigma255 = 0.0;
};

double mse_loss(const Tensor& pred, const Tensor& target);

/// Randomized estimate of the full divergence sum_k d f(y)_k / d y_k:
/// (1/eps) <n~, f(y + eps n~) - f(y)>, averaged over probes.
double mc_divergence(const ForwardFn& fwd, const Tensor& y, double eps,
                     RngStream& stream, int probes = 1);

/// (1/N)||y - f(y)||^2 - sigma^2 + (2 sigma^2 / N) * divergence estimate.
double sure_loss(const ForwardFn& fwd, const Tensor& y, SureConfig& cfg);

/// Closed form for a fixed linear filter (odd extents, zero padding):
/// (1/N)||y - theta (*) y||^2 - sigma^2 + 2 sigma^2 theta_0. Independent of
/// the tensor kernels; cross-validates the Monte-Carlo path.
double linear_sure_oracle(const Tensor& filter, const Tensor& y, double sigma);

struct BlindspotBatch {
  Tensor ytilde;                   // y with masked pixels replaced
  std::vector<std::uint8_t> mask;  // 1 where replaced
};

/// Per-patch i.i.d. masks (at least one pixel per patch, redrawing up to 8
/// times). The neighbor-mean fill averages only unmasked in-bounds neighbors,
/// so a masked prediction can never see any masked original value.
BlindspotBatch make_blindspot_input(const Tensor& y, const MaskConfig& cfg,
                                    RngStream& stream);

/// Mean over masked pixels j of (f(ytilde)_j - y_j)^2.
double blindspot_loss(const ForwardFn& fwd, const Tensor& y, MaskConfig& cfg);

/// (1/N)||f(x_hat + n) - x_hat||^2 with fresh n ~ N(0, sigma^2).
double noise_resampling_loss(const ForwardFn& fwd, const ResampleState& state,
                             RngStream& stream);

// Tape-building variants. Given equal stream state they consume the same
// draws and produce the same value as the numeric estimators above; the
// probe/noisy passes participate in the gradient, targets are constants.
int record_sure_loss(Tape& tape, const NetApplier& net, const Tensor& y,
                     double sigma255, double eps_factor, int probes,
                     RngStream& stream);
int record_blindspot_loss(Tape& tape, const NetApplier& net, const Tensor& y,
                          const MaskConfig& cfg, RngStream& stream);
int record_resample_loss(Tape& tape, const NetApplier& net,
                         const Tensor& x_hat_patches, double sigma255,
                         RngStream& stream);

}  // namespace gt
