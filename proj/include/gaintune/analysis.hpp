#pragma once

#include <string>
#include <vector>

#include "gaintune/data.hpp"
#include "gaintune/models.hpp"

namespace gt {

/// 10 log10(peak^2 / MSE). Identical images have no finite PSNR and throw.
double psnr(const ImageGray& reference, const ImageGray& estimate, double peak = 1.0);

/// Jacobian row of one output pixel: the data-dependent weights the denoiser
/// applies to the noisy input. For a bias-free network <weights, y> equals the
/// output pixel itself.
struct EquivalentFilter {
  int row = 0, col = 0;
  ImageGray weights;
};

EquivalentFilter equivalent_filter(const ArchitectureSpec& spec,
                                   const ParamSet& params, const GainSet* gains,
                                   const ImageGray& y, int row, int col);
EquivalentFilter equivalent_filter(const Checkpoint& ckpt, const ImageGray& y,
                                   int row, int col);

enum class BiasMethod { Jvp, FullJacobian };

/// Constant term of the first-order expansion at y: b = f(y) - J_y y.
struct NetBias {
  ImageGray bias;
  double l2 = 0.0;
  double relative = 0.0;  // ||b|| / ||f(y)||
};

/// Jvp probes along y with h = 1e-6, valid only while no ReLU flips between y
/// and the probe point; on a flip it falls back to the exact row-by-row
/// Jacobian (images up to 64x64) or throws when the fallback is disabled.
NetBias net_bias(const Checkpoint& ckpt, const ImageGray& y,
                 BiasMethod method = BiasMethod::Jvp, bool allow_fallback = true);

struct DeltaPsnrEntry {
  std::string id;
  double before = 0.0, after = 0.0;
};

struct DeltaPsnrSummary {
  double mean = 0.0, median = 0.0, min = 0.0, max = 0.0;
  int negatives = 0;
  std::size_t count = 0;
};

DeltaPsnrSummary delta_psnr_summary(const std::vector<DeltaPsnrEntry>& entries);
std::string delta_psnr_csv(const std::vector<DeltaPsnrEntry>& entries);

/// 8-bit PGM with symmetric normalization: [-max|w|, +max|w|] maps onto
/// [0,255], so zero sits at the 127/128 boundary and renders as 128.
void filter_to_pgm(const EquivalentFilter& filter, const std::string& path);

}  // namespace gt
