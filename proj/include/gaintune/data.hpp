#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gaintune/rng.hpp"
#include "gaintune/tensor.hpp"

namespace gt {

/// Single-channel image. Clean images hold values in [0,1]; noisy images are
/// deliberately left unclamped so additive Gaussian noise stays Gaussian.
struct ImageGray {
  int h = 0, w = 0;
  std::vector<double> px;

  ImageGray() = default;
  ImageGray(int height, int width, double fill = 0.0)
      : h(height), w(width), px(static_cast<std::size_t>(height) * width, fill) {}

  double& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
};

Tensor to_tensor(const ImageGray& img);          // (1,1,h,w)
ImageGray image_from_tensor(const Tensor& t);    // requires n = c = 1
void require_unit_range(const ImageGray& img, const char* what);

struct NoisyPair {
  ImageGray clean;
  ImageGray noisy;   // clean + n, n ~ N(0, (sigma255/255)^2), not clamped
  double sigma255 = 0.0;
};

/// Random piecewise-constant image: a uniform background overpainted with
/// K ~ U{shapes_lo..shapes_hi} half-planes and discs of uniform intensity.
ImageGray gen_piecewise_constant(RngStream& stream, int size, int shapes_lo,
                                 int shapes_hi);

NoisyPair add_gaussian_noise(const ImageGray& img, double sigma255, RngStream& stream);

struct PatchConfig {
  int patch_size = 50;
  int patches_per_step = 1;
  bool hflip = false, vflip = false, rot90 = false;
  std::uint64_t seed = 0;
};

/// Uniform random patch corners with replacement; each enabled augmentation is
/// applied independently with probability 1/2.
Tensor sample_patches(const ImageGray& img, const PatchConfig& cfg, RngStream& stream);
Tensor sample_patches(const ImageGray& img, const PatchConfig& cfg);
/// Aligned clean/noisy patches sharing corners and augmentation draws.
std::pair<Tensor, Tensor> sample_patch_pairs(const NoisyPair& pair,
                                             const PatchConfig& cfg,
                                             RngStream& stream);

/// Binary PGM ("P5"), maxval 255 or 65535 (16-bit samples big-endian), mapped
/// linearly to [0,1]. Values outside [0,1] are clamped on write.
ImageGray load_pgm(const std::string& path);
void save_pgm(const ImageGray& img, const std::string& path, int bits = 8);

/// Lossless raw tensor: "GTRAW01", four little-endian u64 extents, f64 payload.
Tensor load_rawf64(const std::string& path);
void save_rawf64(const Tensor& t, const std::string& path);

}  // namespace gt
