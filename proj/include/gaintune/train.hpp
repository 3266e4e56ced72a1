#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaintune/data.hpp"
#include "gaintune/losses.hpp"
#include "gaintune/models.hpp"

namespace gt {

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::vector<double> m, v;

  void reset(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

/// Standard Adam with bias correction; one call advances t by exactly 1.
void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads, double lr);

struct PretrainConfig {
  int epochs = 100;
  double lr0 = 1e-3;
  int batch_size = 32;
  int patches_per_epoch = 1024;
  int patch_size = 50;
  double sigma_lo = 0.0, sigma_hi = 55.0;  // 0-255 scale, sampled per patch
  bool hflip = true, vflip = true, rot90 = true;
  std::uint64_t seed = 1;
};

/// Halves every 10 epochs once past epoch 50 (epoch is 1-based).
double pretrain_lr(double lr0, int epoch);

enum class AdaptLoss { Sure, Blindspot, Resample };
enum class AdaptMode { GainOnly, AllParams };

struct AdaptConfig {
  int steps = 100;
  int patches_per_step = 256;  // one optimizer update per step, averaged
  int batch_size = 32;
  int patch_size = 50;
  double lr_initial = 1e-4;
  double lr_after = 1e-5;
  int lr_drop_step = 20;  // steps 1..drop at lr_initial, later at lr_after
  AdaptLoss loss = AdaptLoss::Sure;
  AdaptMode mode = AdaptMode::GainOnly;
  double sigma255 = -1.0;  // required for sure and resample
  double eps_factor = 1.4e-4;
  int probes = 1;
  double mask_fraction = 0.03;
  MaskFill fill = MaskFill::NeighborMean3x3ExclCenter;
  std::uint64_t seed = 1;
};

double adapt_lr(const AdaptConfig& cfg, int step);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> psnr;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  std::string csv() const;  // header step,loss,lr,psnr,wall_ms
  void save_csv(const std::string& path) const;
};

/// Supervised pre-training on clean images with fresh per-patch noise. Gains
/// stay at 1; one Adam update per mini-batch.
Checkpoint pretrain(const ArchitectureSpec& spec,
                    const std::vector<ImageGray>& dataset,
                    const PretrainConfig& cfg, TrainLog* log = nullptr);

/// Gain-only adaptation to a single noisy image. Weights and biases are left
/// bit-identical; when psnr_ref is given each step logs PSNR of the full-image
/// denoise against it.
Checkpoint gaintune(const Checkpoint& ckpt, const ImageGray& noisy,
                    const AdaptConfig& cfg, TrainLog* log = nullptr,
                    const ImageGray* psnr_ref = nullptr);

/// Baseline that optimizes every weight and bias instead of the gains.
Checkpoint finetune_all(const Checkpoint& ckpt, const ImageGray& noisy,
                        const AdaptConfig& cfg, TrainLog* log = nullptr,
                        const ImageGray* psnr_ref = nullptr);

/// Single full-image forward pass; output is not clamped.
ImageGray denoise(const Checkpoint& ckpt, const ImageGray& noisy);

}  // namespace gt
