#include "gaintune/train.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <unordered_set>

#include "gaintune/analysis.hpp"

namespace gt {
namespace {

std::string now_iso8601() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                   t0)
      .count();
}

// Mutable view over the scalars a training mode optimizes, in slot order.
struct FlatView {
  std::vector<int> slots;
  std::vector<double*> ptrs;
  std::vector<std::size_t> lens;
  std::size_t total = 0;

  void add(int slot, double* p, std::size_t n) {
    slots.push_back(slot);
    ptrs.push_back(p);
    lens.push_back(n);
    total += n;
  }
  void gather(std::vector<double>& out) const {
    out.resize(total);
    std::size_t k = 0;
    for (std::size_t s = 0; s < ptrs.size(); ++s)
      for (std::size_t i = 0; i < lens[s]; ++i) out[k++] = ptrs[s][i];
  }
  void scatter(const std::vector<double>& in) const {
    std::size_t k = 0;
    for (std::size_t s = 0; s < ptrs.size(); ++s)
      for (std::size_t i = 0; i < lens[s]; ++i) ptrs[s][i] = in[k++];
  }
  void add_grads(const GradientSet& gs, double weight, std::vector<double>& acc) const {
    std::size_t k = 0;
    for (std::size_t s = 0; s < ptrs.size(); ++s) {
      auto it = gs.by_slot.find(slots[s]);
      if (it == gs.by_slot.end()) {
        k += lens[s];  // untouched slot: zero gradient
        continue;
      }
      for (std::size_t i = 0; i < lens[s]; ++i) acc[k++] += weight * it->second.data[i];
    }
  }
  BackwardWants wants() const {
    return BackwardWants::for_slots(
        std::unordered_set<int>(slots.begin(), slots.end()));
  }
};

FlatView flat_view(Checkpoint& ckpt, AdaptMode mode) {
  FlatView fv;
  for (std::size_t i = 0; i < ckpt.spec.layers.size(); ++i) {
    const Layer& l = ckpt.spec.layers[i];
    const int li = static_cast<int>(i);
    if (mode == AdaptMode::AllParams) {
      ConvParams& cp = ckpt.params.layers[i];
      if (cp.weights.numel())
        fv.add(weight_slot(li), cp.weights.data.data(), cp.weights.data.size());
      if (cp.bias.numel())
        fv.add(bias_slot(li), cp.bias.data.data(), cp.bias.data.size());
    } else if (l.gain_tunable && !ckpt.gains.layers[i].empty()) {
      fv.add(gain_slot(li), ckpt.gains.layers[i].data(), ckpt.gains.layers[i].size());
    }
  }
  return fv;
}

GainSet unit_gains(const ArchitectureSpec& spec) {
  GainSet g;
  g.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].gain_tunable)
      g.layers[i].assign(static_cast<std::size_t>(spec.layers[i].cout), 1.0);
  return g;
}

}  // namespace

void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads, double lr) {
  if (params.size() != grads.size())
    throw ValidationError("adam_step: parameter and gradient lengths differ (" +
                          std::to_string(params.size()) + " vs " +
                          std::to_string(grads.size()) + ")");
  if (state.m.size() != params.size()) state.reset(params.size());
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

double pretrain_lr(double lr0, int epoch) {
  const int drops = epoch <= 50 ? 0 : (epoch - 51) / 10 + 1;
  return lr0 * std::pow(0.5, drops);
}

double adapt_lr(const AdaptConfig& cfg, int step) {
  return step <= cfg.lr_drop_step ? cfg.lr_initial : cfg.lr_after;
}

std::string TrainLog::csv() const {
  std::string out = "step,loss,lr,psnr,wall_ms\n";
  for (const TrainLogRow& r : rows) {
    out += std::to_string(r.step) + "," + fmt_double(r.loss) + "," + fmt_double(r.lr) +
           "," + (r.psnr ? fmt_double(*r.psnr) : std::string()) + "," +
           fmt_double(r.wall_ms) + "\n";
  }
  return out;
}

void TrainLog::save_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("train log: cannot open '" + path + "' for writing");
  os << csv();
}

Checkpoint pretrain(const ArchitectureSpec& spec, const std::vector<ImageGray>& dataset,
                    const PretrainConfig& cfg, TrainLog* log) {
  spec.validate();
  if (dataset.empty()) throw ValidationError("pretrain: empty dataset");
  if (cfg.epochs < 1) throw ValidationError("pretrain: epochs must be >= 1");
  if (cfg.sigma_lo > cfg.sigma_hi || cfg.sigma_lo < 0)
    throw ValidationError("pretrain: bad sigma range");
  for (const ImageGray& img : dataset)
    if (cfg.patch_size > img.h || cfg.patch_size > img.w)
      throw ValidationError("pretrain: patch size " + std::to_string(cfg.patch_size) +
                            " exceeds an image of " + std::to_string(img.h) + "x" +
                            std::to_string(img.w));

  Checkpoint ckpt;
  ckpt.spec = spec;
  RngStream init_stream = RngStream(cfg.seed).derive(0);
  auto [params, gains] = build(spec, init_stream);
  ckpt.params = std::move(params);
  ckpt.gains = std::move(gains);

  RngStream patch_stream = RngStream(cfg.seed).derive(1);
  RngStream noise_stream = RngStream(cfg.seed).derive(2);
  RngStream sigma_stream = RngStream(cfg.seed).derive(3);

  FlatView fv = flat_view(ckpt, AdaptMode::AllParams);
  const BackwardWants wants = fv.wants();
  AdamState adam;
  adam.reset(fv.total);
  std::vector<double> flat, grads;

  const int ps = cfg.patch_size;
  PatchConfig pc{ps, 1, cfg.hflip, cfg.vflip, cfg.rot90, 0};
  int step_idx = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = pretrain_lr(cfg.lr0, epoch);
    int remaining = cfg.patches_per_epoch;
    while (remaining > 0) {
      const auto t0 = std::chrono::steady_clock::now();
      const int b = std::min(cfg.batch_size, remaining);
      remaining -= b;
      Tensor clean(Shape{b, 1, ps, ps});
      pc.patches_per_step = 1;
      for (int i = 0; i < b; ++i) {
        const std::size_t idx =
            static_cast<std::size_t>(patch_stream.uniform_int(dataset.size()));
        Tensor p = sample_patches(dataset[idx], pc, patch_stream);
        std::copy(p.data.begin(), p.data.end(),
                  clean.data.begin() + static_cast<std::size_t>(i) * ps * ps);
      }
      Tensor noisy = clean;
      for (int i = 0; i < b; ++i) {
        const double sigma = sigma_stream.uniform(cfg.sigma_lo, cfg.sigma_hi) / 255.0;
        double* p = &noisy.data[static_cast<std::size_t>(i) * ps * ps];
        for (int k = 0; k < ps * ps; ++k) p[k] += sigma * noise_stream.gaussian();
      }
      Tape tape;
      const int x = tape.constant(std::move(noisy));
      const ModelNodes mn = record_forward(tape, spec, ckpt.params, &ckpt.gains, x);
      const int loss = tape.mse(mn.output, tape.constant(std::move(clean)));
      const GradientSet gs = tape.backward(loss, wants);
      fv.gather(flat);
      grads.assign(fv.total, 0.0);
      fv.add_grads(gs, 1.0, grads);
      adam_step(adam, flat, grads, lr);
      fv.scatter(flat);
      if (log)
        log->rows.push_back(
            {++step_idx, tape.scalar(loss), lr, std::nullopt, elapsed_ms(t0)});
      else
        ++step_idx;
    }
  }
  ckpt.meta = {cfg.sigma_lo, cfg.sigma_hi, step_idx, cfg.seed, now_iso8601()};
  return ckpt;
}

namespace {

Checkpoint adapt_impl(const Checkpoint& in, const ImageGray& noisy,
                      const AdaptConfig& cfg, TrainLog* log,
                      const ImageGray* psnr_ref) {
  in.spec.validate();
  if (cfg.steps < 0) throw ValidationError("adapt: steps must be >= 0");
  if (cfg.patches_per_step < 1 || cfg.batch_size < 1)
    throw ValidationError("adapt: need at least one patch per step");
  const bool needs_sigma = cfg.loss != AdaptLoss::Blindspot;
  if (needs_sigma && !(cfg.sigma255 > 0.0))
    throw ValidationError(cfg.loss == AdaptLoss::Sure
                              ? "adapt: SURE requires known positive sigma"
                              : "adapt: noise resampling requires known positive sigma");

  Checkpoint ckpt = in;
  ckpt.meta.steps = cfg.steps;
  ckpt.meta.seed = cfg.seed;
  ckpt.meta.timestamp = now_iso8601();

  // Noise resampling regresses to a frozen estimate from the pre-trained
  // function (all gains 1), sampling its patches instead of the noisy image's.
  ImageGray x_hat_img;
  if (cfg.loss == AdaptLoss::Resample) {
    const GainSet ones = unit_gains(ckpt.spec);
    x_hat_img = image_from_tensor(
        forward(ckpt.spec, ckpt.params, &ones, to_tensor(noisy)));
  }
  const ImageGray& source = cfg.loss == AdaptLoss::Resample ? x_hat_img : noisy;

  RngStream corner_stream = RngStream(cfg.seed).derive(11);
  RngStream loss_stream = RngStream(cfg.seed).derive(12);

  FlatView fv = flat_view(ckpt, cfg.mode);
  if (fv.total == 0) throw ValidationError("adapt: nothing to optimize");
  const BackwardWants wants = fv.wants();
  AdamState adam;  // fresh state; pre-training moments are not carried over
  adam.reset(fv.total);
  std::vector<double> flat, grads;

  const NetApplier net = [&](Tape& tape, int x) {
    return record_forward(tape, ckpt.spec, ckpt.params, &ckpt.gains, x).output;
  };
  const MaskConfig mask_cfg{cfg.mask_fraction, cfg.fill, RngStream()};
  PatchConfig pc{cfg.patch_size, 1, false, false, false, 0};

  for (int step = 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = adapt_lr(cfg, step);
    grads.assign(fv.total, 0.0);
    double loss_step = 0.0;
    int remaining = cfg.patches_per_step;
    while (remaining > 0) {
      const int b = std::min(cfg.batch_size, remaining);
      remaining -= b;
      pc.patches_per_step = b;
      Tensor batch = sample_patches(source, pc, corner_stream);
      Tape tape;
      int loss_node = -1;
      switch (cfg.loss) {
        case AdaptLoss::Sure:
          loss_node = record_sure_loss(tape, net, batch, cfg.sigma255,
                                       cfg.eps_factor, cfg.probes, loss_stream);
          break;
        case AdaptLoss::Blindspot:
          loss_node = record_blindspot_loss(tape, net, batch, mask_cfg, loss_stream);
          break;
        case AdaptLoss::Resample:
          loss_node = record_resample_loss(tape, net, batch, cfg.sigma255,
                                           loss_stream);
          break;
      }
      const GradientSet gs = tape.backward(loss_node, wants);
      // gradient averaged across the whole step, one update per step
      const double weight = static_cast<double>(b) / cfg.patches_per_step;
      fv.add_grads(gs, weight, grads);
      loss_step += weight * tape.scalar(loss_node);
    }
    fv.gather(flat);
    adam_step(adam, flat, grads, lr);
    fv.scatter(flat);
    if (log) {
      TrainLogRow row{step, loss_step, lr, std::nullopt, 0.0};
      if (psnr_ref) row.psnr = psnr(*psnr_ref, denoise(ckpt, noisy));
      row.wall_ms = elapsed_ms(t0);
      log->rows.push_back(row);
    }
  }
  return ckpt;
}

}  // namespace

Checkpoint gaintune(const Checkpoint& ckpt, const ImageGray& noisy,
                    const AdaptConfig& cfg, TrainLog* log, const ImageGray* psnr_ref) {
  if (cfg.mode != AdaptMode::GainOnly)
    throw ValidationError("gaintune: config mode must be gain_only");
  return adapt_impl(ckpt, noisy, cfg, log, psnr_ref);
}

Checkpoint finetune_all(const Checkpoint& ckpt, const ImageGray& noisy,
                        const AdaptConfig& cfg, TrainLog* log,
                        const ImageGray* psnr_ref) {
  if (cfg.mode != AdaptMode::AllParams)
    throw ValidationError("finetune_all: config mode must be all_params");
  return adapt_impl(ckpt, noisy, cfg, log, psnr_ref);
}

ImageGray denoise(const Checkpoint& ckpt, const ImageGray& noisy) {
  return image_from_tensor(
      forward(ckpt.spec, ckpt.params, &ckpt.gains, to_tensor(noisy)));
}

}  // namespace gt
