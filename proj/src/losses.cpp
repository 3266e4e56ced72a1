#include "gaintune/losses.hpp"

#include <cmath>
#include <string>

namespace gt {
namespace {

void check_sigma(double sigma255, const char* who) {
  if (!(sigma255 > 0.0))
    throw ValidationError(std::string(who) + ": SURE requires known positive sigma");
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

}  // namespace

double mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

double mc_divergence(const ForwardFn& fwd, const Tensor& y, double eps,
                     RngStream& stream, int probes) {
  if (!(eps > 0.0)) throw ValidationError("mc_divergence: eps must be positive");
  if (probes < 1) throw ValidationError("mc_divergence: need at least one probe");
  const Tensor f0 = fwd(y);
  double acc = 0.0;
  for (int p = 0; p < probes; ++p) {
    Tensor noise = gaussian(stream, y.shape, 1.0);
    Tensor yp = y;
    for (std::size_t i = 0; i < yp.data.size(); ++i) yp.data[i] += eps * noise.data[i];
    const Tensor fp = fwd(yp);
    double d = 0.0;
    for (std::size_t i = 0; i < noise.data.size(); ++i)
      d += noise.data[i] * (fp.data[i] - f0.data[i]);
    acc += d / eps;
  }
  return acc / probes;
}

double sure_loss(const ForwardFn& fwd, const Tensor& y, SureConfig& cfg) {
  check_sigma(cfg.sigma255, "sure_loss");
  const double sigma = cfg.sigma();
  const double n = static_cast<double>(y.numel());
  const double div = mc_divergence(fwd, y, cfg.eps(), cfg.stream, cfg.probes_per_eval);
  const Tensor f0 = fwd(y);
  return mse_loss(y, f0) - sigma * sigma + 2.0 * sigma * sigma / n * div;
}

double linear_sure_oracle(const Tensor& filter, const Tensor& y, double sigma) {
  if (filter.shape.n != 1 || filter.shape.c != 1)
    throw ValidationError("linear_sure_oracle: filter must be (1,1,kh,kw)");
  const std::int64_t kh = filter.shape.h, kw = filter.shape.w;
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ValidationError("linear_sure_oracle: filter extents must be odd");
  if (y.shape.n != 1 || y.shape.c != 1)
    throw ValidationError("linear_sure_oracle: y must be a single image");
  const std::int64_t H = y.shape.h, W = y.shape.w;
  const std::int64_t cy = kh / 2, cx = kw / 2;
  double acc = 0.0;
  for (std::int64_t iy = 0; iy < H; ++iy)
    for (std::int64_t ix = 0; ix < W; ++ix) {
      double f = 0.0;
      for (std::int64_t ky = 0; ky < kh; ++ky)
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const std::int64_t sy = iy + ky - cy, sx = ix + kx - cx;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
          f += filter.at(0, 0, ky, kx) * y.at(0, 0, sy, sx);
        }
      const double d = y.at(0, 0, iy, ix) - f;
      acc += d * d;
    }
  const double theta0 = filter.at(0, 0, cy, cx);
  return acc / static_cast<double>(H * W) - sigma * sigma +
         2.0 * sigma * sigma * theta0;
}

BlindspotBatch make_blindspot_input(const Tensor& y, const MaskConfig& cfg,
                                    RngStream& stream) {
  if (!(cfg.mask_fraction > 0.0 && cfg.mask_fraction <= 0.5))
    throw ValidationError("blindspot: mask_fraction must be in (0, 0.5]");
  BlindspotBatch out;
  out.ytilde = y;
  out.mask.assign(y.data.size(), 0);
  const std::int64_t H = y.shape.h, W = y.shape.w;
  const std::int64_t plane = H * W;
  for (std::int64_t img = 0; img < y.shape.n * y.shape.c; ++img) {
    std::uint8_t* m = out.mask.data() + img * plane;
    bool any = false;
    for (int attempt = 0; attempt < 8 && !any; ++attempt) {
      for (std::int64_t i = 0; i < plane; ++i) {
        m[i] = stream.uniform() < cfg.mask_fraction;
        any = any || m[i];
      }
    }
    if (!any) throw ValidationError("blindspot: empty mask after 8 redraws");
    const double* src = y.data.data() + img * plane;
    double* dst = out.ytilde.data.data() + img * plane;
    for (std::int64_t py = 0; py < H; ++py)
      for (std::int64_t px = 0; px < W; ++px) {
        const std::int64_t i = py * W + px;
        if (!m[i]) continue;
        if (cfg.fill == MaskFill::RandomUniform) {
          dst[i] = stream.uniform();
          continue;
        }
        // mean of in-bounds, unmasked neighbors; masked values stay invisible
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const std::int64_t ny = py + dy, nx = px + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            const std::int64_t j = ny * W + nx;
            if (m[j]) continue;
            acc += src[j];
            ++cnt;
          }
        dst[i] = cnt > 0 ? acc / cnt : stream.uniform();
      }
  }
  return out;
}

double blindspot_loss(const ForwardFn& fwd, const Tensor& y, MaskConfig& cfg) {
  const BlindspotBatch bb = make_blindspot_input(y, cfg, cfg.stream);
  const Tensor pred = fwd(bb.ytilde);
  require_same_shape(pred, y, "blindspot_loss");
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < bb.mask.size(); ++i)
    if (bb.mask[i]) {
      const double d = pred.data[i] - y.data[i];
      acc += d * d;
      ++count;
    }
  return acc / static_cast<double>(count);
}

double noise_resampling_loss(const ForwardFn& fwd, const ResampleState& state,
                             RngStream& stream) {
  Tensor z = state.x_hat;
  const double sigma = state.sigma255 / 255.0;
  for (double& v : z.data) v += sigma * stream.gaussian();
  return mse_loss(fwd(z), state.x_hat);
}

int record_sure_loss(Tape& tape, const NetApplier& net, const Tensor& y,
                     double sigma255, double eps_factor, int probes,
                     RngStream& stream) {
  check_sigma(sigma255, "sure_loss");
  if (probes < 1) throw ValidationError("sure_loss: need at least one probe");
  const double sigma = sigma255 / 255.0;
  const double eps = sigma * eps_factor;
  const double n = static_cast<double>(y.numel());
  const int y_node = tape.constant(y);
  const int f0 = net(tape, y_node);
  std::vector<int> terms{tape.mse(y_node, f0)};
  std::vector<double> coeffs{1.0};
  for (int p = 0; p < probes; ++p) {
    Tensor noise = gaussian(stream, y.shape, 1.0);
    Tensor yp = y;
    for (std::size_t i = 0; i < yp.data.size(); ++i) yp.data[i] += eps * noise.data[i];
    const int fp = net(tape, tape.constant(std::move(yp)));
    terms.push_back(tape.dot(tape.constant(std::move(noise)), tape.sub(fp, f0)));
    coeffs.push_back(2.0 * sigma * sigma / (n * eps * probes));
  }
  return tape.lincomb(std::move(terms), std::move(coeffs), -sigma * sigma);
}

int record_blindspot_loss(Tape& tape, const NetApplier& net, const Tensor& y,
                          const MaskConfig& cfg, RngStream& stream) {
  BlindspotBatch bb = make_blindspot_input(y, cfg, stream);
  const int pred = net(tape, tape.constant(std::move(bb.ytilde)));
  const int target = tape.constant(y);
  return tape.masked_mse(pred, target, std::move(bb.mask));
}

int record_resample_loss(Tape& tape, const NetApplier& net,
                         const Tensor& x_hat_patches, double sigma255,
                         RngStream& stream) {
  check_sigma(sigma255, "noise_resampling_loss");
  Tensor z = x_hat_patches;
  const double sigma = sigma255 / 255.0;
  for (double& v : z.data) v += sigma * stream.gaussian();
  const int pred = net(tape, tape.constant(std::move(z)));
  return tape.mse(pred, tape.constant(x_hat_patches));
}

}  // namespace gt
