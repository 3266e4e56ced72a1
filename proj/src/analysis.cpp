#include "gaintune/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "gaintune/graph.hpp"

namespace gt {
namespace {

double l2_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

double psnr(const ImageGray& reference, const ImageGray& estimate, double peak) {
  if (reference.h != estimate.h || reference.w != estimate.w)
    throw ValidationError("psnr: image extents differ");
  if (!(peak > 0)) throw ValidationError("psnr: peak must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < reference.px.size(); ++i) {
    const double d = reference.px[i] - estimate.px[i];
    mse += d * d;
  }
  mse /= static_cast<double>(reference.px.size());
  if (mse == 0.0) throw ValidationError("psnr: identical images");
  return 10.0 * std::log10(peak * peak / mse);
}

EquivalentFilter equivalent_filter(const ArchitectureSpec& spec,
                                   const ParamSet& params, const GainSet* gains,
                                   const ImageGray& y, int row, int col) {
  if (row < 0 || row >= y.h || col < 0 || col >= y.w)
    throw ValidationError("equivalent_filter: pixel (" + std::to_string(row) + "," +
                          std::to_string(col) + ") outside " + std::to_string(y.h) +
                          "x" + std::to_string(y.w));
  Tape tape;
  const int x = tape.input(to_tensor(y));
  const ModelNodes mn = record_forward(tape, spec, params, gains, x);
  const Tensor& out = tape.value(mn.output);
  if (out.shape.h != y.h || out.shape.w != y.w)
    throw ValidationError("equivalent_filter: output extent differs from input");
  BackwardWants wants;
  wants.inputs = true;
  const GradientSet gs = tape.backward(
      mn.output, wants, static_cast<std::int64_t>(row) * y.w + col);
  EquivalentFilter f;
  f.row = row;
  f.col = col;
  f.weights = image_from_tensor(gs.by_input.at(x));
  return f;
}

EquivalentFilter equivalent_filter(const Checkpoint& ckpt, const ImageGray& y,
                                   int row, int col) {
  return equivalent_filter(ckpt.spec, ckpt.params, &ckpt.gains, y, row, col);
}

NetBias net_bias(const Checkpoint& ckpt, const ImageGray& y, BiasMethod method,
                 bool allow_fallback) {
  const Tensor yt = to_tensor(y);
  std::vector<double> jy;  // J_y y, one value per output pixel

  Tape tape;
  const int x = tape.input(yt);
  const ModelNodes mn = record_forward(tape, ckpt.spec, ckpt.params, &ckpt.gains, x);
  const Tensor f0 = tape.value(mn.output);

  bool use_full = method == BiasMethod::FullJacobian;
  if (!use_full) {
    const double h = 1e-6;
    Tensor y2 = yt;
    for (double& v : y2.data) v *= 1.0 + h;
    Tape tape2;
    const int x2 = tape2.input(std::move(y2));
    const ModelNodes mn2 =
        record_forward(tape2, ckpt.spec, ckpt.params, &ckpt.gains, x2);
    if (tape.relu_pattern() == tape2.relu_pattern()) {
      const Tensor& f2 = tape2.value(mn2.output);
      jy.resize(f0.data.size());
      for (std::size_t i = 0; i < jy.size(); ++i)
        jy[i] = (f2.data[i] - f0.data[i]) / h;
    } else if (allow_fallback) {
      use_full = true;
    } else {
      throw ValidationError(
          "net_bias: activation pattern changed under the jvp probe and the "
          "fallback is disabled");
    }
  }
  if (use_full) {
    if (y.h > 64 || y.w > 64)
      throw ValidationError("net_bias: full_jacobian limited to 64x64 images, got " +
                            std::to_string(y.h) + "x" + std::to_string(y.w));
    BackwardWants wants;
    wants.inputs = true;
    jy.resize(f0.data.size());
    for (std::int64_t i = 0; i < f0.numel(); ++i) {
      const GradientSet gs = tape.backward(mn.output, wants, i);
      const Tensor& row = gs.by_input.at(x);
      double acc = 0.0;
      for (std::size_t k = 0; k < row.data.size(); ++k)
        acc += row.data[k] * yt.data[k];
      jy[static_cast<std::size_t>(i)] = acc;
    }
  }

  NetBias nb;
  nb.bias = ImageGray(static_cast<int>(f0.shape.h), static_cast<int>(f0.shape.w));
  for (std::size_t i = 0; i < nb.bias.px.size(); ++i)
    nb.bias.px[i] = f0.data[i] - jy[i];
  nb.l2 = l2_norm(nb.bias.px);
  const double fn = l2_norm(f0.data);
  nb.relative = fn > 0 ? nb.l2 / fn : 0.0;
  return nb;
}

DeltaPsnrSummary delta_psnr_summary(const std::vector<DeltaPsnrEntry>& entries) {
  if (entries.empty()) throw ValidationError("delta_psnr: no entries");
  std::vector<double> deltas;
  deltas.reserve(entries.size());
  DeltaPsnrSummary s;
  for (const DeltaPsnrEntry& e : entries) deltas.push_back(e.after - e.before);
  std::sort(deltas.begin(), deltas.end());
  s.count = deltas.size();
  s.min = deltas.front();
  s.max = deltas.back();
  double sum = 0.0;
  for (double d : deltas) {
    sum += d;
    if (d < 0) ++s.negatives;
  }
  s.mean = sum / static_cast<double>(deltas.size());
  const std::size_t mid = deltas.size() / 2;
  s.median = deltas.size() % 2 ? deltas[mid] : 0.5 * (deltas[mid - 1] + deltas[mid]);
  return s;
}

std::string delta_psnr_csv(const std::vector<DeltaPsnrEntry>& entries) {
  std::string out = "id,psnr_before,psnr_after,delta\n";
  for (const DeltaPsnrEntry& e : entries)
    out += e.id + "," + fmt_double(e.before) + "," + fmt_double(e.after) + "," +
           fmt_double(e.after - e.before) + "\n";
  return out;
}

void filter_to_pgm(const EquivalentFilter& filter, const std::string& path) {
  double m = 0.0;
  for (double v : filter.weights.px) m = std::max(m, std::abs(v));
  ImageGray img(filter.weights.h, filter.weights.w);
  if (m == 0.0) {
    std::fill(img.px.begin(), img.px.end(), 128.0 / 255.0);
  } else {
    for (std::size_t i = 0; i < img.px.size(); ++i)
      img.px[i] = (filter.weights.px[i] + m) / (2.0 * m);
  }
  save_pgm(img, path, 8);
}

}  // namespace gt
