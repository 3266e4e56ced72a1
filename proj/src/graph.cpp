#include "gaintune/graph.hpp"

#include <cmath>
#include <string>

namespace gt {
namespace {

void axpy(Tensor& acc, const Tensor& t, double a = 1.0) {
  require_same_shape(acc, t, "gradient accumulate");
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += a * t.data[i];
}

Tensor scalar_tensor(double v) { return Tensor(Shape{1, 1, 1, 1}, {v}); }

}  // namespace

Tensor crop_to_even(const Tensor& t) {
  const std::int64_t h = t.shape.h - (t.shape.h % 2);
  const std::int64_t w = t.shape.w - (t.shape.w % 2);
  if (h == t.shape.h && w == t.shape.w) return t;
  Tensor out(Shape{t.shape.n, t.shape.c, h, w});
  for (std::int64_t n = 0; n < t.shape.n; ++n)
    for (std::int64_t c = 0; c < t.shape.c; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          out.at(n, c, y, x) = t.at(n, c, y, x);
  return out;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::check(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw ValidationError("graph: node id " + std::to_string(id) + " out of range");
  return id;
}

int Tape::constant(Tensor v) { return push(Node{OpKind::Constant, {}, -1, {}, std::move(v)}); }
int Tape::input(Tensor v) { return push(Node{OpKind::Input, {}, -1, {}, std::move(v)}); }
int Tape::param(int slot, Tensor v) {
  return push(Node{OpKind::Param, {}, slot, {}, std::move(v)});
}

int Tape::conv2d(int x, int w, int b, const kernels::ConvGeom& geom) {
  const Tensor* bias = b >= 0 ? &node(b).val : nullptr;
  Tensor out = kernels::conv2d_forward(node(x).val, node(w).val, bias, geom);
  Node n{OpKind::Conv2d, {x, w, b}, -1, geom, std::move(out)};
  return push(std::move(n));
}

int Tape::tconv2d(int x, int w, int b, int stride, int pad) {
  const Tensor* bias = b >= 0 ? &node(b).val : nullptr;
  Tensor out = kernels::tconv2d_forward(node(x).val, node(w).val, bias, stride, pad);
  Node n{OpKind::TConv2d, {x, w, b}, -1, kernels::ConvGeom{stride, pad, 1}, std::move(out)};
  return push(std::move(n));
}

int Tape::relu(int x) {
  return push(Node{OpKind::Relu, {x}, -1, {}, kernels::relu_forward(node(x).val)});
}

int Tape::channel_scale(int x, int gains) {
  return push(Node{OpKind::ChannelScale,
                   {x, gains},
                   -1,
                   {},
                   kernels::channel_scale_forward(node(x).val, node(gains).val)});
}

int Tape::maxpool2(int x) {
  Tensor in = crop_to_even(node(x).val);
  Node n;
  n.kind = OpKind::MaxPool2;
  n.in = {x};
  n.pool_in = in.shape;
  n.val = kernels::maxpool2_forward(in, n.argmax);
  return push(std::move(n));
}

int Tape::upsample2(int x) {
  return push(Node{OpKind::Upsample2, {x}, -1, {}, kernels::upsample2_forward(node(x).val)});
}

int Tape::concat_channels(int a, int b) {
  const Tensor& ta = node(a).val;
  const Tensor& tb = node(b).val;
  if (ta.shape.n != tb.shape.n || ta.shape.h != tb.shape.h || ta.shape.w != tb.shape.w)
    throw ValidationError("concat_channels: incompatible shapes " + ta.shape.str() +
                          " vs " + tb.shape.str());
  Tensor out(Shape{ta.shape.n, ta.shape.c + tb.shape.c, ta.shape.h, ta.shape.w});
  const std::int64_t plane = ta.shape.h * ta.shape.w;
  for (std::int64_t n = 0; n < ta.shape.n; ++n) {
    std::copy(ta.data.begin() + n * ta.shape.c * plane,
              ta.data.begin() + (n + 1) * ta.shape.c * plane,
              out.data.begin() + n * out.shape.c * plane);
    std::copy(tb.data.begin() + n * tb.shape.c * plane,
              tb.data.begin() + (n + 1) * tb.shape.c * plane,
              out.data.begin() + (n * out.shape.c + ta.shape.c) * plane);
  }
  return push(Node{OpKind::ConcatCh, {a, b}, -1, {}, std::move(out)});
}

int Tape::add(int a, int b) {
  const Tensor& ta = node(a).val;
  const Tensor& tb = node(b).val;
  require_same_shape(ta, tb, "add");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
  return push(Node{OpKind::Add, {a, b}, -1, {}, std::move(out)});
}

int Tape::sub(int a, int b) {
  const Tensor& ta = node(a).val;
  const Tensor& tb = node(b).val;
  require_same_shape(ta, tb, "sub");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
  return push(Node{OpKind::Sub, {a, b}, -1, {}, std::move(out)});
}

int Tape::mse(int a, int b) {
  const Tensor& ta = node(a).val;
  const Tensor& tb = node(b).val;
  require_same_shape(ta, tb, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.data.size(); ++i) {
    const double d = ta.data[i] - tb.data[i];
    acc += d * d;
  }
  return push(Node{OpKind::Mse, {a, b}, -1, {},
                   scalar_tensor(acc / static_cast<double>(ta.numel()))});
}

int Tape::dot(int a, int b) {
  const Tensor& ta = node(a).val;
  const Tensor& tb = node(b).val;
  require_same_shape(ta, tb, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.data.size(); ++i) acc += ta.data[i] * tb.data[i];
  return push(Node{OpKind::Dot, {a, b}, -1, {}, scalar_tensor(acc)});
}

int Tape::masked_mse(int pred, int target, std::vector<std::uint8_t> mask) {
  const Tensor& tp = node(pred).val;
  const Tensor& tt = node(target).val;
  require_same_shape(tp, tt, "masked_mse");
  if (mask.size() != tp.data.size())
    throw ValidationError("masked_mse: mask length does not match tensor");
  std::int64_t count = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      const double d = tp.data[i] - tt.data[i];
      acc += d * d;
      ++count;
    }
  if (count == 0) throw ValidationError("masked_mse: empty mask");
  Node n{OpKind::MaskedMse, {pred, target}, -1, {},
         scalar_tensor(acc / static_cast<double>(count))};
  n.mask = std::move(mask);
  n.mask_count = count;
  return push(std::move(n));
}

int Tape::lincomb(std::vector<int> xs, std::vector<double> coeffs, double bias) {
  if (xs.size() != coeffs.size())
    throw ValidationError("lincomb: terms and coefficients differ in length");
  double acc = bias;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (node(xs[i]).val.numel() != 1)
      throw ValidationError("lincomb: child is not a scalar");
    acc += coeffs[i] * node(xs[i]).val.data[0];
  }
  Node n{OpKind::LinComb, std::move(xs), -1, {}, scalar_tensor(acc)};
  n.coeffs = std::move(coeffs);
  n.coeff_bias = bias;
  return push(std::move(n));
}

std::vector<std::uint8_t> Tape::relu_pattern() const {
  std::vector<std::uint8_t> bits;
  for (const Node& n : nodes_) {
    if (n.kind != OpKind::Relu) continue;
    const Tensor& in = nodes_[n.in[0]].val;
    for (double v : in.data) bits.push_back(v > 0.0);
  }
  return bits;
}

double Tape::scalar(int id) const {
  const Tensor& v = value(id);
  if (v.numel() != 1)
    throw ValidationError("graph: node is not a scalar, shape " + v.shape.str());
  return v.data[0];
}

GradientSet Tape::backward(int out, const BackwardWants& wants,
                           std::optional<std::int64_t> element) const {
  check(out);
  // A leaf needs a gradient if it was requested; an op needs one if any of its
  // inputs does. Gradients are only propagated where needed, which skips the
  // expensive conv weight reductions during gain-only optimization.
  std::vector<char> needs(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.kind) {
      case OpKind::Constant: break;
      case OpKind::Input: needs[i] = wants.inputs; break;
      case OpKind::Param: needs[i] = wants.wants_slot(n.slot); break;
      default:
        for (int j : n.in)
          if (j >= 0 && needs[j]) { needs[i] = 1; break; }
    }
  }

  std::vector<Tensor> grad(nodes_.size());
  auto ensure = [&](int id) -> Tensor& {
    if (grad[id].numel() == 0 && nodes_[id].val.numel() != 0)
      grad[id] = Tensor(nodes_[id].val.shape);
    return grad[id];
  };

  const Tensor& ov = nodes_[out].val;
  if (element) {
    if (*element < 0 || *element >= ov.numel())
      throw ValidationError("backward: selected element out of range");
    ensure(out).data[static_cast<std::size_t>(*element)] = 1.0;
  } else {
    if (ov.numel() != 1)
      throw ValidationError(
          "backward: output is not a scalar and no element was selected");
    ensure(out).data[0] = 1.0;
  }

  GradientSet gs;
  for (int i = out; i >= 0; --i) {
    if (grad[i].numel() == 0) continue;
    const Node& n = nodes_[i];
    const Tensor& g = grad[i];
    auto want = [&](std::size_t pos) {
      return pos < n.in.size() && n.in[pos] >= 0 && needs[n.in[pos]];
    };
    switch (n.kind) {
      case OpKind::Constant:
        break;
      case OpKind::Input:
        if (wants.inputs) {
          auto [it, fresh] = gs.by_input.try_emplace(i, g);
          if (!fresh) axpy(it->second, g);
        }
        break;
      case OpKind::Param:
        if (wants.wants_slot(n.slot)) {
          auto [it, fresh] = gs.by_slot.try_emplace(n.slot, g);
          if (!fresh) axpy(it->second, g);
        }
        break;
      case OpKind::Conv2d: {
        const Node& x = nodes_[n.in[0]];
        const Node& w = nodes_[n.in[1]];
        if (want(0))
          axpy(ensure(n.in[0]),
               kernels::conv2d_backward_input(g, w.val, x.val.shape, n.geom));
        if (want(1))
          axpy(ensure(n.in[1]),
               kernels::conv2d_backward_weights(g, x.val, w.val.shape, n.geom));
        if (want(2)) axpy(ensure(n.in[2]), kernels::conv2d_backward_bias(g));
        break;
      }
      case OpKind::TConv2d: {
        const Node& x = nodes_[n.in[0]];
        const Node& w = nodes_[n.in[1]];
        if (want(0))
          axpy(ensure(n.in[0]), kernels::tconv2d_backward_input(
                                    g, w.val, x.val.shape, n.geom.stride, n.geom.pad));
        if (want(1))
          axpy(ensure(n.in[1]), kernels::tconv2d_backward_weights(
                                    g, x.val, w.val.shape, n.geom.stride, n.geom.pad));
        if (want(2)) axpy(ensure(n.in[2]), kernels::conv2d_backward_bias(g));
        break;
      }
      case OpKind::Relu:
        if (want(0)) axpy(ensure(n.in[0]), kernels::relu_backward(g, nodes_[n.in[0]].val));
        break;
      case OpKind::ChannelScale: {
        if (want(0))
          axpy(ensure(n.in[0]),
               kernels::channel_scale_backward_input(g, nodes_[n.in[1]].val));
        if (want(1))
          axpy(ensure(n.in[1]),
               kernels::channel_scale_backward_gains(g, nodes_[n.in[0]].val));
        break;
      }
      case OpKind::MaxPool2: {
        if (!want(0)) break;
        Tensor dc = kernels::maxpool2_backward(g, n.argmax, n.pool_in);
        const Shape xs = nodes_[n.in[0]].val.shape;
        if (xs == n.pool_in) {
          axpy(ensure(n.in[0]), dc);
        } else {
          Tensor padded(xs);  // cropped rows/columns get zero gradient
          for (std::int64_t b = 0; b < xs.n; ++b)
            for (std::int64_t c = 0; c < xs.c; ++c)
              for (std::int64_t y = 0; y < n.pool_in.h; ++y)
                for (std::int64_t x2 = 0; x2 < n.pool_in.w; ++x2)
                  padded.at(b, c, y, x2) = dc.at(b, c, y, x2);
          axpy(ensure(n.in[0]), padded);
        }
        break;
      }
      case OpKind::Upsample2:
        if (want(0)) axpy(ensure(n.in[0]), kernels::upsample2_backward(g));
        break;
      case OpKind::ConcatCh: {
        const Shape sa = nodes_[n.in[0]].val.shape;
        const Shape sb = nodes_[n.in[1]].val.shape;
        const std::int64_t plane = sa.h * sa.w;
        if (want(0)) {
          Tensor da(sa);
          for (std::int64_t b = 0; b < sa.n; ++b)
            std::copy(g.data.begin() + b * g.shape.c * plane,
                      g.data.begin() + (b * g.shape.c + sa.c) * plane,
                      da.data.begin() + b * sa.c * plane);
          axpy(ensure(n.in[0]), da);
        }
        if (want(1)) {
          Tensor db(sb);
          for (std::int64_t b = 0; b < sb.n; ++b)
            std::copy(g.data.begin() + (b * g.shape.c + sa.c) * plane,
                      g.data.begin() + (b + 1) * g.shape.c * plane,
                      db.data.begin() + b * sb.c * plane);
          axpy(ensure(n.in[1]), db);
        }
        break;
      }
      case OpKind::Add:
        if (want(0)) axpy(ensure(n.in[0]), g);
        if (want(1)) axpy(ensure(n.in[1]), g);
        break;
      case OpKind::Sub:
        if (want(0)) axpy(ensure(n.in[0]), g);
        if (want(1)) axpy(ensure(n.in[1]), g, -1.0);
        break;
      case OpKind::Mse: {
        const Tensor& a = nodes_[n.in[0]].val;
        const Tensor& b = nodes_[n.in[1]].val;
        const double s = 2.0 * g.data[0] / static_cast<double>(a.numel());
        if (want(0)) {
          Tensor& da = ensure(n.in[0]);
          for (std::size_t k = 0; k < a.data.size(); ++k)
            da.data[k] += s * (a.data[k] - b.data[k]);
        }
        if (want(1)) {
          Tensor& db = ensure(n.in[1]);
          for (std::size_t k = 0; k < a.data.size(); ++k)
            db.data[k] -= s * (a.data[k] - b.data[k]);
        }
        break;
      }
      case OpKind::Dot: {
        const Tensor& a = nodes_[n.in[0]].val;
        const Tensor& b = nodes_[n.in[1]].val;
        const double s = g.data[0];
        if (want(0)) {
          Tensor& da = ensure(n.in[0]);
          for (std::size_t k = 0; k < a.data.size(); ++k) da.data[k] += s * b.data[k];
        }
        if (want(1)) {
          Tensor& db = ensure(n.in[1]);
          for (std::size_t k = 0; k < a.data.size(); ++k) db.data[k] += s * a.data[k];
        }
        break;
      }
      case OpKind::MaskedMse: {
        const Tensor& p = nodes_[n.in[0]].val;
        const Tensor& t = nodes_[n.in[1]].val;
        const double s = 2.0 * g.data[0] / static_cast<double>(n.mask_count);
        if (want(0)) {
          Tensor& dp = ensure(n.in[0]);
          for (std::size_t k = 0; k < p.data.size(); ++k)
            if (n.mask[k]) dp.data[k] += s * (p.data[k] - t.data[k]);
        }
        if (want(1)) {
          Tensor& dt = ensure(n.in[1]);
          for (std::size_t k = 0; k < p.data.size(); ++k)
            if (n.mask[k]) dt.data[k] -= s * (p.data[k] - t.data[k]);
        }
        break;
      }
      case OpKind::LinComb: {
        const double s = g.data[0];
        for (std::size_t k = 0; k < n.in.size(); ++k)
          if (needs[n.in[k]]) ensure(n.in[k]).data[0] += s * n.coeffs[k];
        break;
      }
    }
  }
  return gs;
}

}  // namespace gt
