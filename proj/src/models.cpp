#include "gaintune/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gt {
namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::TConv: return "tconv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2: return "maxpool2";
    case LayerKind::Upsample2: return "upsample2";
    case LayerKind::Concat: return "concat";
    case LayerKind::ResidualSubtractInput: return "residual";
  }
  return "?";
}

bool is_conv(const Layer& l) {
  return l.kind == LayerKind::Conv || l.kind == LayerKind::TConv;
}

Shape weight_shape(const Layer& l) {
  if (l.kind == LayerKind::Conv) return Shape{l.cout, l.cin, l.k, l.k};
  return Shape{l.cin, l.cout, l.k, l.k};  // tconv stores (cin,cout,kh,kw)
}

[[noreturn]] void layer_error(int idx, const std::string& what) {
  throw ValidationError("architecture: layer " + std::to_string(idx) + ": " + what);
}

// Channel count after each layer; validates chaining as it goes.
std::vector<int> channel_walk(const ArchitectureSpec& spec) {
  if (spec.layers.empty()) throw ValidationError("architecture: no layers");
  if (!is_conv(spec.layers.front()))
    layer_error(0, "network must start with a convolution");
  std::vector<int> out(spec.layers.size());
  const int in_ch = spec.layers.front().cin;
  int cur = in_ch;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::TConv:
        if (l.cin != cur)
          layer_error(static_cast<int>(i), "expects " + std::to_string(l.cin) +
                                               " input channels, got " +
                                               std::to_string(cur));
        if (l.cout < 1 || l.k < 1 || l.stride < 1 || l.dilation < 1 || l.pad < 0)
          layer_error(static_cast<int>(i), "invalid conv geometry");
        cur = l.cout;
        break;
      case LayerKind::Relu:
      case LayerKind::MaxPool2:
      case LayerKind::Upsample2:
        break;
      case LayerKind::Concat:
        if (l.concat_src < 0 || l.concat_src >= static_cast<int>(i))
          layer_error(static_cast<int>(i), "concat source out of range");
        cur += out[static_cast<std::size_t>(l.concat_src)];
        break;
      case LayerKind::ResidualSubtractInput:
        if (cur != in_ch)
          layer_error(static_cast<int>(i),
                      "residual subtraction needs " + std::to_string(in_ch) +
                          " channels, got " + std::to_string(cur));
        break;
    }
    out[i] = cur;
  }
  return out;
}

}  // namespace

int ArchitectureSpec::input_channels() const {
  if (layers.empty() || !is_conv(layers.front()))
    throw ValidationError("architecture: no leading convolution");
  return layers.front().cin;
}

void ArchitectureSpec::validate() const {
  channel_walk(*this);
  int last_conv = -1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (is_conv(l)) last_conv = static_cast<int>(i);
    if (!is_conv(l) && l.gain_tunable)
      layer_error(static_cast<int>(i), "gain flag on a non-convolution layer");
    if (bias_free && is_conv(l) && l.has_bias)
      layer_error(static_cast<int>(i), "bias present in a bias-free network");
  }
  if (last_conv >= 0 && layers[static_cast<std::size_t>(last_conv)].gain_tunable)
    layer_error(last_conv, "final convolution must not be gain-tunable");
}

std::string ArchitectureSpec::canonical_text() const {
  std::ostringstream os;
  os << "gaintune-arch 1\n";
  os << "name " << name << "\n";
  os << "bias_free " << (bias_free ? 1 : 0) << "\n";
  os << "layers " << layers.size() << "\n";
  for (const Layer& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::TConv:
        os << kind_name(l.kind) << " cin " << l.cin << " cout " << l.cout << " k "
           << l.k << " stride " << l.stride << " pad " << l.pad << " dilation "
           << l.dilation << " bias " << (l.has_bias ? 1 : 0) << " gain "
           << (l.gain_tunable ? 1 : 0) << "\n";
        break;
      case LayerKind::Concat:
        os << "concat src " << l.concat_src << "\n";
        break;
      default:
        os << kind_name(l.kind) << "\n";
    }
  }
  return os.str();
}

ArchitectureSpec ArchitectureSpec::parse_text(const std::string& text) {
  std::istringstream is(text);
  std::string tok;
  auto expect = [&](const char* want) {
    if (!(is >> tok) || tok != want)
      throw IoError(std::string("architecture text: expected '") + want + "', got '" +
                    tok + "'");
  };
  auto read_int = [&]() {
    long long v;
    if (!(is >> v)) throw IoError("architecture text: expected an integer");
    return static_cast<int>(v);
  };
  expect("gaintune-arch");
  if (read_int() != 1) throw IoError("architecture text: unsupported version");
  ArchitectureSpec spec;
  expect("name");
  if (!(is >> spec.name)) throw IoError("architecture text: missing name");
  expect("bias_free");
  spec.bias_free = read_int() != 0;
  expect("layers");
  const int count = read_int();
  for (int i = 0; i < count; ++i) {
    if (!(is >> tok)) throw IoError("architecture text: truncated layer list");
    Layer l;
    if (tok == "conv" || tok == "tconv") {
      l.kind = tok == "conv" ? LayerKind::Conv : LayerKind::TConv;
      expect("cin"); l.cin = read_int();
      expect("cout"); l.cout = read_int();
      expect("k"); l.k = read_int();
      expect("stride"); l.stride = read_int();
      expect("pad"); l.pad = read_int();
      expect("dilation"); l.dilation = read_int();
      expect("bias"); l.has_bias = read_int() != 0;
      expect("gain"); l.gain_tunable = read_int() != 0;
    } else if (tok == "relu") {
      l.kind = LayerKind::Relu;
    } else if (tok == "maxpool2") {
      l.kind = LayerKind::MaxPool2;
    } else if (tok == "upsample2") {
      l.kind = LayerKind::Upsample2;
    } else if (tok == "concat") {
      l.kind = LayerKind::Concat;
      expect("src");
      l.concat_src = read_int();
    } else if (tok == "residual") {
      l.kind = LayerKind::ResidualSubtractInput;
    } else {
      throw IoError("architecture text: unknown layer kind '" + tok + "'");
    }
    spec.layers.push_back(l);
  }
  spec.validate();
  return spec;
}

ArchitectureSpec preset(const std::string& name, int depth, int width) {
  if (name != "dncnn-s" && name != "unet-s" && name != "bf-dncnn-s")
    throw ValidationError("preset: unknown architecture '" + name + "'");
  if (width < 4) throw ValidationError("preset: width must be >= 4");
  ArchitectureSpec spec;
  spec.name = name;
  if (name == "unet-s") {
    // Fixed 9-conv topology; channel counts scale with width (w = paper/32).
    const int w1 = width, w2 = 2 * width;
    auto conv = [&](int cin, int cout, int k, int stride, int pad, int dil) {
      spec.layers.push_back(Layer{LayerKind::Conv, cin, cout, k, stride, pad, dil,
                                  true, true, -1});
    };
    auto relu = [&] { spec.layers.push_back(Layer{LayerKind::Relu}); };
    conv(1, w1, 5, 1, 2, 1); relu();                    // 0,1
    conv(w1, w1, 3, 1, 1, 1); relu();                   // 2,3
    conv(w1, w2, 3, 2, 1, 1); relu();                   // 4,5  downsample
    conv(w2, w2, 3, 1, 1, 1); relu();                   // 6,7
    conv(w2, w2, 3, 1, 2, 2); relu();                   // 8,9  dilation 2
    conv(w2, w2, 3, 1, 4, 4); relu();                   // 10,11 dilation 4
    spec.layers.push_back(Layer{LayerKind::TConv, w2, w2, 4, 2, 1, 1, true, true, -1});
    spec.layers.push_back(Layer{LayerKind::Relu});      // 12,13 upsample
    spec.layers.push_back(Layer{LayerKind::Concat, 0, 0, 0, 1, 0, 1, false, false, 2});
    conv(w2 + w1, w1, 3, 1, 1, 1); relu();              // 15,16
    conv(w1, 1, 5, 1, 2, 1);                            // 17, linear output
    spec.layers.back().gain_tunable = false;
  } else {
    if (depth < 3) throw ValidationError("preset: depth must be >= 3");
    const bool bf = name == "bf-dncnn-s";
    spec.bias_free = bf;
    for (int i = 0; i < depth; ++i) {
      Layer l{LayerKind::Conv,
              i == 0 ? 1 : width,
              i == depth - 1 ? 1 : width,
              3, 1, 1, 1,
              !bf,
              i != depth - 1,
              -1};
      spec.layers.push_back(l);
      if (i != depth - 1) spec.layers.push_back(Layer{LayerKind::Relu});
    }
    // The stack predicts the noise; the denoised estimate is input minus it.
    spec.layers.push_back(Layer{LayerKind::ResidualSubtractInput});
  }
  spec.validate();
  return spec;
}

std::pair<ParamSet, GainSet> build(const ArchitectureSpec& spec, RngStream& stream) {
  spec.validate();
  ParamSet params;
  GainSet gains;
  params.layers.resize(spec.layers.size());
  gains.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    if (!is_conv(l)) continue;
    const Shape ws = weight_shape(l);
    const double sigma = std::sqrt(2.0 / (static_cast<double>(l.cin) * l.k * l.k));
    params.layers[i].weights = gaussian(stream, ws, sigma);
    if (l.has_bias) params.layers[i].bias = Tensor(Shape{1, l.cout, 1, 1});
    if (l.gain_tunable) gains.layers[i].assign(static_cast<std::size_t>(l.cout), 1.0);
  }
  return {std::move(params), std::move(gains)};
}

std::int64_t count_params(const ArchitectureSpec& spec) {
  std::int64_t n = 0;
  for (const Layer& l : spec.layers) {
    if (!is_conv(l)) continue;
    n += weight_shape(l).numel();
    if (l.has_bias) n += l.cout;
  }
  return n;
}

std::int64_t count_gains(const ArchitectureSpec& spec) {
  std::int64_t n = 0;
  for (const Layer& l : spec.layers)
    if (is_conv(l) && l.gain_tunable) n += l.cout;
  return n;
}

int min_input_extent(const ArchitectureSpec& spec) {
  for (int e = 1; e <= 256; ++e) {
    try {
      Shape cur{1, spec.input_channels(), e, e};
      std::vector<Shape> outs(spec.layers.size());
      for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const Layer& l = spec.layers[i];
        switch (l.kind) {
          case LayerKind::Conv:
            cur = kernels::conv2d_out_shape(cur, weight_shape(l),
                                            {l.stride, l.pad, l.dilation});
            break;
          case LayerKind::TConv:
            cur = kernels::tconv2d_out_shape(cur, weight_shape(l), l.stride, l.pad);
            break;
          case LayerKind::MaxPool2:
            cur.h = (cur.h - cur.h % 2) / 2;
            cur.w = (cur.w - cur.w % 2) / 2;
            if (cur.h < 1 || cur.w < 1) throw ValidationError("pooled away");
            break;
          case LayerKind::Upsample2:
            cur.h *= 2;
            cur.w *= 2;
            break;
          case LayerKind::Concat: {
            const Shape s = outs[static_cast<std::size_t>(l.concat_src)];
            if (s.h != cur.h || s.w != cur.w)
              throw ValidationError("concat extent mismatch");
            cur.c += s.c;
            break;
          }
          default:
            break;
        }
        outs[i] = cur;
      }
      return e;
    } catch (const ValidationError&) {
    }
  }
  throw ValidationError("architecture: no valid input extent up to 256");
}

namespace {
bool needs_even_input(const ArchitectureSpec& spec) {
  for (const Layer& l : spec.layers)
    if (l.kind == LayerKind::TConv || l.kind == LayerKind::MaxPool2 || l.stride > 1)
      return true;
  return false;
}
}  // namespace

ModelNodes record_forward(Tape& tape, const ArchitectureSpec& spec,
                          const ParamSet& params, const GainSet* gains,
                          int input_node) {
  ModelNodes mn;
  mn.input = input_node;
  mn.layer_out.resize(spec.layers.size(), -1);
  int cur = input_node;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::TConv: {
        const ConvParams& cp = params.layers[i];
        const int w = tape.param(weight_slot(static_cast<int>(i)), cp.weights);
        const int b = l.has_bias
                          ? tape.param(bias_slot(static_cast<int>(i)), cp.bias)
                          : -1;
        cur = l.kind == LayerKind::Conv
                  ? tape.conv2d(cur, w, b, {l.stride, l.pad, l.dilation})
                  : tape.tconv2d(cur, w, b, l.stride, l.pad);
        if (l.gain_tunable && gains) {
          Tensor gt(Shape{1, l.cout, 1, 1}, std::vector<double>(
                                                gains->layers[i].begin(),
                                                gains->layers[i].end()));
          const int gn = tape.param(gain_slot(static_cast<int>(i)), std::move(gt));
          cur = tape.channel_scale(cur, gn);
        }
        break;
      }
      case LayerKind::Relu:
        cur = tape.relu(cur);
        break;
      case LayerKind::MaxPool2:
        cur = tape.maxpool2(cur);
        break;
      case LayerKind::Upsample2:
        cur = tape.upsample2(cur);
        break;
      case LayerKind::Concat:
        cur = tape.concat_channels(cur, mn.layer_out[static_cast<std::size_t>(l.concat_src)]);
        break;
      case LayerKind::ResidualSubtractInput:
        cur = tape.sub(input_node, cur);
        break;
    }
    mn.layer_out[i] = cur;
  }
  mn.output = cur;
  return mn;
}

Tensor forward(const ArchitectureSpec& spec, const ParamSet& params,
               const GainSet* gains, const Tensor& input) {
  if (input.shape.c != spec.input_channels())
    throw ValidationError("forward: input " + input.shape.str() + " must have " +
                          std::to_string(spec.input_channels()) + " channel(s)");
  const int min_e = min_input_extent(spec);
  if (input.shape.h < min_e || input.shape.w < min_e)
    throw ValidationError("forward: input " + input.shape.str() +
                          " below minimum extent " + std::to_string(min_e) + "x" +
                          std::to_string(min_e) + " for " + spec.name);
  Tape tape;
  Tensor in = needs_even_input(spec) ? crop_to_even(input) : input;
  const int x = tape.constant(std::move(in));
  ModelNodes mn = record_forward(tape, spec, params, gains, x);
  return tape.value(mn.output);
}

ParamSet scale_params(const ArchitectureSpec& spec, const ParamSet& params,
                      const GainSet& gains) {
  ParamSet out = params;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    if (!is_conv(l) || !l.gain_tunable || gains.layers[i].empty()) continue;
    Tensor& w = out.layers[i].weights;
    for (std::int64_t a = 0; a < w.shape.n; ++a)
      for (std::int64_t b = 0; b < w.shape.c; ++b) {
        // conv weights are (cout,cin,..), tconv (cin,cout,..)
        const std::int64_t co = l.kind == LayerKind::Conv ? a : b;
        const double gval = gains.layers[i][static_cast<std::size_t>(co)];
        for (std::int64_t y = 0; y < w.shape.h; ++y)
          for (std::int64_t x = 0; x < w.shape.w; ++x) w.at(a, b, y, x) *= gval;
      }
    if (out.layers[i].bias.numel())
      for (std::int64_t c = 0; c < l.cout; ++c)
        out.layers[i].bias.data[static_cast<std::size_t>(c)] *=
            gains.layers[i][static_cast<std::size_t>(c)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "GTCKPT01", u64 arch text length, arch text, weight and
// bias doubles per conv layer in spec order, gains per tunable layer, u64
// metadata length, metadata text. All integers and floats little-endian.

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), 8);
}
void put_doubles(std::string& out, const double* p, std::size_t n) {
  out.append(reinterpret_cast<const char*>(p), 8 * n);
}

struct Reader {
  const std::string& b;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > b.size()) throw IoError("checkpoint: truncated file");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, b.data() + pos, 8);
    pos += 8;
    return v;
  }
  void doubles(double* p, std::size_t n) {
    need(8 * n);
    std::memcpy(p, b.data() + pos, 8 * n);
    pos += 8 * n;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = b.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string meta_text(const CheckpointMeta& m) {
  std::string s;
  s += "sigma_lo " + fmt_double(m.sigma_lo) + "\n";
  s += "sigma_hi " + fmt_double(m.sigma_hi) + "\n";
  s += "steps " + std::to_string(m.steps) + "\n";
  s += "seed " + std::to_string(m.seed) + "\n";
  s += "timestamp " + (m.timestamp.empty() ? std::string("unset") : m.timestamp) + "\n";
  return s;
}

CheckpointMeta parse_meta(const std::string& s) {
  CheckpointMeta m;
  std::istringstream is(s);
  std::string key;
  while (is >> key) {
    if (key == "sigma_lo") is >> m.sigma_lo;
    else if (key == "sigma_hi") is >> m.sigma_hi;
    else if (key == "steps") is >> m.steps;
    else if (key == "seed") is >> m.seed;
    else if (key == "timestamp") is >> m.timestamp;
    else throw IoError("checkpoint: unknown metadata key '" + key + "'");
  }
  return m;
}

}  // namespace

std::string checkpoint_serialize(const Checkpoint& ckpt) {
  ckpt.spec.validate();
  std::string out = "GTCKPT01";
  const std::string arch = ckpt.spec.canonical_text();
  put_u64(out, arch.size());
  out += arch;
  for (std::size_t i = 0; i < ckpt.spec.layers.size(); ++i) {
    const Layer& l = ckpt.spec.layers[i];
    if (!is_conv(l)) continue;
    const ConvParams& cp = ckpt.params.layers[i];
    if (cp.weights.shape != weight_shape(l))
      throw ValidationError("checkpoint: layer " + std::to_string(i) +
                            " weight shape mismatch");
    put_doubles(out, cp.weights.data.data(), cp.weights.data.size());
    if (l.has_bias) {
      if (cp.bias.numel() != l.cout)
        throw ValidationError("checkpoint: layer " + std::to_string(i) +
                              " bias length mismatch");
      put_doubles(out, cp.bias.data.data(), cp.bias.data.size());
    }
  }
  for (std::size_t i = 0; i < ckpt.spec.layers.size(); ++i) {
    const Layer& l = ckpt.spec.layers[i];
    if (!is_conv(l) || !l.gain_tunable) continue;
    if (ckpt.gains.layers[i].size() != static_cast<std::size_t>(l.cout))
      throw ValidationError("checkpoint: layer " + std::to_string(i) +
                            " gain count mismatch");
    put_doubles(out, ckpt.gains.layers[i].data(), ckpt.gains.layers[i].size());
  }
  const std::string meta = meta_text(ckpt.meta);
  put_u64(out, meta.size());
  out += meta;
  return out;
}

Checkpoint checkpoint_deserialize(const std::string& bytes) {
  Reader r{bytes};
  r.need(8);
  if (bytes.compare(0, 6, "GTCKPT") != 0) throw IoError("checkpoint: bad magic");
  if (bytes.compare(6, 2, "01") != 0)
    throw IoError("checkpoint: unsupported format version");
  r.pos = 8;
  const std::uint64_t arch_len = r.u64();
  Checkpoint ckpt;
  ckpt.spec = ArchitectureSpec::parse_text(r.text(arch_len));
  ckpt.params.layers.resize(ckpt.spec.layers.size());
  ckpt.gains.layers.resize(ckpt.spec.layers.size());
  for (std::size_t i = 0; i < ckpt.spec.layers.size(); ++i) {
    const Layer& l = ckpt.spec.layers[i];
    if (!is_conv(l)) continue;
    Tensor w(weight_shape(l));
    r.doubles(w.data.data(), w.data.size());
    ckpt.params.layers[i].weights = std::move(w);
    if (l.has_bias) {
      Tensor b(Shape{1, l.cout, 1, 1});
      r.doubles(b.data.data(), b.data.size());
      ckpt.params.layers[i].bias = std::move(b);
    }
  }
  for (std::size_t i = 0; i < ckpt.spec.layers.size(); ++i) {
    const Layer& l = ckpt.spec.layers[i];
    if (!is_conv(l) || !l.gain_tunable) continue;
    ckpt.gains.layers[i].resize(static_cast<std::size_t>(l.cout));
    r.doubles(ckpt.gains.layers[i].data(), ckpt.gains.layers[i].size());
  }
  const std::uint64_t meta_len = r.u64();
  ckpt.meta = parse_meta(r.text(meta_len));
  if (r.pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = checkpoint_serialize(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return checkpoint_deserialize(ss.str());
}

std::string checkpoint_param_section(const std::string& bytes) {
  Reader r{bytes};
  r.need(8);
  r.pos = 8;
  const std::uint64_t arch_len = r.u64();
  ArchitectureSpec spec = ArchitectureSpec::parse_text(r.text(arch_len));
  std::size_t len = 0;
  for (const Layer& l : spec.layers) {
    if (!is_conv(l)) continue;
    len += static_cast<std::size_t>(weight_shape(l).numel()) * 8;
    if (l.has_bias) len += static_cast<std::size_t>(l.cout) * 8;
  }
  r.need(len);
  return bytes.substr(r.pos, len);
}

}  // namespace gt
