#include "gaintune/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace gt {

Tensor to_tensor(const ImageGray& img) {
  return Tensor(Shape{1, 1, img.h, img.w}, img.px);
}

ImageGray image_from_tensor(const Tensor& t) {
  if (t.shape.n != 1 || t.shape.c != 1)
    throw ValidationError("image_from_tensor: need shape (1,1,h,w), got " +
                          t.shape.str());
  ImageGray img(static_cast<int>(t.shape.h), static_cast<int>(t.shape.w));
  img.px = t.data;
  return img;
}

void require_unit_range(const ImageGray& img, const char* what) {
  for (double v : img.px)
    if (!(v >= 0.0 && v <= 1.0))
      throw ValidationError(std::string(what) + ": pixel value " + fmt_double(v) +
                            " outside [0,1]");
}

ImageGray gen_piecewise_constant(RngStream& stream, int size, int shapes_lo,
                                 int shapes_hi) {
  if (size < 16) throw ValidationError("gen_piecewise_constant: size must be >= 16");
  if (shapes_lo < 0 || shapes_hi < shapes_lo)
    throw ValidationError("gen_piecewise_constant: bad shape range");
  ImageGray img(size, size, 0.0);
  const double background = stream.uniform();
  std::fill(img.px.begin(), img.px.end(), background);
  const int k = shapes_lo + static_cast<int>(stream.uniform_int(
                                static_cast<std::uint64_t>(shapes_hi - shapes_lo + 1)));
  for (int r = 0; r < k; ++r) {
    const bool is_disc = stream.uniform_int(2) == 1;
    const double intensity = stream.uniform();
    if (is_disc) {
      const double cx = stream.uniform(0.0, size);
      const double cy = stream.uniform(0.0, size);
      const double radius = stream.uniform(size / 16.0, size / 3.0);
      const double r2 = radius * radius;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double dx = x - cx, dy = y - cy;
          if (dx * dx + dy * dy <= r2) img.at(y, x) = intensity;
        }
    } else {
      const double px = stream.uniform(0.0, size);
      const double py = stream.uniform(0.0, size);
      const double theta = stream.uniform(0.0, 2.0 * std::numbers::pi);
      const double nx = std::cos(theta), ny = std::sin(theta);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if ((x - px) * nx + (y - py) * ny >= 0.0) img.at(y, x) = intensity;
    }
  }
  return img;
}

NoisyPair add_gaussian_noise(const ImageGray& img, double sigma255, RngStream& stream) {
  if (sigma255 < 0) throw ValidationError("add_gaussian_noise: sigma255 must be >= 0");
  NoisyPair pair;
  pair.clean = img;
  pair.noisy = img;
  pair.sigma255 = sigma255;
  const double sigma = sigma255 / 255.0;
  for (double& v : pair.noisy.px) v += sigma * stream.gaussian();
  return pair;
}

namespace {

struct PatchDraw {
  int y, x;
  bool hflip, vflip, rot90;
};

PatchDraw draw_patch(const ImageGray& img, const PatchConfig& cfg, RngStream& stream) {
  PatchDraw d{};
  d.y = static_cast<int>(stream.uniform_int(
      static_cast<std::uint64_t>(img.h - cfg.patch_size + 1)));
  d.x = static_cast<int>(stream.uniform_int(
      static_cast<std::uint64_t>(img.w - cfg.patch_size + 1)));
  d.hflip = cfg.hflip && stream.uniform_int(2) == 1;
  d.vflip = cfg.vflip && stream.uniform_int(2) == 1;
  d.rot90 = cfg.rot90 && stream.uniform_int(2) == 1;
  return d;
}

void copy_patch(const ImageGray& img, const PatchDraw& d, int ps, double* out) {
  for (int y = 0; y < ps; ++y)
    for (int x = 0; x < ps; ++x) {
      int sy = d.vflip ? ps - 1 - y : y;
      int sx = d.hflip ? ps - 1 - x : x;
      if (d.rot90) {
        // quarter turn: output (y,x) reads source (x, ps-1-y)
        const int ty = sx, tx = ps - 1 - sy;
        sy = ty;
        sx = tx;
      }
      out[y * ps + x] = img.at(d.y + sy, d.x + sx);
    }
}

void check_patch_cfg(const ImageGray& img, const PatchConfig& cfg) {
  if (cfg.patch_size < 1 || cfg.patch_size > img.h || cfg.patch_size > img.w)
    throw ValidationError("sample_patches: patch size " +
                          std::to_string(cfg.patch_size) +
                          " exceeds image " + std::to_string(img.h) + "x" +
                          std::to_string(img.w));
  if (cfg.patches_per_step < 1)
    throw ValidationError("sample_patches: need at least one patch");
}

}  // namespace

Tensor sample_patches(const ImageGray& img, const PatchConfig& cfg, RngStream& stream) {
  check_patch_cfg(img, cfg);
  const int ps = cfg.patch_size;
  Tensor out(Shape{cfg.patches_per_step, 1, ps, ps});
  for (int i = 0; i < cfg.patches_per_step; ++i) {
    const PatchDraw d = draw_patch(img, cfg, stream);
    copy_patch(img, d, ps, &out.data[static_cast<std::size_t>(i) * ps * ps]);
  }
  return out;
}

Tensor sample_patches(const ImageGray& img, const PatchConfig& cfg) {
  RngStream stream(cfg.seed);
  return sample_patches(img, cfg, stream);
}

std::pair<Tensor, Tensor> sample_patch_pairs(const NoisyPair& pair,
                                             const PatchConfig& cfg,
                                             RngStream& stream) {
  check_patch_cfg(pair.clean, cfg);
  if (pair.clean.h != pair.noisy.h || pair.clean.w != pair.noisy.w)
    throw ValidationError("sample_patch_pairs: clean and noisy extents differ");
  const int ps = cfg.patch_size;
  Tensor clean(Shape{cfg.patches_per_step, 1, ps, ps});
  Tensor noisy(clean.shape);
  for (int i = 0; i < cfg.patches_per_step; ++i) {
    const PatchDraw d = draw_patch(pair.clean, cfg, stream);
    copy_patch(pair.clean, d, ps, &clean.data[static_cast<std::size_t>(i) * ps * ps]);
    copy_patch(pair.noisy, d, ps, &noisy.data[static_cast<std::size_t>(i) * ps * ps]);
  }
  return {std::move(clean), std::move(noisy)};
}

// ---------------------------------------------------------------------------
// PGM

namespace {

int pgm_token(std::istream& is) {
  // next integer token, skipping whitespace and '#' comments
  while (true) {
    const int c = is.peek();
    if (c == EOF) throw IoError("pgm: truncated header");
    if (c == '#') {
      std::string line;
      std::getline(is, line);
      continue;
    }
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    break;
  }
  int v;
  if (!(is >> v)) throw IoError("pgm: malformed header");
  return v;
}

}  // namespace

ImageGray load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("pgm: cannot open '" + path + "'");
  char m0 = 0, m1 = 0;
  is.get(m0).get(m1);
  if (m0 != 'P') throw IoError("pgm: bad magic in '" + path + "'");
  if (m1 != '5')
    throw IoError("pgm: unsupported PGM variant 'P" + std::string(1, m1) +
                  "' (binary P5 only)");
  const int w = pgm_token(is);
  const int h = pgm_token(is);
  const int maxval = pgm_token(is);
  if (w < 1 || h < 1) throw IoError("pgm: bad extents");
  if (maxval != 255 && maxval != 65535)
    throw IoError("pgm: unsupported maxval " + std::to_string(maxval));
  is.get();  // single whitespace byte after maxval
  ImageGray img(h, w);
  const std::size_t n = img.px.size();
  if (maxval == 255) {
    std::vector<unsigned char> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
      throw IoError("pgm: truncated payload in '" + path + "'");
    for (std::size_t i = 0; i < n; ++i) img.px[i] = buf[i] / 255.0;
  } else {
    std::vector<unsigned char> buf(2 * n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
    if (static_cast<std::size_t>(is.gcount()) != 2 * n)
      throw IoError("pgm: truncated payload in '" + path + "'");
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
      img.px[i] = v / 65535.0;
    }
  }
  return img;
}

void save_pgm(const ImageGray& img, const std::string& path, int bits) {
  if (bits != 8 && bits != 16) throw ValidationError("pgm: bits must be 8 or 16");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("pgm: cannot open '" + path + "' for writing");
  const int maxval = bits == 8 ? 255 : 65535;
  os << "P5\n" << img.w << " " << img.h << "\n" << maxval << "\n";
  auto quantize = [&](double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned>(std::lround(c * maxval));
  };
  if (bits == 8) {
    std::vector<unsigned char> buf(img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i)
      buf[i] = static_cast<unsigned char>(quantize(img.px[i]));
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<unsigned char> buf(2 * img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) {
      const unsigned v = quantize(img.px[i]);
      buf[2 * i] = static_cast<unsigned char>(v >> 8);  // big-endian samples
      buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw IoError("pgm: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Raw f64 tensors

static constexpr char kRawMagic[] = "GTRAW01";  // 7 bytes on disk

Tensor load_rawf64(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("rawf64: cannot open '" + path + "'");
  char magic[7];
  is.read(magic, 7);
  if (is.gcount() != 7 || std::memcmp(magic, kRawMagic, 7) != 0)
    throw IoError("rawf64: bad magic in '" + path + "'");
  std::uint64_t ext[4];
  is.read(reinterpret_cast<char*>(ext), 32);
  if (is.gcount() != 32) throw IoError("rawf64: truncated header in '" + path + "'");
  Shape s{static_cast<std::int64_t>(ext[0]), static_cast<std::int64_t>(ext[1]),
          static_cast<std::int64_t>(ext[2]), static_cast<std::int64_t>(ext[3])};
  if (s.numel() < 0 || s.numel() > (std::int64_t(1) << 32))
    throw IoError("rawf64: implausible extents in '" + path + "'");
  Tensor t(s);
  const std::streamsize want = static_cast<std::streamsize>(t.data.size() * 8);
  is.read(reinterpret_cast<char*>(t.data.data()), want);
  if (is.gcount() != want) throw IoError("rawf64: truncated payload in '" + path + "'");
  return t;
}

void save_rawf64(const Tensor& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("rawf64: cannot open '" + path + "' for writing");
  os.write(kRawMagic, 7);
  const std::uint64_t ext[4] = {
      static_cast<std::uint64_t>(t.shape.n), static_cast<std::uint64_t>(t.shape.c),
      static_cast<std::uint64_t>(t.shape.h), static_cast<std::uint64_t>(t.shape.w)};
  os.write(reinterpret_cast<const char*>(ext), 32);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 8));
  if (!os) throw IoError("rawf64: write failed for '" + path + "'");
}

}  // namespace gt
