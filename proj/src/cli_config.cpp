#include "gaintune/cli_config.hpp"

#include <charconv>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gt {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& file, int line, const std::string& msg) {
  throw ValidationError(file + ":" + std::to_string(line) + ": " + msg);
}

struct KeyDoc {
  const char* section;
  const char* key;
  std::string def;
  const char* doc;
};

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text, const std::string& filename) {
  RunConfig cfg;
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&, int)>;

  auto int_setter = [&](int RunConfig::* field, int lo) {
    return Setter([field, lo](RunConfig& c, const std::string& v, const std::string& f, int ln) {
      try {
        const int x = std::stoi(v);
        if (x < lo) fail(f, ln, "value must be >= " + std::to_string(lo));
        c.*field = x;
      } catch (const ValidationError&) {
        throw;
      } catch (...) {
        fail(f, ln, "expected an integer, got '" + v + "'");
      }
    });
  };
  auto adapt_int = [&](int AdaptConfig::* field, int lo) {
    return Setter([field, lo](RunConfig& c, const std::string& v, const std::string& f, int ln) {
      try {
        const int x = std::stoi(v);
        if (x < lo) fail(f, ln, "value must be >= " + std::to_string(lo));
        c.adapt.*field = x;
      } catch (const ValidationError&) {
        throw;
      } catch (...) {
        fail(f, ln, "expected an integer, got '" + v + "'");
      }
    });
  };
  auto dbl = [&](double* (*get)(RunConfig&)) {
    return Setter([get](RunConfig& c, const std::string& v, const std::string& f, int ln) {
      try {
        *get(c) = std::stod(v);
      } catch (...) {
        fail(f, ln, "expected a number, got '" + v + "'");
      }
    });
  };
  auto boolean = [&](bool* (*get)(RunConfig&)) {
    return Setter([get](RunConfig& c, const std::string& v, const std::string& f, int ln) {
      if (v == "true" || v == "1") *get(c) = true;
      else if (v == "false" || v == "0") *get(c) = false;
      else fail(f, ln, "expected true/false, got '" + v + "'");
    });
  };
  auto u64 = [&](std::uint64_t* (*get)(RunConfig&)) {
    return Setter([get](RunConfig& c, const std::string& v, const std::string& f, int ln) {
      try {
        *get(c) = std::stoull(v);
      } catch (...) {
        fail(f, ln, "expected a non-negative integer, got '" + v + "'");
      }
    });
  };

  std::map<std::string, Setter> keys;
  keys["arch.name"] = [](RunConfig& c, const std::string& v, const std::string& f, int ln) {
    if (v != "dncnn-s" && v != "unet-s" && v != "bf-dncnn-s")
      fail(f, ln, "unknown architecture '" + v + "'");
    c.arch_name = v;
  };
  keys["arch.depth"] = int_setter(&RunConfig::depth, 3);
  keys["arch.width"] = int_setter(&RunConfig::width, 4);

  keys["data.patch_size"] = int_setter(&RunConfig::patch_size, 1);
  keys["data.hflip"] = boolean(+[](RunConfig& c) { return &c.hflip; });
  keys["data.vflip"] = boolean(+[](RunConfig& c) { return &c.vflip; });
  keys["data.rot90"] = boolean(+[](RunConfig& c) { return &c.rot90; });
  keys["data.sigma_lo"] = dbl(+[](RunConfig& c) { return &c.sigma_lo; });
  keys["data.sigma_hi"] = dbl(+[](RunConfig& c) { return &c.sigma_hi; });

  keys["pretrain.epochs"] = int_setter(&RunConfig::epochs, 1);
  keys["pretrain.lr0"] = dbl(+[](RunConfig& c) { return &c.lr0; });
  keys["pretrain.batch_size"] = int_setter(&RunConfig::batch_size, 1);
  keys["pretrain.patches_per_epoch"] = int_setter(&RunConfig::patches_per_epoch, 1);
  keys["pretrain.seed"] = u64(+[](RunConfig& c) { return &c.pretrain_seed; });

  keys["adapt.steps"] = adapt_int(&AdaptConfig::steps, 0);
  keys["adapt.patches_per_step"] = adapt_int(&AdaptConfig::patches_per_step, 1);
  keys["adapt.batch_size"] = adapt_int(&AdaptConfig::batch_size, 1);
  keys["adapt.patch_size"] = adapt_int(&AdaptConfig::patch_size, 1);
  keys["adapt.lr_initial"] = dbl(+[](RunConfig& c) { return &c.adapt.lr_initial; });
  keys["adapt.lr_after"] = dbl(+[](RunConfig& c) { return &c.adapt.lr_after; });
  keys["adapt.lr_drop_step"] = adapt_int(&AdaptConfig::lr_drop_step, 0);
  keys["adapt.probes"] = adapt_int(&AdaptConfig::probes, 1);
  keys["adapt.eps_factor"] = dbl(+[](RunConfig& c) { return &c.adapt.eps_factor; });
  keys["adapt.mask_fraction"] = dbl(+[](RunConfig& c) { return &c.adapt.mask_fraction; });
  keys["adapt.seed"] = u64(+[](RunConfig& c) { return &c.adapt.seed; });
  keys["adapt.loss"] = [](RunConfig& c, const std::string& v, const std::string& f, int ln) {
    if (v == "sure") c.adapt.loss = AdaptLoss::Sure;
    else if (v == "blindspot") c.adapt.loss = AdaptLoss::Blindspot;
    else if (v == "resample") c.adapt.loss = AdaptLoss::Resample;
    else fail(f, ln, "loss must be sure, blindspot or resample");
  };
  keys["adapt.mode"] = [](RunConfig& c, const std::string& v, const std::string& f, int ln) {
    if (v == "gain") c.adapt.mode = AdaptMode::GainOnly;
    else if (v == "all") c.adapt.mode = AdaptMode::AllParams;
    else fail(f, ln, "mode must be gain or all");
  };
  keys["adapt.fill"] = [](RunConfig& c, const std::string& v, const std::string& f, int ln) {
    if (v == "neighbor_mean") c.adapt.fill = MaskFill::NeighborMean3x3ExclCenter;
    else if (v == "random_uniform") c.adapt.fill = MaskFill::RandomUniform;
    else fail(f, ln, "fill must be neighbor_mean or random_uniform");
  };

  keys["io.psnr_reference"] = [](RunConfig& c, const std::string& v, const std::string&, int) {
    c.psnr_reference = v;
  };

  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(filename, line_no, "unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section != "arch" && section != "pretrain" && section != "adapt" &&
          section != "data" && section != "io")
        fail(filename, line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(filename, line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) fail(filename, line_no, "key outside any [section]");
    const std::string qualified = section + "." + key;
    const auto it = keys.find(qualified);
    if (it == keys.end())
      fail(filename, line_no, "unknown key '" + key + "' in [" + section + "]");
    it->second(cfg, value, filename, line_no);
    cfg.explicit_keys.insert(qualified);
  }

  if (cfg.sigma_lo < 0 || cfg.sigma_hi < cfg.sigma_lo)
    throw ValidationError(filename + ": data.sigma_lo..sigma_hi is not a valid range");
  if (!(cfg.adapt.mask_fraction > 0 && cfg.adapt.mask_fraction <= 0.5))
    throw ValidationError(filename + ": adapt.mask_fraction must be in (0, 0.5]");
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_text(ss.str(), path);
}

std::string RunConfig::effective_text() const {
  std::ostringstream os;
  os << "[arch]\n";
  os << "name = " << arch_name << "\n";
  os << "depth = " << depth << "\n";
  os << "width = " << width << "\n";
  os << "\n[data]\n";
  os << "patch_size = " << patch_size << "\n";
  os << "hflip = " << (hflip ? "true" : "false") << "\n";
  os << "vflip = " << (vflip ? "true" : "false") << "\n";
  os << "rot90 = " << (rot90 ? "true" : "false") << "\n";
  os << "sigma_lo = " << fmt_double(sigma_lo) << "\n";
  os << "sigma_hi = " << fmt_double(sigma_hi) << "\n";
  os << "\n[pretrain]\n";
  os << "epochs = " << epochs << "\n";
  os << "lr0 = " << fmt_double(lr0) << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "patches_per_epoch = " << patches_per_epoch << "\n";
  os << "seed = " << pretrain_seed << "\n";
  os << "\n[adapt]\n";
  os << "steps = " << adapt.steps << "\n";
  os << "patches_per_step = " << adapt.patches_per_step << "\n";
  os << "batch_size = " << adapt.batch_size << "\n";
  os << "patch_size = " << adapt.patch_size << "\n";
  os << "lr_initial = " << fmt_double(adapt.lr_initial) << "\n";
  os << "lr_after = " << fmt_double(adapt.lr_after) << "\n";
  os << "lr_drop_step = " << adapt.lr_drop_step << "\n";
  os << "loss = "
     << (adapt.loss == AdaptLoss::Sure
             ? "sure"
             : adapt.loss == AdaptLoss::Blindspot ? "blindspot" : "resample")
     << "\n";
  os << "mode = " << (adapt.mode == AdaptMode::GainOnly ? "gain" : "all") << "\n";
  os << "probes = " << adapt.probes << "\n";
  os << "eps_factor = " << fmt_double(adapt.eps_factor) << "\n";
  os << "mask_fraction = " << fmt_double(adapt.mask_fraction) << "\n";
  os << "fill = "
     << (adapt.fill == MaskFill::NeighborMean3x3ExclCenter ? "neighbor_mean"
                                                           : "random_uniform")
     << "\n";
  os << "seed = " << adapt.seed << "\n";
  os << "\n[io]\n";
  os << "psnr_reference = " << psnr_reference << "\n";
  return os.str();
}

ArchitectureSpec RunConfig::arch() const { return preset(arch_name, depth, width); }

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig pc;
  pc.epochs = epochs;
  pc.lr0 = lr0;
  pc.batch_size = batch_size;
  pc.patches_per_epoch = patches_per_epoch;
  pc.patch_size = patch_size;
  pc.sigma_lo = sigma_lo;
  pc.sigma_hi = sigma_hi;
  pc.hflip = hflip;
  pc.vflip = vflip;
  pc.rot90 = rot90;
  pc.seed = pretrain_seed;
  return pc;
}

std::string config_reference() {
  const RunConfig d;
  std::ostringstream os;
  os << "Configuration file: [section] headers, key = value lines, # comments.\n"
     << "Sections and keys (with defaults):\n"
     << "  [arch]     name = " << d.arch_name << "  (dncnn-s | unet-s | bf-dncnn-s)\n"
     << "             depth = " << d.depth << "  width = " << d.width << "\n"
     << "  [data]     patch_size = " << d.patch_size << "\n"
     << "             hflip = true  vflip = true  rot90 = true\n"
     << "             sigma_lo = " << fmt_double(d.sigma_lo)
     << "  sigma_hi = " << fmt_double(d.sigma_hi) << "  (0-255 scale)\n"
     << "  [pretrain] epochs = " << d.epochs << "  lr0 = " << fmt_double(d.lr0) << "\n"
     << "             batch_size = " << d.batch_size
     << "  patches_per_epoch = " << d.patches_per_epoch << "  seed = 1\n"
     << "  [adapt]    steps = " << d.adapt.steps
     << "  patches_per_step = " << d.adapt.patches_per_step
     << "  batch_size = " << d.adapt.batch_size << "\n"
     << "             patch_size = " << d.adapt.patch_size
     << "  lr_initial = " << fmt_double(d.adapt.lr_initial)
     << "  lr_after = " << fmt_double(d.adapt.lr_after)
     << "  lr_drop_step = " << d.adapt.lr_drop_step << "\n"
     << "             loss = sure  mode = gain  probes = " << d.adapt.probes
     << "  eps_factor = " << fmt_double(d.adapt.eps_factor) << "\n"
     << "             mask_fraction = " << fmt_double(d.adapt.mask_fraction)
     << "  fill = neighbor_mean  seed = 1\n"
     << "             (mode = all defaults to steps = 1000 at constant lr 1e-5)\n"
     << "  [io]       psnr_reference = <clean image for per-step PSNR logging>\n";
  return os.str();
}

std::string current_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string manifest_text(const Manifest& m, const std::string& timestamp,
                          double wall_ms) {
  std::ostringstream os;
  os << "gaintune-manifest 1\n";
  os << "version " << kToolkitVersion << "\n";
  os << "command " << m.command_line << "\n";
  os << "config_hash " << m.config_hash << "\n";
  for (const auto& [k, v] : m.entries) os << k << " " << v << "\n";
  // dedicated final line; excluded from idempotence comparisons
  os << "timestamp " << timestamp << " wall_ms " << fmt_double(wall_ms) << "\n";
  return os.str();
}

void write_manifest(const Manifest& m, const std::string& dir, double wall_ms) {
  const std::string path = dir.empty() ? "manifest.txt" : dir + "/manifest.txt";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("manifest: cannot open '" + path + "' for writing");
  os << manifest_text(m, current_timestamp(), wall_ms);
}

}  // namespace gt
