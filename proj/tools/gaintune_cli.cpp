#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "gaintune/analysis.hpp"
#include "gaintune/cli_config.hpp"
#include "gaintune/data.hpp"
#include "gaintune/models.hpp"
#include "gaintune/train.hpp"

namespace fs = std::filesystem;
using namespace gt;

namespace {

struct WallTimer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
        .count();
  }
};

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

std::pair<double, double> parse_range(const std::string& text, const char* what) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const double v = std::stod(text);
      return {v, v};
    }
    const double lo = std::stod(text.substr(0, dots));
    const double hi = std::stod(text.substr(dots + 2));
    if (hi < lo) throw ValidationError("");
    return {lo, hi};
  } catch (...) {
    throw ValidationError(std::string(what) + ": expected V or LO..HI, got '" +
                          text + "'");
  }
}

std::string hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

std::map<std::string, fs::path> scan_by_stem(const std::string& dir,
                                             std::initializer_list<const char*> exts) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir);
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    for (const char* want : exts)
      if (ext == want) out[e.path().stem().string()] = e.path();
  }
  return out;
}

ImageGray load_estimate(const fs::path& p) {
  if (p.extension() == ".raw") return image_from_tensor(load_rawf64(p.string()));
  return load_pgm(p.string());
}

ImageGray load_noisy_input(const std::string& path) {
  // noisy inputs are normally lossless raws; PGM accepted for convenience
  if (fs::path(path).extension() == ".pgm") return load_pgm(path);
  return image_from_tensor(load_rawf64(path));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create output directory '" + dir + "'");
}

struct AdaptCli {
  std::string ckpt, noisy, out, config;
  std::string loss = "sure", mode = "gain";
  double sigma255 = -1.0;
};

void run_adapt(const AdaptCli& a, const std::string& command_line) {
  WallTimer timer;
  RunConfig cfg = a.config.empty() ? RunConfig() : RunConfig::parse_file(a.config);
  if (a.loss == "sure") cfg.adapt.loss = AdaptLoss::Sure;
  else if (a.loss == "blindspot") cfg.adapt.loss = AdaptLoss::Blindspot;
  else if (a.loss == "resample") cfg.adapt.loss = AdaptLoss::Resample;
  else throw ValidationError("adapt: --loss must be sure, blindspot or resample");
  if (a.mode == "gain") cfg.adapt.mode = AdaptMode::GainOnly;
  else if (a.mode == "all") cfg.adapt.mode = AdaptMode::AllParams;
  else throw ValidationError("adapt: --mode must be gain or all");
  if (a.sigma255 > 0) cfg.adapt.sigma255 = a.sigma255;
  if (cfg.adapt.loss != AdaptLoss::Blindspot && !(cfg.adapt.sigma255 > 0))
    throw ValidationError("adapt: SURE requires known positive sigma (--sigma255)");
  if (cfg.adapt.mode == AdaptMode::AllParams) {
    // comparison protocol: long constant-rate run unless the config pins one
    if (!cfg.is_set("adapt.steps")) cfg.adapt.steps = 1000;
    if (!cfg.is_set("adapt.lr_initial")) cfg.adapt.lr_initial = 1e-5;
    if (!cfg.is_set("adapt.lr_after")) cfg.adapt.lr_after = 1e-5;
  }

  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const ImageGray noisy = load_noisy_input(a.noisy);
  ImageGray ref;
  const bool has_ref = !cfg.psnr_reference.empty();
  if (has_ref) ref = load_pgm(cfg.psnr_reference);

  TrainLog log;
  const Checkpoint adapted =
      cfg.adapt.mode == AdaptMode::GainOnly
          ? gaintune(ckpt, noisy, cfg.adapt, &log, has_ref ? &ref : nullptr)
          : finetune_all(ckpt, noisy, cfg.adapt, &log, has_ref ? &ref : nullptr);

  const fs::path out(a.out);
  ensure_dir(out.parent_path().empty() ? "." : out.parent_path().string());
  save_checkpoint(adapted, a.out);
  log.save_csv(a.out + ".log.csv");
  std::ofstream sidecar(a.out + ".effective.cfg", std::ios::binary);
  sidecar << cfg.effective_text();

  Manifest m;
  m.command_line = command_line;
  if (!a.config.empty()) m.config_hash = hash_file(a.config);
  m.add("seed", std::to_string(cfg.adapt.seed));
  m.add("input", a.ckpt);
  m.add("input", a.noisy);
  m.add("output", a.out);
  m.add("output", a.out + ".log.csv");
  m.add("output", a.out + ".effective.cfg");
  write_manifest(m, out.parent_path().string(), timer.ms());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaintune: train small convolutional denoisers and adapt their "
               "per-channel gains to single noisy images"};
  app.require_subcommand(1);
  app.footer(config_reference());
  const std::string command_line = join_args(argc, argv);

  // gen-pc
  auto* gen = app.add_subcommand("gen-pc", "Generate piecewise-constant images");
  int gen_count = 1, gen_size = 64;
  std::string gen_shapes = "2..8", gen_out;
  std::uint64_t gen_seed = 1;
  gen->add_option("--count", gen_count, "Number of images")->required();
  gen->add_option("--size", gen_size, "Square image extent (>= 16)");
  gen->add_option("--shapes", gen_shapes, "Region count range LO..HI");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->callback([&] {
    WallTimer timer;
    const auto [lo, hi] = parse_range(gen_shapes, "--shapes");
    if (gen_count < 1) throw ValidationError("gen-pc: --count must be >= 1");
    ensure_dir(gen_out);
    RngStream stream(gen_seed);
    Manifest m;
    m.command_line = command_line;
    m.add("seed", std::to_string(gen_seed));
    for (int i = 0; i < gen_count; ++i) {
      const ImageGray img = gen_piecewise_constant(
          stream, gen_size, static_cast<int>(lo), static_cast<int>(hi));
      char name[32];
      std::snprintf(name, sizeof(name), "pc_%04d.pgm", i);
      save_pgm(img, gen_out + "/" + name, 16);
      m.add("output", gen_out + "/" + name);
    }
    write_manifest(m, gen_out, timer.ms());
  });

  // corrupt
  auto* cor = app.add_subcommand("corrupt", "Add Gaussian noise to clean PGMs");
  std::string cor_in, cor_sigma, cor_out;
  std::uint64_t cor_seed = 1;
  cor->add_option("--in", cor_in, "Directory of clean PGMs")->required();
  cor->add_option("--sigma255", cor_sigma, "Noise std V or range LO..HI (0-255 scale)")
      ->required();
  cor->add_option("--seed", cor_seed, "Noise seed");
  cor->add_option("--out", cor_out, "Output directory")->required();
  cor->callback([&] {
    WallTimer timer;
    const auto [lo, hi] = parse_range(cor_sigma, "--sigma255");
    if (lo < 0) throw ValidationError("corrupt: sigma255 must be >= 0");
    const auto inputs = scan_by_stem(cor_in, {".pgm"});
    if (inputs.empty()) throw ValidationError("corrupt: no PGM inputs in " + cor_in);
    ensure_dir(cor_out);
    RngStream sigma_stream = RngStream(cor_seed).derive(1);
    RngStream noise_stream = RngStream(cor_seed).derive(2);
    Manifest m;
    m.command_line = command_line;
    m.add("seed", std::to_string(cor_seed));
    for (const auto& [stem, path] : inputs) {
      const ImageGray clean = load_pgm(path.string());
      const double sigma = lo == hi ? lo : sigma_stream.uniform(lo, hi);
      const NoisyPair pair = add_gaussian_noise(clean, sigma, noise_stream);
      save_rawf64(to_tensor(pair.noisy), cor_out + "/" + stem + ".raw");
      fs::copy_file(path, cor_out + "/" + stem + ".pgm",
                    fs::copy_options::overwrite_existing);
      m.add("input", path.string());
      m.add("sigma255 " + stem, fmt_double(sigma));
      m.add("output", cor_out + "/" + stem + ".raw");
    }
    write_manifest(m, cor_out, timer.ms());
  });

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pre-train a denoiser on clean PGMs");
  std::string pre_config, pre_data, pre_out;
  pre->add_option("--config", pre_config, "Run configuration file");
  pre->add_option("--data", pre_data, "Directory of clean PGMs")->required();
  pre->add_option("--out", pre_out, "Checkpoint path")->required();
  pre->callback([&] {
    WallTimer timer;
    RunConfig cfg = pre_config.empty() ? RunConfig() : RunConfig::parse_file(pre_config);
    const auto inputs = scan_by_stem(pre_data, {".pgm"});
    if (inputs.empty()) throw ValidationError("pretrain: no PGM inputs in " + pre_data);
    std::vector<ImageGray> dataset;
    dataset.reserve(inputs.size());
    for (const auto& [stem, path] : inputs) dataset.push_back(load_pgm(path.string()));
    TrainLog log;
    const Checkpoint ckpt = pretrain(cfg.arch(), dataset, cfg.pretrain_config(), &log);
    const fs::path out(pre_out);
    ensure_dir(out.parent_path().empty() ? "." : out.parent_path().string());
    save_checkpoint(ckpt, pre_out);
    log.save_csv(pre_out + ".log.csv");
    std::ofstream sidecar(pre_out + ".effective.cfg", std::ios::binary);
    sidecar << cfg.effective_text();
    Manifest m;
    m.command_line = command_line;
    if (!pre_config.empty()) m.config_hash = hash_file(pre_config);
    m.add("seed", std::to_string(cfg.pretrain_seed));
    m.add("input", pre_data);
    m.add("output", pre_out);
    m.add("output", pre_out + ".log.csv");
    m.add("output", pre_out + ".effective.cfg");
    write_manifest(m, out.parent_path().string(), timer.ms());
  });

  // adapt
  auto* ada = app.add_subcommand("adapt", "Adapt a checkpoint to one noisy image");
  AdaptCli a;
  ada->add_option("--ckpt", a.ckpt, "Input checkpoint")->required();
  ada->add_option("--noisy", a.noisy, "Noisy image (GTRAW01 raw)")->required();
  ada->add_option("--loss", a.loss, "sure | blindspot | resample");
  ada->add_option("--mode", a.mode, "gain | all (default gain)");
  ada->add_option("--sigma255", a.sigma255, "Known noise std, 0-255 scale");
  ada->add_option("--config", a.config, "Run configuration file");
  ada->add_option("--out", a.out, "Adapted checkpoint path")->required();
  ada->callback([&] { run_adapt(a, command_line); });

  // denoise
  auto* den = app.add_subcommand("denoise", "Denoise one image with a checkpoint");
  std::string den_ckpt, den_noisy, den_out, den_raw;
  den->add_option("--ckpt", den_ckpt, "Checkpoint")->required();
  den->add_option("--noisy", den_noisy, "Noisy image (GTRAW01 raw)")->required();
  den->add_option("--out", den_out, "Output PGM (clamped to [0,1])")->required();
  den->add_option("--out-raw", den_raw, "Optional lossless raw output");
  den->callback([&] {
    WallTimer timer;
    const Checkpoint ckpt = load_checkpoint(den_ckpt);
    const ImageGray noisy = load_noisy_input(den_noisy);
    const ImageGray est = denoise(ckpt, noisy);
    const fs::path out(den_out);
    ensure_dir(out.parent_path().empty() ? "." : out.parent_path().string());
    save_pgm(est, den_out, 8);  // save_pgm clamps
    if (!den_raw.empty()) save_rawf64(to_tensor(est), den_raw);
    Manifest m;
    m.command_line = command_line;
    m.add("input", den_ckpt);
    m.add("input", den_noisy);
    m.add("output", den_out);
    if (!den_raw.empty()) m.add("output", den_raw);
    write_manifest(m, out.parent_path().string(), timer.ms());
  });

  // eval
  auto* ev = app.add_subcommand("eval", "PSNR report, pairing files by stem");
  std::string ev_clean, ev_est, ev_base, ev_out;
  ev->add_option("--clean", ev_clean, "Directory of clean PGMs")->required();
  ev->add_option("--estimates", ev_est, "Directory of denoised estimates")->required();
  ev->add_option("--baseline", ev_base,
                 "Optional directory of baseline estimates (psnr_before)");
  ev->add_option("--out", ev_out, "Report CSV path")->required();
  ev->callback([&] {
    WallTimer timer;
    const auto clean = scan_by_stem(ev_clean, {".pgm"});
    const auto ests = scan_by_stem(ev_est, {".pgm", ".raw"});
    std::map<std::string, fs::path> base;
    if (!ev_base.empty()) base = scan_by_stem(ev_base, {".pgm", ".raw"});
    std::string unmatched;
    for (const auto& [stem, p] : clean)
      if (!ests.contains(stem)) unmatched += " " + stem;
    for (const auto& [stem, p] : ests)
      if (!clean.contains(stem)) unmatched += " " + stem;
    if (!ev_base.empty())
      for (const auto& [stem, p] : clean)
        if (clean.contains(stem) && !base.contains(stem)) unmatched += " " + stem;
    if (!unmatched.empty())
      throw ValidationError("eval: unmatched stems:" + unmatched);
    if (clean.empty()) throw ValidationError("eval: no clean/estimate pairs");
    std::vector<DeltaPsnrEntry> entries;
    for (const auto& [stem, cp] : clean) {
      const ImageGray ref = load_pgm(cp.string());
      const double after = psnr(ref, load_estimate(ests.at(stem)));
      const double before =
          ev_base.empty() ? after : psnr(ref, load_estimate(base.at(stem)));
      entries.push_back({stem, before, after});
    }
    const fs::path out(ev_out);
    ensure_dir(out.parent_path().empty() ? "." : out.parent_path().string());
    std::ofstream os(ev_out, std::ios::binary);
    if (!os) throw IoError("eval: cannot open '" + ev_out + "' for writing");
    os << delta_psnr_csv(entries);
    const DeltaPsnrSummary s = delta_psnr_summary(entries);
    std::cout << "count=" << s.count << " mean=" << fmt_double(s.mean)
              << " median=" << fmt_double(s.median) << " min=" << fmt_double(s.min)
              << " max=" << fmt_double(s.max) << " negatives=" << s.negatives
              << "\n";
    Manifest m;
    m.command_line = command_line;
    m.add("input", ev_clean);
    m.add("input", ev_est);
    if (!ev_base.empty()) m.add("input", ev_base);
    m.add("output", ev_out);
    write_manifest(m, out.parent_path().string(), timer.ms());
  });

  // analyze
  auto* ana = app.add_subcommand("analyze", "First-order analysis instruments");
  ana->require_subcommand(1);
  auto* fil = ana->add_subcommand("filter", "Equivalent adaptive filter of one pixel");
  std::string fil_ckpt, fil_noisy, fil_pixel, fil_out;
  fil->add_option("--ckpt", fil_ckpt)->required();
  fil->add_option("--noisy", fil_noisy)->required();
  fil->add_option("--pixel", fil_pixel, "Output pixel R,C")->required();
  fil->add_option("--out", fil_out, "Rendered PGM")->required();
  fil->callback([&] {
    WallTimer timer;
    const auto comma = fil_pixel.find(',');
    if (comma == std::string::npos)
      throw ValidationError("analyze filter: --pixel expects R,C");
    int r = 0, c = 0;
    try {
      r = std::stoi(fil_pixel.substr(0, comma));
      c = std::stoi(fil_pixel.substr(comma + 1));
    } catch (...) {
      throw ValidationError("analyze filter: --pixel expects R,C");
    }
    const Checkpoint ckpt = load_checkpoint(fil_ckpt);
    const ImageGray noisy = load_noisy_input(fil_noisy);
    const EquivalentFilter f = equivalent_filter(ckpt, noisy, r, c);
    const fs::path out(fil_out);
    ensure_dir(out.parent_path().empty() ? "." : out.parent_path().string());
    filter_to_pgm(f, fil_out);
    Manifest m;
    m.command_line = command_line;
    m.add("input", fil_ckpt);
    m.add("input", fil_noisy);
    m.add("output", fil_out);
    write_manifest(m, out.parent_path().string(), timer.ms());
  });
  auto* bia = ana->add_subcommand("bias", "Net bias of the first-order expansion");
  std::string bia_ckpt, bia_noisy, bia_method = "jvp";
  bia->add_option("--ckpt", bia_ckpt)->required();
  bia->add_option("--noisy", bia_noisy)->required();
  bia->add_option("--method", bia_method, "jvp | full");
  bia->callback([&] {
    const Checkpoint ckpt = load_checkpoint(bia_ckpt);
    const ImageGray noisy = load_noisy_input(bia_noisy);
    BiasMethod method;
    if (bia_method == "jvp") method = BiasMethod::Jvp;
    else if (bia_method == "full") method = BiasMethod::FullJacobian;
    else throw ValidationError("analyze bias: --method must be jvp or full");
    const NetBias nb = net_bias(ckpt, noisy, method);
    std::cout << "bias_l2=" << fmt_double(nb.l2)
              << " relative=" << fmt_double(nb.relative) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
