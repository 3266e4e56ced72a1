#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gaintune/train.hpp"

namespace gt {

/// Plain-text run configuration: `[section]` headers, `key = value` lines,
/// `#` comments. Unknown sections or keys fail with the offending line number;
/// everything is validated before any compute starts.
struct RunConfig {
  // [arch]
  std::string arch_name = "dncnn-s";
  int depth = 8;
  int width = 32;

  // [data] patch sampling and the pre-training noise range (0-255 scale)
  int patch_size = 50;
  bool hflip = true, vflip = true, rot90 = true;
  double sigma_lo = 0.0, sigma_hi = 55.0;

  // [pretrain]
  int epochs = 100;
  double lr0 = 1e-3;
  int batch_size = 32;
  int patches_per_epoch = 1024;
  std::uint64_t pretrain_seed = 1;

  // [adapt]
  AdaptConfig adapt;

  // [io]
  std::string psnr_reference;  // optional clean image to log PSNR against

  std::set<std::string> explicit_keys;  // "section.key" entries seen in the file

  bool is_set(const std::string& section_key) const {
    return explicit_keys.contains(section_key);
  }

  static RunConfig parse_text(const std::string& text, const std::string& filename);
  static RunConfig parse_file(const std::string& path);

  /// Canonical dump with every default resolved; echoed as a sidecar file.
  std::string effective_text() const;

  ArchitectureSpec arch() const;
  PretrainConfig pretrain_config() const;
};

/// One line per key: section, name, default, meaning. Shown in --help.
std::string config_reference();

/// Provenance block written next to every produced artifact. The timestamp
/// and wall-clock live on one dedicated final line so idempotence comparisons
/// can drop it.
struct Manifest {
  std::string command_line;
  std::string config_hash = "none";
  std::vector<std::pair<std::string, std::string>> entries;  // seed/input/output/...

  void add(const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
  }
};

std::string manifest_text(const Manifest& m, const std::string& timestamp,
                          double wall_ms);
void write_manifest(const Manifest& m, const std::string& dir, double wall_ms);

std::string current_timestamp();

}  // namespace gt
