#pragma once

#include "clipstrike/baselines.hpp"
#include "clipstrike/clip.hpp"
#include "clipstrike/generator.hpp"
#include "clipstrike/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace clipstrike {

struct DataConfig {
  /// "synthetic-fixture", "synthetic-fixture-multilabel", or any name for an
  /// on-disk dataset under `root`.
  std::string dataset = "synthetic-fixture";
  std::filesystem::path root;
};

struct SurrogateConfig {
  std::string arch = "densenet121";
  std::string layer;  ///< empty = registry default
  std::string weights = "pretrained";
};

struct EvalConfig {
  std::vector<std::string> victims;  ///< empty = the surrogate only
  std::map<std::string, std::string> weights;  ///< per-victim weights; "pretrained" otherwise
  std::string split = "test";
  std::string hamming_form = "iou";
  double threshold = 0.5;
  Index batch_size = 16;
};

struct AblationConfig {
  std::vector<std::string> templates;
};

/// Every setting of one run. Sections map 1:1 to TOML tables; `seed`,
/// `run_id` and `out` are top-level keys.
struct RunConfig {
  DataConfig data;
  ClipConfig clip;
  SurrogateConfig surrogate;
  GeneratorConfig generator;
  TrainConfig train;
  EvalConfig eval;
  BaselineSpec baseline;
  AblationConfig ablation;
  std::uint64_t seed = 0;
  std::string run_id;
  std::filesystem::path out_root = "runs";

  void validate() const;
  /// Canonical TOML; parsing it back yields an identical config.
  std::string to_toml() const;
  /// FNV-1a of to_toml().
  std::uint64_t hash() const;
  TrainingFingerprint fingerprint() const;
  std::filesystem::path run_dir() const { return out_root / run_id; }
};

/// Parses TOML text. `overrides` are "section.key=value" strings whose value is
/// read as a TOML value (bare words fall back to strings). Unknown keys and
/// type mismatches throw ConfigError naming `source`.
RunConfig parse_run_config(const std::string& text, const std::string& source,
                           const std::vector<std::string>& overrides = {});

/// Throws ConfigError naming the path when the file is missing.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace clipstrike
