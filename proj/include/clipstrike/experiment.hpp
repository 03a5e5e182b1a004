#pragma once

#include "clipstrike/config.hpp"
#include "clipstrike/evaluator.hpp"

#include <map>
#include <memory>
#include <optional>

namespace clipstrike {

/// Builds every component of a run from its RunConfig, lazily and at most
/// once, with seeds fanned out from config.seed.
class Experiment {
 public:
  explicit Experiment(RunConfig config);

  const RunConfig& config() const { return config_; }
  /// hex64 of RunConfig::hash(), stamped into reports.
  std::string config_hash() const;

  const Dataset& dataset(Split split);
  /// Frozen surrogate classifier at the generator resolution.
  Classifier& surrogate();
  FeatureExtractor& features();
  ClipEncoderPair& clip();
  const PromptSet& prompts(const std::string& prompt_template);

  std::unique_ptr<Generator<Real>> make_generator() const;
  /// Trains `generator` (fresh, or resumed per config.train.resume_from) into `out_dir`.
  TrainResult train(Generator<Real>& generator, const std::filesystem::path& out_dir,
                    const std::string& prompt_template);

  std::vector<VictimSpec> victims() const;
  std::unique_ptr<Classifier> load_victim(const VictimSpec& spec);
  EvalOptions eval_options() const;
  EvalReport evaluate(const Attack& attack);

  /// Loads a checkpoint for evaluation. Throws ConfigError when its budget or
  /// resolution differs from the live generator config.
  GeneratorCheckpoint load_checkpoint(const std::filesystem::path& path) const;

 private:
  RunConfig config_;
  std::map<Split, Dataset> datasets_;
  std::unique_ptr<Classifier> surrogate_;
  std::unique_ptr<FeatureExtractor> features_;
  std::unique_ptr<ClipEncoderPair> clip_;
  std::unique_ptr<PromptCache> prompt_cache_;
};

}  // namespace clipstrike
