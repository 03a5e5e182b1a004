#include "clipstrike/experiment.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace clipstrike {

namespace fs = std::filesystem;

Experiment::Experiment(RunConfig config) : config_(std::move(config)) { config_.validate(); }

std::string Experiment::config_hash() const { return hex64(config_.hash()); }

const Dataset& Experiment::dataset(Split split) {
  auto it = datasets_.find(split);
  if (it == datasets_.end()) {
    it = datasets_.emplace(split, load_dataset(config_.data.dataset, split, config_.data.root)).first;
    spdlog::info("{} {}: {} samples, {} classes", config_.data.dataset, to_string(split), it->second.size(),
                 it->second.vocabulary().size());
  }
  return it->second;
}

Classifier& Experiment::surrogate() {
  if (!surrogate_) {
    surrogate_ = load_classifier({config_.surrogate.arch, config_.surrogate.weights, config_.generator.image_size},
                                 dataset(Split::Train), config_.seed);
  }
  return *surrogate_;
}

FeatureExtractor& Experiment::features() {
  if (!features_) {
    const auto spec = resolve_layer(config_.surrogate.arch, config_.surrogate.layer);
    features_ = std::make_unique<FeatureExtractor>(surrogate(), spec);
    spdlog::info("surrogate {} features from layer {}", config_.surrogate.arch, spec.layer);
  }
  return *features_;
}

ClipEncoderPair& Experiment::clip() {
  if (!clip_) {
    clip_ = make_clip(config_.clip, config_.seed, config_.generator.image_size);
    if (clip_->image_size() != config_.generator.image_size) {
      throw ConfigError(fmt::format("clip encoder expects {0}x{0} images but generator.image_size is {1}",
                                    clip_->image_size(), config_.generator.image_size));
    }
    prompt_cache_ = std::make_unique<PromptCache>(*clip_);
  }
  return *clip_;
}

const PromptSet& Experiment::prompts(const std::string& prompt_template) {
  clip();
  return prompt_cache_->get(dataset(Split::Train).vocabulary(), PromptTemplate(prompt_template),
                            config_.clip.pair_limit);
}

std::unique_ptr<Generator<Real>> Experiment::make_generator() const {
  return std::make_unique<Generator<Real>>(config_.generator, substream(config_.seed, "generator"));
}

TrainResult Experiment::train(Generator<Real>& generator, const fs::path& out_dir,
                              const std::string& prompt_template) {
  RunConfig fingerprinted = config_;
  fingerprinted.clip.prompt_template = prompt_template;
  const PromptSet& prompt_set = prompts(prompt_template);
  Trainer trainer(generator, features(), clip(), prompt_set, config_.clip.m_candidates, config_.train, config_.seed,
                  fingerprinted.fingerprint().hash());
  return trainer.train(dataset(Split::Train), out_dir);
}

std::vector<VictimSpec> Experiment::victims() const {
  std::vector<std::string> archs = config_.eval.victims;
  if (archs.empty()) archs.push_back(config_.surrogate.arch);
  std::vector<VictimSpec> out;
  for (const auto& arch : archs) {
    VictimSpec spec{arch};
    if (auto it = config_.eval.weights.find(arch); it != config_.eval.weights.end()) {
      spec.weights = it->second;
    } else if (arch == config_.surrogate.arch) {
      spec.weights = config_.surrogate.weights;
    }
    out.push_back(spec);
  }
  return out;
}

std::unique_ptr<Classifier> Experiment::load_victim(const VictimSpec& spec) {
  return load_classifier({spec.architecture, spec.weights, config_.generator.image_size}, dataset(Split::Train),
                         config_.seed);
}

EvalOptions Experiment::eval_options() const {
  EvalOptions options;
  options.batch_size = config_.eval.batch_size;
  options.image_size = config_.generator.image_size;
  options.threshold = config_.eval.threshold;
  options.form = parse_hamming_form(config_.eval.hamming_form);
  return options;
}

EvalReport Experiment::evaluate(const Attack& attack) {
  const Dataset& data = dataset(parse_split(config_.eval.split));
  EvalReport report = evaluate_matrix(
      attack, victims(), data, [this](const VictimSpec& spec) { return load_victim(spec); }, eval_options());
  report.config_hash = config_hash();
  return report;
}

GeneratorCheckpoint Experiment::load_checkpoint(const fs::path& path) const {
  GeneratorCheckpoint checkpoint = load_generator(path);
  if (checkpoint.config.epsilon != config_.generator.epsilon) {
    throw ConfigError(fmt::format("checkpoint was trained with epsilon {} but the config asks for {}",
                                  checkpoint.config.epsilon, config_.generator.epsilon));
  }
  if (checkpoint.config.image_size != config_.generator.image_size) {
    throw ConfigError(fmt::format("checkpoint generator works at {} px but generator.image_size is {}",
                                  checkpoint.config.image_size, config_.generator.image_size));
  }
  return checkpoint;
}

}  // namespace clipstrike
