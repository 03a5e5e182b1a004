#pragma once

#include "clipstrike/clip.hpp"
#include "clipstrike/generator.hpp"
#include "clipstrike/losses.hpp"
#include "clipstrike/models.hpp"
#include "clipstrike/optim.hpp"

#include <filesystem>
#include <optional>
#include <random>

namespace clipstrike {

struct TrainConfig {
  Index epochs = 50;
  Index batch_size = 4;
  double lr = 1e-4;
  double weight_decay = 0.01;
  losses::LossWeights weights;
  Index checkpoint_every = 1;
  /// Stop after this many optimizer steps in total; 0 = no limit.
  Index max_steps = 0;
  /// Global-norm gradient clip; 0 = off.
  double grad_clip = 0.0;
  /// Stop when the epoch-mean loss improves by less than `plateau_tolerance`
  /// (relative) over `plateau_epochs` epochs.
  bool early_stop = true;
  double plateau_tolerance = 1e-4;
  Index plateau_epochs = 5;
  std::filesystem::path resume_from;

  void validate() const;
};

/// Fields that decide the loss trajectory. Epoch budget, step cap, checkpoint
/// cadence and resume path are left out so a run can be extended by resuming.
struct TrainingFingerprint {
  std::string dataset;
  std::string surrogate;
  std::string surrogate_layer;
  std::string clip_backbone;
  std::string prompt_template;
  Index m_candidates = 0;
  Index pair_limit = 0;
  GeneratorConfig generator;
  TrainConfig train;
  std::uint64_t seed = 0;

  std::uint64_t hash() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  Index epoch = 0;  ///< completed epochs
  Index step = 0;   ///< completed optimizer steps
  std::mt19937_64 rng;
  std::vector<double> epoch_losses;  ///< mean total loss per completed epoch
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  Index steps = 0;
  Index epochs = 0;
  bool stopped_early = false;
};

/// Metadata sidecar written next to every checkpoint as <name>.json.
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& checkpoint);
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Index epoch);

struct GeneratorCheckpoint {
  GeneratorConfig config;
  std::string surrogate;
  std::string config_hash;
  Index epoch = 0;
  std::unique_ptr<Generator<Real>> generator;
};

/// Generator weights and architecture from a verified checkpoint.
GeneratorCheckpoint load_generator(const std::filesystem::path& path);

/// Least-similar prompt embedding per image (one row per sample).
RowMatrix<Real> select_anchors(ClipEncoderPair& clip, const PromptSet& prompts, const ImageBatch& batch,
                               Index m_candidates, std::mt19937_64& rng);

/// L_total of one batch against fixed anchors. With `backward`, accumulates
/// d L_total / d θ into the generator's parameter grads.
losses::LossBreakdown generator_loss(Generator<Real>& generator, FeatureExtractor& surrogate,
                                     const Tensor<Real>& x, const RowMatrix<Real>& anchors,
                                     const losses::LossWeights& weights, bool backward);

/// Generator training loop: one AdamW update of the generator per batch, with
/// the surrogate and CLIP pair held frozen.
class Trainer {
 public:
  Trainer(Generator<Real>& generator, FeatureExtractor& surrogate, ClipEncoderPair& clip,
          const PromptSet& prompts, Index m_candidates, TrainConfig config, std::uint64_t seed,
          std::uint64_t config_hash);

  /// Runs the full step on a preprocessed batch and returns its losses.
  losses::LossBreakdown train_step(const ImageBatch& batch);

  /// Trains until the epoch budget, step cap or plateau is reached, writing
  /// train_log.csv and checkpoints into `out_dir`. Resumes first when
  /// config.resume_from is set.
  TrainResult train(const Dataset& data, const std::filesystem::path& out_dir);

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores weights, optimizer moments and rng. Throws ConfigError when the
  /// files were modified or belong to a different configuration.
  void load_checkpoint(const std::filesystem::path& path);

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }

 private:
  std::vector<std::uint8_t> checkpoint_payload() const;
  bool plateaued() const;

  Generator<Real>& generator_;
  FeatureExtractor& surrogate_;
  ClipEncoderPair& clip_;
  const PromptSet& prompts_;
  Index m_candidates_;
  TrainConfig config_;
  std::uint64_t seed_;
  std::uint64_t config_hash_;
  nn::AdamW<Real> optimizer_;
  TrainState state_;
};

}  // namespace clipstrike
