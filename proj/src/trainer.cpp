#include "clipstrike/trainer.hpp"

#include "clipstrike/archive.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace clipstrike {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be at least 1");
  if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be non-negative");
  if (plateau_epochs < 1) throw ConfigError("train.plateau_epochs must be at least 1");
  weights.validate();
}

std::uint64_t TrainingFingerprint::hash() const {
  const json j = {
      {"dataset", dataset},
      {"surrogate", surrogate},
      {"surrogate_layer", surrogate_layer},
      {"clip_backbone", clip_backbone},
      {"prompt_template", prompt_template},
      {"m_candidates", m_candidates},
      {"pair_limit", pair_limit},
      {"generator",
       {{"epsilon", generator.epsilon},
        {"base_channels", generator.base_channels},
        {"resblocks", generator.resblocks},
        {"saliency_gating", generator.saliency_gating},
        {"image_size", generator.image_size}}},
      {"train",
       {{"batch_size", train.batch_size},
        {"lr", train.lr},
        {"weight_decay", train.weight_decay},
        {"alpha", train.weights.alpha},
        {"beta", train.weights.beta},
        {"mu", train.weights.mu},
        {"grad_clip", train.grad_clip}}},
      {"seed", seed},
  };
  return fnv1a(j.dump());
}

namespace {

json generator_json(const GeneratorConfig& c) {
  return {{"epsilon", c.epsilon},
          {"base_channels", c.base_channels},
          {"resblocks", c.resblocks},
          {"saliency_gating", c.saliency_gating},
          {"image_size", c.image_size}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig c;
  c.epsilon = j.at("epsilon").get<double>();
  c.base_channels = j.at("base_channels").get<Index>();
  c.resblocks = j.at("resblocks").get<Index>();
  c.saliency_gating = j.at("saliency_gating").get<bool>();
  c.image_size = j.at("image_size").get<Index>();
  return c;
}

// Reads a checkpoint and its sidecar, refusing when either was modified.
TensorArchive read_verified(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  const auto payload = read_file_bytes(path);
  const fs::path sidecar_path = checkpoint_sidecar(path);
  std::ifstream in(sidecar_path);
  if (!in) throw ConfigError("checkpoint metadata missing: " + sidecar_path.string());
  json sidecar;
  try {
    sidecar = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("checkpoint metadata {} is unreadable: {}", sidecar_path.string(), e.what()));
  }
  const std::string digest = hex64(Fnv1a().update(payload.data(), payload.size()).digest());
  if (sidecar.value("payload_digest", "") != digest) {
    throw ConfigError(fmt::format("checkpoint {} does not match its metadata digest; refusing to load",
                                  path.string()));
  }
  TensorArchive archive = TensorArchive::parse(payload);
  const json& meta = archive.metadata();
  for (const char* key : {"epoch", "step", "adam_steps", "epsilon", "config_hash", "seed", "surrogate"}) {
    if (!sidecar.contains(key) || sidecar[key] != meta.at(key)) {
      throw ConfigError(fmt::format("checkpoint metadata field '{}' was modified in {}; refusing to load", key,
                                    sidecar_path.string()));
    }
  }
  return archive;
}

}  // namespace

fs::path checkpoint_sidecar(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  return p.replace_extension(".json");
}

fs::path checkpoint_path(const fs::path& dir, Index epoch) {
  return dir / fmt::format("gen_epoch_{}.ckpt", epoch);
}

Trainer::Trainer(Generator<Real>& generator, FeatureExtractor& surrogate, ClipEncoderPair& clip,
                 const PromptSet& prompts, Index m_candidates, TrainConfig config, std::uint64_t seed,
                 std::uint64_t config_hash)
    : generator_(generator),
      surrogate_(surrogate),
      clip_(clip),
      prompts_(prompts),
      m_candidates_(m_candidates),
      config_(std::move(config)),
      seed_(seed),
      config_hash_(config_hash),
      optimizer_(generator.parameters(), nn::AdamWOptions{config_.lr, 0.9, 0.999, 1e-8, config_.weight_decay}) {
  config_.validate();
  if (prompts_.size() == 0) throw ConfigError("no prompts to select anchors from");
  if (prompts_.embeddings.cols() != surrogate_.spec().expected_width) {
    throw ConfigError(fmt::format("CLIP embeddings are {}-dimensional but surrogate features are {}",
                                  prompts_.embeddings.cols(), surrogate_.spec().expected_width));
  }
  state_.rng.seed(substream(seed, "train.selection"));
}

RowMatrix<Real> select_anchors(ClipEncoderPair& clip, const PromptSet& prompts, const ImageBatch& batch,
                               Index m_candidates, std::mt19937_64& rng) {
  const RowMatrix<Real> image_embeddings = clip.encode_images(batch);
  RowMatrix<Real> anchors(batch.size(), prompts.embeddings.cols());
  for (Index i = 0; i < batch.size(); ++i) {
    const Selection pick =
        select_least_similar(image_embeddings.row(i).transpose(), prompts.embeddings, m_candidates, rng);
    anchors.row(i) = prompts.embeddings.row(pick.index);
  }
  return anchors;
}

losses::LossBreakdown generator_loss(Generator<Real>& generator, FeatureExtractor& surrogate,
                                     const Tensor<Real>& x, const RowMatrix<Real>& anchors,
                                     const losses::LossWeights& w, bool backward) {
  const bool gating = generator.config().saliency_gating;
  const double tau = 1e-8;

  const RowMatrix<Real> z = surrogate.extract(x);
  const GeneratorOutput<Real> out = generator.forward(x);
  const Composition<Real> composed = compose_adversarial(x, out, gating, tau);
  const RowMatrix<Real> z_adv = surrogate.extract(composed.adversarial);

  // Without gating the saliency map never reaches x′; it is still regularised.
  const Tensor<Real> scaled = gating ? composed.scaled_saliency : minmax_scale(out.saliency, tau);
  const losses::LossBreakdown loss =
      losses::total_loss(losses::frobenius_loss(scaled.matrix()), losses::norm_loss(z, z_adv),
                         losses::contrastive_loss(z, z_adv, anchors, w.mu), w);
  if (!backward) return loss;

  const RowMatrix<Real> grad_z = w.beta * losses::norm_loss_gradient(z, z_adv) +
                                 losses::contrastive_loss_gradient(z, z_adv, anchors, w.mu);
  const Tensor<Real> grad_adv = surrogate.backward(grad_z);
  GeneratorOutput<Real> grad = compose_adversarial_backward(x, out, composed, gating, grad_adv, tau);
  Tensor<Real> grad_scaled(scaled.shape());
  grad_scaled.matrix() = w.alpha * losses::frobenius_loss_gradient(scaled.matrix());
  grad.saliency.array() += minmax_scale_backward(out.saliency, grad_scaled, tau).array();
  generator.backward(grad.delta, grad.saliency);
  return loss;
}

losses::LossBreakdown Trainer::train_step(const ImageBatch& batch) {
  const RowMatrix<Real> anchors = select_anchors(clip_, prompts_, batch, m_candidates_, state_.rng);
  optimizer_.zero_grad();
  losses::LossBreakdown loss;
  try {
    loss = generator_loss(generator_, surrogate_, batch.images, anchors, config_.weights, true);
  } catch (const std::domain_error& e) {
    throw TrainingError(fmt::format("step {}: {}", state_.step + 1, e.what()));
  }
  if (config_.grad_clip > 0.0) optimizer_.clip_grad_norm(config_.grad_clip);
  optimizer_.step();
  ++state_.step;
  return loss;
}

bool Trainer::plateaued() const {
  const auto& h = state_.epoch_losses;
  const auto window = static_cast<std::size_t>(config_.plateau_epochs);
  if (!config_.early_stop || h.size() <= window) return false;
  const double before = h[h.size() - 1 - window], now = h.back();
  return (before - now) < config_.plateau_tolerance * std::abs(before);
}

TrainResult Trainer::train(const Dataset& data, const fs::path& out_dir) {
  if (data.size() == 0) throw ConfigError("training set is empty");
  fs::create_directories(out_dir);
  if (!config_.resume_from.empty()) {
    load_checkpoint(config_.resume_from);
    spdlog::info("resumed from {} at epoch {}, step {}", config_.resume_from.string(), state_.epoch, state_.step);
  }

  const fs::path log_path = out_dir / "train_log.csv";
  std::ofstream log(log_path, std::ios::trunc);
  log << "step,epoch,frobenius,norm,contrastive,total\n";

  TrainResult result;
  fs::path last_good;
  if (!config_.resume_from.empty()) last_good = config_.resume_from;
  Index saved_step = state_.step;
  const Index image_size = generator_.config().image_size;
  const auto step_cap_reached = [&] { return config_.max_steps > 0 && state_.step >= config_.max_steps; };

  while (state_.epoch < config_.epochs && !step_cap_reached()) {
    const Index epoch = state_.epoch + 1;
    BatchStream stream(data, config_.batch_size, true, substream(seed_, "data.shuffle", std::uint64_t(epoch)),
                       image_size);
    ImageBatch batch;
    double sum = 0.0;
    Index count = 0;
    while (!step_cap_reached() && stream.next(batch)) {
      losses::LossBreakdown loss;
      try {
        loss = train_step(batch);
      } catch (const TrainingError& e) {
        log.flush();
        throw TrainingError(fmt::format("training aborted: {}; last good checkpoint: {}", e.what(),
                                        last_good.empty() ? "none" : last_good.string()));
      }
      log << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", state_.step, epoch, loss.frobenius,
                         loss.norm, loss.contrastive, loss.total);
      sum += loss.total;
      ++count;
    }
    log.flush();
    if (count < stream.batches()) {
      spdlog::info("step cap {} reached during epoch {}", config_.max_steps, epoch);
      break;
    }
    state_.epoch = epoch;
    state_.epoch_losses.push_back(sum / double(count));
    spdlog::info("epoch {}/{}: mean loss {:.6f}", epoch, config_.epochs, state_.epoch_losses.back());
    const bool stop = plateaued();
    if (epoch % config_.checkpoint_every == 0 || epoch == config_.epochs || stop) {
      last_good = checkpoint_path(out_dir, epoch);
      save_checkpoint(last_good);
      saved_step = state_.step;
    }
    if (stop) {
      spdlog::info("loss plateau after epoch {}; stopping", epoch);
      result.stopped_early = true;
      break;
    }
  }

  // A step cap can end a run between scheduled checkpoints; keep its state too.
  if (last_good.empty() || saved_step != state_.step) {
    last_good = out_dir / fmt::format("gen_step_{}.ckpt", state_.step);
    save_checkpoint(last_good);
  }
  result.final_checkpoint = last_good;
  result.steps = state_.step;
  result.epochs = state_.epoch;
  return result;
}

std::vector<std::uint8_t> Trainer::checkpoint_payload() const {
  TensorArchive archive;
  const auto& params = optimizer_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    archive.put("generator." + params[i].name, *params[i].value);
    archive.put("adam.m." + params[i].name, optimizer_.first_moments()[i]);
    archive.put("adam.v." + params[i].name, optimizer_.second_moments()[i]);
  }
  std::ostringstream rng;
  rng << state_.rng;
  archive.metadata() = {
      {"epoch", state_.epoch},
      {"step", state_.step},
      {"adam_steps", optimizer_.steps()},
      {"rng", rng.str()},
      {"epoch_losses", state_.epoch_losses},
      {"epsilon", generator_.config().epsilon},
      {"config_hash", hex64(config_hash_)},
      {"seed", seed_},
      {"surrogate", surrogate_.spec().architecture},
      {"generator", generator_json(generator_.config())},
  };
  return archive.serialize();
}

void Trainer::save_checkpoint(const fs::path& path) const {
  const auto payload = checkpoint_payload();
  const TensorArchive archive = TensorArchive::parse(payload);
  json sidecar = archive.metadata();
  sidecar.erase("rng");
  const auto& losses = state_.epoch_losses;
  sidecar["loss_history_tail"] =
      std::vector<double>(losses.end() - std::min<std::ptrdiff_t>(5, std::ssize(losses)), losses.end());
  sidecar.erase("epoch_losses");
  sidecar["payload_digest"] = hex64(Fnv1a().update(payload.data(), payload.size()).digest());

  const fs::path tmp = fs::path(path).concat(".tmp");
  write_file_bytes(tmp, payload);
  fs::rename(tmp, path);
  std::ofstream(checkpoint_sidecar(path)) << sidecar.dump(2) << "\n";
  spdlog::debug("checkpoint {}", path.string());
}

void Trainer::load_checkpoint(const fs::path& path) {
  const TensorArchive archive = read_verified(path);
  const json& meta = archive.metadata();
  if (meta.at("epsilon").get<double>() != generator_.config().epsilon) {
    throw ConfigError(fmt::format("checkpoint was trained with epsilon {} but the config has {}",
                                  meta.at("epsilon").get<double>(), generator_.config().epsilon));
  }
  if (meta.at("config_hash").get<std::string>() != hex64(config_hash_)) {
    throw ConfigError(fmt::format("checkpoint config hash {} differs from the live config {}; refusing to resume",
                                  meta.at("config_hash").get<std::string>(), hex64(config_hash_)));
  }

  const auto& params = optimizer_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    archive.get("generator." + params[i].name, *params[i].value);
    archive.get("adam.m." + params[i].name, optimizer_.first_moments()[i]);
    archive.get("adam.v." + params[i].name, optimizer_.second_moments()[i]);
  }
  optimizer_.set_steps(meta.at("adam_steps").get<long long>());
  state_.epoch = meta.at("epoch").get<Index>();
  state_.step = meta.at("step").get<Index>();
  state_.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
  std::istringstream rng(meta.at("rng").get<std::string>());
  rng >> state_.rng;
}

GeneratorCheckpoint load_generator(const fs::path& path) {
  const TensorArchive archive = read_verified(path);
  const json& meta = archive.metadata();
  GeneratorCheckpoint out;
  out.config = generator_from_json(meta.at("generator"));
  out.surrogate = meta.at("surrogate").get<std::string>();
  out.config_hash = meta.at("config_hash").get<std::string>();
  out.epoch = meta.at("epoch").get<Index>();
  out.generator = std::make_unique<Generator<Real>>(out.config, 0);
  for (auto& p : out.generator->parameters()) archive.get("generator." + p.name, *p.value);
  return out;
}

}  // namespace clipstrike
