#include "clipstrike/archive.hpp"
#include "clipstrike/trainer.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace clipstrike;
using clipstrike::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Rig {
  Dataset train = load_dataset("synthetic-fixture", Split::Train, {});
  std::unique_ptr<Classifier> model = load_classifier({"fixture-cnn", "pretrained", 32}, train, 0);
  FeatureExtractor surrogate{*model, resolve_layer("fixture-cnn")};
  FixtureClip clip{substream(0, "clip"), 32};
  PromptSet prompts = encode_prompts(train.vocabulary(), label_tuples(train.vocabulary(), 1),
                                     PromptTemplate("a photo of a {label}"), clip);
  GeneratorConfig generator_config = [] {
    GeneratorConfig c;
    c.base_channels = 4;
    c.resblocks = 2;
    c.image_size = 32;
    return c;
  }();

  TrainConfig train_config(Index epochs) const {
    TrainConfig c;
    c.epochs = epochs;
    c.early_stop = false;
    return c;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::uint64_t generator_checksum(Generator<Real>& g) { return checksum(g.parameters()); }

}  // namespace

TEST_CASE("training bookkeeping, determinism and resume") {
  Rig rig;
  TempDir dir("clipstrike_trainer_test");

  auto run = [&](const fs::path& out, Index epochs, const fs::path& resume = {}) {
    Generator<Real> gen(rig.generator_config, 5);
    TrainConfig config = rig.train_config(epochs);
    config.resume_from = resume;
    Trainer trainer(gen, rig.surrogate, rig.clip, rig.prompts, 0, config, 11, 99);
    return trainer.train(rig.train, out);
  };

  const std::uint64_t surrogate_before = rig.model->checksum();
  const std::uint64_t clip_before = rig.clip.weights_checksum();
  const TrainResult a = run(dir.path / "a", 2);
  CHECK(a.steps == 32);
  CHECK(a.epochs == 2);
  CHECK(a.final_checkpoint == dir.path / "a" / "gen_epoch_2.ckpt");
  CHECK(fs::exists(dir.path / "a" / "gen_epoch_1.ckpt"));
  CHECK(fs::exists(dir.path / "a" / "gen_epoch_2.json"));
  const auto log_a = lines(dir.path / "a" / "train_log.csv");
  REQUIRE(log_a.size() == 33);
  CHECK(log_a.front() == "step,epoch,frobenius,norm,contrastive,total");
  CHECK(rig.model->checksum() == surrogate_before);
  CHECK(rig.clip.weights_checksum() == clip_before);

  run(dir.path / "b", 2);
  CHECK(slurp(dir.path / "a" / "train_log.csv") == slurp(dir.path / "b" / "train_log.csv"));

  const TrainResult resumed = run(dir.path / "c", 2, dir.path / "a" / "gen_epoch_1.ckpt");
  CHECK(resumed.steps == 32);
  const auto log_c = lines(dir.path / "c" / "train_log.csv");
  REQUIRE(log_c.size() == 17);
  for (std::size_t i = 1; i < log_c.size(); ++i) CHECK(log_c[i] == log_a[16 + i]);
  CHECK(slurp(dir.path / "c" / "gen_epoch_2.ckpt") == slurp(dir.path / "a" / "gen_epoch_2.ckpt"));

  Generator<Real> capped_gen(rig.generator_config, 5);
  TrainConfig capped = rig.train_config(3);
  capped.max_steps = 20;
  Trainer trainer(capped_gen, rig.surrogate, rig.clip, rig.prompts, 0, capped, 11, 99);
  const TrainResult d = trainer.train(rig.train, dir.path / "d");
  CHECK(d.steps == 20);
  CHECK(d.epochs == 1);
  CHECK(d.final_checkpoint == dir.path / "d" / "gen_step_20.ckpt");
  CHECK(load_generator(d.final_checkpoint).epoch == 1);
  CHECK(lines(dir.path / "d" / "train_log.csv").size() == 21);
}

TEST_CASE("train step") {
  Rig rig;
  Generator<Real> gen(rig.generator_config, 6);
  const ImageBatch batch = collate(rig.train, {0, 17, 33, 50}, 32);

  SUBCASE("zero perturbation leaves only the anchor distance and the saturated hinge") {
    for (auto& p : gen.parameters()) {
      if (p.name.starts_with("perturbation_decoder.head") || p.name.starts_with("saliency_decoder.head")) {
        p.value->array().setZero();
      }
    }
    TrainConfig config = rig.train_config(1);
    config.weights = {0.0, 0.0, 0.5};
    Trainer trainer(gen, rig.surrogate, rig.clip, rig.prompts, 0, config, 1, 1);
    const auto loss = trainer.train_step(batch);

    const RowMatrix<Real> images = rig.clip.encode_images(batch);
    const RowMatrix<Real> z = rig.surrogate.extract(batch.images);
    double expected = 0.0;
    for (Index i = 0; i < z.rows(); ++i) {
      Index worst = 0;
      (rig.prompts.embeddings * images.row(i).transpose()).minCoeff(&worst);
      expected += (z.row(i).normalized() - rig.prompts.embeddings.row(worst).normalized()).norm();
    }
    expected = expected / double(z.rows()) + 0.5;
    CHECK(loss.contrastive == doctest::Approx(expected).epsilon(1e-12));
    CHECK(loss.total == doctest::Approx(expected).epsilon(1e-12));
    CHECK(loss.norm == 0.0);
    CHECK(loss.frobenius == 0.0);
  }

  SUBCASE("one update of the generator and nothing else") {
    Trainer trainer(gen, rig.surrogate, rig.clip, rig.prompts, 0, rig.train_config(1), 1, 1);
    const std::uint64_t surrogate_before = rig.model->checksum();
    const std::uint64_t clip_before = rig.clip.weights_checksum();
    std::uint64_t generator = generator_checksum(gen);
    for (int k = 0; k < 3; ++k) {
      trainer.train_step(batch);
      CHECK(trainer.state().step == k + 1);
      const std::uint64_t now = generator_checksum(gen);
      CHECK(now != generator);
      generator = now;
    }
    CHECK(rig.model->checksum() == surrogate_before);
    CHECK(rig.clip.weights_checksum() == clip_before);
  }

  SUBCASE("non-finite weights abort with the last good checkpoint named") {
    for (auto& p : gen.parameters()) p.value->array().setConstant(std::nan(""));
    Trainer trainer(gen, rig.surrogate, rig.clip, rig.prompts, 0, rig.train_config(1), 1, 1);
    TempDir dir("clipstrike_trainer_nan");
    CHECK_THROWS_WITH_AS(trainer.train(rig.train, dir.path), doctest::Contains("last good checkpoint: none"),
                         TrainingError);
  }
}

TEST_CASE("checkpoints round-trip and refuse tampering") {
  Rig rig;
  TempDir dir("clipstrike_checkpoint_test");
  const ImageBatch batch = collate(rig.train, {1, 2, 3, 4}, 32);
  Generator<Real> gen(rig.generator_config, 7);
  Trainer trainer(gen, rig.surrogate, rig.clip, rig.prompts, 0, rig.train_config(3), 2, 42);
  trainer.train_step(batch);
  trainer.train_step(batch);
  const fs::path first = dir.path / "first.ckpt", second = dir.path / "second.ckpt";
  trainer.save_checkpoint(first);
  const std::uint64_t saved = generator_checksum(gen);

  Generator<Real> other(rig.generator_config, 8);
  Trainer restored(other, rig.surrogate, rig.clip, rig.prompts, 0, rig.train_config(3), 2, 42);
  restored.load_checkpoint(first);
  CHECK(restored.state().step == 2);
  CHECK(generator_checksum(other) == saved);
  restored.save_checkpoint(second);
  CHECK(slurp(first) == slurp(second));
  CHECK(trainer.train_step(batch).total == restored.train_step(batch).total);

  const auto loaded = load_generator(first);
  CHECK(loaded.config.base_channels == 4);
  CHECK(loaded.surrogate == "fixture-cnn");
  CHECK(loaded.epoch == 0);
  CHECK(generator_checksum(*loaded.generator) == saved);

  auto fresh = [&](double epsilon) {
    GeneratorConfig c = rig.generator_config;
    c.epsilon = epsilon;
    return std::make_unique<Generator<Real>>(c, 1);
  };
  SUBCASE("epsilon mismatch") {
    auto g = fresh(0.1);
    Trainer t(*g, rig.surrogate, rig.clip, rig.prompts, 0, rig.train_config(3), 2, 42);
    CHECK_THROWS_WITH_AS(t.load_checkpoint(first), doctest::Contains("epsilon"), ConfigError);
  }
  SUBCASE("config hash mismatch") {
    auto g = fresh(0.2);
    Trainer t(*g, rig.surrogate, rig.clip, rig.prompts, 0, rig.train_config(3), 2, 43);
    CHECK_THROWS_WITH_AS(t.load_checkpoint(first), doctest::Contains("config hash"), ConfigError);
  }
  SUBCASE("edited metadata") {
    const fs::path sidecar = checkpoint_sidecar(first);
    std::string text = slurp(sidecar);
    const auto at = text.find("\"epoch\": 0");
    REQUIRE(at != std::string::npos);
    text.replace(at, 10, "\"epoch\": 5");
    std::ofstream(sidecar) << text;
    CHECK_THROWS_WITH_AS(restored.load_checkpoint(first), doctest::Contains("modified"), ConfigError);
    CHECK_THROWS_AS(load_generator(first), ConfigError);
  }
  SUBCASE("edited payload") {
    std::string bytes = slurp(first);
    bytes[bytes.size() - 3] ^= 0x10;
    std::ofstream(first, std::ios::binary) << bytes;
    CHECK_THROWS_WITH_AS(restored.load_checkpoint(first), doctest::Contains("digest"), ConfigError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_generator(dir.path / "nope.ckpt"), doctest::Contains("nope.ckpt"), ConfigError);
  }
}
