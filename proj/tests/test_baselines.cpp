#include "clipstrike/baselines.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cstring>

using namespace clipstrike;
using clipstrike::testing::random_tensor;

namespace {

struct Rig {
  Dataset train = load_dataset("synthetic-fixture", Split::Train, {});
  Dataset test = load_dataset("synthetic-fixture", Split::Test, {});
  std::unique_ptr<Classifier> model = load_classifier({"fixture-cnn", "pretrained", 32}, train, 0);
};

ImageBatch random_batch(std::mt19937_64& rng, Index n) {
  ImageBatch batch;
  batch.images = random_tensor(Shape{n, 3, 32, 32}, rng, 0.0, 1.0);
  std::uniform_int_distribution<Index> label(0, 3);
  for (Index i = 0; i < n; ++i) {
    batch.labels.push_back({label(rng)});
    batch.ids.push_back(std::to_string(i));
  }
  return batch;
}

double linf(const Tensor<Real>& a, const Tensor<Real>& b) { return (a.array() - b.array()).abs().maxCoeff(); }

}  // namespace

TEST_CASE("fgsm") {
  Rig rig;
  std::mt19937_64 rng(51);
  ImageBatch batch = random_batch(rng, 2);
  CHECK((fgsm(*rig.model, batch, false, 0.0).array() == batch.images.array()).all());

  // Find a pixel whose gradient is positive once it is set to 0.5.
  Index up = -1;
  Tensor<Real> grad;
  for (Index i = 0; up < 0; ++i) {
    const double keep = batch.images.data()[i];
    batch.images.data()[i] = 0.5;
    grad = input_gradient(*rig.model, batch.images, batch.labels, false);
    if (grad.data()[i] > 0.0) {
      up = i;
    } else {
      batch.images.data()[i] = keep;
    }
  }
  const Tensor<Real> adv = fgsm(*rig.model, batch, false, 0.03);
  CHECK(adv.data()[up] == doctest::Approx(0.53));
  for (Index i = 0; i < adv.size(); ++i) {
    const double x = batch.images.data()[i], g = grad.data()[i];
    if (i == up || g == 0.0 || x < 0.03 || x > 0.97) continue;
    REQUIRE(adv.data()[i] == doctest::Approx(x + (g > 0 ? 0.03 : -0.03)));
  }

  batch.labels[1].clear();
  CHECK_THROWS_AS(fgsm(*rig.model, batch, false, 0.03), ConfigError);
}

TEST_CASE("baselines respect the budget and leave the model unchanged") {
  Rig rig;
  const std::uint64_t before = rig.model->checksum();
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> eps(0.001, 0.3);
  BaselineSpec spec{BaselineKind::Pgd, 0.0, 2, 0.0, true};
  for (int trial = 0; trial < 100; ++trial) {
    const ImageBatch batch = random_batch(rng, 2);
    spec.epsilon = eps(rng);
    spec.step_size = spec.epsilon / 2;
    spec.random_start = trial % 2 == 0;
    const Tensor<Real> f = fgsm(*rig.model, batch, false, spec.epsilon);
    const Tensor<Real> p = pgd(*rig.model, batch, false, spec, rng);
    REQUIRE(linf(f, batch.images) <= spec.epsilon);
    REQUIRE(linf(p, batch.images) <= spec.epsilon);
    REQUIRE(f.array().minCoeff() >= 0.0);
    REQUIRE(p.array().maxCoeff() <= 1.0);
  }
  CHECK(rig.model->checksum() == before);
  for (const auto& p : rig.model->parameters()) {
    if (p.grad) CHECK(p.grad->max_abs() == 0.0);
  }
}

TEST_CASE("single-step pgd is bitwise fgsm") {
  Rig rig;
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const ImageBatch batch = random_batch(rng, 2);
    const double epsilon = 0.01 + 0.002 * trial;
    const BaselineSpec spec{BaselineKind::Pgd, epsilon, 1, epsilon, false};
    const Tensor<Real> f = fgsm(*rig.model, batch, false, epsilon);
    const Tensor<Real> p = pgd(*rig.model, batch, false, spec, rng);
    REQUIRE(std::memcmp(f.data(), p.data(), sizeof(Real) * std::size_t(f.size())) == 0);
  }
}

TEST_CASE("pgd is at least as strong as fgsm on the fixture") {
  Rig rig;
  EvalOptions options;
  options.image_size = 32;
  auto loader = [&](const VictimSpec&) { return load_classifier({"fixture-cnn", "pretrained", 32}, rig.train, 0); };
  const BaselineSpec fgsm_spec{BaselineKind::Fgsm, 0.03, 1, 0.03, false};
  const BaselineSpec pgd_spec{BaselineKind::Pgd, 0.03, 10, 0.0075, false};
  const auto f = evaluate_matrix(baseline_attack(*rig.model, fgsm_spec, false, 0), {{"fixture-cnn"}}, rig.test,
                                 loader, options);
  const auto p = evaluate_matrix(baseline_attack(*rig.model, pgd_spec, false, 0), {{"fixture-cnn"}}, rig.test,
                                 loader, options);
  MESSAGE("fgsm HS ", f.rows[0].hs_perturbed, ", pgd HS ", p.rows[0].hs_perturbed);
  CHECK(f.rows[0].box == "white");
  CHECK(p.rows[0].hs_perturbed <= f.rows[0].hs_perturbed + 2.0);
  CHECK(f.rows[0].fooling_rate > 0.0);
}

TEST_CASE("baseline specs are validated") {
  CHECK_NOTHROW(BaselineSpec{}.validate());
  CHECK_THROWS_AS((BaselineSpec{BaselineKind::Pgd, 0.03, 0, 0.01, false}.validate()), ConfigError);
  CHECK_THROWS_AS((BaselineSpec{BaselineKind::Pgd, 0.03, 5, 0.05, false}.validate()), ConfigError);
  CHECK_THROWS_AS((BaselineSpec{BaselineKind::Fgsm, 0.0, 1, 0.0, false}.validate()), ConfigError);
  CHECK(parse_baseline_kind("pgd") == BaselineKind::Pgd);
  CHECK_THROWS_AS(parse_baseline_kind("cw"), ConfigError);
}
