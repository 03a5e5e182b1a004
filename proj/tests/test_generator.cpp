#include "clipstrike/generator.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace clipstrike;
using clipstrike::testing::central_difference;
using clipstrike::testing::random_tensor;
using clipstrike::testing::relative_error;

namespace {

GeneratorConfig tiny_config() {
  GeneratorConfig c;
  c.base_channels = 2;
  c.resblocks = 2;
  c.image_size = 8;
  return c;
}

double inner(const Tensor<double>& a, const Tensor<double>& b) { return (a.array() * b.array()).sum(); }

}  // namespace

TEST_CASE("minmax scaling") {
  Tensor<double> m(Shape{3, 1, 2, 2});
  m.array() << 0, 2, 4, 8,  //
      3, 3, 3, 3,           //
      0, 0.5, 1, 0.25;
  const auto s = minmax_scale(m);
  CHECK(s(0, 0, 0, 1) == 0.25);
  CHECK(s(0, 0, 1, 0) == 0.5);
  CHECK(s(0, 0, 1, 1) == 1.0);
  CHECK(s.sample(1).isZero(0.0));
  CHECK((s.sample(2).array() == m.sample(2).array()).all());
}

TEST_CASE("minmax scaling gradient agrees with central differences") {
  std::mt19937_64 rng(21);
  Tensor<double> m = random_tensor(Shape{2, 1, 3, 3}, rng);
  const Tensor<double> probe = random_tensor(m.shape(), rng);
  const auto grad = minmax_scale_backward(m, probe);
  auto loss = [&] { return inner(minmax_scale(m), probe); };
  double worst = 0.0;
  for (Index i = 0; i < m.size(); ++i) {
    worst = std::max(worst, relative_error(central_difference(loss, m.data()[i]), grad.data()[i], 1e-3));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("compose adversarial") {
  Tensor<double> x(Shape{1, 3, 2, 2}, 0.5);
  x(0, 1, 0, 0) = 0.95;
  GeneratorOutput<double> out{Tensor<double>(x.shape()), Tensor<double>(Shape{1, 1, 2, 2})};
  out.saliency.array() << 0, 1, 1, 1;

  SUBCASE("zero perturbation is the identity") {
    const auto c = compose_adversarial(x, out, true);
    CHECK((c.adversarial.array() == x.array()).all());
  }
  SUBCASE("upper clamp") {
    out.delta.array().setConstant(0.2);
    const auto c = compose_adversarial(x, out, false);
    CHECK(c.adversarial(0, 1, 0, 0) == 1.0);
    CHECK(c.adversarial(0, 0, 0, 0) == doctest::Approx(0.7));
    // With gating the top-left pixel has M_scaled = 0 and stays put.
    const auto g = compose_adversarial(x, out, true);
    CHECK(g.adversarial(0, 1, 0, 0) == 0.95);
    CHECK(g.adversarial(0, 1, 0, 1) == doctest::Approx(0.7));
  }
  SUBCASE("flat saliency gates everything off") {
    out.delta.array().setConstant(0.2);
    out.saliency.array().setConstant(0.3);
    const auto c = compose_adversarial(x, out, true);
    CHECK((c.adversarial.array() == x.array()).all());
  }
  SUBCASE("misaligned shapes") {
    out.saliency = Tensor<double>(Shape{1, 1, 3, 3});
    CHECK_THROWS_AS(compose_adversarial(x, out, true), ShapeError);
  }
}

TEST_CASE("pixel projection never exceeds the radius after rounding") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<float> u(0.0f, 1.0f), p(-0.3f, 0.3f);
  for (int i = 0; i < 200000; ++i) {
    const float x = u(rng), d = p(rng);
    const float v = project_pixel(x, x + d, std::abs(d));
    REQUIRE(std::abs(v - x) <= std::abs(d));
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

TEST_CASE("compose gradient agrees with central differences") {
  std::mt19937_64 rng(23);
  const Tensor<double> x = random_tensor(Shape{2, 3, 4, 4}, rng, 0.3, 0.7);
  GeneratorOutput<double> out{random_tensor(x.shape(), rng, -0.2, 0.2),
                              random_tensor(Shape{2, 1, 4, 4}, rng)};
  const Tensor<double> probe = random_tensor(x.shape(), rng);
  for (const bool gating : {false, true}) {
    const auto composed = compose_adversarial(x, out, gating);
    const auto grad = compose_adversarial_backward(x, out, composed, gating, probe);
    auto loss = [&] { return inner(compose_adversarial(x, out, gating).adversarial, probe); };
    double worst = 0.0;
    for (Index i = 0; i < out.delta.size(); i += 5) {
      worst = std::max(worst, relative_error(central_difference(loss, out.delta.data()[i]),
                                             grad.delta.data()[i], 1e-3));
    }
    for (Index i = 0; i < out.saliency.size(); ++i) {
      worst = std::max(worst, relative_error(central_difference(loss, out.saliency.data()[i]),
                                             grad.saliency.data()[i], 1e-3));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("generator architecture") {
  GeneratorConfig config = tiny_config();
  Generator<double> a(config, 7), b(config, 7), c(config, 8);
  CHECK(a.encoder().count_kind("ResidualBlock") == 2);
  CHECK(a.encoder().count_kind("Conv2d") == 3 + 2 * 2);
  CHECK(a.perturbation_decoder().count_kind("ConvTranspose2d") == 3);
  CHECK(a.saliency_decoder().count_kind("ConvTranspose2d") == 3);

  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool identical = true, differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    identical = identical && (pa[i].value->array() == pb[i].value->array()).all();
    differs = differs || !(pa[i].value->array() == pc[i].value->array()).all();
  }
  CHECK(identical);
  CHECK(differs);

  std::mt19937_64 rng(24);
  const auto x = random_tensor(Shape{4, 3, 8, 8}, rng, 0.0, 1.0);
  const auto out = a.forward(x);
  CHECK(out.delta.shape() == Shape{4, 3, 8, 8});
  CHECK(out.saliency.shape() == Shape{4, 1, 8, 8});
  CHECK(out.delta.max_abs() <= 0.2);
  const auto again = a.forward(x);
  CHECK((again.delta.array() == out.delta.array()).all());
  CHECK((again.saliency.array() == out.saliency.array()).all());

  CHECK_THROWS_AS(a.forward(random_tensor(Shape{1, 3, 12, 12}, rng)), ShapeError);

  config.epsilon = 0.1;
  Generator<double> narrow(config, 7);
  CHECK(narrow.forward(x).delta.max_abs() <= 0.1);

  config.resblocks = 0;
  CHECK_THROWS_AS(Generator<double>(config, 1), ConfigError);
}

TEST_CASE("default generator keeps 224x224 outputs") {
  GeneratorConfig config;
  config.base_channels = 2;
  config.resblocks = 6;
  Generator<float> gen(config, 1);
  CHECK(gen.encoder().count_kind("ResidualBlock") == 6);
  Tensor<float> x(Shape{1, 3, 224, 224}, 0.5f);
  const auto out = gen.forward(x);
  CHECK(out.delta.shape() == Shape{1, 3, 224, 224});
  CHECK(out.saliency.shape() == Shape{1, 1, 224, 224});
}

TEST_CASE("generator gradients agree with central differences") {
  Generator<double> gen(tiny_config(), 3);
  std::mt19937_64 rng(25);
  const auto x = random_tensor(Shape{2, 3, 8, 8}, rng, 0.0, 1.0);
  const auto first = gen.forward(x);
  const auto probe_d = random_tensor(first.delta.shape(), rng);
  const auto probe_s = random_tensor(first.saliency.shape(), rng);
  auto loss = [&] {
    const auto o = gen.forward(x);
    return inner(o.delta, probe_d) + inner(o.saliency, probe_s);
  };
  auto params = gen.parameters();
  // Zero-initialised biases put dead-region pre-activations exactly on the
  // ReLU kink, where central differences are meaningless.
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (auto& p : params) {
    if (p.name.ends_with(".bias")) {
      for (Index i = 0; i < p.value->size(); ++i) p.value->data()[i] = jitter(rng);
    }
    p.grad->array().setZero();
  }
  gen.forward(x);
  gen.backward(probe_d, probe_s);
  double worst = 0.0;
  for (auto& p : params) {
    CHECK_MESSAGE(p.grad->max_abs() > 0.0, p.name);
    std::uniform_int_distribution<Index> pick(0, p.value->size() - 1);
    for (int k = 0; k < 3; ++k) {
      const Index i = pick(rng);
      const double err = relative_error(central_difference(loss, p.value->data()[i]),
                                        p.grad->data()[i], 1e-3);
      CHECK_MESSAGE(err < 1e-5, p.name, " index ", i);
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-5);
}
