#include "clipstrike/generator.hpp"

#include <fmt/format.h>

#include <cassert>
#include <random>

namespace clipstrike {

void GeneratorConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError(fmt::format("generator.epsilon must be > 0, got {}", epsilon));
  if (resblocks < 1) throw ConfigError(fmt::format("generator.resblocks must be >= 1, got {}", resblocks));
  if (base_channels < 1) {
    throw ConfigError(fmt::format("generator.base_channels must be >= 1, got {}", base_channels));
  }
  if (image_size < 4 || image_size % 4 != 0) {
    throw ConfigError(fmt::format("generator.image_size must be a positive multiple of 4, got {}",
                                  image_size));
  }
}

namespace {

constexpr double kReluGain = 1.4142135623730951;
// Residual branches and output heads start small so the untrained generator
// emits a mild perturbation and the trunk variance stays bounded.
constexpr double kBranchGain = 0.5;
constexpr double kHeadGain = 0.5;

template <typename Scalar>
void build_decoder(nn::Sequential<Scalar>& dec, Index ngf, Index out_channels, bool head_bias,
                   std::mt19937_64& rng) {
  using namespace nn;
  dec.template emplace<ConvTranspose2d<Scalar>>("up1", 4 * ngf, 2 * ngf, 3, 2, 1, 1)
      .reset_parameters(rng, kReluGain);
  dec.template emplace<ReLU<Scalar>>("up1_relu");
  dec.template emplace<ConvTranspose2d<Scalar>>("up2", 2 * ngf, ngf, 3, 2, 1, 1)
      .reset_parameters(rng, kReluGain);
  dec.template emplace<ReLU<Scalar>>("up2_relu");
  dec.template emplace<ConvTranspose2d<Scalar>>("head", ngf, out_channels, 7, 1, 3, 0, head_bias)
      .reset_parameters(rng, kHeadGain);
}

}  // namespace

template <typename Scalar>
Generator<Scalar>::Generator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
  using namespace nn;
  config_.validate();
  const Index ngf = config_.base_channels;

  std::mt19937_64 rng(substream(seed, "generator.encoder"));
  encoder_.template emplace<Conv2d<Scalar>>("stem", 3, ngf, 7, 1, 3).reset_parameters(rng, kReluGain);
  encoder_.template emplace<ReLU<Scalar>>("stem_relu");
  encoder_.template emplace<Conv2d<Scalar>>("down1", ngf, 2 * ngf, 3, 2, 1).reset_parameters(rng, kReluGain);
  encoder_.template emplace<ReLU<Scalar>>("down1_relu");
  encoder_.template emplace<Conv2d<Scalar>>("down2", 2 * ngf, 4 * ngf, 3, 2, 1).reset_parameters(rng, kReluGain);
  encoder_.template emplace<ReLU<Scalar>>("down2_relu");
  for (Index i = 0; i < config_.resblocks; ++i) {
    auto& block = encoder_.template emplace<ResidualBlock<Scalar>>(fmt::format("res{}", i), 4 * ngf);
    block.conv1().reset_parameters(rng, kReluGain);
    block.conv2().reset_parameters(rng, kBranchGain);
  }

  rng.seed(substream(seed, "generator.perturbation_decoder"));
  build_decoder(perturbation_decoder_, ngf, 3, true, rng);
  // Min-max scaling removes any per-sample constant, so a saliency head bias
  // would never receive gradient.
  rng.seed(substream(seed, "generator.saliency_decoder"));
  build_decoder(saliency_decoder_, ngf, 1, false, rng);
}

template <typename Scalar>
GeneratorOutput<Scalar> Generator<Scalar>::forward(const TensorT& x) {
  const Index s = config_.image_size;
  if (x.c() != 3 || x.h() != s || x.w() != s) {
    throw ShapeError(fmt::format("generator expects Nx3x{}x{} input, got {}", s, s, x.shape().str()));
  }
  const TensorT features = encoder_.forward(x);
  TensorT raw = perturbation_decoder_.forward(features);
  bounded_ = TensorT(raw.shape(), raw.array().tanh());
  const Scalar eps = Scalar(config_.epsilon);
  GeneratorOutput<Scalar> out;
  out.delta = TensorT(raw.shape(), (eps * bounded_.array()).max(-eps).min(eps));
  out.saliency = saliency_decoder_.forward(features);
  return out;
}

template <typename Scalar>
Tensor<Scalar> Generator<Scalar>::backward(const TensorT& grad_delta, const TensorT& grad_saliency) {
  if (grad_delta.shape() != bounded_.shape()) {
    throw ShapeError("generator backward: gradient shape " + grad_delta.shape().str() +
                     " does not match the last forward");
  }
  const Scalar eps = Scalar(config_.epsilon);
  const TensorT grad_raw(grad_delta.shape(),
                         grad_delta.array() * eps * (Scalar(1) - bounded_.array().square()));
  TensorT grad_features = perturbation_decoder_.backward(grad_raw);
  grad_features.array() += saliency_decoder_.backward(grad_saliency).array();
  return encoder_.backward(grad_features);
}

template <typename Scalar>
std::vector<nn::ParameterRef<Scalar>> Generator<Scalar>::parameters() {
  auto params = encoder_.parameters("encoder");
  for (auto& p : perturbation_decoder_.parameters("perturbation_decoder")) params.push_back(p);
  for (auto& p : saliency_decoder_.parameters("saliency_decoder")) params.push_back(p);
  return params;
}

template <typename Scalar>
Tensor<Scalar> minmax_scale(const Tensor<Scalar>& saliency, double tau) {
  Tensor<Scalar> out(saliency.shape());
  for (Index i = 0; i < saliency.n(); ++i) {
    const auto row = saliency.matrix().row(i);
    const Scalar lo = row.minCoeff();
    const Scalar range = row.maxCoeff() - lo;
    if (range < Scalar(tau)) continue;
    out.matrix().row(i) = (row.array() - lo) / range;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> minmax_scale_backward(const Tensor<Scalar>& saliency, const Tensor<Scalar>& grad_scaled,
                                     double tau) {
  if (saliency.shape() != grad_scaled.shape()) {
    throw ShapeError("minmax_scale_backward: " + saliency.shape().str() + " vs " +
                     grad_scaled.shape().str());
  }
  Tensor<Scalar> grad(saliency.shape());
  for (Index i = 0; i < saliency.n(); ++i) {
    const auto row = saliency.matrix().row(i);
    const auto g = grad_scaled.matrix().row(i);
    Index arg_lo = 0, arg_hi = 0;
    const Scalar lo = row.minCoeff(&arg_lo);
    const Scalar range = row.maxCoeff(&arg_hi) - lo;
    if (range < Scalar(tau)) continue;
    const auto scaled = ((row.array() - lo) / range).eval();
    auto out = grad.matrix().row(i);
    out = g / range;
    out(arg_lo) += (g.array() * (scaled - Scalar(1))).sum() / range;
    out(arg_hi) -= (g.array() * scaled).sum() / range;
  }
  return grad;
}

namespace {

template <typename Scalar>
void check_alignment(const Tensor<Scalar>& images, const GeneratorOutput<Scalar>& out) {
  if (out.delta.shape() != images.shape() ||
      out.saliency.shape() != Shape{images.n(), 1, images.h(), images.w()}) {
    throw ShapeError(fmt::format("compose: images {} vs delta {} / saliency {}", images.shape().str(),
                                 out.delta.shape().str(), out.saliency.shape().str()));
  }
}

}  // namespace

template <typename Scalar>
Composition<Scalar> compose_adversarial(const Tensor<Scalar>& images, const GeneratorOutput<Scalar>& out,
                                        bool gating, double tau) {
  check_alignment(images, out);
  Composition<Scalar> result;
  result.scaled_saliency = gating ? minmax_scale(out.saliency, tau) : Tensor<Scalar>(out.saliency.shape());
  result.adversarial = Tensor<Scalar>(images.shape());
  for (Index n = 0; n < images.n(); ++n) {
    for (Index c = 0; c < images.c(); ++c) {
      const auto x = images.plane(n, c).reshaped();
      const auto d = out.delta.plane(n, c).reshaped();
      const auto m = result.scaled_saliency.plane(n, 0).reshaped();
      auto dst = result.adversarial.plane(n, c).reshaped();
      for (Index k = 0; k < x.size(); ++k) {
        const Scalar p = gating ? m(k) * d(k) : d(k);
        dst(k) = project_pixel(x(k), x(k) + p, std::abs(p));
      }
    }
  }
  return result;
}

template <typename Scalar>
GeneratorOutput<Scalar> compose_adversarial_backward(const Tensor<Scalar>& images,
                                                     const GeneratorOutput<Scalar>& out,
                                                     const Composition<Scalar>& composed, bool gating,
                                                     const Tensor<Scalar>& grad_adversarial, double tau) {
  check_alignment(images, out);
  GeneratorOutput<Scalar> grad{Tensor<Scalar>(out.delta.shape()), Tensor<Scalar>(out.saliency.shape())};
  Tensor<Scalar> grad_scaled(out.saliency.shape());
  for (Index n = 0; n < images.n(); ++n) {
    for (Index c = 0; c < images.c(); ++c) {
      const auto x = images.plane(n, c).reshaped();
      const auto d = out.delta.plane(n, c).reshaped();
      const auto m = composed.scaled_saliency.plane(n, 0).reshaped();
      const auto g = grad_adversarial.plane(n, c).reshaped();
      auto gd = grad.delta.plane(n, c).reshaped();
      auto gm = grad_scaled.plane(n, 0).reshaped();
      for (Index k = 0; k < x.size(); ++k) {
        const Scalar p = gating ? m(k) * d(k) : d(k);
        const Scalar pre = x(k) + p;
        if (pre < Scalar(0) || pre > Scalar(1)) continue;
        gd(k) = gating ? g(k) * m(k) : g(k);
        if (gating) gm(k) += g(k) * d(k);
      }
    }
  }
  if (gating) grad.saliency = minmax_scale_backward(out.saliency, grad_scaled, tau);
  return grad;
}

#define CLIPSTRIKE_INSTANTIATE(Scalar)                                                              \
  template class Generator<Scalar>;                                                                 \
  template Tensor<Scalar> minmax_scale(const Tensor<Scalar>&, double);                              \
  template Tensor<Scalar> minmax_scale_backward(const Tensor<Scalar>&, const Tensor<Scalar>&,       \
                                                double);                                            \
  template Composition<Scalar> compose_adversarial(const Tensor<Scalar>&,                          \
                                                   const GeneratorOutput<Scalar>&, bool, double);   \
  template GeneratorOutput<Scalar> compose_adversarial_backward(                                    \
      const Tensor<Scalar>&, const GeneratorOutput<Scalar>&, const Composition<Scalar>&, bool,      \
      const Tensor<Scalar>&, double);

CLIPSTRIKE_INSTANTIATE(float)
CLIPSTRIKE_INSTANTIATE(double)

#undef CLIPSTRIKE_INSTANTIATE

}  // namespace clipstrike
