#pragma once

#include "clipstrike/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace clipstrike {

struct GeneratorConfig {
  double epsilon = 0.2;
  Index base_channels = 64;
  Index resblocks = 6;
  bool saliency_gating = true;
  Index image_size = 224;

  /// Throws ConfigError on epsilon ≤ 0, resblocks < 1, base_channels < 1, or an
  /// image size the two stride-2 stages cannot reproduce exactly.
  void validate() const;
};

template <typename Scalar>
struct GeneratorOutput {
  Tensor<Scalar> delta;     ///< N×3×H×W, every entry in [−ε, ε]
  Tensor<Scalar> saliency;  ///< N×1×H×W, unscaled
};

/// Shared encoder feeding a perturbation decoder (ε·tanh head) and a
/// single-channel saliency decoder.
template <typename Scalar>
class Generator {
 public:
  using TensorT = Tensor<Scalar>;

  Generator(const GeneratorConfig& config, std::uint64_t seed);

  /// Throws ShapeError unless x is N×3×S×S with S = config().image_size.
  GeneratorOutput<Scalar> forward(const TensorT& x);

  /// Gradients w.r.t. the most recent forward's outputs; accumulates into the
  /// parameter grads and returns the gradient w.r.t. the input images.
  TensorT backward(const TensorT& grad_delta, const TensorT& grad_saliency);

  std::vector<nn::ParameterRef<Scalar>> parameters();
  const GeneratorConfig& config() const { return config_; }

  nn::Sequential<Scalar>& encoder() { return encoder_; }
  nn::Sequential<Scalar>& perturbation_decoder() { return perturbation_decoder_; }
  nn::Sequential<Scalar>& saliency_decoder() { return saliency_decoder_; }

 private:
  GeneratorConfig config_;
  nn::Sequential<Scalar> encoder_;
  nn::Sequential<Scalar> perturbation_decoder_;
  nn::Sequential<Scalar> saliency_decoder_;
  TensorT bounded_;  // tanh of the raw perturbation head
};

/// Per-sample (M − min)/(max − min); samples whose range is below tau map to zeros.
template <typename Scalar>
Tensor<Scalar> minmax_scale(const Tensor<Scalar>& saliency, double tau = 1e-8);

/// Gradient of minmax_scale w.r.t. its input. The argmin/argmax entries (first
/// occurrence) carry the gradient of the range endpoints.
template <typename Scalar>
Tensor<Scalar> minmax_scale_backward(const Tensor<Scalar>& saliency,
                                     const Tensor<Scalar>& grad_scaled, double tau = 1e-8);

/// Moves pixel x toward `candidate`, clipped to [x − radius, x + radius] ∩ [0, 1].
/// The returned value v always satisfies |fl(v − x)| ≤ radius: when rounding
/// would overshoot, v is stepped back toward x one ulp at a time.
template <typename Scalar>
Scalar project_pixel(Scalar x, Scalar candidate, Scalar radius) {
  Scalar v = std::clamp(candidate, x - radius, x + radius);
  v = std::clamp(v, Scalar(0), Scalar(1));
  while (std::abs(v - x) > radius) v = std::nextafter(v, x);
  return v;
}

template <typename Scalar>
struct Composition {
  Tensor<Scalar> adversarial;      ///< x′, N×3×H×W in [0, 1]
  Tensor<Scalar> scaled_saliency;  ///< M_scaled, N×1×H×W (zeros when gating is off)
};

/// x′ = clamp(x + M_scaled ⊙ δ, 0, 1) with gating, clamp(x + δ, 0, 1) without.
/// ‖x′ − x‖∞ never exceeds ε (resp. ε·max M_scaled), including after rounding.
template <typename Scalar>
Composition<Scalar> compose_adversarial(const Tensor<Scalar>& images,
                                        const GeneratorOutput<Scalar>& out, bool gating,
                                        double tau = 1e-8);

/// Gradients of a loss on x′ w.r.t. δ and the unscaled saliency map. The clamp
/// passes gradient where x + p lies in [0, 1].
template <typename Scalar>
GeneratorOutput<Scalar> compose_adversarial_backward(const Tensor<Scalar>& images,
                                                     const GeneratorOutput<Scalar>& out,
                                                     const Composition<Scalar>& composed,
                                                     bool gating,
                                                     const Tensor<Scalar>& grad_adversarial,
                                                     double tau = 1e-8);

extern template class Generator<float>;
extern template class Generator<double>;

}  // namespace clipstrike
