#pragma once

#include "clipstrike/evaluator.hpp"
#include "clipstrike/models.hpp"

#include <random>

namespace clipstrike {

enum class BaselineKind { Fgsm, Pgd };
BaselineKind parse_baseline_kind(const std::string& text);
std::string to_string(BaselineKind kind);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::Fgsm;
  double epsilon = 0.03;
  Index steps = 10;         ///< PGD only
  double step_size = 0.01;  ///< PGD only, at most epsilon
  bool random_start = false;

  void validate() const;
};

/// Gradient of the classification loss (cross-entropy, or summed binary
/// cross-entropy for multi-label data) w.r.t. the input images.
Tensor<Real> input_gradient(Classifier& model, const Tensor<Real>& images, const std::vector<LabelSet>& labels,
                            bool multilabel);

/// x′ = clamp(x + ε·sign(∇x L), 0, 1), with ‖x′ − x‖∞ ≤ ε exactly.
Tensor<Real> fgsm(Classifier& model, const ImageBatch& batch, bool multilabel, double epsilon);

/// Signed-gradient ascent projected onto the ℓ∞ ε-ball around x and [0, 1]
/// after every step, optionally from a uniform random start inside the ball.
Tensor<Real> pgd(Classifier& model, const ImageBatch& batch, bool multilabel, const BaselineSpec& spec,
                 std::mt19937_64& rng);

/// White-box attack on `model` for evaluate_matrix. Random starts draw from a
/// stream seeded once per attack.
Attack baseline_attack(Classifier& model, const BaselineSpec& spec, bool multilabel, std::uint64_t seed);

}  // namespace clipstrike
