#include "clipstrike/baselines.hpp"

#include <fmt/format.h>

#include <memory>

namespace clipstrike {

BaselineKind parse_baseline_kind(const std::string& text) {
  if (text == "fgsm") return BaselineKind::Fgsm;
  if (text == "pgd") return BaselineKind::Pgd;
  throw ConfigError("unknown baseline kind '" + text + "' (expected fgsm or pgd)");
}

std::string to_string(BaselineKind kind) { return kind == BaselineKind::Fgsm ? "fgsm" : "pgd"; }

void BaselineSpec::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("baseline epsilon must be positive");
  if (kind == BaselineKind::Pgd) {
    if (steps < 1) throw ConfigError("pgd needs at least one step");
    if (!(step_size > 0.0) || step_size > epsilon) {
      throw ConfigError(fmt::format("pgd step_size must lie in (0, epsilon = {}], got {}", epsilon, step_size));
    }
  }
}

Tensor<Real> input_gradient(Classifier& model, const Tensor<Real>& images, const std::vector<LabelSet>& labels,
                            bool multilabel) {
  const auto loss = classification_loss(model.logits(images), labels, multilabel);
  return model.backward_logits(loss.grad);
}

namespace {

double sign(double v) { return double(v > 0.0) - double(v < 0.0); }

// One signed step from `current`, projected around `origin`.
void signed_step(const Tensor<Real>& origin, Tensor<Real>& current, const Tensor<Real>& grad, double step,
                 double radius) {
  for (Index i = 0; i < origin.size(); ++i) {
    current.data()[i] =
        project_pixel(origin.data()[i], current.data()[i] + step * sign(grad.data()[i]), radius);
  }
}

}  // namespace

Tensor<Real> fgsm(Classifier& model, const ImageBatch& batch, bool multilabel, double epsilon) {
  if (epsilon < 0.0) throw ConfigError("fgsm epsilon must be non-negative");
  const Tensor<Real> grad = input_gradient(model, batch.images, batch.labels, multilabel);
  Tensor<Real> adversarial = batch.images;
  signed_step(batch.images, adversarial, grad, epsilon, epsilon);
  return adversarial;
}

Tensor<Real> pgd(Classifier& model, const ImageBatch& batch, bool multilabel, const BaselineSpec& spec,
                 std::mt19937_64& rng) {
  spec.validate();
  const Tensor<Real>& x = batch.images;
  Tensor<Real> adversarial = x;
  if (spec.random_start) {
    std::uniform_real_distribution<double> noise(-spec.epsilon, spec.epsilon);
    for (Index i = 0; i < x.size(); ++i) {
      adversarial.data()[i] = project_pixel(x.data()[i], x.data()[i] + noise(rng), spec.epsilon);
    }
  }
  for (Index s = 0; s < spec.steps; ++s) {
    const Tensor<Real> grad = input_gradient(model, adversarial, batch.labels, multilabel);
    signed_step(x, adversarial, grad, spec.step_size, spec.epsilon);
  }
  return adversarial;
}

Attack baseline_attack(Classifier& model, const BaselineSpec& spec, bool multilabel, std::uint64_t seed) {
  spec.validate();
  auto rng = std::make_shared<std::mt19937_64>(substream(seed, "baseline.pgd"));
  std::string name = spec.kind == BaselineKind::Fgsm
                         ? fmt::format("fgsm(eps={})", spec.epsilon)
                         : fmt::format("pgd(eps={},steps={},step={}{})", spec.epsilon, spec.steps, spec.step_size,
                                       spec.random_start ? ",random-start" : "");
  return {std::move(name), model.architecture(), [&model, spec, multilabel, rng](const ImageBatch& batch) {
            return spec.kind == BaselineKind::Fgsm ? fgsm(model, batch, multilabel, spec.epsilon)
                                                   : pgd(model, batch, multilabel, spec, *rng);
          }};
}

}  // namespace clipstrike
