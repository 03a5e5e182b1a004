#include "clipstrike/losses.hpp"

#include <fmt/format.h>

namespace clipstrike::losses {

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw ConfigError(fmt::format("loss weights must be non-negative (alpha={}, beta={})", alpha, beta));
  }
  if (!(mu > 0.0)) throw ConfigError(fmt::format("contrastive margin must be positive, got {}", mu));
}

LossBreakdown total_loss(double frobenius, double norm, double contrastive,
                         const LossWeights& weights) {
  const std::pair<const char*, double> terms[] = {
      {"frobenius", frobenius}, {"norm", norm}, {"contrastive", contrastive}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) throw std::domain_error(fmt::format("non-finite {} loss", name));
  }
  LossBreakdown out{frobenius, norm, contrastive, 0.0};
  out.total = weights.alpha * frobenius + weights.beta * norm + contrastive;
  return out;
}

}  // namespace clipstrike::losses
