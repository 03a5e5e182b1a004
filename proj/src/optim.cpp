#include "clipstrike/optim.hpp"

#include <cmath>

namespace clipstrike::nn {

template <typename Scalar>
AdamW<Scalar>::AdamW(std::vector<ParameterRef<Scalar>> params, AdamWOptions options)
    : options_(options) {
  for (auto& p : params) {
    if (!p.trainable()) continue;
    m_.emplace_back(p.value->shape());
    v_.emplace_back(p.value->shape());
    params_.push_back(std::move(p));
  }
}

template <typename Scalar>
void AdamW<Scalar>::zero_grad() {
  for (auto& p : params_) p.grad->array().setZero();
}

template <typename Scalar>
double AdamW<Scalar>::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p.grad->array().template cast<double>().square().sum();
  return std::sqrt(sq);
}

template <typename Scalar>
double AdamW<Scalar>::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const Scalar factor = static_cast<Scalar>(max_norm / (norm + 1e-12));
    for (auto& p : params_) p.grad->array() *= factor;
  }
  return norm;
}

template <typename Scalar>
void AdamW<Scalar>::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const Scalar lr = static_cast<Scalar>(options_.lr);
  const Scalar b1 = static_cast<Scalar>(options_.beta1);
  const Scalar b2 = static_cast<Scalar>(options_.beta2);
  const Scalar bias1 = static_cast<Scalar>(1.0 - std::pow(options_.beta1, t));
  const Scalar bias2_sqrt = static_cast<Scalar>(std::sqrt(1.0 - std::pow(options_.beta2, t)));
  const Scalar eps = static_cast<Scalar>(options_.eps);
  const Scalar decay = static_cast<Scalar>(1.0 - options_.lr * options_.weight_decay);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& value = params_[i].value->array();
    const auto& grad = params_[i].grad->array();
    auto& m = m_[i].array();
    auto& v = v_[i].array();
    value *= decay;
    m = b1 * m + (Scalar(1) - b1) * grad;
    v = b2 * v + (Scalar(1) - b2) * grad.square();
    value -= (lr / bias1) * m / (v.sqrt() / bias2_sqrt + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace clipstrike::nn
