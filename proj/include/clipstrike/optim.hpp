#pragma once

#include "clipstrike/nn.hpp"

#include <vector>

namespace clipstrike::nn {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay; same update order as torch.optim.AdamW.
/// Only trainable ParameterRefs are optimized; buffers are skipped.
template <typename Scalar>
class AdamW {
 public:
  AdamW(std::vector<ParameterRef<Scalar>> params, AdamWOptions options);

  void zero_grad();
  void step();

  /// Rescales gradients so their global ℓ2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  double grad_norm() const;

  const AdamWOptions& options() const { return options_; }
  long long steps() const { return steps_; }
  void set_steps(long long steps) { steps_ = steps; }

  const std::vector<ParameterRef<Scalar>>& params() const { return params_; }
  std::vector<Tensor<Scalar>>& first_moments() { return m_; }
  std::vector<Tensor<Scalar>>& second_moments() { return v_; }
  const std::vector<Tensor<Scalar>>& first_moments() const { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const { return v_; }

 private:
  std::vector<ParameterRef<Scalar>> params_;
  AdamWOptions options_;
  std::vector<Tensor<Scalar>> m_, v_;
  long long steps_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace clipstrike::nn
