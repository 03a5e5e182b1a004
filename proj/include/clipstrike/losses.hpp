#pragma once

#include "clipstrike/core.hpp"

#include <cmath>
#include <string>

namespace clipstrike::losses {

struct LossWeights {
  double alpha = 1e-5;  ///< saliency Frobenius weight
  double beta = 1e-3;   ///< feature-norm weight
  double mu = 0.5;      ///< contrastive hinge margin (unit-vector distance)

  /// Throws ConfigError unless alpha ≥ 0, beta ≥ 0, mu > 0.
  void validate() const;
};

struct LossBreakdown {
  double frobenius = 0.0;
  double norm = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

/// alpha·frobenius + beta·norm + contrastive. Throws std::domain_error naming
/// the first non-finite term.
LossBreakdown total_loss(double frobenius, double norm, double contrastive,
                         const LossWeights& weights);

/// Mean over rows of the row ℓ2 norm. Each row is one flattened saliency map.
template <typename Derived>
typename Derived::Scalar frobenius_loss(const Eigen::MatrixBase<Derived>& maps) {
  using Scalar = typename Derived::Scalar;
  if (maps.rows() == 0) return Scalar(0);
  return maps.rowwise().norm().sum() / Scalar(maps.rows());
}

/// d frobenius_loss / d maps. Rows with zero norm get a zero subgradient.
template <typename Derived>
RowMatrix<typename Derived::Scalar> frobenius_loss_gradient(const Eigen::MatrixBase<Derived>& maps) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> grad = RowMatrix<Scalar>::Zero(maps.rows(), maps.cols());
  const Scalar n = Scalar(maps.rows());
  for (Index i = 0; i < maps.rows(); ++i) {
    const Scalar norm = maps.row(i).norm();
    if (norm > Scalar(0)) grad.row(i) = maps.row(i) / (n * norm);
  }
  return grad;
}

/// v / ‖v‖₂. Throws std::domain_error("degenerate feature") for a zero vector.
template <typename Derived>
Vector<typename Derived::Scalar> direction(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = v.norm();
  if (!(norm > Scalar(0)) || !std::isfinite(static_cast<double>(norm))) {
    throw std::domain_error("degenerate feature");
  }
  return v.derived().reshaped() / norm;
}

/// Mean over rows of |‖z_i‖₂ − ‖z′_i‖₂|.
template <typename A, typename B>
typename A::Scalar norm_loss(const Eigen::MatrixBase<A>& z, const Eigen::MatrixBase<B>& z_perturbed) {
  using Scalar = typename A::Scalar;
  if (z.rows() != z_perturbed.rows() || z.cols() != z_perturbed.cols()) {
    throw ShapeError("norm_loss: feature shapes differ");
  }
  if (z.rows() == 0) return Scalar(0);
  return (z.rowwise().norm() - z_perturbed.rowwise().norm()).cwiseAbs().sum() / Scalar(z.rows());
}

/// d norm_loss / d z′ (z is data and carries no gradient). sign(0) = 0.
template <typename A, typename B>
RowMatrix<typename A::Scalar> norm_loss_gradient(const Eigen::MatrixBase<A>& z,
                                                 const Eigen::MatrixBase<B>& z_perturbed) {
  using Scalar = typename A::Scalar;
  RowMatrix<Scalar> grad = RowMatrix<Scalar>::Zero(z_perturbed.rows(), z_perturbed.cols());
  const Scalar n = Scalar(z.rows());
  for (Index i = 0; i < z.rows(); ++i) {
    const Scalar a = z.row(i).norm();
    const Scalar b = z_perturbed.row(i).norm();
    if (a == b || b == Scalar(0)) continue;
    const Scalar sign = a > b ? Scalar(-1) : Scalar(1);
    grad.row(i) = sign * z_perturbed.row(i) / (b * n);
  }
  return grad;
}

namespace detail {

template <typename Derived>
void require_nonzero_rows(const Eigen::MatrixBase<Derived>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    if (!(m.row(i).norm() > 0)) throw std::domain_error("degenerate feature");
  }
}

}  // namespace detail

/// Mean over rows of ‖û′ − ρ̂‖₂ + max(0, mu − ‖û′ − ẑ‖₂), hats denoting unit
/// directions of z′, ρ_min and z. Throws std::domain_error("degenerate
/// feature") on any zero row.
template <typename A, typename B, typename C>
typename A::Scalar contrastive_loss(const Eigen::MatrixBase<A>& z,
                                    const Eigen::MatrixBase<B>& z_perturbed,
                                    const Eigen::MatrixBase<C>& anchor, double mu) {
  using Scalar = typename A::Scalar;
  if (z.rows() != z_perturbed.rows() || z.rows() != anchor.rows() ||
      z.cols() != z_perturbed.cols() || z.cols() != anchor.cols()) {
    throw ShapeError("contrastive_loss: feature shapes differ");
  }
  detail::require_nonzero_rows(z);
  detail::require_nonzero_rows(z_perturbed);
  detail::require_nonzero_rows(anchor);
  if (z.rows() == 0) return Scalar(0);
  const auto zn = z.rowwise().normalized();
  const auto pn = z_perturbed.rowwise().normalized();
  const auto an = anchor.rowwise().normalized();
  const auto pull = (pn - an).rowwise().norm();
  const auto push = (Scalar(mu) - (pn - zn).rowwise().norm().array()).max(Scalar(0));
  return (pull.array() + push).sum() / Scalar(z.rows());
}

/// d contrastive_loss / d z′. Zero-distance terms take a zero subgradient.
template <typename A, typename B, typename C>
RowMatrix<typename A::Scalar> contrastive_loss_gradient(const Eigen::MatrixBase<A>& z,
                                                        const Eigen::MatrixBase<B>& z_perturbed,
                                                        const Eigen::MatrixBase<C>& anchor,
                                                        double mu) {
  using Scalar = typename A::Scalar;
  detail::require_nonzero_rows(z);
  detail::require_nonzero_rows(z_perturbed);
  detail::require_nonzero_rows(anchor);
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  RowMatrix<Scalar> grad(z_perturbed.rows(), z_perturbed.cols());
  const Scalar n = Scalar(z.rows());
  for (Index i = 0; i < z.rows(); ++i) {
    const Scalar length = z_perturbed.row(i).norm();
    const Row u = z_perturbed.row(i) / length;
    const Row to_anchor = u - anchor.row(i).normalized();
    const Row to_raw = u - z.row(i).normalized();
    const Scalar d_anchor = to_anchor.norm();
    const Scalar d_raw = to_raw.norm();
    Row grad_u = Row::Zero(u.cols());
    if (d_anchor > Scalar(0)) grad_u += to_anchor / d_anchor;
    if (Scalar(mu) - d_raw > Scalar(0) && d_raw > Scalar(0)) grad_u -= to_raw / d_raw;
    // Jacobian of v ↦ v/‖v‖ is (I − uuᵀ)/‖v‖.
    grad.row(i) = (grad_u - u * u.dot(grad_u)) / (length * n);
  }
  return grad;
}

}  // namespace clipstrike::losses
