#pragma once

#include "clipstrike/nn.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

namespace clipstrike::testing {

/// Fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

inline double relative_error(double a, double b, double floor = 1e-10) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of `f` along coordinate `i` of `x`.
inline double central_difference(const std::function<double()>& f, double& coordinate,
                                 double h = 1e-6) {
  const double saved = coordinate;
  coordinate = saved + h;
  const double up = f();
  coordinate = saved - h;
  const double down = f();
  coordinate = saved;
  return (up - down) / (2.0 * h);
}

/// Checks input and parameter gradients of `module` against central
/// differences of L = <probe, module(x)>. Returns the worst relative error,
/// with denominators floored at 1e-3 so roundoff on tiny gradients is ignored.
inline double gradient_check(nn::Module<double>& module, Tensor<double> x, std::mt19937_64& rng,
                             int coordinates = 12) {
  const Tensor<double> out = module.forward(x);
  const Tensor<double> probe = random_tensor(out.shape(), rng);
  auto loss = [&] { return (module.forward(x).array() * probe.array()).sum(); };

  auto params = module.parameters();
  for (auto& p : params) {
    if (p.grad) p.grad->array().setZero();
  }
  module.forward(x);
  const Tensor<double> grad_x = module.backward(probe);

  double worst = 0.0;
  std::uniform_int_distribution<Index> pick_x(0, x.size() - 1);
  for (int k = 0; k < coordinates; ++k) {
    const Index i = pick_x(rng);
    const double fd = central_difference(loss, x.data()[i]);
    worst = std::max(worst, relative_error(fd, grad_x.data()[i], 1e-3));
  }
  for (auto& p : params) {
    if (!p.grad) continue;
    std::uniform_int_distribution<Index> pick(0, p.value->size() - 1);
    for (int k = 0; k < coordinates / 2; ++k) {
      const Index i = pick(rng);
      const double fd = central_difference(loss, p.value->data()[i]);
      worst = std::max(worst, relative_error(fd, p.grad->data()[i], 1e-3));
    }
  }
  return worst;
}

}  // namespace clipstrike::testing
