#pragma once

#include "clipstrike/tensor.hpp"

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace clipstrike::nn {

/// Named handle to a module-owned tensor. `grad` is null for non-trainable
/// buffers (batch-norm running statistics).
template <typename Scalar>
struct ParameterRef {
  std::string name;
  Tensor<Scalar>* value = nullptr;
  Tensor<Scalar>* grad = nullptr;

  bool trainable() const { return grad != nullptr; }
};

std::string join_name(const std::string& prefix, const std::string& name);

/// Layer with explicit forward/backward passes.
///
/// forward() caches whatever backward() needs, so backward() always refers to
/// the most recent forward() call. backward() returns the gradient w.r.t. the
/// layer input and, when gradient accumulation is enabled, adds parameter
/// gradients into the module's grad tensors.
template <typename Scalar>
class Module {
 public:
  using TensorT = Tensor<Scalar>;
  using Visitor = std::function<void(const std::string&, Module&)>;

  virtual ~Module() = default;

  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x) = 0;
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) = 0;
  virtual std::string kind() const = 0;

  /// Own tensors, named relative to `prefix`.
  virtual void collect(const std::string& prefix, std::vector<ParameterRef<Scalar>>& out) {
    (void)prefix;
    (void)out;
  }
  virtual void visit_children(const Visitor& visit) { (void)visit; }

  std::vector<ParameterRef<Scalar>> parameters(const std::string& prefix = "");

  /// Frozen modules still propagate gradients to their input but never touch
  /// their own grad tensors.
  void set_accumulate_grads(bool on);
  bool accumulate_grads() const { return accumulate_; }

  /// Depth-first count of modules whose kind() equals `kind` (including this).
  Index count_kind(const std::string& kind);

 protected:
  bool accumulate_ = true;
};

template <typename Scalar>
using ModulePtr = std::unique_ptr<Module<Scalar>>;

/// Draws N(0, gain² / fan_in) into `t`.
template <typename Scalar>
void fan_in_normal(Tensor<Scalar>& t, Index fan_in, double gain, std::mt19937_64& rng);

template <typename Scalar>
class Conv2d final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  Conv2d(Index in_channels, Index out_channels, Index kernel, Index stride = 1,
         Index padding = 0, bool bias = true);

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "Conv2d"; }
  void collect(const std::string& prefix, std::vector<ParameterRef<Scalar>>& out) override;

  void reset_parameters(std::mt19937_64& rng, double gain);
  Index output_extent(Index in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }
  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }
  TensorT& weight() { return weight_; }
  TensorT& bias() { return bias_; }

 private:
  Index in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  TensorT weight_, bias_, weight_grad_, bias_grad_;
  TensorT input_;
};

/// Transposed convolution with PyTorch weight layout (in, out, k, k) and
/// output extent (in − 1)·stride − 2·padding + kernel + output_padding.
template <typename Scalar>
class ConvTranspose2d final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  ConvTranspose2d(Index in_channels, Index out_channels, Index kernel, Index stride = 1,
                  Index padding = 0, Index output_padding = 0, bool bias = true);

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "ConvTranspose2d"; }
  void collect(const std::string& prefix, std::vector<ParameterRef<Scalar>>& out) override;

  void reset_parameters(std::mt19937_64& rng, double gain);
  Index output_extent(Index in) const {
    return (in - 1) * stride_ - 2 * padding_ + kernel_ + output_padding_;
  }
  Index out_channels() const { return out_; }
  TensorT& weight() { return weight_; }
  TensorT& bias() { return bias_; }

 private:
  Index in_, out_, kernel_, stride_, padding_, output_padding_;
  bool has_bias_;
  TensorT weight_, bias_, weight_grad_, bias_grad_;
  TensorT input_;
};

template <typename Scalar>
class Linear final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  Linear(Index in_features, Index out_features, bool bias = true);

  /// Accepts any N×C×H×W input with C·H·W == in_features; returns N×out×1×1.
  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "Linear"; }
  void collect(const std::string& prefix, std::vector<ParameterRef<Scalar>>& out) override;

  void reset_parameters(std::mt19937_64& rng, double gain);
  Index in_features() const { return in_; }
  Index out_features() const { return out_; }
  TensorT& weight() { return weight_; }
  TensorT& bias() { return bias_; }

 private:
  Index in_, out_;
  bool has_bias_;
  TensorT weight_, bias_, weight_grad_, bias_grad_;
  TensorT input_;
};

template <typename Scalar>
class ReLU final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "ReLU"; }

 private:
  TensorT input_;
};

/// Pass-through; also stands in for inference-mode dropout so that parameter
/// indices line up with reference layouts.
template <typename Scalar>
class Identity final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  Tensor<Scalar> forward(const Tensor<Scalar>& x) override { return x; }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override { return grad_out; }
  std::string kind() const override { return "Identity"; }
};

/// Inference-mode batch normalization (running statistics only).
template <typename Scalar>
class BatchNorm2d final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  explicit BatchNorm2d(Index channels, double eps = 1e-5);

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "BatchNorm2d"; }
  void collect(const std::string& prefix, std::vector<ParameterRef<Scalar>>& out) override;

 private:
  Eigen::Array<Scalar, Eigen::Dynamic, 1> scale() const;

  Index channels_;
  double eps_;
  TensorT weight_, bias_, running_mean_, running_var_, weight_grad_, bias_grad_;
  TensorT input_;
};

template <typename Scalar>
class MaxPool2d final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  MaxPool2d(Index kernel, Index stride, Index padding = 0)
      : kernel_(kernel), stride_(stride), padding_(padding) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "MaxPool2d"; }

 private:
  Index kernel_, stride_, padding_;
  Shape input_shape_;
  std::vector<Index> argmax_;
};

template <typename Scalar>
class AvgPool2d final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  AvgPool2d(Index kernel, Index stride) : kernel_(kernel), stride_(stride) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "AvgPool2d"; }

 private:
  Index kernel_, stride_;
  Shape input_shape_;
};

/// Averages over adaptive bins [floor(i·H/oh), ceil((i+1)·H/oh)).
template <typename Scalar>
class AdaptiveAvgPool2d final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  AdaptiveAvgPool2d(Index out_h, Index out_w) : out_h_(out_h), out_w_(out_w) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "AdaptiveAvgPool2d"; }

 private:
  Index out_h_, out_w_;
  Shape input_shape_;
};

template <typename Scalar>
class Flatten final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "Flatten"; }

 private:
  Shape input_shape_;
};

template <typename Scalar>
class Sequential final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  using typename Module<Scalar>::Visitor;

  Sequential() = default;

  /// Appends `module` under `name` (defaults to its position index).
  template <typename M>
  M& add(std::unique_ptr<M> module, std::string name = "") {
    M& ref = *module;
    if (name.empty()) name = std::to_string(children_.size());
    children_.emplace_back(std::move(name), std::move(module));
    return ref;
  }
  template <typename M, typename... Args>
  M& emplace(std::string name, Args&&... args) {
    return add(std::make_unique<M>(std::forward<Args>(args)...), std::move(name));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "Sequential"; }
  void visit_children(const Visitor& visit) override;

  Index size() const { return static_cast<Index>(children_.size()); }
  Module<Scalar>& at(Index i) { return *children_.at(static_cast<std::size_t>(i)).second; }
  const std::string& name_at(Index i) const { return children_.at(static_cast<std::size_t>(i)).first; }

 private:
  std::vector<std::pair<std::string, ModulePtr<Scalar>>> children_;
};

/// conv3×3 → ReLU → conv3×3, plus identity skip. Used by the generator trunk.
template <typename Scalar>
class ResidualBlock final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  using typename Module<Scalar>::Visitor;
  explicit ResidualBlock(Index channels);

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "ResidualBlock"; }
  void visit_children(const Visitor& visit) override;

  Conv2d<Scalar>& conv1() { return conv1_; }
  Conv2d<Scalar>& conv2() { return conv2_; }

 private:
  Conv2d<Scalar> conv1_, conv2_;
  ReLU<Scalar> relu_;
};

/// ResNet basic (expansion 1) or bottleneck (expansion 4) block with optional
/// 1×1 projection shortcut, torchvision parameter naming.
template <typename Scalar>
class ResNetBlock final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  using typename Module<Scalar>::Visitor;
  ResNetBlock(Index in_channels, Index planes, Index stride, bool bottleneck);

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return bottleneck_ ? "Bottleneck" : "BasicBlock"; }
  void visit_children(const Visitor& visit) override;

  Index out_channels() const { return out_channels_; }

 private:
  bool bottleneck_;
  Index out_channels_;
  Sequential<Scalar> body_;
  std::unique_ptr<Sequential<Scalar>> downsample_;
  ReLU<Scalar> out_relu_;
};

/// DenseNet layer: output is concat(input, conv3×3(relu(bn(conv1×1(relu(bn(input))))))).
template <typename Scalar>
class DenseLayer final : public Module<Scalar> {
 public:
  using typename Module<Scalar>::TensorT;
  using typename Module<Scalar>::Visitor;
  DenseLayer(Index in_channels, Index growth_rate, Index bottleneck_size);

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::string kind() const override { return "DenseLayer"; }
  void visit_children(const Visitor& visit) override;

 private:
  Index in_channels_;
  Sequential<Scalar> body_;
};

extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class ConvTranspose2d<float>;
extern template class ConvTranspose2d<double>;
extern template class Linear<float>;
extern template class Linear<double>;
extern template class ReLU<float>;
extern template class ReLU<double>;
extern template class BatchNorm2d<float>;
extern template class BatchNorm2d<double>;
extern template class MaxPool2d<float>;
extern template class MaxPool2d<double>;
extern template class AvgPool2d<float>;
extern template class AvgPool2d<double>;
extern template class AdaptiveAvgPool2d<float>;
extern template class AdaptiveAvgPool2d<double>;
extern template class Flatten<float>;
extern template class Flatten<double>;
extern template class Sequential<float>;
extern template class Sequential<double>;
extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;
extern template class ResNetBlock<float>;
extern template class ResNetBlock<double>;
extern template class DenseLayer<float>;
extern template class DenseLayer<double>;
extern template class Module<float>;
extern template class Module<double>;

}  // namespace clipstrike::nn
