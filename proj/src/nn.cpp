#include "clipstrike/nn.hpp"

#include <cmath>
#include <limits>

namespace clipstrike {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace clipstrike

namespace clipstrike::nn {

namespace {

// cols is (C·k·k) × (out_h·out_w), row-major.
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index height, Index width, Index kernel,
            Index stride, Index pad, Index out_h, Index out_w, Scalar* cols) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < kernel; ++ky) {
      for (Index kx = 0; kx < kernel; ++kx) {
        Scalar* row = cols + ((c * kernel + ky) * kernel + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + ky;
          Scalar* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = img + (c * height + iy) * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index channels, Index height, Index width, Index kernel,
            Index stride, Index pad, Index out_h, Index out_w, Scalar* img) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < kernel; ++ky) {
      for (Index kx = 0; kx < kernel; ++kx) {
        const Scalar* row = cols + ((c * kernel + ky) * kernel + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const Scalar* src = row + oy * out_w;
          Scalar* dst = img + (c * height + iy) * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void add_channel_bias(Tensor<Scalar>& out, const Tensor<Scalar>& bias) {
  const auto b = Eigen::Map<const Vector<Scalar>>(bias.data(), bias.size());
  for (Index n = 0; n < out.n(); ++n) out.sample(n).colwise() += b;
}

template <typename Scalar>
void accumulate_channel_bias_grad(const Tensor<Scalar>& grad, Tensor<Scalar>& bias_grad) {
  auto gb = Eigen::Map<Vector<Scalar>>(bias_grad.data(), bias_grad.size());
  for (Index n = 0; n < grad.n(); ++n) gb += grad.sample(n).rowwise().sum();
}

void require_channels(const char* layer, Index expected, const Shape& got) {
  if (got.c != expected) {
    throw ShapeError(std::string(layer) + ": expected " + std::to_string(expected) +
                     " input channels, got shape " + got.str());
  }
}

}  // namespace

std::string join_name(const std::string& prefix, const std::string& name) {
  if (prefix.empty()) return name;
  if (name.empty()) return prefix;
  return prefix + "." + name;
}

template <typename Scalar>
std::vector<ParameterRef<Scalar>> Module<Scalar>::parameters(const std::string& prefix) {
  std::vector<ParameterRef<Scalar>> out;
  collect(prefix, out);
  visit_children([&](const std::string& name, Module& child) {
    auto sub = child.parameters(join_name(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  });
  return out;
}

template <typename Scalar>
void Module<Scalar>::set_accumulate_grads(bool on) {
  accumulate_ = on;
  visit_children([on](const std::string&, Module& child) { child.set_accumulate_grads(on); });
}

template <typename Scalar>
Index Module<Scalar>::count_kind(const std::string& kind) {
  Index count = (this->kind() == kind) ? 1 : 0;
  visit_children([&](const std::string&, Module& child) { count += child.count_kind(kind); });
  return count;
}

template <typename Scalar>
void fan_in_normal(Tensor<Scalar>& t, Index fan_in, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng));
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(Index in_channels, Index out_channels, Index kernel, Index stride,
                       Index padding, bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_(Shape{out_channels, in_channels, kernel, kernel}),
      bias_(Shape{bias ? out_channels : 0, 1, 1, 1}),
      weight_grad_(weight_.shape()),
      bias_grad_(bias_.shape()) {}

template <typename Scalar>
void Conv2d<Scalar>::reset_parameters(std::mt19937_64& rng, double gain) {
  fan_in_normal(weight_, in_ * kernel_ * kernel_, gain, rng);
  bias_.array().setZero();
}

template <typename Scalar>
void Conv2d<Scalar>::collect(const std::string& prefix, std::vector<ParameterRef<Scalar>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &weight_grad_});
  if (has_bias_) out.push_back({join_name(prefix, "bias"), &bias_, &bias_grad_});
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x) {
  require_channels("Conv2d", in_, x.shape());
  const Index oh = output_extent(x.h());
  const Index ow = output_extent(x.w());
  if (oh <= 0 || ow <= 0) throw ShapeError("Conv2d: input too small: " + x.shape().str());
  input_ = x;
  TensorT out(Shape{x.n(), out_, oh, ow});
  RowMatrix<Scalar> cols(in_ * kernel_ * kernel_, oh * ow);
  const typename TensorT::ConstMatrixMap wm(weight_.data(), out_, in_ * kernel_ * kernel_);
  for (Index n = 0; n < x.n(); ++n) {
    im2col(x.data() + n * x.shape().sample_size(), in_, x.h(), x.w(), kernel_, stride_,
           padding_, oh, ow, cols.data());
    out.sample(n).noalias() = wm * cols;
  }
  if (has_bias_) add_channel_bias(out, bias_);
  return out;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const TensorT& x = input_;
  const Index oh = grad_out.h();
  const Index ow = grad_out.w();
  TensorT grad_in(x.shape());
  RowMatrix<Scalar> cols(in_ * kernel_ * kernel_, oh * ow);
  RowMatrix<Scalar> grad_cols(in_ * kernel_ * kernel_, oh * ow);
  const typename TensorT::ConstMatrixMap wm(weight_.data(), out_, in_ * kernel_ * kernel_);
  typename TensorT::MatrixMap wg(weight_grad_.data(), out_, in_ * kernel_ * kernel_);
  for (Index n = 0; n < x.n(); ++n) {
    const auto g = grad_out.sample(n);
    if (this->accumulate_) {
      im2col(x.data() + n * x.shape().sample_size(), in_, x.h(), x.w(), kernel_, stride_,
             padding_, oh, ow, cols.data());
      wg.noalias() += g * cols.transpose();
    }
    grad_cols.noalias() = wm.transpose() * g;
    col2im(grad_cols.data(), in_, x.h(), x.w(), kernel_, stride_, padding_, oh, ow,
           grad_in.data() + n * x.shape().sample_size());
  }
  if (this->accumulate_ && has_bias_) accumulate_channel_bias_grad(grad_out, bias_grad_);
  return grad_in;
}

// ------------------------------------------------------- ConvTranspose2d

template <typename Scalar>
ConvTranspose2d<Scalar>::ConvTranspose2d(Index in_channels, Index out_channels, Index kernel,
                                         Index stride, Index padding, Index output_padding,
                                         bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      output_padding_(output_padding),
      has_bias_(bias),
      weight_(Shape{in_channels, out_channels, kernel, kernel}),
      bias_(Shape{bias ? out_channels : 0, 1, 1, 1}),
      weight_grad_(weight_.shape()),
      bias_grad_(bias_.shape()) {
  if (output_padding >= stride) {
    throw std::invalid_argument("ConvTranspose2d: output_padding must be smaller than stride");
  }
}

template <typename Scalar>
void ConvTranspose2d<Scalar>::reset_parameters(std::mt19937_64& rng, double gain) {
  // Each output pixel receives in·k²/stride² contributions on average.
  const Index fan_in = std::max<Index>(1, in_ * kernel_ * kernel_ / (stride_ * stride_));
  fan_in_normal(weight_, fan_in, gain, rng);
  bias_.array().setZero();
}

template <typename Scalar>
void ConvTranspose2d<Scalar>::collect(const std::string& prefix,
                                      std::vector<ParameterRef<Scalar>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &weight_grad_});
  if (has_bias_) out.push_back({join_name(prefix, "bias"), &bias_, &bias_grad_});
}

template <typename Scalar>
Tensor<Scalar> ConvTranspose2d<Scalar>::forward(const Tensor<Scalar>& x) {
  require_channels("ConvTranspose2d", in_, x.shape());
  const Index oh = output_extent(x.h());
  const Index ow = output_extent(x.w());
  input_ = x;
  TensorT out(Shape{x.n(), out_, oh, ow});
  const typename TensorT::ConstMatrixMap wm(weight_.data(), in_, out_ * kernel_ * kernel_);
  RowMatrix<Scalar> cols(out_ * kernel_ * kernel_, x.h() * x.w());
  for (Index n = 0; n < x.n(); ++n) {
    cols.noalias() = wm.transpose() * x.sample(n);
    col2im(cols.data(), out_, oh, ow, kernel_, stride_, padding_, x.h(), x.w(),
           out.data() + n * out.shape().sample_size());
  }
  if (has_bias_) add_channel_bias(out, bias_);
  return out;
}

template <typename Scalar>
Tensor<Scalar> ConvTranspose2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const TensorT& x = input_;
  TensorT grad_in(x.shape());
  const typename TensorT::ConstMatrixMap wm(weight_.data(), in_, out_ * kernel_ * kernel_);
  typename TensorT::MatrixMap wg(weight_grad_.data(), in_, out_ * kernel_ * kernel_);
  RowMatrix<Scalar> grad_cols(out_ * kernel_ * kernel_, x.h() * x.w());
  for (Index n = 0; n < x.n(); ++n) {
    im2col(grad_out.data() + n * grad_out.shape().sample_size(), out_, grad_out.h(),
           grad_out.w(), kernel_, stride_, padding_, x.h(), x.w(), grad_cols.data());
    grad_in.sample(n).noalias() = wm * grad_cols;
    if (this->accumulate_) wg.noalias() += x.sample(n) * grad_cols.transpose();
  }
  if (this->accumulate_ && has_bias_) accumulate_channel_bias_grad(grad_out, bias_grad_);
  return grad_in;
}

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(Index in_features, Index out_features, bool bias)
    : in_(in_features),
      out_(out_features),
      has_bias_(bias),
      weight_(Shape{out_features, in_features, 1, 1}),
      bias_(Shape{bias ? out_features : 0, 1, 1, 1}),
      weight_grad_(weight_.shape()),
      bias_grad_(bias_.shape()) {}

template <typename Scalar>
void Linear<Scalar>::reset_parameters(std::mt19937_64& rng, double gain) {
  fan_in_normal(weight_, in_, gain, rng);
  bias_.array().setZero();
}

template <typename Scalar>
void Linear<Scalar>::collect(const std::string& prefix, std::vector<ParameterRef<Scalar>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &weight_grad_});
  if (has_bias_) out.push_back({join_name(prefix, "bias"), &bias_, &bias_grad_});
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::forward(const Tensor<Scalar>& x) {
  if (x.shape().sample_size() != in_) {
    throw ShapeError("Linear: expected " + std::to_string(in_) + " features per sample, got " +
                     x.shape().str());
  }
  input_ = x;
  TensorT out(Shape{x.n(), out_, 1, 1});
  const typename TensorT::ConstMatrixMap wm(weight_.data(), out_, in_);
  out.matrix().noalias() = x.matrix() * wm.transpose();
  if (has_bias_) {
    out.matrix().rowwise() += Eigen::Map<const Vector<Scalar>>(bias_.data(), out_).transpose();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const typename TensorT::ConstMatrixMap wm(weight_.data(), out_, in_);
  TensorT grad_in(input_.shape());
  grad_in.matrix().noalias() = grad_out.matrix() * wm;
  if (this->accumulate_) {
    typename TensorT::MatrixMap wg(weight_grad_.data(), out_, in_);
    wg.noalias() += grad_out.matrix().transpose() * input_.matrix();
    if (has_bias_) {
      Eigen::Map<Vector<Scalar>>(bias_grad_.data(), out_) +=
          grad_out.matrix().colwise().sum().transpose();
    }
  }
  return grad_in;
}

// ------------------------------------------------------------ ReLU etc.

template <typename Scalar>
Tensor<Scalar> ReLU<Scalar>::forward(const Tensor<Scalar>& x) {
  input_ = x;
  return TensorT(x.shape(), x.array().max(Scalar(0)));
}

template <typename Scalar>
Tensor<Scalar> ReLU<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  return TensorT(grad_out.shape(),
                 (input_.array() > Scalar(0)).select(grad_out.array(), Scalar(0)));
}

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(Index channels, double eps)
    : channels_(channels),
      eps_(eps),
      weight_(Shape{channels, 1, 1, 1}, Scalar(1)),
      bias_(Shape{channels, 1, 1, 1}),
      running_mean_(Shape{channels, 1, 1, 1}),
      running_var_(Shape{channels, 1, 1, 1}, Scalar(1)),
      weight_grad_(weight_.shape()),
      bias_grad_(bias_.shape()) {}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect(const std::string& prefix,
                                  std::vector<ParameterRef<Scalar>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &weight_grad_});
  out.push_back({join_name(prefix, "bias"), &bias_, &bias_grad_});
  out.push_back({join_name(prefix, "running_mean"), &running_mean_, nullptr});
  out.push_back({join_name(prefix, "running_var"), &running_var_, nullptr});
}

template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> BatchNorm2d<Scalar>::scale() const {
  return weight_.array() / (running_var_.array() + Scalar(eps_)).sqrt();
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::forward(const Tensor<Scalar>& x) {
  require_channels("BatchNorm2d", channels_, x.shape());
  input_ = x;
  const auto s = scale();
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> shift =
      bias_.array() - running_mean_.array() * s;
  TensorT out(x.shape());
  for (Index n = 0; n < x.n(); ++n) {
    out.sample(n) = (x.sample(n).array().colwise() * s).colwise() + shift;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const auto s = scale();
  TensorT grad_in(grad_out.shape());
  for (Index n = 0; n < grad_out.n(); ++n) {
    grad_in.sample(n) = grad_out.sample(n).array().colwise() * s;
  }
  if (this->accumulate_) {
    const auto inv_std = (running_var_.array() + Scalar(eps_)).sqrt().inverse();
    for (Index n = 0; n < grad_out.n(); ++n) {
      const auto g = grad_out.sample(n).array();
      const auto xhat =
          (input_.sample(n).array().colwise() - running_mean_.array()).colwise() * inv_std;
      weight_grad_.array() += (g * xhat).rowwise().sum();
      bias_grad_.array() += g.rowwise().sum();
    }
  }
  return grad_in;
}

// -------------------------------------------------------------- pooling

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::forward(const Tensor<Scalar>& x) {
  input_shape_ = x.shape();
  const Index oh = (x.h() + 2 * padding_ - kernel_) / stride_ + 1;
  const Index ow = (x.w() + 2 * padding_ - kernel_) / stride_ + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("MaxPool2d: input too small: " + x.shape().str());
  TensorT out(Shape{x.n(), x.c(), oh, ow});
  argmax_.assign(static_cast<std::size_t>(out.size()), -1);
  Index o = 0;
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      const Index base = (n * x.c() + c) * x.h() * x.w();
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox, ++o) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_index = -1;
          for (Index ky = 0; ky < kernel_; ++ky) {
            const Index iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= x.h()) continue;
            for (Index kx = 0; kx < kernel_; ++kx) {
              const Index ix = ox * stride_ - padding_ + kx;
              if (ix < 0 || ix >= x.w()) continue;
              const Index idx = base + iy * x.w() + ix;
              if (x.data()[idx] > best || best_index < 0) {
                best = x.data()[idx];
                best_index = idx;
              }
            }
          }
          out.data()[o] = best;
          argmax_[static_cast<std::size_t>(o)] = best_index;
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  TensorT grad_in(input_shape_);
  for (Index o = 0; o < grad_out.size(); ++o) {
    grad_in.data()[argmax_[static_cast<std::size_t>(o)]] += grad_out.data()[o];
  }
  return grad_in;
}

template <typename Scalar>
Tensor<Scalar> AvgPool2d<Scalar>::forward(const Tensor<Scalar>& x) {
  input_shape_ = x.shape();
  const Index oh = (x.h() - kernel_) / stride_ + 1;
  const Index ow = (x.w() - kernel_) / stride_ + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("AvgPool2d: input too small: " + x.shape().str());
  TensorT out(Shape{x.n(), x.c(), oh, ow});
  const Scalar inv = Scalar(1) / Scalar(kernel_ * kernel_);
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      const auto in = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          dst(oy, ox) = in.block(oy * stride_, ox * stride_, kernel_, kernel_).sum() * inv;
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> AvgPool2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  TensorT grad_in(input_shape_);
  const Scalar inv = Scalar(1) / Scalar(kernel_ * kernel_);
  for (Index n = 0; n < grad_out.n(); ++n) {
    for (Index c = 0; c < grad_out.c(); ++c) {
      const auto g = grad_out.plane(n, c);
      auto dst = grad_in.plane(n, c);
      for (Index oy = 0; oy < grad_out.h(); ++oy) {
        for (Index ox = 0; ox < grad_out.w(); ++ox) {
          dst.block(oy * stride_, ox * stride_, kernel_, kernel_).array() += g(oy, ox) * inv;
        }
      }
    }
  }
  return grad_in;
}

namespace {
inline Index bin_start(Index i, Index in, Index out) { return (i * in) / out; }
inline Index bin_end(Index i, Index in, Index out) { return ((i + 1) * in + out - 1) / out; }
}  // namespace

template <typename Scalar>
Tensor<Scalar> AdaptiveAvgPool2d<Scalar>::forward(const Tensor<Scalar>& x) {
  input_shape_ = x.shape();
  TensorT out(Shape{x.n(), x.c(), out_h_, out_w_});
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      const auto in = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (Index oy = 0; oy < out_h_; ++oy) {
        const Index y0 = bin_start(oy, x.h(), out_h_), y1 = bin_end(oy, x.h(), out_h_);
        for (Index ox = 0; ox < out_w_; ++ox) {
          const Index x0 = bin_start(ox, x.w(), out_w_), x1 = bin_end(ox, x.w(), out_w_);
          dst(oy, ox) = in.block(y0, x0, y1 - y0, x1 - x0).mean();
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> AdaptiveAvgPool2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  TensorT grad_in(input_shape_);
  const Shape& s = input_shape_;
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const auto g = grad_out.plane(n, c);
      auto dst = grad_in.plane(n, c);
      for (Index oy = 0; oy < out_h_; ++oy) {
        const Index y0 = bin_start(oy, s.h, out_h_), y1 = bin_end(oy, s.h, out_h_);
        for (Index ox = 0; ox < out_w_; ++ox) {
          const Index x0 = bin_start(ox, s.w, out_w_), x1 = bin_end(ox, s.w, out_w_);
          const Scalar share = g(oy, ox) / Scalar((y1 - y0) * (x1 - x0));
          dst.block(y0, x0, y1 - y0, x1 - x0).array() += share;
        }
      }
    }
  }
  return grad_in;
}

template <typename Scalar>
Tensor<Scalar> Flatten<Scalar>::forward(const Tensor<Scalar>& x) {
  input_shape_ = x.shape();
  return x.reshaped(Shape{x.n(), x.shape().sample_size(), 1, 1});
}

template <typename Scalar>
Tensor<Scalar> Flatten<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  return grad_out.reshaped(input_shape_);
}

// ----------------------------------------------------------- composites

template <typename Scalar>
Tensor<Scalar> Sequential<Scalar>::forward(const Tensor<Scalar>& x) {
  TensorT h = x;
  for (auto& [name, child] : children_) h = child->forward(h);
  return h;
}

template <typename Scalar>
Tensor<Scalar> Sequential<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  TensorT g = grad_out;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = it->second->backward(g);
  return g;
}

template <typename Scalar>
void Sequential<Scalar>::visit_children(const Visitor& visit) {
  for (auto& [name, child] : children_) visit(name, *child);
}

template <typename Scalar>
ResidualBlock<Scalar>::ResidualBlock(Index channels)
    : conv1_(channels, channels, 3, 1, 1), conv2_(channels, channels, 3, 1, 1) {}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::forward(const Tensor<Scalar>& x) {
  TensorT h = conv2_.forward(relu_.forward(conv1_.forward(x)));
  h.array() += x.array();
  return h;
}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  TensorT g = conv1_.backward(relu_.backward(conv2_.backward(grad_out)));
  g.array() += grad_out.array();
  return g;
}

template <typename Scalar>
void ResidualBlock<Scalar>::visit_children(const Visitor& visit) {
  visit("conv1", conv1_);
  visit("conv2", conv2_);
}

template <typename Scalar>
ResNetBlock<Scalar>::ResNetBlock(Index in_channels, Index planes, Index stride, bool bottleneck)
    : bottleneck_(bottleneck), out_channels_(bottleneck ? planes * 4 : planes) {
  if (bottleneck) {
    body_.template emplace<Conv2d<Scalar>>("conv1", in_channels, planes, 1, 1, 0, false);
    body_.template emplace<BatchNorm2d<Scalar>>("bn1", planes);
    body_.template emplace<ReLU<Scalar>>("relu1");
    body_.template emplace<Conv2d<Scalar>>("conv2", planes, planes, 3, stride, 1, false);
    body_.template emplace<BatchNorm2d<Scalar>>("bn2", planes);
    body_.template emplace<ReLU<Scalar>>("relu2");
    body_.template emplace<Conv2d<Scalar>>("conv3", planes, out_channels_, 1, 1, 0, false);
    body_.template emplace<BatchNorm2d<Scalar>>("bn3", out_channels_);
  } else {
    body_.template emplace<Conv2d<Scalar>>("conv1", in_channels, planes, 3, stride, 1, false);
    body_.template emplace<BatchNorm2d<Scalar>>("bn1", planes);
    body_.template emplace<ReLU<Scalar>>("relu1");
    body_.template emplace<Conv2d<Scalar>>("conv2", planes, planes, 3, 1, 1, false);
    body_.template emplace<BatchNorm2d<Scalar>>("bn2", planes);
  }
  if (stride != 1 || in_channels != out_channels_) {
    downsample_ = std::make_unique<Sequential<Scalar>>();
    downsample_->template emplace<Conv2d<Scalar>>("0", in_channels, out_channels_, 1, stride, 0,
                                                  false);
    downsample_->template emplace<BatchNorm2d<Scalar>>("1", out_channels_);
  }
}

template <typename Scalar>
Tensor<Scalar> ResNetBlock<Scalar>::forward(const Tensor<Scalar>& x) {
  TensorT h = body_.forward(x);
  if (downsample_) {
    h.array() += downsample_->forward(x).array();
  } else {
    h.array() += x.array();
  }
  return out_relu_.forward(h);
}

template <typename Scalar>
Tensor<Scalar> ResNetBlock<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const TensorT g = out_relu_.backward(grad_out);
  TensorT grad_in = body_.backward(g);
  if (downsample_) {
    grad_in.array() += downsample_->backward(g).array();
  } else {
    grad_in.array() += g.array();
  }
  return grad_in;
}

template <typename Scalar>
void ResNetBlock<Scalar>::visit_children(const Visitor& visit) {
  body_.visit_children(visit);
  if (downsample_) visit("downsample", *downsample_);
}

template <typename Scalar>
DenseLayer<Scalar>::DenseLayer(Index in_channels, Index growth_rate, Index bottleneck_size)
    : in_channels_(in_channels) {
  const Index mid = bottleneck_size * growth_rate;
  body_.template emplace<BatchNorm2d<Scalar>>("norm1", in_channels);
  body_.template emplace<ReLU<Scalar>>("relu1");
  body_.template emplace<Conv2d<Scalar>>("conv1", in_channels, mid, 1, 1, 0, false);
  body_.template emplace<BatchNorm2d<Scalar>>("norm2", mid);
  body_.template emplace<ReLU<Scalar>>("relu2");
  body_.template emplace<Conv2d<Scalar>>("conv2", mid, growth_rate, 3, 1, 1, false);
}

template <typename Scalar>
Tensor<Scalar> DenseLayer<Scalar>::forward(const Tensor<Scalar>& x) {
  return concat_channels(x, body_.forward(x));
}

template <typename Scalar>
Tensor<Scalar> DenseLayer<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  TensorT grad_in = channel_slice(grad_out, 0, in_channels_);
  const TensorT grad_new =
      body_.backward(channel_slice(grad_out, in_channels_, grad_out.c() - in_channels_));
  grad_in.array() += grad_new.array();
  return grad_in;
}

template <typename Scalar>
void DenseLayer<Scalar>::visit_children(const Visitor& visit) {
  body_.visit_children(visit);
}

#define CLIPSTRIKE_INSTANTIATE_NN(S)                                                        \
  template class Module<S>;                                                                 \
  template class Conv2d<S>;                                                                 \
  template class ConvTranspose2d<S>;                                                        \
  template class Linear<S>;                                                                 \
  template class ReLU<S>;                                                                   \
  template class BatchNorm2d<S>;                                                            \
  template class MaxPool2d<S>;                                                              \
  template class AvgPool2d<S>;                                                              \
  template class AdaptiveAvgPool2d<S>;                                                      \
  template class Flatten<S>;                                                                \
  template class Sequential<S>;                                                             \
  template class ResidualBlock<S>;                                                          \
  template class ResNetBlock<S>;                                                            \
  template class DenseLayer<S>;                                                             \
  template void fan_in_normal<S>(Tensor<S>&, Index, double, std::mt19937_64&);

CLIPSTRIKE_INSTANTIATE_NN(float)
CLIPSTRIKE_INSTANTIATE_NN(double)

#undef CLIPSTRIKE_INSTANTIATE_NN

}  // namespace clipstrike::nn
