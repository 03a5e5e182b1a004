#pragma once

#include "clipstrike/core.hpp"

#include <string>

namespace clipstrike {

/// NCHW extent of a 4-D tensor. Vectors and matrices use trailing unit dims
/// (a batch of K-vectors is N×K×1×1).
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  Index size() const { return n * c * h * w; }
  Index sample_size() const { return c * h * w; }
  Index plane_size() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NCHW tensor backed by a contiguous Eigen array.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = RowMatrix<Scalar>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(const Shape& shape, Scalar fill = Scalar(0))
      : shape_(shape), data_(Array::Constant(shape.size(), fill)) {}
  Tensor(const Shape& shape, Array data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index c() const { return shape_.c; }
  Index h() const { return shape_.h; }
  Index w() const { return shape_.w; }
  Index size() const { return shape_.size(); }
  bool empty() const { return shape_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  /// N × (C·H·W) view; row i is sample i flattened.
  MatrixMap matrix() { return MatrixMap(data(), shape_.n, shape_.sample_size()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data(), shape_.n, shape_.sample_size()); }

  /// C × (H·W) view of one sample; row c is channel plane c.
  MatrixMap sample(Index n) {
    return MatrixMap(data() + n * shape_.sample_size(), shape_.c, shape_.plane_size());
  }
  ConstMatrixMap sample(Index n) const {
    return ConstMatrixMap(data() + n * shape_.sample_size(), shape_.c, shape_.plane_size());
  }

  /// H × W view of one channel plane.
  MatrixMap plane(Index n, Index c) {
    return MatrixMap(data() + (n * shape_.c + c) * shape_.plane_size(), shape_.h, shape_.w);
  }
  ConstMatrixMap plane(Index n, Index c) const {
    return ConstMatrixMap(data() + (n * shape_.c + c) * shape_.plane_size(), shape_.h, shape_.w);
  }

  /// Copy of samples [first, first + count).
  Tensor slice(Index first, Index count) const {
    Shape s = shape_;
    s.n = count;
    return Tensor(s, data_.segment(first * shape_.sample_size(), s.size()));
  }

  void set_sample(Index n, const Tensor& src, Index src_n = 0) {
    if (src.shape_.sample_size() != shape_.sample_size()) {
      throw ShapeError("set_sample: sample shape " + src.shape_.str() + " vs " + shape_.str());
    }
    data_.segment(n * shape_.sample_size(), shape_.sample_size()) =
        src.data_.segment(src_n * shape_.sample_size(), shape_.sample_size());
  }

  /// Same data, new extent of equal size.
  Tensor reshaped(const Shape& s) const { return Tensor(s, data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  Scalar max_abs() const { return data_.size() ? data_.abs().maxCoeff() : Scalar(0); }

 private:
  Shape shape_;
  Array data_;
};

/// Concatenate along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<Scalar> out(Shape{a.n(), a.c() + b.c(), a.h(), a.w()});
  for (Index i = 0; i < a.n(); ++i) {
    out.sample(i).topRows(a.c()) = a.sample(i);
    out.sample(i).bottomRows(b.c()) = b.sample(i);
  }
  return out;
}

/// Inverse of concat_channels: channels [first, first + count).
template <typename Scalar>
Tensor<Scalar> channel_slice(const Tensor<Scalar>& t, Index first, Index count) {
  Tensor<Scalar> out(Shape{t.n(), count, t.h(), t.w()});
  for (Index i = 0; i < t.n(); ++i) {
    out.sample(i) = t.sample(i).middleRows(first, count);
  }
  return out;
}

/// FNV-1a over the raw bytes; used for frozen-weight checksums.
template <typename Scalar>
void hash_tensor(Fnv1a& h, const Tensor<Scalar>& t) {
  h.update(t.data(), static_cast<std::size_t>(t.size()) * sizeof(Scalar));
}

}  // namespace clipstrike
