#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "llp/error.hpp"

namespace llp {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class DType { Real32, Real64 };

/// Dense row-major array of real32 or real64 values. Copies share the
/// underlying buffer; primitives never mutate their inputs, so sharing is
/// safe. A rank-0 tensor holds exactly one value (a scalar).
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v);
  static Tensor scalar(T v);
  static Tensor from(Shape shape, std::vector<T> values);

  bool defined() const { return buf_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }

  T& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

  // Row-major indexers for the common ranks.
  T& at(int64_t i, int64_t j) { return (*buf_)[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at(int64_t i, int64_t j) const {
    return (*buf_)[static_cast<size_t>(i * shape_[1] + j)];
  }
  T& at(int64_t i, int64_t j, int64_t k) {
    return (*buf_)[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return (*buf_)[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return (*buf_)[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return (*buf_)[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  /// Deep copy with a fresh buffer.
  Tensor clone() const;

  /// Same buffer viewed under a different shape (element count must match).
  Tensor reshaped(Shape shape) const;

  static constexpr DType dtype();

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

/// Throws NumericError if any element is NaN or Inf. Every primitive calls
/// this on its output; non-finite values are never propagated silently.
template <class T>
void check_finite(const Tensor<T>& t, const char* op);

namespace kernels {

// All kernels are pure: they allocate fresh outputs and never touch their
// inputs. Backward kernels accumulate (+=) into the provided gradient
// tensors; null destinations are skipped. Reductions run in the tensor
// dtype with sequential, index-ordered summation.

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 int stride, int pad);

template <class T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, int stride, int pad,
                     const Tensor<T>& dout, Tensor<T>* dinput, Tensor<T>* dkernels,
                     Tensor<T>* dbias);

template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

/// Softmax over the innermost axis, numerically stabilized by per-row max
/// subtraction. For a [H,W,C] tensor this is the per-cell channel softmax.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x);
template <class T>
void softmax_channels_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx);

/// Mean over all axes except the innermost: [H,W,C] -> [C], [N,C] -> [C].
template <class T>
Tensor<T> reduce_mean_cells(const Tensor<T>& x);
template <class T>
void reduce_mean_cells_backward(const Shape& xshape, const Tensor<T>& dy, Tensor<T>& dx);

/// C = op(A) * op(B) for rank-2 tensors, op = transpose when the flag is set.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false);

/// y_i = x_i / max(||x_i||_2, eps) applied to each row of a [R,C] tensor.
template <class T>
Tensor<T> row_unit_normalize(const Tensor<T>& x, T eps);
template <class T>
void row_unit_normalize_backward(const Tensor<T>& x, const Tensor<T>& y, T eps,
                                 const Tensor<T>& dy, Tensor<T>& dx);

/// C[i,j] = K[i,j] * a[j]
template <class T>
Tensor<T> colscale(const Tensor<T>& k, const Tensor<T>& a);
/// d[i] = sum_j K[i,j]
template <class T>
Tensor<T> rowsum(const Tensor<T>& k);
/// P[i,j] = N[i,j] / d[i]
template <class T>
Tensor<T> rowdiv(const Tensor<T>& n, const Tensor<T>& d);

template <class T>
Tensor<T> square(const Tensor<T>& x);
template <class T>
Tensor<T> exp(const Tensor<T>& x);
template <class T>
Tensor<T> softplus(const Tensor<T>& x);
/// a*x + b elementwise with compile-time constants a, b.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b);
/// Broadcast multiply by a rank-0 scalar tensor.
template <class T>
Tensor<T> scalar_mul(const Tensor<T>& s, const Tensor<T>& x);
/// Scalar inner product <x, w> over equal-shaped tensors.
template <class T>
Tensor<T> dot(const Tensor<T>& x, const Tensor<T>& w);
/// (1/n) * sum_c (pred_c - target_c)^2, rank-0 output.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace kernels
}  // namespace llp
