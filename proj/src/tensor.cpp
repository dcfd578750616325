#include "llp/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace llp {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
  Tensor t(std::move(shape));
  std::fill(t.buf_->begin(), t.buf_->end(), v);
  return t;
}

template <class T>
Tensor<T> Tensor<T>::scalar(T v) {
  Tensor t{Shape{}};
  (*t.buf_)[0] = v;
  return t;
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = std::make_shared<std::vector<T>>(std::move(values));
  return t;
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.buf_ = std::make_shared<std::vector<T>>(*buf_);
  return t;
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = buf_;
  return t;
}

template <>
constexpr DType Tensor<float>::dtype() {
  return DType::Real32;
}
template <>
constexpr DType Tensor<double>::dtype() {
  return DType::Real64;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  const T* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      throw NumericError(std::string(op) + " produced a non-finite value at flat index " +
                         std::to_string(i));
  }
}

namespace kernels {

namespace {

template <class T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 int stride, int pad) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  require_rank(bias, 1, "conv2d bias");
  const int64_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int64_t kh = kernels.dim(0), kw = kernels.dim(1);
  const int64_t cout = kernels.dim(3);
  if (kernels.dim(2) != cin)
    throw ShapeError("conv2d: input channels " + std::to_string(cin) + " != kernel channels " +
                     std::to_string(kernels.dim(2)));
  if (bias.dim(0) != cout)
    throw ShapeError("conv2d: bias length " + std::to_string(bias.dim(0)) +
                     " != output channels " + std::to_string(cout));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (pad < 0) throw ValueError("conv2d: pad must be >= 0");
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw ShapeError("conv2d: padded input " + shape_str(input.shape()) +
                     " smaller than kernel " + shape_str(kernels.shape()));

  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  Tensor<T> out({oh, ow, cout});

  const T* in = input.data();
  const T* kk = kernels.data();
  const T* bb = bias.data();
  T* oo = out.data();

  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      T* ocell = oo + (y * ow + x) * cout;
      for (int64_t c = 0; c < cout; ++c) ocell[c] = bb[c];
      const int64_t ih0 = y * stride - pad;
      const int64_t iw0 = x * stride - pad;
      for (int64_t ki = 0; ki < kh; ++ki) {
        const int64_t ih = ih0 + ki;
        if (ih < 0 || ih >= h) continue;
        for (int64_t kj = 0; kj < kw; ++kj) {
          const int64_t iw = iw0 + kj;
          if (iw < 0 || iw >= w) continue;
          const T* icell = in + (ih * w + iw) * cin;
          const T* kcell = kk + ((ki * kw + kj) * cin) * cout;
          for (int64_t ci = 0; ci < cin; ++ci) {
            const T v = icell[ci];
            const T* krow = kcell + ci * cout;
            for (int64_t c = 0; c < cout; ++c) ocell[c] += v * krow[c];
          }
        }
      }
    }
  }
  check_finite(out, "conv2d");
  return out;
}

template <class T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, int stride, int pad,
                     const Tensor<T>& dout, Tensor<T>* dinput, Tensor<T>* dkernels,
                     Tensor<T>* dbias) {
  const int64_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int64_t kh = kernels.dim(0), kw = kernels.dim(1);
  const int64_t cout = kernels.dim(3);
  const int64_t oh = dout.dim(0), ow = dout.dim(1);

  const T* in = input.data();
  const T* kk = kernels.data();
  const T* dy = dout.data();
  T* dx = dinput ? dinput->data() : nullptr;
  T* dk = dkernels ? dkernels->data() : nullptr;
  T* db = dbias ? dbias->data() : nullptr;

  if (db) {
    for (int64_t cell = 0; cell < oh * ow; ++cell) {
      const T* dcell = dy + cell * cout;
      for (int64_t c = 0; c < cout; ++c) db[c] += dcell[c];
    }
  }
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      const T* dcell = dy + (y * ow + x) * cout;
      const int64_t ih0 = y * stride - pad;
      const int64_t iw0 = x * stride - pad;
      for (int64_t ki = 0; ki < kh; ++ki) {
        const int64_t ih = ih0 + ki;
        if (ih < 0 || ih >= h) continue;
        for (int64_t kj = 0; kj < kw; ++kj) {
          const int64_t iw = iw0 + kj;
          if (iw < 0 || iw >= w) continue;
          const T* icell = in + (ih * w + iw) * cin;
          const int64_t koff = (ki * kw + kj) * cin * cout;
          if (dk) {
            for (int64_t ci = 0; ci < cin; ++ci) {
              const T v = icell[ci];
              T* krow = dk + koff + ci * cout;
              for (int64_t c = 0; c < cout; ++c) krow[c] += v * dcell[c];
            }
          }
          if (dx) {
            T* xcell = dx + (ih * w + iw) * cin;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const T* krow = kk + koff + ci * cout;
              T acc = 0;
              for (int64_t c = 0; c < cout; ++c) acc += krow[c] * dcell[c];
              xcell[ci] += acc;
            }
          }
        }
      }
    }
  }
  if (dinput) check_finite(*dinput, "conv2d_backward(input)");
  if (dkernels) check_finite(*dkernels, "conv2d_backward(kernels)");
  if (dbias) check_finite(*dbias, "conv2d_backward(bias)");
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) q[i] = p[i] > T(0) ? p[i] : T(0);
  check_finite(y, "relu");
  return y;
}

template <class T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  const T* p = x.data();
  const T* g = dy.data();
  T* q = dx.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    if (p[i] > T(0)) q[i] += g[i];
  check_finite(dx, "relu_backward");
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("softmax_channels requires rank >= 1");
  const int64_t c = x.dim(x.rank() - 1);
  if (c < 1) throw ShapeError("softmax_channels: empty channel axis");
  const int64_t rows = x.numel() / c;
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = p + r * c;
    T* yr = q + r * c;
    T mx = xr[0];
    for (int64_t i = 1; i < c; ++i) mx = xr[i] > mx ? xr[i] : mx;
    T sum = 0;
    for (int64_t i = 0; i < c; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    for (int64_t i = 0; i < c; ++i) yr[i] /= sum;
  }
  check_finite(y, "softmax_channels");
  return y;
}

template <class T>
void softmax_channels_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  const int64_t c = y.dim(y.rank() - 1);
  const int64_t rows = y.numel() / c;
  const T* yy = y.data();
  const T* g = dy.data();
  T* q = dx.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* yr = yy + r * c;
    const T* gr = g + r * c;
    T* qr = q + r * c;
    T dot = 0;
    for (int64_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
    for (int64_t i = 0; i < c; ++i) qr[i] += (gr[i] - dot) * yr[i];
  }
  check_finite(dx, "softmax_channels_backward");
}

template <class T>
Tensor<T> reduce_mean_cells(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("reduce_mean_cells requires rank >= 2");
  const int64_t c = x.dim(x.rank() - 1);
  const int64_t cells = x.numel() / c;
  Tensor<T> y({c});
  const T* p = x.data();
  T* q = y.data();
  // Compensated sums in the tensor dtype, flat index order: deterministic,
  // and the rounding error stays independent of the cell count, which keeps
  // real32 proportion sums inside their 1e-5 contract.
  std::vector<T> comp(static_cast<size_t>(c), T(0));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const int64_t k = i % c;
    const T term = p[i] - comp[static_cast<size_t>(k)];
    const T total = q[k] + term;
    comp[static_cast<size_t>(k)] = (total - q[k]) - term;
    q[k] = total;
  }
  for (int64_t i = 0; i < c; ++i) q[i] /= static_cast<T>(cells);
  check_finite(y, "reduce_mean_cells");
  return y;
}

template <class T>
void reduce_mean_cells_backward(const Shape& xshape, const Tensor<T>& dy, Tensor<T>& dx) {
  const int64_t c = xshape.back();
  const int64_t cells = shape_numel(xshape) / c;
  const T inv = T(1) / static_cast<T>(cells);
  const T* g = dy.data();
  T* q = dx.data();
  for (int64_t i = 0; i < dx.numel(); ++i) q[i] += g[i % c] * inv;
  check_finite(dx, "reduce_mean_cells_backward");
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t k = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  if (!trans_a && !trans_b) {
    for (int64_t i = 0; i < m; ++i) {
      T* crow = pc + i * n;
      const T* arow = pa + i * k;
      for (int64_t l = 0; l < k; ++l) {
        const T av = arow[l];
        const T* brow = pb + l * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (int64_t i = 0; i < m; ++i) {
      const T* arow = pa + i * k;
      T* crow = pc + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const T* brow = pb + j * k;
        T acc = 0;
        for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
        crow[j] = acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (int64_t l = 0; l < k; ++l) {
      const T* arow = pa + l * m;
      const T* brow = pb + l * n;
      for (int64_t i = 0; i < m; ++i) {
        const T av = arow[i];
        T* crow = pc + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (int64_t i = 0; i < m; ++i) {
      T* crow = pc + i * n;
      for (int64_t j = 0; j < n; ++j) {
        T acc = 0;
        for (int64_t l = 0; l < k; ++l) acc += pa[l * m + i] * pb[j * k + l];
        crow[j] = acc;
      }
    }
  }
  check_finite(c, "matmul");
  return c;
}

template <class T>
Tensor<T> row_unit_normalize(const Tensor<T>& x, T eps) {
  require_rank(x, 2, "row_unit_normalize input");
  const int64_t rows = x.dim(0), c = x.dim(1);
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = p + r * c;
    T* yr = q + r * c;
    T ss = 0;
    for (int64_t i = 0; i < c; ++i) ss += xr[i] * xr[i];
    const T norm = std::sqrt(ss);
    const T scale = T(1) / (norm > eps ? norm : eps);
    for (int64_t i = 0; i < c; ++i) yr[i] = xr[i] * scale;
  }
  check_finite(y, "row_unit_normalize");
  return y;
}

template <class T>
void row_unit_normalize_backward(const Tensor<T>& x, const Tensor<T>& y, T eps,
                                 const Tensor<T>& dy, Tensor<T>& dx) {
  const int64_t rows = x.dim(0), c = x.dim(1);
  const T* px = x.data();
  const T* py = y.data();
  const T* g = dy.data();
  T* q = dx.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * c;
    const T* yr = py + r * c;
    const T* gr = g + r * c;
    T* qr = q + r * c;
    T ss = 0;
    for (int64_t i = 0; i < c; ++i) ss += xr[i] * xr[i];
    const T norm = std::sqrt(ss);
    if (norm > eps) {
      T dot = 0;
      for (int64_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
      const T inv = T(1) / norm;
      for (int64_t i = 0; i < c; ++i) qr[i] += (gr[i] - yr[i] * dot) * inv;
    } else {
      const T inv = T(1) / eps;
      for (int64_t i = 0; i < c; ++i) qr[i] += gr[i] * inv;
    }
  }
  check_finite(dx, "row_unit_normalize_backward");
}

template <class T>
Tensor<T> colscale(const Tensor<T>& k, const Tensor<T>& a) {
  require_rank(k, 2, "colscale matrix");
  require_rank(a, 1, "colscale vector");
  const int64_t rows = k.dim(0), c = k.dim(1);
  if (a.dim(0) != c)
    throw ShapeError("colscale: vector length " + std::to_string(a.dim(0)) +
                     " != column count " + std::to_string(c));
  Tensor<T> y(k.shape());
  const T* p = k.data();
  const T* v = a.data();
  T* q = y.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) q[r * c + j] = p[r * c + j] * v[j];
  check_finite(y, "colscale");
  return y;
}

template <class T>
Tensor<T> rowsum(const Tensor<T>& k) {
  require_rank(k, 2, "rowsum input");
  const int64_t rows = k.dim(0), c = k.dim(1);
  Tensor<T> y({rows});
  const T* p = k.data();
  T* q = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (int64_t j = 0; j < c; ++j) acc += p[r * c + j];
    q[r] = acc;
  }
  check_finite(y, "rowsum");
  return y;
}

template <class T>
Tensor<T> rowdiv(const Tensor<T>& n, const Tensor<T>& d) {
  require_rank(n, 2, "rowdiv matrix");
  require_rank(d, 1, "rowdiv divisor");
  const int64_t rows = n.dim(0), c = n.dim(1);
  if (d.dim(0) != rows)
    throw ShapeError("rowdiv: divisor length " + std::to_string(d.dim(0)) + " != row count " +
                     std::to_string(rows));
  Tensor<T> y(n.shape());
  const T* p = n.data();
  const T* v = d.data();
  T* q = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T inv = T(1) / v[r];
    for (int64_t j = 0; j < c; ++j) q[r * c + j] = p[r * c + j] * inv;
  }
  check_finite(y, "rowdiv");
  return y;
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (int64_t i = 0; i < x.numel(); ++i) q[i] = p[i] * p[i];
  check_finite(y, "square");
  return y;
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (int64_t i = 0; i < x.numel(); ++i) q[i] = std::exp(p[i]);
  check_finite(y, "exp");
  return y;
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T v = p[i];
    q[i] = (v > T(0) ? v : T(0)) + std::log1p(std::exp(-std::abs(v)));
  }
  check_finite(y, "softplus");
  return y;
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (int64_t i = 0; i < x.numel(); ++i) q[i] = a * p[i] + b;
  check_finite(y, "affine");
  return y;
}

template <class T>
Tensor<T> scalar_mul(const Tensor<T>& s, const Tensor<T>& x) {
  if (s.numel() != 1) throw ShapeError("scalar_mul: scalar operand must have one element");
  const T v = s.data()[0];
  Tensor<T> y(x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (int64_t i = 0; i < x.numel(); ++i) q[i] = v * p[i];
  check_finite(y, "scalar_mul");
  return y;
}

template <class T>
Tensor<T> dot(const Tensor<T>& x, const Tensor<T>& w) {
  require_same_shape(x, w, "dot");
  const T* p = x.data();
  const T* v = w.data();
  T acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += p[i] * v[i];
  Tensor<T> y = Tensor<T>::scalar(acc);
  check_finite(y, "dot");
  return y;
}

template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: prediction shape " + shape_str(pred.shape()) +
                     " != target shape " + shape_str(target.shape()));
  const T* p = pred.data();
  const T* t = target.data();
  const int64_t n = pred.numel();
  if (n == 0) throw ValueError("mse: empty operands");
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T d = p[i] - t[i];
    acc += d * d;
  }
  Tensor<T> y = Tensor<T>::scalar(acc / static_cast<T>(n));
  check_finite(y, "mse");
  return y;
}

#define LLP_INSTANTIATE_KERNELS(T)                                                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, int, int,                \
                                   const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);       \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                 \
  template void relu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);               \
  template Tensor<T> softmax_channels<T>(const Tensor<T>&);                                     \
  template void softmax_channels_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);   \
  template Tensor<T> reduce_mean_cells<T>(const Tensor<T>&);                                    \
  template void reduce_mean_cells_backward<T>(const Shape&, const Tensor<T>&, Tensor<T>&);      \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                 \
  template Tensor<T> row_unit_normalize<T>(const Tensor<T>&, T);                                \
  template void row_unit_normalize_backward<T>(const Tensor<T>&, const Tensor<T>&, T,           \
                                               const Tensor<T>&, Tensor<T>&);                   \
  template Tensor<T> colscale<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> rowsum<T>(const Tensor<T>&);                                               \
  template Tensor<T> rowdiv<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> square<T>(const Tensor<T>&);                                               \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                  \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                             \
  template Tensor<T> affine<T>(const Tensor<T>&, T, T);                                         \
  template Tensor<T> scalar_mul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> dot<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);

LLP_INSTANTIATE_KERNELS(float)
LLP_INSTANTIATE_KERNELS(double)
#undef LLP_INSTANTIATE_KERNELS

}  // namespace kernels

#define LLP_INSTANTIATE_TENSOR(T)              \
  template class Tensor<T>;                    \
  template void check_finite<T>(const Tensor<T>&, const char*);

LLP_INSTANTIATE_TENSOR(float)
LLP_INSTANTIATE_TENSOR(double)
#undef LLP_INSTANTIATE_TENSOR

}  // namespace llp
