#include "llp/autodiff.hpp"

#include <cmath>

namespace llp {

namespace {

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  const int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

}  // namespace

template <class T>
typename Tape<T>::Id Tape<T>::push(Tensor<T> value, bool requires_grad,
                                   std::function<void(Tape&)> back) {
  nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, std::move(back)});
  return static_cast<Id>(nodes_.size() - 1);
}

template <class T>
Tensor<T>* Tape<T>::grad_sink(Id id) {
  Node& n = node(id);
  if (!n.requires_grad) return nullptr;
  if (!n.grad.defined()) n.grad = Tensor<T>::zeros(n.value.shape());
  return &n.grad;
}

template <class T>
typename Tape<T>::Id Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  check_finite(value, "leaf");
  return push(std::move(value), requires_grad, nullptr);
}

template <class T>
typename Tape<T>::Id Tape<T>::conv2d(Id input, Id kernels, Id bias, int stride, int pad) {
  Tensor<T> out =
      kernels::conv2d(value(input), value(kernels), value(bias), stride, pad);
  const bool rg =
      node(input).requires_grad || node(kernels).requires_grad || node(bias).requires_grad;
  Id out_id = push(std::move(out), rg, nullptr);
  node(out_id).back = [input, kernels, bias, stride, pad, out_id](Tape& t) {
    kernels::conv2d_backward(t.value(input), t.value(kernels), stride, pad, t.node(out_id).grad,
                             t.grad_sink(input), t.grad_sink(kernels), t.grad_sink(bias));
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::relu(Id x) {
  Id out_id = push(kernels::relu(value(x)), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x))
      kernels::relu_backward(t.value(x), t.node(out_id).grad, *dx);
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::softmax_channels(Id x) {
  Id out_id = push(kernels::softmax_channels(value(x)), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x))
      kernels::softmax_channels_backward(t.value(out_id), t.node(out_id).grad, *dx);
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::reduce_mean_cells(Id x) {
  Id out_id = push(kernels::reduce_mean_cells(value(x)), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x))
      kernels::reduce_mean_cells_backward(t.value(x).shape(), t.node(out_id).grad, *dx);
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::reshape(Id x, Shape shape) {
  Id out_id = push(value(x).reshaped(std::move(shape)).clone(), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x)) add_into(*dx, t.node(out_id).grad);
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b, bool trans_a, bool trans_b) {
  Tensor<T> out = kernels::matmul(value(a), value(b), trans_a, trans_b);
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  Id out_id = push(std::move(out), rg, nullptr);
  node(out_id).back = [a, b, trans_a, trans_b, out_id](Tape& t) {
    const Tensor<T>& dc = t.node(out_id).grad;
    const Tensor<T>& va = t.value(a);
    const Tensor<T>& vb = t.value(b);
    if (Tensor<T>* da = t.grad_sink(a)) {
      Tensor<T> g;
      if (!trans_a && !trans_b) g = kernels::matmul(dc, vb, false, true);
      else if (!trans_a && trans_b) g = kernels::matmul(dc, vb, false, false);
      else if (trans_a && !trans_b) g = kernels::matmul(vb, dc, false, true);
      else g = kernels::matmul(vb, dc, true, true);
      add_into(*da, g);
    }
    if (Tensor<T>* db = t.grad_sink(b)) {
      Tensor<T> g;
      if (!trans_a && !trans_b) g = kernels::matmul(va, dc, true, false);
      else if (!trans_a && trans_b) g = kernels::matmul(dc, va, true, false);
      else if (trans_a && !trans_b) g = kernels::matmul(va, dc, false, false);
      else g = kernels::matmul(dc, va, true, true);
      add_into(*db, g);
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::row_unit_normalize(Id x, T eps) {
  Id out_id = push(kernels::row_unit_normalize(value(x), eps), node(x).requires_grad, nullptr);
  node(out_id).back = [x, eps, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x))
      kernels::row_unit_normalize_backward(t.value(x), t.value(out_id), eps,
                                           t.node(out_id).grad, *dx);
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::colscale(Id k, Id a) {
  Tensor<T> out = kernels::colscale(value(k), value(a));
  const bool rg = node(k).requires_grad || node(a).requires_grad;
  Id out_id = push(std::move(out), rg, nullptr);
  node(out_id).back = [k, a, out_id](Tape& t) {
    const Tensor<T>& dc = t.node(out_id).grad;
    const Tensor<T>& vk = t.value(k);
    const Tensor<T>& va = t.value(a);
    const int64_t rows = vk.dim(0), cols = vk.dim(1);
    if (Tensor<T>* dk = t.grad_sink(k)) {
      T* p = dk->data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < cols; ++j) p[r * cols + j] += dc[r * cols + j] * va[j];
    }
    if (Tensor<T>* da = t.grad_sink(a)) {
      T* p = da->data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < cols; ++j) p[j] += dc[r * cols + j] * vk[r * cols + j];
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::rowsum(Id k) {
  Id out_id = push(kernels::rowsum(value(k)), node(k).requires_grad, nullptr);
  node(out_id).back = [k, out_id](Tape& t) {
    if (Tensor<T>* dk = t.grad_sink(k)) {
      const Tensor<T>& dd = t.node(out_id).grad;
      const int64_t rows = dk->dim(0), cols = dk->dim(1);
      T* p = dk->data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < cols; ++j) p[r * cols + j] += dd[r];
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::rowdiv(Id n, Id d) {
  Tensor<T> out = kernels::rowdiv(value(n), value(d));
  const bool rg = node(n).requires_grad || node(d).requires_grad;
  Id out_id = push(std::move(out), rg, nullptr);
  node(out_id).back = [n, d, out_id](Tape& t) {
    const Tensor<T>& dp = t.node(out_id).grad;
    const Tensor<T>& p = t.value(out_id);
    const Tensor<T>& vd = t.value(d);
    const int64_t rows = p.dim(0), cols = p.dim(1);
    if (Tensor<T>* dn = t.grad_sink(n)) {
      T* q = dn->data();
      for (int64_t r = 0; r < rows; ++r) {
        const T inv = T(1) / vd[r];
        for (int64_t j = 0; j < cols; ++j) q[r * cols + j] += dp[r * cols + j] * inv;
      }
    }
    if (Tensor<T>* dd = t.grad_sink(d)) {
      T* q = dd->data();
      for (int64_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (int64_t j = 0; j < cols; ++j) acc += dp[r * cols + j] * p[r * cols + j];
        q[r] -= acc / vd[r];
      }
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::square(Id x) {
  Id out_id = push(kernels::square(value(x)), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x)) {
      const Tensor<T>& dy = t.node(out_id).grad;
      const Tensor<T>& vx = t.value(x);
      T* q = dx->data();
      for (int64_t i = 0; i < dx->numel(); ++i) q[i] += T(2) * vx[i] * dy[i];
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::exp(Id x) {
  Id out_id = push(kernels::exp(value(x)), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x)) {
      const Tensor<T>& dy = t.node(out_id).grad;
      const Tensor<T>& vy = t.value(out_id);
      T* q = dx->data();
      for (int64_t i = 0; i < dx->numel(); ++i) q[i] += vy[i] * dy[i];
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::softplus(Id x) {
  Id out_id = push(kernels::softplus(value(x)), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x)) {
      const Tensor<T>& dy = t.node(out_id).grad;
      const Tensor<T>& vx = t.value(x);
      T* q = dx->data();
      for (int64_t i = 0; i < dx->numel(); ++i)
        q[i] += dy[i] / (T(1) + std::exp(-vx[i]));
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::affine(Id x, T a, T b) {
  Id out_id = push(kernels::affine(value(x), a, b), node(x).requires_grad, nullptr);
  node(out_id).back = [x, a, out_id](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x)) {
      const Tensor<T>& dy = t.node(out_id).grad;
      T* q = dx->data();
      for (int64_t i = 0; i < dx->numel(); ++i) q[i] += a * dy[i];
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::scalar_mul(Id s, Id x) {
  Tensor<T> out = kernels::scalar_mul(value(s), value(x));
  const bool rg = node(s).requires_grad || node(x).requires_grad;
  Id out_id = push(std::move(out), rg, nullptr);
  node(out_id).back = [s, x, out_id](Tape& t) {
    const Tensor<T>& dy = t.node(out_id).grad;
    const Tensor<T>& vs = t.value(s);
    const Tensor<T>& vx = t.value(x);
    if (Tensor<T>* ds = t.grad_sink(s)) {
      T acc = 0;
      for (int64_t i = 0; i < vx.numel(); ++i) acc += dy[i] * vx[i];
      ds->data()[0] += acc;
    }
    if (Tensor<T>* dx = t.grad_sink(x)) {
      const T v = vs.data()[0];
      T* q = dx->data();
      for (int64_t i = 0; i < dx->numel(); ++i) q[i] += v * dy[i];
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::dot(Id x, Tensor<T> weights) {
  Tensor<T> out = kernels::dot(value(x), weights);
  Id out_id = push(std::move(out), node(x).requires_grad, nullptr);
  node(out_id).back = [x, out_id, w = std::move(weights)](Tape& t) {
    if (Tensor<T>* dx = t.grad_sink(x)) {
      const T g = t.node(out_id).grad.data()[0];
      T* q = dx->data();
      for (int64_t i = 0; i < dx->numel(); ++i) q[i] += g * w[i];
    }
  };
  return out_id;
}

template <class T>
typename Tape<T>::Id Tape<T>::mse(Id pred, Tensor<T> target) {
  Tensor<T> out = kernels::mse(value(pred), target);
  Id out_id = push(std::move(out), node(pred).requires_grad, nullptr);
  node(out_id).back = [pred, out_id, tg = std::move(target)](Tape& t) {
    if (Tensor<T>* dp = t.grad_sink(pred)) {
      const T g = t.node(out_id).grad.data()[0];
      const Tensor<T>& vp = t.value(pred);
      const T scale = T(2) / static_cast<T>(vp.numel());
      T* q = dp->data();
      for (int64_t i = 0; i < dp->numel(); ++i) q[i] += g * scale * (vp[i] - tg[i]);
    }
  };
  return out_id;
}

template <class T>
void Tape<T>::backward(Id output) {
  Node& out = node(output);
  if (out.value.numel() != 1)
    throw ValueError("backward requires a scalar output, got shape " +
                     shape_str(out.value.shape()));
  if (!out.requires_grad) return;
  out.grad = Tensor<T>::full(out.value.shape(), T(1));
  for (Id id = output; id >= 0; --id) {
    Node& n = node(id);
    if (n.back && n.grad.defined()) n.back(*this);
  }
}

template <class T>
Tensor<T> Tape<T>::grad(Id id) const {
  const Node& n = node(id);
  if (n.grad.defined()) return n.grad;
  return Tensor<T>::zeros(n.value.shape());
}

template class Tape<float>;
template class Tape<double>;

}  // namespace llp
