#pragma once

#include <functional>
#include <vector>

#include "llp/tensor.hpp"

namespace llp {

/// Reverse-mode tape. Operations append nodes in execution order; backward()
/// replays the tape once in reverse, accumulating gradients additively into
/// every node that requires them. A tape is exclusively owned by one training
/// context and never shared.
template <class T>
class Tape {
 public:
  using Id = int32_t;

  /// Registers an input tensor. Leaves with requires_grad=true receive
  /// gradients; constants never do.
  Id leaf(Tensor<T> value, bool requires_grad = true);
  Id constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Id conv2d(Id input, Id kernels, Id bias, int stride, int pad);
  Id relu(Id x);
  Id softmax_channels(Id x);
  Id reduce_mean_cells(Id x);
  Id reshape(Id x, Shape shape);
  Id matmul(Id a, Id b, bool trans_a = false, bool trans_b = false);
  Id row_unit_normalize(Id x, T eps);
  Id colscale(Id k, Id a);
  Id rowsum(Id k);
  Id rowdiv(Id n, Id d);
  Id square(Id x);
  Id exp(Id x);
  Id softplus(Id x);
  Id affine(Id x, T a, T b);
  Id scalar_mul(Id s, Id x);
  /// Scalar inner product with fixed weights.
  Id dot(Id x, Tensor<T> weights);
  /// (1/n) sum_c (pred_c - target_c)^2 against a fixed target.
  Id mse(Id pred, Tensor<T> target);

  const Tensor<T>& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }

  /// Reverse pass from a scalar output. Throws ValueError if the output is
  /// not a single-element tensor.
  void backward(Id output);

  /// Gradient of the last backward() output w.r.t. this node; zeros when the
  /// node does not participate in the graph.
  Tensor<T> grad(Id id) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves and constants
  };

  Node& node(Id id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(Id id) const { return nodes_[static_cast<size_t>(id)]; }

  /// Gradient buffer of `id` if it requires one (allocating zeros lazily),
  /// nullptr otherwise.
  Tensor<T>* grad_sink(Id id);

  Id push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back);

  std::vector<Node> nodes_;
};

using Tape32 = Tape<float>;
using Tape64 = Tape<double>;

}  // namespace llp
