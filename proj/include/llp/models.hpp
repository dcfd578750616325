#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "llp/autodiff.hpp"
#include "llp/tensor.hpp"

namespace llp {

inline constexpr int kChipSide = 100;   // pixels per chip side
inline constexpr int kPatchSide = 4;    // qkm patch extent
inline constexpr int kPatchStride = 2;  // qkm patch stride
inline constexpr int kPatchPad = 1;     // one zero pixel per side -> 50x50 grid
inline constexpr int kPatchDim = kPatchSide * kPatchSide * 3;  // 48
inline constexpr double kNormEps = 1e-8;

enum class ModelKind : uint8_t { Downconv = 0, Qkm = 1 };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

/// Two strided conv layers: 4x4 stride-4 -> ReLU -> 1x1 per-class head.
/// Produces a 25x25 per-cell class distribution.
template <class T>
struct DownconvParams {
  Tensor<T> conv1_kernels;  // [4,4,3,F]
  Tensor<T> conv1_bias;     // [F]
  Tensor<T> conv2_kernels;  // [1,1,F,n]
  Tensor<T> conv2_bias;     // [n]

  int filters() const { return static_cast<int>(conv1_kernels.dim(3)); }
  int classes() const { return static_cast<int>(conv2_bias.dim(0)); }
};

/// Kernel mixture over flattened 4x4 stride-2 patches. Each component j has
/// a prototype direction w_j, class distribution pi_j = softmax(class_logits
/// row j) and mixture weight alpha_j = softmax(mixture_logits)_j; the patch
/// kernel is k_j(x) = exp(-gamma (1 - (x_hat . w_hat_j)^2)) with a single
/// learnable bandwidth gamma = softplus(bandwidth_raw) > 0. The per-cell
/// conditional is sum_j alpha_j k_j pi_j / sum_j alpha_j k_j on a 50x50 grid.
template <class T>
struct QkmParams {
  Tensor<T> prototypes;      // [m,48]
  Tensor<T> class_logits;    // [m,n]
  Tensor<T> mixture_logits;  // [m]
  Tensor<T> bandwidth_raw;   // rank-0

  int components() const { return static_cast<int>(prototypes.dim(0)); }
  int classes() const { return static_cast<int>(class_logits.dim(1)); }
};

/// Per-chip model output: a per-cell class distribution (S=25 for downconv,
/// S=50 for qkm) and its mean over cells, a length-n proportion vector.
template <class T>
struct ChipPrediction {
  Tensor<T> cell_probs;   // [S,S,n]
  Tensor<T> proportions;  // [n]
};

/// Closed-form parameter count. Throws ValueError on an unknown kind or
/// non-positive hyperparameters.
int64_t param_count(ModelKind kind, int hyper, int n_classes);

/// Flatten a 100x100x3 image into the [2500,48] qkm patch matrix. Patch
/// pixels are laid out row-major, channels innermost; out-of-bounds pixels
/// read as zero.
template <class T>
Tensor<T> extract_patches(const Tensor<T>& image);

template <class T>
ChipPrediction<T> downconv_forward(const Tensor<T>& image, const DownconvParams<T>& p);
template <class T>
ChipPrediction<T> qkm_forward(const Tensor<T>& image, const QkmParams<T>& p);

/// Kind-erased model handle used by training, evaluation and the CLI.
template <class T>
class Model {
 public:
  Model() = default;
  explicit Model(DownconvParams<T> p) : params_(std::move(p)) {}
  explicit Model(QkmParams<T> p) : params_(std::move(p)) {}

  ModelKind kind() const {
    return std::holds_alternative<DownconvParams<T>>(params_) ? ModelKind::Downconv
                                                              : ModelKind::Qkm;
  }
  int classes() const;
  int hyper() const;  // F for downconv, m for qkm
  int64_t parameter_count() const { return param_count(kind(), hyper(), classes()); }
  int grid_side() const { return kind() == ModelKind::Downconv ? 25 : 50; }

  const DownconvParams<T>& downconv() const { return std::get<DownconvParams<T>>(params_); }
  const QkmParams<T>& qkm() const { return std::get<QkmParams<T>>(params_); }

  /// Trainable parameter blocks in serialization order.
  std::vector<Tensor<T>*> blocks();
  std::vector<const Tensor<T>*> blocks() const;

  ChipPrediction<T> forward(const Tensor<T>& image) const;

  /// Builds the forward graph on `tape`. Parameter leaves are appended in
  /// blocks() order (returned via `block_ids`); the result is the node id of
  /// the proportion vector.
  typename Tape<T>::Id tape_proportions(Tape<T>& tape, Tensor<T> image,
                                        std::vector<typename Tape<T>::Id>& block_ids) const;

  template <class U>
  Model<U> cast() const;

  Model clone() const;

 private:
  std::variant<DownconvParams<T>, QkmParams<T>> params_;
};

/// Deterministic initialization: kernels and prototypes uniform(-s, s) with
/// s = sqrt(6 / (fan_in + fan_out)) drawn from a SplitMix64 stream seeded by
/// `seed`; biases and logits zero; bandwidth_raw set so gamma = 1.
template <class T>
Model<T> init_model(ModelKind kind, int hyper, int n_classes, uint64_t seed);

/// Model file ("LLPM", little-endian): magic, u8 version=1, u8 kind, u8
/// n_classes, u16 hyper, then all parameter blocks as real32 in blocks()
/// order.
std::vector<uint8_t> model_to_bytes(const Model<float>& model);
Model<float> model_from_bytes(const std::vector<uint8_t>& bytes);
void save_model(const std::string& path, const Model<float>& model);
Model<float> load_model(const std::string& path);

}  // namespace llp
