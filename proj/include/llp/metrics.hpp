#pragma once

#include <cstdint>
#include <vector>

#include "llp/data.hpp"
#include "llp/models.hpp"
#include "llp/tensor.hpp"

namespace llp {

/// Mean absolute error between two proportion vectors: (1/n) sum |a_c - b_c|.
double mae_chip(const ProportionVector& pred, const ProportionVector& truth);

/// Nearest-neighbour upsampling of a [S,S] or [S,S,C] tensor by an integer
/// factor: out[i,j] = in[i/factor, j/factor].
template <class T>
Tensor<T> upsample_nn(const Tensor<T>& map, int factor);

/// Same for a side*side class-id map.
std::vector<uint8_t> upsample_nn_labels(const std::vector<uint8_t>& map, int side, int factor);

/// Per-pixel confusion counts between an argmax prediction and the truth.
struct ConfusionCounts {
  std::vector<int64_t> tp, fp, fn;

  explicit ConfusionCounts(int n_classes)
      : tp(static_cast<size_t>(n_classes), 0),
        fp(static_cast<size_t>(n_classes), 0),
        fn(static_cast<size_t>(n_classes), 0) {}
  void add(const ConfusionCounts& other);
};

struct F1Result {
  std::vector<double> per_class;  // 0 for classes absent from both sides
  std::vector<bool> included;     // false when absent from both sides
  double macro = 0;               // mean over included classes
};

F1Result f1_from_confusion(const ConfusionCounts& counts);

/// Accumulates pixel confusion counts for one chip: cell probabilities are
/// upsampled to 100x100 by nearest neighbour, argmaxed per pixel (ties to
/// the lowest class id) and compared against the label map.
template <class T>
ConfusionCounts pixel_confusion(const Tensor<T>& cell_probs,
                                const std::vector<uint8_t>& truth_labels, int n_classes);

/// Single-chip pixel F1 (per-class and macro).
template <class T>
F1Result f1_pixel(const Tensor<T>& cell_probs, const std::vector<uint8_t>& truth_labels,
                  int n_classes);

/// Constant predictor emitting the renormalized mean of the train targets;
/// the MAE reference ceiling.
ProportionVector regression_to_mean(const std::vector<ProportionVector>& train_targets);

struct EvalReport {
  std::vector<uint64_t> chip_ids;
  std::vector<double> chip_mae;
  std::vector<ProportionVector> chip_pred;
  double mean_mae = 0;
  F1Result f1;
  int64_t chips = 0;
};

/// Evaluates a model on every labeled chip of `split`: chip-level MAE
/// against label-derived proportions plus pixel F1 with confusion counts
/// aggregated over chips.
EvalReport evaluate_model(const Dataset& ds, const Model<float>& model, Split split,
                          int threads = 1);

/// MAE of a constant predictor on `split` (no F1; the predictor has no
/// segmentation output).
EvalReport evaluate_constant(const Dataset& ds, const ProportionVector& prediction,
                             Split split);

/// Mean of the blended targets over the train split, i.e. the
/// regression-to-the-mean predictor of a dataset.
ProportionVector train_mean_target(const Dataset& ds);

}  // namespace llp
