#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "llp/data.hpp"
#include "llp/models.hpp"

namespace llp {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  ModelKind kind = ModelKind::Downconv;
  int hyper = 96;  // F for downconv, m for qkm (default 64 set by the CLI)
  int threads = 1;

  void validate() const;
};

/// Mean squared error between two proportion vectors of equal length.
double llp_loss(const ProportionVector& pred, const ProportionVector& target);

/// Adam state for one set of parameter blocks.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  int64_t t = 0;

  static AdamState init_like(const std::vector<Tensor<T>*>& blocks);
};

/// One Adam update with bias correction; params and state are modified in
/// place, t must have been incremented to the current step (>= 1).
template <class T>
void adam_step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;          // 1-based
  double train_loss = 0;  // mean per-chip loss over the epoch
  double val_mae = 0;     // chip-level MAE on the validation split
  double seconds = 0;
  double chips_per_sec = 0;
};

struct TrainRun {
  std::vector<EpochRecord> epochs;
  int selected_epoch = 0;  // 1-based argmin of val_mae, earliest on ties
  Model<float> best_model;
};

/// Mean per-chip loss (and mean parameter gradients when `grads` is given)
/// over one batch. Per-chip results are reduced in ascending chip-id order,
/// so the outcome is independent of both batch order and thread schedule.
double batch_loss(const Model<float>& model, const std::vector<const Chip*>& chips,
                  const std::vector<Tensor32>& targets, int threads,
                  std::vector<Tensor32>* grads);

/// LLP training: commune-level blended targets only, MSE loss, Adam,
/// seeded shuffles. Deterministic for a fixed config, independent of
/// config.threads (per-chip gradients are reduced in ascending chip order).
TrainRun train(const Dataset& ds, const TrainConfig& config);

/// Writes the per-epoch CSV log (epoch, train_loss, val_mae, seconds,
/// chips_per_sec).
void write_train_log(const std::string& path, const TrainRun& run);

}  // namespace llp
