#include "llp/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "llp/metrics.hpp"
#include "llp/rng.hpp"

namespace llp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Runs fn(job) for job in [0, n) on up to `threads` workers. Each job index
/// is claimed exactly once; callers own any ordering of the results.
void run_parallel(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  auto worker = [&] {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = static_cast<int>(std::min<int64_t>(threads, n));
  pool.reserve(static_cast<size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

template <class T>
Tensor<T> to_tensor(const ProportionVector& v) {
  Tensor<T> t({static_cast<int64_t>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<T>(v[i]);
  return t;
}

struct ChipResult {
  uint64_t chip_id = 0;
  double loss = 0;
  std::vector<Tensor32> grads;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValueError("train: batch_size must be >= 1");
  if (learning_rate < 0) throw ValueError("train: learning rate must be >= 0");
  if (threads < 1) throw ValueError("train: threads must be >= 1");
  if (hyper < 1) throw ValueError("train: model hyperparameter must be >= 1");
}

double llp_loss(const ProportionVector& pred, const ProportionVector& target) {
  if (pred.size() != target.size())
    throw ValueError("llp_loss: length mismatch " + std::to_string(pred.size()) + " vs " +
                     std::to_string(target.size()));
  if (pred.empty()) throw ValueError("llp_loss: empty vectors");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

template <class T>
AdamState<T> AdamState<T>::init_like(const std::vector<Tensor<T>*>& blocks) {
  AdamState<T> s;
  for (const Tensor<T>* b : blocks) {
    s.m.push_back(Tensor<T>::zeros(b->shape()));
    s.v.push_back(Tensor<T>::zeros(b->shape()));
  }
  return s;
}

template <class T>
void adam_step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, const TrainConfig& config) {
  if (state.t < 1) throw ValueError("adam_step: step counter must be >= 1");
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ValueError("adam_step: block count mismatch");
  const T b1 = static_cast<T>(config.adam_beta1);
  const T b2 = static_cast<T>(config.adam_beta2);
  const T eps = static_cast<T>(config.adam_eps);
  const T lr = static_cast<T>(config.learning_rate);
  const T corr1 = static_cast<T>(1.0 - std::pow(config.adam_beta1, static_cast<double>(state.t)));
  const T corr2 = static_cast<T>(1.0 - std::pow(config.adam_beta2, static_cast<double>(state.t)));
  for (size_t b = 0; b < params.size(); ++b) {
    Tensor<T>& p = *params[b];
    const Tensor<T>& g = grads[b];
    Tensor<T>& m = state.m[b];
    Tensor<T>& v = state.v[b];
    if (g.shape() != p.shape())
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape()) +
                       " != parameter shape " + shape_str(p.shape()));
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<Tensor32*>&, const std::vector<Tensor32>&,
                               AdamState<float>&, const TrainConfig&);
template void adam_step<double>(std::vector<Tensor64*>&, const std::vector<Tensor64>&,
                                AdamState<double>&, const TrainConfig&);

double batch_loss(const Model<float>& model, const std::vector<const Chip*>& chips,
                  const std::vector<Tensor32>& targets, int threads,
                  std::vector<Tensor32>* grads) {
  if (chips.empty()) throw ValueError("batch_loss: empty batch");
  if (chips.size() != targets.size())
    throw ValueError("batch_loss: chip/target count mismatch");
  const size_t count = chips.size();
  std::vector<ChipResult> results(count);
  run_parallel(static_cast<int64_t>(count), threads, [&](int64_t slot) {
    const Chip& chip = *chips[static_cast<size_t>(slot)];
    Tape32 tape;
    std::vector<Tape32::Id> ids;
    const Tape32::Id props = model.tape_proportions(tape, chip.image<float>(), ids);
    const Tape32::Id loss = tape.mse(props, targets[static_cast<size_t>(slot)]);
    if (grads) tape.backward(loss);
    ChipResult& r = results[static_cast<size_t>(slot)];
    r.chip_id = chip.id;
    r.loss = static_cast<double>(tape.value(loss)[0]);
    if (grads)
      for (Tape32::Id id : ids) r.grads.push_back(tape.grad(id));
  });

  std::vector<size_t> reduce_order(count);
  std::iota(reduce_order.begin(), reduce_order.end(), size_t{0});
  std::sort(reduce_order.begin(), reduce_order.end(), [&](size_t a, size_t b) {
    return results[a].chip_id < results[b].chip_id;
  });

  if (grads) {
    grads->clear();
    for (const Tensor32* b : model.blocks()) grads->push_back(Tensor32::zeros(b->shape()));
  }
  double loss_sum = 0;
  for (size_t slot : reduce_order) {
    loss_sum += results[slot].loss;
    if (grads)
      for (size_t b = 0; b < grads->size(); ++b) {
        const Tensor32& g = results[slot].grads[b];
        for (int64_t i = 0; i < g.numel(); ++i) (*grads)[b][i] += g[i];
      }
  }
  const float inv = 1.0f / static_cast<float>(count);
  if (grads)
    for (Tensor32& g : *grads)
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= inv;
  return loss_sum / static_cast<double>(count);
}

TrainRun train(const Dataset& ds, const TrainConfig& config) {
  config.validate();

  std::vector<size_t> train_idx, val_idx;
  for (size_t i = 0; i < ds.chips.size(); ++i) {
    if (ds.chips[i].split == Split::Train) train_idx.push_back(i);
    if (ds.chips[i].split == Split::Validation) val_idx.push_back(i);
  }
  if (train_idx.empty()) throw ValueError("train: no chips in the train split");
  if (val_idx.empty()) throw ValueError("train: no chips in the validation split");

  // Commune-level targets only; chip labels never reach the loss.
  std::vector<Tensor32> train_targets;
  train_targets.reserve(train_idx.size());
  for (size_t i : train_idx)
    train_targets.push_back(to_tensor<float>(blended_target(ds.chips[i], ds.communes)));

  std::vector<ProportionVector> val_truth;
  val_truth.reserve(val_idx.size());
  for (size_t i : val_idx) {
    if (!ds.chips[i].labels)
      throw ValueError("train: validation chip " + std::to_string(ds.chips[i].id) +
                       " has no labels for model selection");
    val_truth.push_back(chip_proportions(*ds.chips[i].labels, ds.n_classes));
  }

  Model<float> model = init_model<float>(config.kind, config.hyper, ds.n_classes, config.seed);
  std::vector<Tensor32*> blocks = model.blocks();
  AdamState<float> adam = AdamState<float>::init_like(blocks);

  TrainRun run;
  double best_mae = 0;

  std::vector<size_t> order(train_idx.size());
  std::iota(order.begin(), order.end(), size_t{0});  // positions into train_idx

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();

    // Deterministic Fisher-Yates keyed by (seed, epoch).
    SplitMix64 shuffle_rng(mix64(config.seed, static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.below(i))]);

    double epoch_loss_sum = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t count = std::min(static_cast<size_t>(config.batch_size),
                                    order.size() - start);
      std::vector<const Chip*> batch_chips;
      std::vector<Tensor32> batch_targets;
      for (size_t k = 0; k < count; ++k) {
        const size_t pos = order[start + k];
        batch_chips.push_back(&ds.chips[train_idx[pos]]);
        batch_targets.push_back(train_targets[pos]);
      }
      std::vector<Tensor32> batch_grads;
      const double mean_loss =
          batch_loss(model, batch_chips, batch_targets, config.threads, &batch_grads);
      epoch_loss_sum += mean_loss * static_cast<double>(count);

      ++adam.t;
      adam_step(blocks, batch_grads, adam, config);
    }
    const double train_seconds = seconds_since(epoch_start);

    // Validation chip-level MAE for model selection.
    std::vector<double> maes(val_idx.size());
    run_parallel(static_cast<int64_t>(val_idx.size()), config.threads, [&](int64_t k) {
      const Chip& chip = ds.chips[val_idx[static_cast<size_t>(k)]];
      const ChipPrediction<float> pred = model.forward(chip.image<float>());
      ProportionVector p(pred.proportions.data(),
                         pred.proportions.data() + pred.proportions.numel());
      maes[static_cast<size_t>(k)] = mae_chip(p, val_truth[static_cast<size_t>(k)]);
    });
    double mae_sum = 0;
    for (double m : maes) mae_sum += m;
    const double val_mae = mae_sum / static_cast<double>(val_idx.size());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss_sum / static_cast<double>(train_idx.size());
    rec.val_mae = val_mae;
    rec.seconds = seconds_since(epoch_start);
    rec.chips_per_sec =
        train_seconds > 0 ? static_cast<double>(train_idx.size()) / train_seconds : 0;
    run.epochs.push_back(rec);

    if (run.selected_epoch == 0 || val_mae < best_mae) {
      best_mae = val_mae;
      run.selected_epoch = epoch;
      run.best_model = model.clone();
    }
  }
  return run;
}

void write_train_log(const std::string& path, const TrainRun& run) {
  std::ofstream out(path);
  if (!out) throw ValueError("cannot create training log: " + path);
  out << "epoch,train_loss,val_mae,seconds,chips_per_sec\n";
  char buf[160];
  for (const EpochRecord& r : run.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.3f,%.1f\n", r.epoch, r.train_loss,
                  r.val_mae, r.seconds, r.chips_per_sec);
    out << buf;
  }
}

}  // namespace llp
