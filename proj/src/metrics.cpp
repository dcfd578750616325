#include "llp/metrics.hpp"

#include <atomic>
#include <cmath>
#include <thread>

namespace llp {

double mae_chip(const ProportionVector& pred, const ProportionVector& truth) {
  if (pred.size() != truth.size())
    throw ValueError("mae_chip: length mismatch " + std::to_string(pred.size()) + " vs " +
                     std::to_string(truth.size()));
  if (pred.empty()) throw ValueError("mae_chip: empty vectors");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

template <class T>
Tensor<T> upsample_nn(const Tensor<T>& map, int factor) {
  if (map.rank() != 2 && map.rank() != 3)
    throw ShapeError("upsample_nn: expected [S,S] or [S,S,C], got " + shape_str(map.shape()));
  if (factor < 1) throw ValueError("upsample_nn: factor must be >= 1");
  const int64_t s = map.dim(0);
  if (map.dim(1) != s) throw ShapeError("upsample_nn: map must be square");
  const int64_t c = map.rank() == 3 ? map.dim(2) : 1;
  const int64_t out_side = s * factor;
  Shape out_shape = map.rank() == 3 ? Shape{out_side, out_side, c} : Shape{out_side, out_side};
  Tensor<T> out(out_shape);
  const T* p = map.data();
  T* q = out.data();
  for (int64_t i = 0; i < out_side; ++i) {
    const int64_t si = i / factor;
    for (int64_t j = 0; j < out_side; ++j) {
      const int64_t sj = j / factor;
      const T* src = p + (si * s + sj) * c;
      T* dst = q + (i * out_side + j) * c;
      for (int64_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
    }
  }
  return out;
}

template Tensor<float> upsample_nn<float>(const Tensor<float>&, int);
template Tensor<double> upsample_nn<double>(const Tensor<double>&, int);

std::vector<uint8_t> upsample_nn_labels(const std::vector<uint8_t>& map, int side, int factor) {
  if (static_cast<size_t>(side) * static_cast<size_t>(side) != map.size())
    throw ShapeError("upsample_nn_labels: map size does not match side");
  if (factor < 1) throw ValueError("upsample_nn_labels: factor must be >= 1");
  const int out_side = side * factor;
  std::vector<uint8_t> out(static_cast<size_t>(out_side) * out_side);
  for (int i = 0; i < out_side; ++i)
    for (int j = 0; j < out_side; ++j)
      out[static_cast<size_t>(i) * out_side + j] =
          map[static_cast<size_t>(i / factor) * side + j / factor];
  return out;
}

void ConfusionCounts::add(const ConfusionCounts& other) {
  for (size_t c = 0; c < tp.size(); ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
  }
}

F1Result f1_from_confusion(const ConfusionCounts& counts) {
  F1Result r;
  double sum = 0;
  int64_t included = 0;
  for (size_t c = 0; c < counts.tp.size(); ++c) {
    const int64_t support = 2 * counts.tp[c] + counts.fp[c] + counts.fn[c];
    if (support == 0) {
      // absent from both prediction and truth: reported as 0, excluded
      r.per_class.push_back(0);
      r.included.push_back(false);
      continue;
    }
    const double f1 = 2.0 * static_cast<double>(counts.tp[c]) / static_cast<double>(support);
    r.per_class.push_back(f1);
    r.included.push_back(true);
    sum += f1;
    ++included;
  }
  r.macro = included > 0 ? sum / static_cast<double>(included) : 0.0;
  return r;
}

template <class T>
ConfusionCounts pixel_confusion(const Tensor<T>& cell_probs,
                                const std::vector<uint8_t>& truth_labels, int n_classes) {
  if (cell_probs.rank() != 3)
    throw ShapeError("pixel_confusion: cell probabilities must be [S,S,n]");
  const int64_t side = static_cast<int64_t>(std::llround(std::sqrt(
      static_cast<double>(truth_labels.size()))));
  if (side * side != static_cast<int64_t>(truth_labels.size()))
    throw ShapeError("pixel_confusion: truth labels must form a square map");
  const int64_t s = cell_probs.dim(0);
  if (cell_probs.dim(1) != s || cell_probs.dim(2) != n_classes)
    throw ShapeError("pixel_confusion: bad cell probability shape " +
                     shape_str(cell_probs.shape()));
  if (s < 1 || side % s != 0)
    throw ShapeError("pixel_confusion: grid side " + std::to_string(s) +
                     " does not divide the " + std::to_string(side) + "px truth map");
  const int64_t factor = side / s;

  ConfusionCounts counts(n_classes);
  const T* p = cell_probs.data();
  for (int64_t i = 0; i < side; ++i) {
    for (int64_t j = 0; j < side; ++j) {
      const T* cell = p + ((i / factor) * s + (j / factor)) * n_classes;
      int arg = 0;
      for (int c = 1; c < n_classes; ++c)
        if (cell[c] > cell[arg]) arg = c;  // ties stay at the lowest id
      const int truth = truth_labels[static_cast<size_t>(i * side + j)];
      if (truth >= n_classes)
        throw ValueError("pixel_confusion: label id " + std::to_string(truth) +
                         " out of range");
      if (arg == truth) {
        ++counts.tp[static_cast<size_t>(arg)];
      } else {
        ++counts.fp[static_cast<size_t>(arg)];
        ++counts.fn[static_cast<size_t>(truth)];
      }
    }
  }
  return counts;
}

template ConfusionCounts pixel_confusion<float>(const Tensor<float>&,
                                                const std::vector<uint8_t>&, int);
template ConfusionCounts pixel_confusion<double>(const Tensor<double>&,
                                                 const std::vector<uint8_t>&, int);

template <class T>
F1Result f1_pixel(const Tensor<T>& cell_probs, const std::vector<uint8_t>& truth_labels,
                  int n_classes) {
  return f1_from_confusion(pixel_confusion(cell_probs, truth_labels, n_classes));
}

template F1Result f1_pixel<float>(const Tensor<float>&, const std::vector<uint8_t>&, int);
template F1Result f1_pixel<double>(const Tensor<double>&, const std::vector<uint8_t>&, int);

ProportionVector regression_to_mean(const std::vector<ProportionVector>& train_targets) {
  if (train_targets.empty()) throw ValueError("regression_to_mean: empty train set");
  ProportionVector mean(train_targets[0].size(), 0.0);
  for (const ProportionVector& t : train_targets) {
    if (t.size() != mean.size())
      throw ValueError("regression_to_mean: inconsistent vector lengths");
    for (size_t c = 0; c < t.size(); ++c) mean[c] += t[c];
  }
  double sum = 0;
  for (double& v : mean) {
    v /= static_cast<double>(train_targets.size());
    sum += v;
  }
  if (sum <= 0) throw ValueError("regression_to_mean: targets sum to zero");
  for (double& v : mean) v /= sum;
  return mean;
}

namespace {

void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
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
  for (int w = 0; w < std::min<int64_t>(threads, n); ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

}  // namespace

EvalReport evaluate_model(const Dataset& ds, const Model<float>& model, Split split,
                          int threads) {
  if (model.classes() != ds.n_classes)
    throw ValueError("evaluate: model has " + std::to_string(model.classes()) +
                     " classes, dataset has " + std::to_string(ds.n_classes));
  std::vector<size_t> idx;
  for (size_t i = 0; i < ds.chips.size(); ++i)
    if (ds.chips[i].split == split && ds.chips[i].labels) idx.push_back(i);
  if (idx.empty())
    throw ValueError(std::string("evaluate: no labeled chips in split ") + split_name(split));

  EvalReport report;
  report.chips = static_cast<int64_t>(idx.size());
  report.chip_ids.resize(idx.size());
  report.chip_mae.resize(idx.size());
  report.chip_pred.resize(idx.size());
  std::vector<ConfusionCounts> confusion(idx.size(), ConfusionCounts(ds.n_classes));

  parallel_for(static_cast<int64_t>(idx.size()), threads, [&](int64_t k) {
    const Chip& chip = ds.chips[idx[static_cast<size_t>(k)]];
    const ChipPrediction<float> pred = model.forward(chip.image<float>());
    ProportionVector p(pred.proportions.data(),
                       pred.proportions.data() + pred.proportions.numel());
    const ProportionVector truth = chip_proportions(*chip.labels, ds.n_classes);
    report.chip_ids[static_cast<size_t>(k)] = chip.id;
    report.chip_mae[static_cast<size_t>(k)] = mae_chip(p, truth);
    report.chip_pred[static_cast<size_t>(k)] = std::move(p);
    confusion[static_cast<size_t>(k)] = pixel_confusion(pred.cell_probs, *chip.labels,
                                                        ds.n_classes);
  });

  double mae_sum = 0;
  ConfusionCounts total(ds.n_classes);
  for (size_t k = 0; k < idx.size(); ++k) {
    mae_sum += report.chip_mae[k];
    total.add(confusion[k]);
  }
  report.mean_mae = mae_sum / static_cast<double>(idx.size());
  report.f1 = f1_from_confusion(total);
  return report;
}

EvalReport evaluate_constant(const Dataset& ds, const ProportionVector& prediction,
                             Split split) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < ds.chips.size(); ++i)
    if (ds.chips[i].split == split && ds.chips[i].labels) idx.push_back(i);
  if (idx.empty())
    throw ValueError(std::string("evaluate: no labeled chips in split ") + split_name(split));
  EvalReport report;
  report.chips = static_cast<int64_t>(idx.size());
  double mae_sum = 0;
  for (size_t i : idx) {
    const ProportionVector truth = chip_proportions(*ds.chips[i].labels, ds.n_classes);
    const double mae = mae_chip(prediction, truth);
    report.chip_ids.push_back(ds.chips[i].id);
    report.chip_mae.push_back(mae);
    report.chip_pred.push_back(prediction);
    mae_sum += mae;
  }
  report.mean_mae = mae_sum / static_cast<double>(idx.size());
  report.f1 = F1Result{};
  report.f1.per_class.assign(ds.n_classes, 0.0);
  report.f1.included.assign(ds.n_classes, false);
  return report;
}

ProportionVector train_mean_target(const Dataset& ds) {
  std::vector<ProportionVector> targets;
  for (const Chip& chip : ds.chips)
    if (chip.split == Split::Train) targets.push_back(blended_target(chip, ds.communes));
  return regression_to_mean(targets);
}

}  // namespace llp
