#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "llp/synth.hpp"
#include "llp/train.hpp"
#include "test_support.hpp"

using namespace llp;
using llp::testing::bitwise_equal;

namespace {

// Small world with manually assigned alternating splits; a single commune
// would otherwise collapse onto one split under commune coherence.
Dataset tiny_dataset(uint64_t seed, int communes = 1, int side = 8) {
  SynthConfig config;
  config.seed = seed;
  config.world_chips_x = side;
  config.world_chips_y = side;
  config.commune_count = communes;
  Dataset ds = generate_world(config);
  for (size_t i = 0; i < ds.chips.size(); ++i)
    ds.chips[i].split = (i % 4 == 3) ? Split::Validation : Split::Train;
  return ds;
}

}  // namespace

TEST_CASE("llp_loss is the mean squared proportion error") {
  CHECK(llp_loss({0.2, 0.8}, {0.2, 0.8}) == 0.0);
  CHECK(llp_loss({1, 0}, {0, 1}) == doctest::Approx(1.0));
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ProportionVector a(4), b(4);
    for (int c = 0; c < 4; ++c) {
      a[static_cast<size_t>(c)] = rng.u01();
      b[static_cast<size_t>(c)] = rng.u01();
    }
    double want = 0;
    for (int c = 0; c < 4; ++c) {
      const double d = a[static_cast<size_t>(c)] - b[static_cast<size_t>(c)];
      want += d * d;
    }
    CHECK(llp_loss(a, b) == doctest::Approx(want / 4.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(llp_loss({0.5, 0.5}, {1.0}), ValueError);
}

TEST_CASE("adam first step moves by roughly lr times the gradient sign") {
  TrainConfig config;
  config.learning_rate = 1e-3;
  Tensor64 theta = Tensor64::scalar(0.0);
  std::vector<Tensor64*> params = {&theta};
  AdamState<double> state = AdamState<double>::init_like(params);
  state.t = 1;
  adam_step(params, {Tensor64::scalar(0.5)}, state, config);
  CHECK(theta[0] == doctest::Approx(-1e-3).epsilon(1e-6));

  SUBCASE("zero gradients leave parameters untouched") {
    Tensor64 fixed = Tensor64::scalar(1.25);
    std::vector<Tensor64*> p2 = {&fixed};
    AdamState<double> s2 = AdamState<double>::init_like(p2);
    for (int t = 1; t <= 10; ++t) {
      s2.t = t;
      adam_step(p2, {Tensor64::scalar(0.0)}, s2, config);
    }
    CHECK(fixed[0] == 1.25);
  }
  SUBCASE("step counter must be at least one") {
    AdamState<double> s3 = AdamState<double>::init_like(params);
    CHECK_THROWS_AS(adam_step(params, {Tensor64::scalar(1.0)}, s3, config), ValueError);
  }
}

TEST_CASE("adam trajectory on theta^2 matches a scalar oracle") {
  TrainConfig config;
  config.learning_rate = 1e-2;

  Tensor64 theta = Tensor64::scalar(1.0);
  std::vector<Tensor64*> params = {&theta};
  AdamState<double> state = AdamState<double>::init_like(params);

  // independent scalar reference
  double ref = 1.0, m = 0.0, v = 0.0;
  std::vector<double> trajectory;
  for (int t = 1; t <= 100; ++t) {
    state.t = t;
    adam_step(params, {Tensor64::scalar(2.0 * theta[0])}, state, config);

    const double g = 2.0 * ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    ref -= 1e-2 * mhat / (std::sqrt(vhat) + 1e-8);

    CHECK(std::abs(theta[0] - ref) < 1e-10);
    trajectory.push_back(theta[0]);
  }
  for (size_t t = 5; t < trajectory.size(); ++t)
    CHECK(std::abs(trajectory[t]) < std::abs(trajectory[t - 1]));
  CHECK(std::abs(theta[0]) < 1.0);
}

TEST_CASE("zero learning rate leaves the initialization untouched") {
  Dataset ds = tiny_dataset(3);
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = 8;
  config.learning_rate = 0.0;
  config.seed = 5;
  config.kind = ModelKind::Downconv;
  config.hyper = 8;
  TrainRun run = train(ds, config);
  Model<float> init = init_model<float>(ModelKind::Downconv, 8, ds.n_classes, 5);
  auto got = run.best_model.blocks();
  auto want = init.blocks();
  for (size_t b = 0; b < got.size(); ++b) CHECK(bitwise_equal(*got[b], *want[b]));
}

TEST_CASE("constant-target training drives the loss to zero") {
  Dataset ds = tiny_dataset(21, /*communes=*/1);
  // single commune -> every chip trains against the same target
  TrainConfig config;
  config.epochs = 50;
  config.batch_size = 8;
  config.learning_rate = 1e-2;
  config.seed = 9;
  config.kind = ModelKind::Downconv;
  config.hyper = 8;
  TrainRun run = train(ds, config);
  CHECK(run.epochs.back().train_loss < 1e-4);

  const ProportionVector target = blended_target(ds.chips[0], ds.communes);
  ChipPrediction<float> pred = run.best_model.forward(ds.chips[0].image<float>());
  for (size_t c = 0; c < target.size(); ++c)
    CHECK(std::abs(pred.proportions[static_cast<int64_t>(c)] - target[c]) < 0.05);
}

TEST_CASE("chips sharing a commune share their training target") {
  Dataset ds = tiny_dataset(33, /*communes=*/3);
  std::map<uint32_t, ProportionVector> seen;
  for (const Chip& chip : ds.chips) {
    const ProportionVector t = blended_target(chip, ds.communes);
    auto [it, fresh] = seen.emplace(chip.overlaps[0].commune_id, t);
    if (!fresh) CHECK(it->second == t);
  }
  CHECK(seen.size() == 3);
}

TEST_CASE("batch loss ignores chip order and thread count") {
  Dataset ds = tiny_dataset(41, 2);
  Model<float> model = init_model<float>(ModelKind::Qkm, 6, ds.n_classes, 13);

  std::vector<const Chip*> chips;
  std::vector<Tensor32> targets;
  for (size_t i = 0; i < 7; ++i) {
    chips.push_back(&ds.chips[i]);
    const ProportionVector t = blended_target(ds.chips[i], ds.communes);
    Tensor32 tt({static_cast<int64_t>(t.size())});
    for (size_t c = 0; c < t.size(); ++c) tt[static_cast<int64_t>(c)] = static_cast<float>(t[c]);
    targets.push_back(tt);
  }
  std::vector<Tensor32> grads_a;
  const double loss_a = batch_loss(model, chips, targets, 1, &grads_a);

  // reversed batch order
  std::vector<const Chip*> rev_chips(chips.rbegin(), chips.rend());
  std::vector<Tensor32> rev_targets(targets.rbegin(), targets.rend());
  std::vector<Tensor32> grads_b;
  const double loss_b = batch_loss(model, rev_chips, rev_targets, 1, &grads_b);

  // multithreaded
  std::vector<Tensor32> grads_c;
  const double loss_c = batch_loss(model, chips, targets, 3, &grads_c);

  CHECK(loss_a == loss_b);
  CHECK(loss_a == loss_c);
  for (size_t b = 0; b < grads_a.size(); ++b) {
    CHECK(bitwise_equal(grads_a[b], grads_b[b]));
    CHECK(bitwise_equal(grads_a[b], grads_c[b]));
  }
}

TEST_CASE("training is bit-deterministic, also across thread counts") {
  Dataset ds = tiny_dataset(55, 2);
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 8;
  config.seed = 77;
  config.kind = ModelKind::Qkm;
  config.hyper = 6;

  TrainRun a = train(ds, config);
  TrainRun b = train(ds, config);
  config.threads = 2;
  TrainRun c = train(ds, config);

  REQUIRE(a.epochs.size() == b.epochs.size());
  for (size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].train_loss == b.epochs[e].train_loss);
    CHECK(a.epochs[e].val_mae == b.epochs[e].val_mae);
    CHECK(a.epochs[e].train_loss == c.epochs[e].train_loss);
    CHECK(a.epochs[e].val_mae == c.epochs[e].val_mae);
  }
  CHECK(model_to_bytes(a.best_model) == model_to_bytes(b.best_model));
  CHECK(model_to_bytes(a.best_model) == model_to_bytes(c.best_model));
  CHECK(a.selected_epoch == b.selected_epoch);
}

TEST_CASE("model selection picks the earliest lowest validation MAE") {
  Dataset ds = tiny_dataset(61, 2);
  TrainConfig config;
  config.epochs = 4;
  config.batch_size = 8;
  config.seed = 3;
  config.kind = ModelKind::Downconv;
  config.hyper = 4;
  TrainRun run = train(ds, config);
  REQUIRE(run.selected_epoch >= 1);
  const double best = run.epochs[static_cast<size_t>(run.selected_epoch - 1)].val_mae;
  for (const EpochRecord& r : run.epochs) {
    CHECK(best <= r.val_mae);
    if (r.epoch < run.selected_epoch) CHECK(r.val_mae > best);
  }
}

TEST_CASE("training rejects empty splits") {
  Dataset ds = tiny_dataset(71, 1);
  for (Chip& chip : ds.chips) chip.split = Split::Train;
  TrainConfig config;
  config.kind = ModelKind::Downconv;
  config.hyper = 4;
  CHECK_THROWS_AS(train(ds, config), ValueError);
}

TEST_CASE("train log is written with stable loss columns") {
  Dataset ds = tiny_dataset(81, 1, 4);
  TrainConfig config;
  config.epochs = 2;
  config.batch_size = 4;
  config.seed = 1;
  config.kind = ModelKind::Downconv;
  config.hyper = 4;
  TrainRun run = train(ds, config);
  const std::string path =
      (std::filesystem::temp_directory_path() / "llp_train_log_test.csv").string();
  write_train_log(path, run);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,train_loss,val_mae,seconds,chips_per_sec");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
}
