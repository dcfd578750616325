#include <cmath>

#include "doctest.h"
#include "llp/metrics.hpp"
#include "llp/synth.hpp"
#include "test_support.hpp"

using namespace llp;
using llp::testing::rand_tensor;

TEST_CASE("chip MAE basics") {
  CHECK(mae_chip({0.3, 0.7}, {0.3, 0.7}) == 0.0);
  CHECK(mae_chip({1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}) == doctest::Approx(0.4));
  CHECK_THROWS_AS(mae_chip({1.0}, {0.5, 0.5}), ValueError);

  SUBCASE("symmetry") {
    SplitMix64 rng(2);
    for (int trial = 0; trial < 30; ++trial) {
      ProportionVector a(5), b(5);
      for (int c = 0; c < 5; ++c) {
        a[static_cast<size_t>(c)] = rng.u01();
        b[static_cast<size_t>(c)] = rng.u01();
      }
      CHECK(mae_chip(a, b) == mae_chip(b, a));
    }
  }
  SUBCASE("an MAE of 0.08 on a 1 km2 chip is 0.08 km2 of average error") {
    const ProportionVector pred = {0.52, 0.28, 0.2};
    const ProportionVector truth = {0.4, 0.4, 0.2};
    const double mae = mae_chip(pred, truth);
    CHECK(mae == doctest::Approx(0.08).epsilon(1e-12));
    const double chip_area_km2 = 1.0;
    CHECK(mae * chip_area_km2 == doctest::Approx(0.08));
  }
}

TEST_CASE("nearest-neighbour upsampling replicates blocks") {
  SUBCASE("25 -> 100 replication") {
    SplitMix64 rng(3);
    Tensor64 map = rand_tensor<double>({25, 25, 2}, rng);
    Tensor64 up = upsample_nn(map, 4);
    REQUIRE(up.shape() == Shape{100, 100, 2});
    for (int64_t i = 0; i < 100; ++i)
      for (int64_t j = 0; j < 100; ++j)
        for (int64_t c = 0; c < 2; ++c) CHECK(up.at(i, j, c) == map.at(i / 4, j / 4, c));
  }
  SUBCASE("constant maps stay constant") {
    Tensor64 up = upsample_nn(Tensor64::full({5, 5}, 3.5), 3);
    for (int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == 3.5);
  }
  SUBCASE("random 50x50 equals the index-mapping oracle") {
    SplitMix64 rng(4);
    Tensor64 map = rand_tensor<double>({50, 50}, rng);
    Tensor64 up = upsample_nn(map, 2);
    for (int64_t i = 0; i < 100; ++i)
      for (int64_t j = 0; j < 100; ++j) CHECK(up.at(i, j) == map.at(i / 2, j / 2));
  }
  CHECK_THROWS_AS(upsample_nn(Tensor64::zeros({5, 6}), 2), ShapeError);
}

TEST_CASE("pixel F1 against hand-computed confusion matrices") {
  SUBCASE("perfect prediction gives macro F1 of 1") {
    std::vector<uint8_t> truth(100 * 100);
    for (size_t i = 0; i < truth.size(); ++i) truth[i] = (i / 100 < 50) ? 0 : 1;
    Tensor64 probs({100, 100, 2});
    for (int64_t i = 0; i < 100; ++i)
      for (int64_t j = 0; j < 100; ++j) {
        probs.at(i, j, 0) = i < 50 ? 0.9 : 0.1;
        probs.at(i, j, 1) = i < 50 ? 0.1 : 0.9;
      }
    const F1Result r = f1_pixel(probs, truth, 2);
    CHECK(r.macro == doctest::Approx(1.0));
  }
  SUBCASE("disjoint prediction and truth give macro F1 of 0") {
    std::vector<uint8_t> truth(100 * 100, 1);
    Tensor64 probs({50, 50, 2});
    for (int64_t i = 0; i < probs.dim(0); ++i)
      for (int64_t j = 0; j < probs.dim(1); ++j) {
        probs.at(i, j, 0) = 1.0;
        probs.at(i, j, 1) = 0.0;
      }
    const F1Result r = f1_pixel(probs, truth, 2);
    CHECK(r.macro == 0.0);
    CHECK(r.included[0]);
    CHECK(r.included[1]);
  }
  SUBCASE("4x4 fixture with 8 of 16 pixels correct") {
    // truth: top half class 0, bottom half class 1
    std::vector<uint8_t> truth = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
    // prediction: left half class 0, right half class 1
    Tensor64 probs({4, 4, 2});
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j) {
        probs.at(i, j, 0) = j < 2 ? 1.0 : 0.0;
        probs.at(i, j, 1) = j < 2 ? 0.0 : 1.0;
      }
    // confusion: tp0=4, fp0=4, fn0=4; tp1=4, fp1=4, fn1=4 -> F1 = 0.5 each
    const F1Result r = f1_pixel(probs, truth, 2);
    CHECK(r.per_class[0] == doctest::Approx(0.5));
    CHECK(r.per_class[1] == doctest::Approx(0.5));
    CHECK(r.macro == doctest::Approx(0.5));
  }
  SUBCASE("classes absent from both sides are excluded from the macro") {
    std::vector<uint8_t> truth(100 * 100, 0);
    Tensor64 probs({10, 10, 3});
    for (int64_t i = 0; i < 10; ++i)
      for (int64_t j = 0; j < 10; ++j) {
        probs.at(i, j, 0) = 1.0;
        probs.at(i, j, 1) = 0.0;
        probs.at(i, j, 2) = 0.0;
      }
    const F1Result r = f1_pixel(probs, truth, 3);
    CHECK(r.per_class[0] == doctest::Approx(1.0));
    CHECK_FALSE(r.included[1]);
    CHECK_FALSE(r.included[2]);
    CHECK(r.macro == doctest::Approx(1.0));
  }
  SUBCASE("argmax ties go to the lowest class id") {
    std::vector<uint8_t> truth(100 * 100, 1);
    Tensor64 tied = Tensor64::full({10, 10, 2}, 0.5);  // tied at every pixel
    const F1Result r = f1_pixel(tied, truth, 2);
    // all pixels argmax to class 0 while the truth is class 1
    CHECK(r.per_class[0] == doctest::Approx(0.0));
    CHECK(r.per_class[1] == doctest::Approx(0.0));
    CHECK(r.macro == doctest::Approx(0.0));
  }
}

TEST_CASE("F1 is invariant under a joint class permutation") {
  SplitMix64 rng(8);
  Tensor64 probs = kernels::softmax_channels(rand_tensor<double>({10, 10, 3}, rng, -1, 1));
  std::vector<uint8_t> truth(100 * 100);
  for (auto& v : truth) v = static_cast<uint8_t>(rng.below(3));
  const F1Result base = f1_pixel(probs, truth, 3);

  const int perm[3] = {2, 0, 1};
  Tensor64 pprobs({10, 10, 3});
  for (int64_t i = 0; i < 10; ++i)
    for (int64_t j = 0; j < 10; ++j)
      for (int c = 0; c < 3; ++c) pprobs.at(i, j, perm[c]) = probs.at(i, j, c);
  std::vector<uint8_t> ptruth(truth.size());
  for (size_t i = 0; i < truth.size(); ++i) ptruth[i] = static_cast<uint8_t>(perm[truth[i]]);
  const F1Result permuted = f1_pixel(pprobs, ptruth, 3);

  CHECK(permuted.macro == doctest::Approx(base.macro).epsilon(1e-12));
  for (int c = 0; c < 3; ++c)
    CHECK(permuted.per_class[static_cast<size_t>(perm[c])] ==
          doctest::Approx(base.per_class[static_cast<size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("regression to the mean predictor") {
  SUBCASE("identical targets reproduce themselves with zero MAE") {
    const ProportionVector t = {0.25, 0.5, 0.25};
    const ProportionVector mean = regression_to_mean({t, t, t});
    CHECK(mean == t);
    CHECK(mae_chip(mean, t) == 0.0);
  }
  SUBCASE("two opposite targets average to one half") {
    const ProportionVector mean = regression_to_mean({{1, 0}, {0, 1}});
    CHECK(mean[0] == doctest::Approx(0.5));
    CHECK(mean[1] == doctest::Approx(0.5));
    CHECK(mae_chip(mean, {1, 0}) == doctest::Approx(0.5));
  }
  SUBCASE("random targets match the direct computation") {
    SplitMix64 rng(5);
    std::vector<ProportionVector> targets;
    ProportionVector want(3, 0.0);
    for (int i = 0; i < 40; ++i) {
      ProportionVector v(3);
      double sum = 0;
      for (double& x : v) sum += (x = rng.u01() + 0.01);
      for (double& x : v) x /= sum;
      for (int c = 0; c < 3; ++c) want[static_cast<size_t>(c)] += v[static_cast<size_t>(c)];
      targets.push_back(v);
    }
    for (double& x : want) x /= 40.0;
    const ProportionVector got = regression_to_mean(targets);
    for (int c = 0; c < 3; ++c)
      CHECK(got[static_cast<size_t>(c)] ==
            doctest::Approx(want[static_cast<size_t>(c)]).epsilon(1e-9));
  }
  CHECK_THROWS_AS(regression_to_mean({}), ValueError);
}

TEST_CASE("evaluation report on a synthetic world") {
  SynthConfig config;
  config.seed = 17;
  config.world_chips_x = 6;
  config.world_chips_y = 6;
  config.commune_count = 3;
  Dataset ds = generate_world(config);
  for (size_t i = 0; i < ds.chips.size(); ++i)
    ds.chips[i].split = (i % 3 == 0) ? Split::Test : Split::Train;

  Model<float> model = init_model<float>(ModelKind::Downconv, 8, 3, 3);
  const EvalReport report = evaluate_model(ds, model, Split::Test, 2);
  CHECK(report.chips == 12);
  CHECK(report.chip_mae.size() == 12);
  CHECK(report.mean_mae >= 0.0);
  CHECK(report.mean_mae <= 1.0);
  CHECK(report.f1.macro >= 0.0);
  CHECK(report.f1.macro <= 1.0);

  const ProportionVector mean = train_mean_target(ds);
  const EvalReport baseline = evaluate_constant(ds, mean, Split::Test);
  CHECK(baseline.chips == 12);
  CHECK(baseline.mean_mae >= 0.0);

  CHECK_THROWS_AS(evaluate_model(ds, model, Split::Validation, 1), ValueError);
}
