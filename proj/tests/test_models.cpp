#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "llp/models.hpp"
#include "test_support.hpp"

using namespace llp;
using llp::testing::bitwise_equal;
using llp::testing::rand_tensor;

namespace {

// Plain layer-by-layer reference for downconv, independent of the kernels
// used by the engine.
std::vector<double> downconv_oracle(const Tensor64& image, const DownconvParams<double>& p) {
  const int F = p.filters(), n = p.classes();
  // conv1: 4x4 stride 4 -> 25x25xF, relu
  std::vector<double> act(25 * 25 * F);
  for (int y = 0; y < 25; ++y)
    for (int x = 0; x < 25; ++x)
      for (int f = 0; f < F; ++f) {
        double acc = p.conv1_bias[f];
        for (int ki = 0; ki < 4; ++ki)
          for (int kj = 0; kj < 4; ++kj)
            for (int c = 0; c < 3; ++c)
              acc += image.at(4 * y + ki, 4 * x + kj, c) * p.conv1_kernels.at(ki, kj, c, f);
        act[(y * 25 + x) * F + f] = acc > 0 ? acc : 0;
      }
  // conv2 1x1 + per-cell softmax, then mean over cells
  std::vector<double> props(n, 0.0);
  for (int cell = 0; cell < 625; ++cell) {
    std::vector<double> logits(n);
    for (int k = 0; k < n; ++k) {
      double acc = p.conv2_bias[k];
      for (int f = 0; f < F; ++f) acc += act[cell * F + f] * p.conv2_kernels.at(0, 0, f, k);
      logits[k] = acc;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (double& v : logits) denom += (v = std::exp(v - mx));
    for (int k = 0; k < n; ++k) props[k] += logits[k] / denom;
  }
  for (double& v : props) v /= 625.0;
  return props;
}

// Patch-by-patch direct formula for qkm.
std::vector<double> qkm_oracle(const Tensor64& image, const QkmParams<double>& p) {
  const int m = p.components(), n = p.classes();
  const double gamma = std::log1p(std::exp(p.bandwidth_raw[0]));

  std::vector<double> alpha(m);
  {
    double mx = p.mixture_logits[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, p.mixture_logits[j]);
    double denom = 0;
    for (int j = 0; j < m; ++j) denom += (alpha[j] = std::exp(p.mixture_logits[j] - mx));
    for (double& v : alpha) v /= denom;
  }
  std::vector<std::vector<double>> pi(m, std::vector<double>(n));
  for (int j = 0; j < m; ++j) {
    double mx = p.class_logits.at(j, 0);
    for (int k = 1; k < n; ++k) mx = std::max(mx, p.class_logits.at(j, k));
    double denom = 0;
    for (int k = 0; k < n; ++k) denom += (pi[j][k] = std::exp(p.class_logits.at(j, k) - mx));
    for (double& v : pi[j]) v /= denom;
  }
  std::vector<std::vector<double>> w_hat(m, std::vector<double>(48));
  for (int j = 0; j < m; ++j) {
    double ss = 0;
    for (int d = 0; d < 48; ++d) ss += p.prototypes.at(j, d) * p.prototypes.at(j, d);
    const double norm = std::max(std::sqrt(ss), 1e-8);
    for (int d = 0; d < 48; ++d) w_hat[j][d] = p.prototypes.at(j, d) / norm;
  }

  std::vector<double> props(n, 0.0);
  for (int gy = 0; gy < 50; ++gy) {
    for (int gx = 0; gx < 50; ++gx) {
      double patch[48];
      for (int pi_ = 0; pi_ < 4; ++pi_)
        for (int pj = 0; pj < 4; ++pj)
          for (int c = 0; c < 3; ++c) {
            const int iy = gy * 2 - 1 + pi_;
            const int ix = gx * 2 - 1 + pj;
            patch[(pi_ * 4 + pj) * 3 + c] =
                (iy < 0 || iy >= 100 || ix < 0 || ix >= 100) ? 0.0 : image.at(iy, ix, c);
          }
      double ss = 0;
      for (double v : patch) ss += v * v;
      const double norm = std::max(std::sqrt(ss), 1e-8);
      double numer[8] = {0};  // n <= 8 in tests
      double denom = 0;
      for (int j = 0; j < m; ++j) {
        double dot = 0;
        for (int d = 0; d < 48; ++d) dot += (patch[d] / norm) * w_hat[j][d];
        const double k = std::exp(-gamma * (1.0 - dot * dot));
        denom += alpha[j] * k;
        for (int c = 0; c < n; ++c) numer[c] += alpha[j] * k * pi[j][c];
      }
      for (int c = 0; c < n; ++c) props[c] += numer[c] / denom;
    }
  }
  for (double& v : props) v /= 2500.0;
  return props;
}

}  // namespace

TEST_CASE("parameter counts reproduce the published model sizes") {
  CHECK(param_count(ModelKind::Downconv, 96, 5) == 5189);
  CHECK(param_count(ModelKind::Qkm, 64, 5) == 3457);
  CHECK(param_count(ModelKind::Downconv, 96, 3) == 4995);
  CHECK_THROWS_AS(param_count(ModelKind::Downconv, 0, 5), ValueError);
  CHECK_THROWS_AS(model_kind_from_name("unet"), ValueError);

  for (const auto& [kind, hyper, n] :
       {std::tuple{ModelKind::Downconv, 96, 5}, std::tuple{ModelKind::Qkm, 64, 5},
        std::tuple{ModelKind::Downconv, 8, 3}, std::tuple{ModelKind::Qkm, 5, 2}}) {
    Model<float> m = init_model<float>(kind, hyper, n, 7);
    int64_t total = 0;
    for (const Tensor32* b : m.blocks()) total += b->numel();
    CHECK(total == param_count(kind, hyper, n));
  }
}

TEST_CASE("downconv head with zero weights is input-independent") {
  SplitMix64 rng(21);
  Model<double> model = init_model<double>(ModelKind::Downconv, 16, 5, 3);
  auto p = model.downconv();
  p.conv2_kernels = Tensor64::zeros({1, 1, 16, 5});

  SUBCASE("zero bias gives uniform proportions") {
    p.conv2_bias = Tensor64::zeros({5});
    Tensor64 image = rand_tensor<double>({100, 100, 3}, rng, 0.0, 1.0);
    ChipPrediction<double> out = downconv_forward(image, p);
    for (int64_t i = 0; i < out.cell_probs.numel(); ++i)
      CHECK(out.cell_probs[i] == doctest::Approx(0.2).epsilon(1e-9));
    for (int64_t c = 0; c < 5; ++c)
      CHECK(out.proportions[c] == doctest::Approx(0.2).epsilon(1e-9));
  }
  SUBCASE("bias (ln 2, 0, 0, 0, 0) gives (1/3, 1/6, 1/6, 1/6, 1/6)") {
    p.conv2_bias = Tensor64::from({5}, {std::log(2.0), 0, 0, 0, 0});
    for (uint64_t seed : {1ULL, 2ULL}) {
      SplitMix64 r2(seed);
      Tensor64 image = rand_tensor<double>({100, 100, 3}, r2, 0.0, 1.0);
      ChipPrediction<double> out = downconv_forward(image, p);
      CHECK(out.proportions[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
      for (int64_t c = 1; c < 5; ++c)
        CHECK(out.proportions[c] == doctest::Approx(1.0 / 6).epsilon(1e-9));
    }
  }
}

TEST_CASE("downconv forward matches the layer-by-layer oracle") {
  Model<double> model = init_model<double>(ModelKind::Downconv, 96, 5, 42);
  SplitMix64 rng(7);
  Tensor64 image = rand_tensor<double>({100, 100, 3}, rng, 0.0, 1.0);
  ChipPrediction<double> got = model.forward(image);
  const std::vector<double> want = downconv_oracle(image, model.downconv());
  for (int c = 0; c < 5; ++c)
    CHECK(std::abs(got.proportions[c] - want[static_cast<size_t>(c)]) < 1e-5);
}

TEST_CASE("qkm degenerate mixtures") {
  SplitMix64 rng(5);
  SUBCASE("a single component emits its class distribution everywhere") {
    Model<double> model = init_model<double>(ModelKind::Qkm, 1, 4, 11);
    auto p = model.qkm();
    p.class_logits = rand_tensor<double>({1, 4}, rng, -1, 1);
    Tensor64 pi = kernels::softmax_channels(p.class_logits);
    Tensor64 image = rand_tensor<double>({100, 100, 3}, rng, 0.0, 1.0);
    ChipPrediction<double> out = qkm_forward(image, p);
    for (int64_t cell = 0; cell < 2500; ++cell)
      for (int64_t c = 0; c < 4; ++c)
        CHECK(out.cell_probs[cell * 4 + c] == doctest::Approx(pi[c]).epsilon(1e-12));
    for (int64_t c = 0; c < 4; ++c)
      CHECK(out.proportions[c] == doctest::Approx(pi[c]).epsilon(1e-12));
  }
  SUBCASE("identical class rows make the conditional input-independent") {
    Model<double> model = init_model<double>(ModelKind::Qkm, 6, 3, 13);
    auto p = model.qkm();
    const double row[3] = {0.7, -0.2, 0.4};
    for (int j = 0; j < 6; ++j)
      for (int c = 0; c < 3; ++c) p.class_logits.at(j, c) = row[c];
    p.mixture_logits = rand_tensor<double>({6}, rng, -1, 1);
    Tensor64 expected =
        kernels::softmax_channels(Tensor64::from({3}, {row[0], row[1], row[2]}));
    Tensor64 image = rand_tensor<double>({100, 100, 3}, rng, 0.0, 1.0);
    ChipPrediction<double> out = qkm_forward(image, p);
    for (int64_t cell = 0; cell < 2500; ++cell)
      for (int64_t c = 0; c < 3; ++c)
        CHECK(out.cell_probs[cell * 3 + c] == doctest::Approx(expected[c]).epsilon(1e-12));
  }
}

TEST_CASE("qkm forward matches the patch-by-patch oracle") {
  Model<double> model = init_model<double>(ModelKind::Qkm, 64, 5, 42);
  auto p = model.qkm();
  SplitMix64 rng(7);
  // exercise non-trivial logits and bandwidth
  p.class_logits = rand_tensor<double>({64, 5}, rng, -1, 1);
  p.mixture_logits = rand_tensor<double>({64}, rng, -1, 1);
  p.bandwidth_raw = Tensor64::scalar(1.3);
  Tensor64 image = rand_tensor<double>({100, 100, 3}, rng, 0.0, 1.0);
  ChipPrediction<double> got = qkm_forward(image, p);
  const std::vector<double> want = qkm_oracle(image, p);
  for (int c = 0; c < 5; ++c)
    CHECK(std::abs(got.proportions[c] - want[static_cast<size_t>(c)]) < 1e-5);
}

TEST_CASE("prediction invariants hold for both models") {
  SplitMix64 rng(19);
  for (ModelKind kind : {ModelKind::Downconv, ModelKind::Qkm}) {
    Model<float> model = init_model<float>(kind, kind == ModelKind::Downconv ? 24 : 16, 4, 77);
    // random logits so distributions are not uniform
    auto blocks = model.blocks();
    for (Tensor32* b : blocks)
      for (int64_t i = 0; i < b->numel(); ++i)
        (*b)[i] += static_cast<float>(rng.symmetric(0.3));
    Tensor32 image = rand_tensor<float>({100, 100, 3}, rng, 0.0, 1.0);
    ChipPrediction<float> out = model.forward(image);
    const int side = model.grid_side();
    REQUIRE(out.cell_probs.shape() == Shape{side, side, 4});
    for (int64_t cell = 0; cell < side * side; ++cell) {
      double sum = 0;
      for (int64_t c = 0; c < 4; ++c) sum += out.cell_probs[cell * 4 + c];
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
    double psum = 0;
    for (int64_t c = 0; c < 4; ++c) psum += out.proportions[c];
    CHECK(std::abs(psum - 1.0) < 1e-5);
  }
}

TEST_CASE("proportions equal sum-then-normalize exactly") {
  Model<float> model = init_model<float>(ModelKind::Downconv, 32, 5, 15);
  SplitMix64 rng(23);
  Tensor32 image = rand_tensor<float>({100, 100, 3}, rng, 0.0, 1.0);
  ChipPrediction<float> out = model.forward(image);
  // the same compensated channel sums, then one division by the cell count
  // instead of a normalization: identical arithmetic, identical bits
  float sums[5] = {0, 0, 0, 0, 0};
  float comp[5] = {0, 0, 0, 0, 0};
  for (int64_t i = 0; i < out.cell_probs.numel(); ++i) {
    const int64_t c = i % 5;
    const float term = out.cell_probs[i] - comp[c];
    const float total = sums[c] + term;
    comp[c] = (total - sums[c]) - term;
    sums[c] = total;
  }
  for (int64_t c = 0; c < 5; ++c) CHECK(out.proportions[c] == sums[c] / 625.0f);
}

TEST_CASE("permuting the class axis permutes proportions identically") {
  SplitMix64 rng(29);
  const int perm[5] = {3, 0, 4, 1, 2};
  SUBCASE("downconv") {
    Model<double> model = init_model<double>(ModelKind::Downconv, 16, 5, 3);
    auto p = model.downconv();
    p.conv2_kernels = rand_tensor<double>({1, 1, 16, 5}, rng);
    p.conv2_bias = rand_tensor<double>({5}, rng);
    DownconvParams<double> q{p.conv1_kernels.clone(), p.conv1_bias.clone(),
                             Tensor64({1, 1, 16, 5}), Tensor64({5})};
    for (int f = 0; f < 16; ++f)
      for (int c = 0; c < 5; ++c) q.conv2_kernels.at(0, 0, f, perm[c]) = p.conv2_kernels.at(0, 0, f, c);
    for (int c = 0; c < 5; ++c) q.conv2_bias[perm[c]] = p.conv2_bias[c];
    Tensor64 image = rand_tensor<double>({100, 100, 3}, rng, 0.0, 1.0);
    auto base = downconv_forward(image, p);
    auto permuted = downconv_forward(image, q);
    for (int c = 0; c < 5; ++c)
      CHECK(permuted.proportions[perm[c]] ==
            doctest::Approx(base.proportions[c]).epsilon(1e-12));
  }
  SUBCASE("qkm") {
    Model<double> model = init_model<double>(ModelKind::Qkm, 8, 5, 3);
    auto p = model.qkm();
    p.class_logits = rand_tensor<double>({8, 5}, rng);
    p.mixture_logits = rand_tensor<double>({8}, rng);
    QkmParams<double> q{p.prototypes.clone(), Tensor64({8, 5}), p.mixture_logits.clone(),
                        p.bandwidth_raw.clone()};
    for (int j = 0; j < 8; ++j)
      for (int c = 0; c < 5; ++c) q.class_logits.at(j, perm[c]) = p.class_logits.at(j, c);
    Tensor64 image = rand_tensor<double>({100, 100, 3}, rng, 0.0, 1.0);
    auto base = qkm_forward(image, p);
    auto permuted = qkm_forward(image, q);
    for (int c = 0; c < 5; ++c)
      CHECK(permuted.proportions[perm[c]] ==
            doctest::Approx(base.proportions[c]).epsilon(1e-12));
  }
}

TEST_CASE("qkm kernel values stay in (0, 1], peaking at aligned patches") {
  SplitMix64 rng(31);
  const double gamma = 1.0;
  Tensor64 protos = rand_tensor<double>({16, 48}, rng);
  Tensor64 patches = rand_tensor<double>({64, 48}, rng, 0.0, 1.0);
  Tensor64 wn = kernels::row_unit_normalize(protos, 1e-8);
  Tensor64 xn = kernels::row_unit_normalize(patches, 1e-8);
  Tensor64 sim = kernels::matmul(xn, wn, false, true);
  for (int64_t i = 0; i < sim.numel(); ++i) {
    const double k = std::exp(-gamma * (1.0 - sim[i] * sim[i]));
    CHECK(k > 0.0);
    CHECK(k <= 1.0 + 1e-12);
  }
  // x equal to a prototype (or its negation) attains the bound
  for (double sign : {1.0, -1.0}) {
    Tensor64 aligned({1, 48});
    for (int64_t d = 0; d < 48; ++d) aligned[d] = sign * protos.at(3, d);
    Tensor64 an = kernels::row_unit_normalize(aligned, 1e-8);
    Tensor64 s = kernels::matmul(an, wn, false, true);
    const double k = std::exp(-gamma * (1.0 - s[3] * s[3]));
    CHECK(k == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("model files round-trip bit-exactly") {
  Model<float> model = init_model<float>(ModelKind::Qkm, 64, 5, 99);
  std::vector<uint8_t> bytes = model_to_bytes(model);
  CHECK(bytes.size() == 9 + 4 * 3457);

  Model<float> back = model_from_bytes(bytes);
  CHECK(back.kind() == ModelKind::Qkm);
  CHECK(back.classes() == 5);
  CHECK(back.hyper() == 64);
  auto a = model.blocks();
  auto b = back.blocks();
  for (size_t i = 0; i < a.size(); ++i) CHECK(bitwise_equal(*a[i], *b[i]));
  CHECK(model_to_bytes(back) == bytes);

  SUBCASE("distinct decode errors") {
    std::vector<uint8_t> bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(model_from_bytes(bad), FormatError);
    try {
      model_from_bytes(bad);
    } catch (const FormatError& e) {
      CHECK(e.kind == FormatError::Kind::BadMagic);
    }
    bad = bytes;
    bad[4] = 9;
    try {
      model_from_bytes(bad);
    } catch (const FormatError& e) {
      CHECK(e.kind == FormatError::Kind::BadVersion);
    }
    bad = bytes;
    bad.resize(bytes.size() - 5);
    try {
      model_from_bytes(bad);
    } catch (const FormatError& e) {
      CHECK(e.kind == FormatError::Kind::Truncated);
    }
  }
}

TEST_CASE("tape forward equals inference forward") {
  SplitMix64 rng(37);
  for (ModelKind kind : {ModelKind::Downconv, ModelKind::Qkm}) {
    Model<float> model = init_model<float>(kind, 8, 3, 55);
    Tensor32 image = rand_tensor<float>({100, 100, 3}, rng, 0.0, 1.0);
    ChipPrediction<float> direct = model.forward(image);
    Tape32 tape;
    std::vector<Tape32::Id> ids;
    const Tape32::Id props = model.tape_proportions(tape, image, ids);
    CHECK(bitwise_equal(tape.value(props), direct.proportions));
  }
}
