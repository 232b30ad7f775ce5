#include <doctest.h>

#include <cmath>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "ynet/errors.hpp"
#include "ynet/ops.hpp"

using namespace ynet;
using namespace ynet::oracle;
using ynet::testing::distinct_tensor;
using ynet::testing::max_abs_diff;
using ynet::testing::probe;
using ynet::testing::random_tensor;

namespace {

Tensor eval_op(const std::function<Var(Tape&, Var)>& op, const Tensor& x) {
  Tape tape;
  return op(tape, tape.constant(x)).value();
}

}  // namespace

TEST_CASE("conv2d matches the nested-loop oracle") {
  SUBCASE("4x8x8 input, 2x4x3x3 kernel") {
    const Tensor x = random_tensor({1, 4, 8, 8}, 1), k = random_tensor({2, 4, 3, 3}, 2);
    Tape tape;
    const Tensor y = nn::conv2d(tape.constant(x), tape.constant(k), 1, 1).value();
    CHECK(max_abs_diff(y, conv_oracle(x, k, 1, 1)) < 1e-10);
  }
  SUBCASE("strided, padded, batched") {
    for (int stride : {1, 2, 3})
      for (int pad : {0, 1, 2}) {
        const Tensor x = random_tensor({2, 3, 9, 7}, 10 + stride), k = random_tensor({4, 3, 5, 3}, 20 + pad);
        Tape tape;
        const Tensor y = nn::conv2d(tape.constant(x), tape.constant(k), stride, pad).value();
        CHECK(max_abs_diff(y, conv_oracle(x, k, stride, pad)) < 1e-10);
      }
  }
}

TEST_CASE("conv2d identity kernel and shape arithmetic") {
  const Tensor x = random_tensor({1, 1, 5, 5}, 3);
  Tape tape;
  CHECK(nn::conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), 1, 0).value().identical(x));
  CHECK(nn::conv_output_size(256, 7, 2, 3) == 128);
  const Var big = nn::conv2d(tape.constant(Tensor({1, 3, 256, 256})), tape.constant(Tensor({32, 3, 7, 7})), 2, 3);
  CHECK(big.shape() == Shape{1, 32, 128, 128});
}

TEST_CASE("conv2d rejects channel mismatch and even kernels") {
  Tape tape;
  CHECK_THROWS_AS(nn::conv2d(tape.constant(Tensor({1, 3, 8, 8})), tape.constant(Tensor({2, 4, 3, 3})), 1, 1),
                  ShapeError);
  CHECK_THROWS_AS(nn::conv2d(tape.constant(Tensor({1, 3, 8, 8})), tape.constant(Tensor({2, 3, 2, 2})), 1, 1),
                  ShapeError);
}

TEST_CASE("bilinear upsampling") {
  SUBCASE("constant map stays constant") {
    const Tensor y = eval_op([](Tape&, Var x) { return nn::bilinear_upsample_2x(x); }, Tensor({1, 2, 3, 5}, 0.7));
    CHECK(y.shape() == Shape{1, 2, 6, 10});
    for (double v : y.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  }
  SUBCASE("1x1 input clamps to all corners") {
    const Tensor y = eval_op([](Tape&, Var x) { return nn::bilinear_upsample_2x(x); }, Tensor({1, 1, 1, 1}, -2.5));
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == -2.5);
  }
  SUBCASE("ramp matches the sampling formula") {
    const Tensor x({1, 1, 2, 2}, {0, 1, 2, 3});
    const Tensor y = eval_op([](Tape&, Var v) { return nn::bilinear_upsample_2x(v); }, x);
    CHECK(max_abs_diff(y, bilinear_oracle(x, 4, 4)) < 1e-12);
    // Row 1 samples source row 0.25: 0.75 * [0, 1] + 0.25 * [2, 3].
    CHECK(y.at(0, 0, 1, 0) == doctest::Approx(0.5));
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(0.75));
  }
  SUBCASE("random maps and factors") {
    for (uint64_t seed = 1; seed <= 3; ++seed) {
      const Tensor x = random_tensor({2, 3, 4, 5}, seed);
      const Tensor y4 = eval_op([](Tape&, Var v) { return nn::bilinear_upsample(v, 4); }, x);
      CHECK(max_abs_diff(y4, bilinear_oracle(x, 16, 20)) < 1e-12);
      const Tensor yr = eval_op([](Tape&, Var v) { return nn::bilinear_resize(v, 7, 3); }, x);
      CHECK(max_abs_diff(yr, bilinear_oracle(x, 7, 3)) < 1e-12);
    }
  }
}

TEST_CASE("region_max_pool") {
  SUBCASE("single spikes") {
    Tensor x({1, 3, 6, 6});
    x.at(0, 0, 1, 2) = 4.0;
    x.at(0, 1, 5, 5) = 2.0;
    x.at(0, 2, 0, 0) = 1.5;
    const Tensor y = eval_op([](Tape&, Var v) { return nn::region_max_pool(v, {0, 0, 6, 6}); }, x);
    CHECK(y.vec() == std::vector<double>{4.0, 2.0, 1.5});
  }
  SUBCASE("512x8x8 random against the loop oracle") {
    const Tensor x = random_tensor({1, 512, 8, 8}, 9);
    const Tensor y = eval_op([](Tape&, Var v) { return nn::region_max_pool(v, {2, 2, 6, 6}); }, x);
    for (int64_t c = 0; c < 512; ++c) {
      double m = -INFINITY;
      for (int64_t yy = 2; yy < 6; ++yy)
        for (int64_t xx = 2; xx < 6; ++xx) m = std::max(m, x.at(0, c, yy, xx));
      CHECK(y[c] == m);
    }
  }
  SUBCASE("ties route the gradient to the first occurrence") {
    Tape tape;
    Var x = tape.param(Tensor({1, 1, 2, 2}, 1.0));
    tape.backward(nn::sum(nn::region_max_pool(x, {0, 0, 2, 2})));
    CHECK(tape.grad(x).vec() == std::vector<double>{1, 0, 0, 0});
  }
  SUBCASE("empty or out-of-range regions throw") {
    Tape tape;
    Var x = tape.constant(Tensor({1, 1, 4, 4}));
    CHECK_THROWS_AS(nn::region_max_pool(x, {2, 2, 2, 4}), ShapeError);
    CHECK_THROWS_AS(nn::region_max_pool(x, {0, 0, 5, 4}), ShapeError);
  }
}

TEST_CASE("max_pool_2d matches a loop oracle") {
  const Tensor x = random_tensor({2, 3, 9, 9}, 4);
  const Tensor y = eval_op([](Tape&, Var v) { return nn::max_pool_2d(v, 3, 2, 1); }, x);
  REQUIRE(y.shape() == Shape{2, 3, 5, 5});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 5; ++j) {
          double m = -INFINITY;
          for (int64_t di = 0; di < 3; ++di)
            for (int64_t dj = 0; dj < 3; ++dj) {
              const int64_t sy = i * 2 - 1 + di, sx = j * 2 - 1 + dj;
              if (sy >= 0 && sy < 9 && sx >= 0 && sx < 9) m = std::max(m, x.at(b, c, sy, sx));
            }
          CHECK(y.at(b, c, i, j) == m);
        }
}

TEST_CASE("deterministic outputs across repeated calls") {
  const Tensor x = random_tensor({2, 4, 8, 8}, 5), k = random_tensor({3, 4, 3, 3}, 6);
  auto run = [&] {
    Tape tape;
    Var in = tape.constant(x);
    return std::vector<Tensor>{nn::conv2d(in, tape.constant(k), 2, 1).value(),
                               nn::region_max_pool(in, {1, 1, 7, 5}).value(),
                               nn::bilinear_upsample_2x(in).value()};
  };
  const auto a = run(), b = run();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].identical(b[i]));
}

TEST_CASE("l2_normalize") {
  Tensor x = random_tensor({4, 16}, 7);
  for (int64_t j = 0; j < 16; ++j) x[2 * 16 + j] = 0.0;
  Tape tape;
  Var xv = tape.param(x);
  Var y = nn::l2_normalize(xv);
  for (int64_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 16; ++j) s += y.value()[r * 16 + j] * y.value()[r * 16 + j];
    if (r == 2) CHECK(s == 0.0);
    else CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-9));
  }
  tape.backward(probe(tape, y, 3));
  for (int64_t j = 0; j < 16; ++j) CHECK(tape.grad(xv)[2 * 16 + j] == 0.0);
}

TEST_CASE("batch_norm_2d") {
  const Tensor gamma = random_tensor({3}, 1), beta = random_tensor({3}, 2);
  SUBCASE("eval mode is affine per channel") {
    nn::BatchNormStats stats{random_tensor({3}, 3), Tensor({3}, 0.5)};
    for (int64_t c = 0; c < 3; ++c) stats.var[c] = 0.3 + c;
    const Tensor x = random_tensor({2, 3, 4, 4}, 4);
    const double a = 2.5, b = -1.25;
    Tensor xs = x;
    for (auto& v : xs.data()) v = a * v + b;
    auto f = [&](const Tensor& in) {
      Tape tape;
      return nn::batch_norm_2d(tape.constant(in), tape.constant(gamma), tape.constant(beta), stats).value();
    };
    const Tensor fx = f(x), fxs = f(xs), f0 = f(Tensor(x.shape(), 0.0)), f1 = f(Tensor(x.shape(), 1.0));
    for (int64_t i = 0; i < x.numel(); ++i) {
      const int64_t c = (i / 16) % 3;
      const double slope = f1[c * 16] - f0[c * 16];
      CHECK(fx[i] == doctest::Approx(f0[c * 16] + slope * x[i]).epsilon(1e-12));
      CHECK(fxs[i] == doctest::Approx(f0[c * 16] + slope * (a * x[i] + b)).epsilon(1e-12));
    }
  }
  SUBCASE("train mode normalises with batch statistics and updates running stats") {
    const Tensor x = random_tensor({2, 3, 4, 4}, 5, 3.0);
    nn::BatchNormStats stats{Tensor({3}, 0.0), Tensor({3}, 1.0)};
    Tape tape;
    const Tensor y =
        nn::batch_norm_2d(tape.constant(x), tape.constant(gamma), tape.constant(beta), stats, true).value();
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 16; ++i) mean += x[(b * 3 + c) * 16 + i];
      mean /= 32;
      for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 16; ++i) var += std::pow(x[(b * 3 + c) * 16 + i] - mean, 2);
      for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 16; ++i) {
          const double expect = gamma[c] * (x[(b * 3 + c) * 16 + i] - mean) / std::sqrt(var / 32 + 1e-5) + beta[c];
          CHECK(y[(b * 3 + c) * 16 + i] == doctest::Approx(expect).epsilon(1e-12));
        }
      CHECK(stats.mean[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
      CHECK(stats.var[c] == doctest::Approx(0.9 + 0.1 * var / 31).epsilon(1e-12));
    }
  }
}

TEST_CASE("adaptive_avg_pool2d and channel_group_mean match loop oracles") {
  const Tensor x = random_tensor({2, 10, 5, 7}, 8);
  const Tensor y = eval_op([](Tape&, Var v) { return nn::adaptive_avg_pool2d(v, 3, 2); }, x);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 10; ++c)
      for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 2; ++j) {
          const int64_t y0 = i * 5 / 3, y1 = ((i + 1) * 5 + 2) / 3, x0 = j * 7 / 2, x1 = ((j + 1) * 7 + 1) / 2;
          double s = 0;
          for (int64_t yy = y0; yy < y1; ++yy)
            for (int64_t xx = x0; xx < x1; ++xx) s += x.at(b, c, yy, xx);
          CHECK(y.at(b, c, i, j) == doctest::Approx(s / static_cast<double>((y1 - y0) * (x1 - x0))).epsilon(1e-13));
        }
  const Tensor g = eval_op([](Tape&, Var v) { return nn::channel_group_mean(v, 3); }, x);
  REQUIRE(g.shape() == Shape{2, 3, 5, 7});
  const int64_t starts[] = {0, 3, 6, 10};  // last group absorbs the remainder
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t grp = 0; grp < 3; ++grp)
      for (int64_t p = 0; p < 35; ++p) {
        double s = 0;
        for (int64_t c = starts[grp]; c < starts[grp + 1]; ++c) s += x[(b * 10 + c) * 35 + p];
        CHECK(g[(b * 3 + grp) * 35 + p] ==
              doctest::Approx(s / static_cast<double>(starts[grp + 1] - starts[grp])).epsilon(1e-13));
      }
}

TEST_CASE("softmax_cross_entropy") {
  Tape tape;
  CHECK(nn::softmax_cross_entropy(tape.constant(Tensor({1, 2, 3, 3})), std::vector<int>(9, 1)).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const Tensor logits = random_tensor({3, 4}, 9);
  const std::vector<int> targets{0, 3, 2};
  double expect = 0;
  for (int r = 0; r < 3; ++r) {
    double z = 0;
    for (int c = 0; c < 4; ++c) z += std::exp(logits[r * 4 + c]);
    expect += std::log(z) - logits[r * 4 + targets[static_cast<size_t>(r)]];
  }
  CHECK(nn::softmax_cross_entropy(tape.constant(logits), targets).value().item() ==
        doctest::Approx(expect / 3).epsilon(1e-13));
}

TEST_CASE("gradient checks on five seeds per op") {
  for (const auto& c : ynet::testing::op_grad_cases()) {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      const GradCheckReport report = c.run(seed);
      INFO(c.name << " seed " << seed << ": " << report.message);
      CHECK(report.passed);
    }
  }
  const auto report = grad_check(
      [](Tape&, std::span<const Var> in) { return nn::sum(nn::conv2d(in[0], in[1], 1, 1)); },
      {random_tensor({1, 4, 8, 8}, 1), random_tensor({2, 4, 3, 3}, 2)});
  CHECK(report.passed);
}
