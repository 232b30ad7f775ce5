#pragma once

#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "ynet/grad_check.hpp"
#include "ynet/losses.hpp"
#include "ynet/ops.hpp"

namespace ynet::testing {

// One finite-difference case per op, parameterised by seed.
struct GradCase {
  std::string name;
  std::function<GradCheckReport(uint64_t seed)> run;
};

inline GradCase unary_case(std::string name, std::function<Var(Tape&, Var)> op,
                           std::function<Tensor(uint64_t)> make) {
  return {std::move(name), [op, make](uint64_t seed) {
            return grad_check([&](Tape& tape, std::span<const Var> in) { return probe(tape, op(tape, in[0]), seed + 100); },
                              {make(seed)});
          }};
}

// Step 1e-3, tolerance 1e-4 (the grad_check defaults).
inline std::vector<GradCase> op_grad_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"conv2d", [](uint64_t seed) {
                     const int stride = 1 + static_cast<int>(seed % 2), pad = static_cast<int>(seed % 3);
                     return grad_check(
                         [&](Tape& tape, std::span<const Var> in) {
                           return probe(tape, nn::conv2d(in[0], in[1], stride, pad), seed);
                         },
                         {random_tensor({2, 3, 6, 5}, seed), random_tensor({4, 3, 3, 3}, seed + 50)});
                   }});
  cases.push_back({"add_channel_bias", [](uint64_t seed) {
                     return grad_check(
                         [&](Tape& tape, std::span<const Var> in) {
                           return probe(tape, nn::add_channel_bias(in[0], in[1]), seed);
                         },
                         {random_tensor({2, 3, 4, 4}, seed), random_tensor({3}, seed + 9)});
                   }});
  cases.push_back(unary_case("bilinear_upsample_2x", [](Tape&, Var x) { return nn::bilinear_upsample_2x(x); },
                             [](uint64_t s) { return random_tensor({1, 2, 3 + static_cast<int64_t>(s % 3), 4}, s); }));
  cases.push_back(unary_case("bilinear_upsample", [](Tape&, Var x) { return nn::bilinear_upsample(x, 4); },
                             [](uint64_t s) { return random_tensor({2, 1, 3, 2}, s); }));
  cases.push_back(unary_case("bilinear_resize", [](Tape&, Var x) { return nn::bilinear_resize(x, 5, 3); },
                             [](uint64_t s) { return random_tensor({1, 2, 4, 6}, s); }));
  cases.push_back(unary_case("region_max_pool", [](Tape&, Var x) { return nn::region_max_pool(x, {1, 0, 4, 3}); },
                             [](uint64_t s) { return distinct_tensor({2, 3, 4, 5}, s); }));
  cases.push_back(unary_case("max_pool_2d", [](Tape&, Var x) { return nn::max_pool_2d(x, 3, 2, 1); },
                             [](uint64_t s) { return distinct_tensor({1, 2, 7, 6}, s); }));
  cases.push_back(unary_case("global_avg_pool", [](Tape&, Var x) { return nn::global_avg_pool(x); },
                             [](uint64_t s) { return random_tensor({2, 3, 4, 5}, s); }));
  cases.push_back(unary_case("adaptive_avg_pool2d", [](Tape&, Var x) { return nn::adaptive_avg_pool2d(x, 2, 3); },
                             [](uint64_t s) { return random_tensor({2, 3, 5, 7}, s); }));
  cases.push_back(unary_case("channel_group_mean", [](Tape&, Var x) { return nn::channel_group_mean(x, 3); },
                             [](uint64_t s) { return random_tensor({2, 8, 3, 3}, s); }));
  cases.push_back(unary_case("relu", [](Tape&, Var x) { return nn::relu(x); },
                             [](uint64_t s) { return distinct_tensor({2, 3, 4, 4}, s); }));
  cases.push_back(unary_case("tanh", [](Tape&, Var x) { return nn::tanh(x); },
                             [](uint64_t s) { return random_tensor({2, 3, 4, 4}, s); }));
  cases.push_back(unary_case("scale", [](Tape&, Var x) { return nn::scale(x, -1.7); },
                             [](uint64_t s) { return random_tensor({5}, s); }));
  cases.push_back(unary_case("add", [](Tape&, Var x) { return nn::add(x, nn::tanh(x)); },
                             [](uint64_t s) { return random_tensor({3, 4}, s); }));
  cases.push_back(unary_case("reshape", [](Tape&, Var x) { return nn::reshape(x, {4, 6}); },
                             [](uint64_t s) { return random_tensor({2, 3, 2, 2}, s); }));
  cases.push_back(unary_case("mean", [](Tape&, Var x) { return nn::mean(x); },
                             [](uint64_t s) { return random_tensor({2, 3, 2}, s); }));
  cases.push_back(unary_case("sum", [](Tape&, Var x) { return nn::sum(nn::tanh(x)); },
                             [](uint64_t s) { return random_tensor({7, 3}, s); }));
  cases.push_back(unary_case("weighted_sum",
                             [](Tape&, Var x) { return nn::weighted_sum(nn::mean(x), 0.3, nn::sum(nn::tanh(x)), 0.7); },
                             [](uint64_t s) { return random_tensor({4, 2}, s); }));
  cases.push_back({"linear", [](uint64_t seed) {
                     return grad_check(
                         [&](Tape& tape, std::span<const Var> in) { return probe(tape, nn::linear(in[0], in[1]), seed); },
                         {random_tensor({3, 6}, seed), random_tensor({4, 6}, seed + 20)});
                   }});
  cases.push_back(unary_case("l2_normalize", [](Tape&, Var x) { return nn::l2_normalize(x); },
                             [](uint64_t s) { return random_tensor({3, 7}, s); }));
  cases.push_back({"batch_norm_2d (train)", [](uint64_t seed) {
                     nn::BatchNormStats stats{Tensor({3}, 0.0), Tensor({3}, 1.0)};
                     return grad_check(
                         [&](Tape& tape, std::span<const Var> in) {
                           return probe(tape, nn::batch_norm_2d(in[0], in[1], in[2], stats, true), seed + 100);
                         },
                         {random_tensor({2, 3, 3, 3}, seed, 2.0), random_tensor({3}, seed + 1),
                          random_tensor({3}, seed + 2)});
                   }});
  cases.push_back({"batch_norm_2d (eval)", [](uint64_t seed) {
                     const nn::BatchNormStats fixed{random_tensor({3}, seed + 3), Tensor({3}, 0.7)};
                     return grad_check(
                         [&](Tape& tape, std::span<const Var> in) {
                           return probe(tape, nn::batch_norm_2d(in[0], in[1], in[2], fixed), seed + 100);
                         },
                         {random_tensor({2, 3, 3, 3}, seed), random_tensor({3}, seed + 1), random_tensor({3}, seed + 2)});
                   }});
  cases.push_back({"softmax_cross_entropy", [](uint64_t seed) {
                     std::vector<int> t4;
                     for (int i = 0; i < 2 * 3 * 3; ++i) t4.push_back((i * 7 + static_cast<int>(seed)) % 2);
                     return grad_check([&](Tape&, std::span<const Var> in) { return nn::softmax_cross_entropy(in[0], t4); },
                                       {random_tensor({2, 2, 3, 3}, seed)});
                   }});
  cases.push_back({"circle_loss", [](uint64_t seed) {
                     const std::vector<int> labels{0, 3, 1};
                     return grad_check(
                         [&](Tape&, std::span<const Var> in) {
                           return circle_loss(nn::l2_normalize(in[0]), labels, CircleLossConfig{});
                         },
                         {random_tensor({3, 4}, seed)});
                   }});
  return cases;
}

}  // namespace ynet::testing
