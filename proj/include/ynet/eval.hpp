#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ynet/dataset.hpp"
#include "ynet/hashing.hpp"
#include "ynet/index.hpp"
#include "ynet/model.hpp"

namespace ynet {

/// AP over a ranked list: sum_k P(k) rel(k) / R with R = min(relevant_total, n).
/// Returns 0 when R = 0.
double average_precision(const std::vector<bool>& rel, int64_t relevant_total);

struct RankedQuery {
  std::vector<bool> rel;
  int64_t relevant_total = 0;
};

// Mean AP with every list truncated to its first n entries. Throws on no queries.
double mean_ap(const std::vector<RankedQuery>& queries, int n);

// Mean absolute stage difference. Throws on an empty list.
double stage_gap(double query_stage, std::span<const double> retrieved);

// What the evaluator needs to know about a gallery entry.
struct GalleryEntry {
  int label = 0;
  std::optional<double> stage;
};

struct EvalReport {
  int code_length = 0;
  std::vector<int> cutoffs;
  std::vector<std::vector<double>> ap;  // [cutoff][query]
  std::vector<double> map;              // per cutoff
  std::vector<double> stage_gap;        // per cutoff; NaN without stage data
};

/// Queries `index` with each code and scores the lists by label equality.
EvalReport evaluate_index(const HashIndex& index, const std::map<std::string, GalleryEntry>& gallery,
                          const std::vector<HashCode>& queries, const std::vector<GalleryEntry>& query_info,
                          const std::vector<int>& cutoffs);

// Eval-mode core node for every sample, stacked N x C x H x W.
Tensor compute_cores(const YNetParams& params, const std::vector<Sample>& samples, int batch_size = 32);

/// For each k: encode gallery and queries, index the gallery, evaluate.
std::vector<EvalReport> run_benchmark(const YNetParams& params, const std::vector<Sample>& gallery,
                                      const std::vector<Sample>& queries, const std::vector<int>& code_lengths,
                                      const std::vector<int>& cutoffs);
// Same, from precomputed cores.
std::vector<EvalReport> run_benchmark(const Tensor& gallery_cores, const std::vector<Sample>& gallery,
                                      const Tensor& query_cores, const std::vector<Sample>& queries,
                                      const std::vector<int>& code_lengths, const std::vector<int>& cutoffs);

// code_length,cutoff,map,stage_gap with six decimals; "nan" when no stages.
std::string benchmark_csv(const std::vector<EvalReport>& reports);

}  // namespace ynet
