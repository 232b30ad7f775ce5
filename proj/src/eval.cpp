#include "ynet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ynet/errors.hpp"

namespace ynet {

double average_precision(const std::vector<bool>& rel, int64_t relevant_total) {
  const int64_t n = static_cast<int64_t>(rel.size());
  const int64_t r = std::min(relevant_total, n);
  if (r <= 0) return 0.0;
  double sum = 0.0;
  int64_t hits = 0;
  for (int64_t k = 0; k < n; ++k) {
    if (!rel[static_cast<size_t>(k)]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(r);
}

double mean_ap(const std::vector<RankedQuery>& queries, int n) {
  if (queries.empty()) throw ConfigError("mean_ap: no queries");
  if (n < 1) throw ConfigError("mean_ap: cutoff must be >= 1");
  double total = 0.0;
  for (const RankedQuery& q : queries) {
    const size_t len = std::min(q.rel.size(), static_cast<size_t>(n));
    total += average_precision(std::vector<bool>(q.rel.begin(), q.rel.begin() + static_cast<std::ptrdiff_t>(len)),
                               q.relevant_total);
  }
  return total / static_cast<double>(queries.size());
}

double stage_gap(double query_stage, std::span<const double> retrieved) {
  if (retrieved.empty()) throw ConfigError("stage_gap: empty retrieval list");
  double total = 0.0;
  for (double s : retrieved) total += std::abs(query_stage - s);
  return total / static_cast<double>(retrieved.size());
}

EvalReport evaluate_index(const HashIndex& index, const std::map<std::string, GalleryEntry>& gallery,
                          const std::vector<HashCode>& queries, const std::vector<GalleryEntry>& query_info,
                          const std::vector<int>& cutoffs) {
  if (queries.empty()) throw ConfigError("evaluation needs at least one query");
  if (queries.size() != query_info.size()) throw ConfigError("evaluation needs labels for every query");
  if (cutoffs.empty()) throw ConfigError("evaluation needs at least one cutoff");
  std::map<int, int64_t> label_counts;
  for (const std::string& id : index.ids()) {
    auto it = gallery.find(id);
    if (it == gallery.end()) throw ConfigError("index entry " + id + " has no gallery metadata");
    ++label_counts[it->second.label];
  }
  const int deepest = *std::max_element(cutoffs.begin(), cutoffs.end());

  EvalReport report;
  report.code_length = index.k();
  report.cutoffs = cutoffs;
  report.ap.assign(cutoffs.size(), {});
  report.map.assign(cutoffs.size(), 0.0);
  report.stage_gap.assign(cutoffs.size(), 0.0);
  std::vector<int> staged(cutoffs.size(), 0);

  for (size_t q = 0; q < queries.size(); ++q) {
    const auto hits = index.query_topk(queries[q], deepest);
    const GalleryEntry& info = query_info[q];
    std::vector<bool> rel;
    std::vector<double> stages;
    bool all_staged = info.stage.has_value();
    for (const Hit& h : hits) {
      const GalleryEntry& g = gallery.at(h.id);
      rel.push_back(g.label == info.label);
      if (g.stage) stages.push_back(*g.stage);
      else all_staged = false;
    }
    const auto it = label_counts.find(info.label);
    const int64_t relevant = it == label_counts.end() ? 0 : it->second;
    for (size_t c = 0; c < cutoffs.size(); ++c) {
      const size_t len = std::min(rel.size(), static_cast<size_t>(cutoffs[c]));
      report.ap[c].push_back(
          average_precision(std::vector<bool>(rel.begin(), rel.begin() + static_cast<std::ptrdiff_t>(len)), relevant));
      if (all_staged && len > 0) {
        report.stage_gap[c] += stage_gap(*info.stage, std::span<const double>(stages.data(), len));
        ++staged[c];
      }
    }
  }
  for (size_t c = 0; c < cutoffs.size(); ++c) {
    double total = 0.0;
    for (double ap : report.ap[c]) total += ap;
    report.map[c] = total / static_cast<double>(queries.size());
    report.stage_gap[c] = staged[c] > 0 ? report.stage_gap[c] / staged[c] : std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

Tensor compute_cores(const YNetParams& params, const std::vector<Sample>& samples, int batch_size) {
  if (samples.empty()) throw ConfigError("no samples to encode");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const int64_t n = static_cast<int64_t>(samples.size());
  const Shape img_shape = samples.front().image.shape();
  Tensor out;
  int64_t per = 0;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t m = std::min<int64_t>(batch_size, n - start);
    Shape bs{m};
    bs.insert(bs.end(), img_shape.begin(), img_shape.end());
    Tensor batch(bs);
    const int64_t img_numel = samples.front().image.numel();
    for (int64_t i = 0; i < m; ++i) {
      const Sample& s = samples[static_cast<size_t>(start + i)];
      if (s.image.shape() != img_shape) throw ShapeError("sample " + s.id + " has a different image size");
      std::copy(s.image.ptr(), s.image.ptr() + img_numel, batch.ptr() + i * img_numel);
    }
    const BackboneOutput bb = forward_backbone(params, batch);
    if (out.empty()) {
      Shape cs = bb.core.shape();
      cs[0] = n;
      out = Tensor(cs);
      per = bb.core.numel() / m;
    }
    std::copy(bb.core.ptr(), bb.core.ptr() + bb.core.numel(), out.ptr() + start * per);
  }
  return out;
}

std::vector<EvalReport> run_benchmark(const Tensor& gallery_cores, const std::vector<Sample>& gallery,
                                      const Tensor& query_cores, const std::vector<Sample>& queries,
                                      const std::vector<int>& code_lengths, const std::vector<int>& cutoffs) {
  std::map<std::string, GalleryEntry> meta;
  std::vector<std::string> ids;
  for (const Sample& s : gallery) {
    meta[s.id] = {s.label, s.stage};
    ids.push_back(s.id);
  }
  std::vector<GalleryEntry> query_info;
  for (const Sample& s : queries) query_info.push_back({s.label, s.stage});

  std::vector<EvalReport> out;
  for (int k : code_lengths) {
    const HashConfig plan =
        plan_aggregation(k, gallery_cores.dim(1), gallery_cores.dim(2), gallery_cores.dim(3));
    const HashIndex index = HashIndex::build(encode_batch(gallery_cores, plan), ids);
    out.push_back(evaluate_index(index, meta, encode_batch(query_cores, plan), query_info, cutoffs));
  }
  return out;
}

std::vector<EvalReport> run_benchmark(const YNetParams& params, const std::vector<Sample>& gallery,
                                      const std::vector<Sample>& queries, const std::vector<int>& code_lengths,
                                      const std::vector<int>& cutoffs) {
  return run_benchmark(compute_cores(params, gallery), gallery, compute_cores(params, queries), queries,
                       code_lengths, cutoffs);
}

std::string benchmark_csv(const std::vector<EvalReport>& reports) {
  std::string out = "code_length,cutoff,map,stage_gap\n";
  char line[128];
  for (const EvalReport& r : reports) {
    for (size_t c = 0; c < r.cutoffs.size(); ++c) {
      if (std::isnan(r.stage_gap[c])) {
        std::snprintf(line, sizeof(line), "%d,%d,%.6f,nan\n", r.code_length, r.cutoffs[c], r.map[c]);
      } else {
        std::snprintf(line, sizeof(line), "%d,%d,%.6f,%.6f\n", r.code_length, r.cutoffs[c], r.map[c],
                      r.stage_gap[c]);
      }
      out += line;
    }
  }
  return out;
}

}  // namespace ynet
