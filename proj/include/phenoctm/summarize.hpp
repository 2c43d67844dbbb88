#pragma once
// Record-level summarization with a frozen model: per-time-bin inference,
// top-N phenotype selection, salience trajectories, sankey export and the
// coverage statistic (how many phenotypes explain a given share of a record).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "phenoctm/learning.hpp"
#include "phenoctm/variational.hpp"

namespace phenoctm {

struct SummaryTrajectory {
  std::string record_id;
  std::vector<std::string> bins;
  std::vector<int> selected;                 // top-N phenotypes, most salient first
  std::vector<std::vector<double>> salience;  // [bin][selected index]
  std::vector<double> residual;              // [bin] 1 - sum of selected salience
  std::vector<Vector> proportions;           // [bin] full posterior proportions
  std::vector<std::string> labels;           // [selected index], optional
};

inline std::string bin_label(const RecordBags& segment, std::size_t index) {
  return segment.time_bin ? *segment.time_bin : "bin" + std::to_string(index);
}

// Phenotype indices sorted by descending value, ties to the lower index.
inline std::vector<int> rank_phenotypes(const Vector& proportions) {
  std::vector<int> order(static_cast<std::size_t>(proportions.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return proportions[a] > proportions[b]; });
  return order;
}

// Top-N set chosen in the final bin, salience tracked through every bin.
inline SummaryTrajectory trajectory_from_proportions(std::string record_id, std::vector<std::string> bins,
                                                     std::vector<Vector> proportions, int top_n) {
  if (proportions.empty()) throw InvalidArgument("summarize: no bins");
  if (bins.size() != proportions.size()) throw InvalidArgument("summarize: one label per bin required");
  if (top_n < 1) throw InvalidArgument("summarize: top_n must be >= 1");
  SummaryTrajectory t;
  t.record_id = std::move(record_id);
  t.bins = std::move(bins);
  t.proportions = std::move(proportions);
  const auto order = rank_phenotypes(t.proportions.back());
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(top_n), order.size());
  t.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  for (const auto& p : t.proportions) {
    if (p.size() != t.proportions.back().size()) throw InvalidArgument("summarize: bins disagree on K");
    std::vector<double> row;
    double covered = 0.0;
    for (int k : t.selected) {
      row.push_back(p[k]);
      covered += p[k];
    }
    t.salience.push_back(std::move(row));
    t.residual.push_back(std::max(0.0, 1.0 - covered));
  }
  return t;
}

// Infers every segment independently against the frozen parameters.
inline SummaryTrajectory summarize_record(const std::vector<RecordBags>& segments, const ModelParams& params, int top_n,
                                          const InferenceConfig& cfg = {}) {
  if (segments.empty()) throw InvalidArgument("summarize_record: no segments");
  if (top_n < 1) throw InvalidArgument("summarize_record: top_n must be >= 1");
  for (const auto& s : segments)
    if (s.record_id != segments.front().record_id)
      throw InvalidArgument("summarize_record: segments belong to different records ('" + segments.front().record_id +
                            "', '" + s.record_id + "')");
  std::vector<std::string> bins;
  std::vector<Vector> props;
  for (std::size_t b = 0; b < segments.size(); ++b) {
    bins.push_back(bin_label(segments[b], b));
    props.push_back(infer_document(segments[b], params, cfg).proportions);
  }
  return trajectory_from_proportions(segments.front().record_id, std::move(bins), std::move(props), top_n);
}

inline SummaryTrajectory summarize_record(const std::vector<RecordBags>& segments, const TrainedModel& model,
                                          int top_n, const std::vector<Vocabulary>& segment_vocabs) {
  check_compatible(model, segment_vocabs);
  return summarize_record(segments, model.params, top_n, model.config.inference());
}

// Smallest number of phenotypes whose largest proportions reach `mass`.
// Running sums are compared with a 1e-12 allowance so that, e.g., ten
// proportions of 0.1 reach 0.9 after nine terms.
inline int coverage_count(const Vector& proportions, double mass) {
  if (!(mass > 0.0 && mass <= 1.0)) throw InvalidArgument("coverage mass must lie in (0, 1]");
  if (proportions.size() == 0) throw InvalidArgument("coverage_count: empty proportions");
  if (std::abs(proportions.sum() - 1.0) > 1e-9 || (proportions.array() < 0.0).any())
    throw InvalidArgument("coverage_count: proportions must lie on the simplex");
  const auto order = rank_phenotypes(proportions);
  double acc = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    acc += proportions[order[i]];
    // at full mass every nonzero entry is needed, however small
    const bool rest_zero = i + 1 == order.size() || proportions[order[i + 1]] == 0.0;
    if (acc >= mass - 1e-12 && (mass < 1.0 || rest_zero)) return static_cast<int>(i + 1);
  }
  return static_cast<int>(order.size());
}

struct CountBucket {
  int lo = 1;
  std::optional<int> hi;  // inclusive; open-ended when absent

  bool contains(int c) const { return c >= lo && (!hi || c <= *hi); }
  std::string name() const { return std::to_string(lo) + (hi ? "-" + std::to_string(*hi) : "+"); }
};

inline std::vector<CountBucket> default_coverage_buckets() { return {{1, 5}, {6, 20}, {21, std::nullopt}}; }

struct CoverageHistogram {
  std::vector<CountBucket> buckets;
  std::vector<double> fractions;  // sums to 1
  std::vector<int> counts;        // per-record coverage counts
  double mass = 0.9;
};

inline void validate_buckets(const std::vector<CountBucket>& buckets) {
  if (buckets.empty()) throw InvalidArgument("coverage buckets must not be empty");
  for (std::size_t a = 0; a < buckets.size(); ++a) {
    const auto& x = buckets[a];
    if (x.lo < 1 || (x.hi && *x.hi < x.lo)) throw InvalidArgument("invalid coverage bucket " + x.name());
    for (std::size_t b = a + 1; b < buckets.size(); ++b) {
      const auto& y = buckets[b];
      const bool disjoint = (x.hi && *x.hi < y.lo) || (y.hi && *y.hi < x.lo);
      if (!disjoint) throw InvalidArgument("overlapping coverage buckets " + x.name() + " and " + y.name());
    }
  }
}

inline CoverageHistogram coverage_histogram(const std::vector<Vector>& proportions, double mass,
                                            const std::vector<CountBucket>& buckets = default_coverage_buckets()) {
  validate_buckets(buckets);
  if (proportions.empty()) throw InvalidArgument("coverage_histogram: no records");
  CoverageHistogram h;
  h.buckets = buckets;
  h.mass = mass;
  h.fractions.assign(buckets.size(), 0.0);
  for (const auto& p : proportions) {
    const int c = coverage_count(p, mass);
    h.counts.push_back(c);
    auto it = std::find_if(buckets.begin(), buckets.end(), [c](const CountBucket& b) { return b.contains(c); });
    if (it == buckets.end()) throw InvalidArgument("coverage count " + std::to_string(c) + " falls outside every bucket");
    h.fractions[static_cast<std::size_t>(it - buckets.begin())] += 1.0;
  }
  for (double& f : h.fractions) f /= static_cast<double>(proportions.size());
  return h;
}

inline CoverageHistogram coverage_histogram(const TrainedModel& model, double mass,
                                            const std::vector<CountBucket>& buckets = default_coverage_buckets()) {
  if (model.doc_posteriors.empty()) throw InvalidArgument("coverage_histogram: model has no record posteriors");
  std::vector<Vector> props;
  props.reserve(model.doc_posteriors.size());
  for (const auto& p : model.doc_posteriors) props.push_back(p.proportions);
  return coverage_histogram(props, mass, buckets);
}

inline std::string coverage_to_csv(const CoverageHistogram& h) {
  std::string out = "bucket,lo,hi,fraction\n";
  char buf[64];
  for (std::size_t i = 0; i < h.buckets.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", h.fractions[i]);
    out += h.buckets[i].name() + "," + std::to_string(h.buckets[i].lo) + "," +
           (h.buckets[i].hi ? std::to_string(*h.buckets[i].hi) : std::string()) + "," + buf + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sankey export
//
// {"record_id": str, "bins": [str],
//  "nodes": [{"phenotype": int, "bin": str, "value": num, "label"?: str}],
//  "links": [{"phenotype": int, "from_bin": str, "to_bin": str, "value": num}],
//  "residual"?: [num]}
// One node per (selected phenotype, bin), emitted even when its value is 0.
// A link joins a phenotype's nodes in adjacent bins and carries the salience
// of its source bin.

inline json sankey_to_json(const SummaryTrajectory& t) {
  json nodes = json::array();
  json links = json::array();
  for (std::size_t s = 0; s < t.selected.size(); ++s) {
    for (std::size_t b = 0; b < t.bins.size(); ++b) {
      json node = {{"phenotype", t.selected[s]}, {"bin", t.bins[b]}, {"value", t.salience[b][s]}};
      if (s < t.labels.size()) node["label"] = t.labels[s];
      nodes.push_back(std::move(node));
      if (b + 1 < t.bins.size())
        links.push_back({{"phenotype", t.selected[s]},
                         {"from_bin", t.bins[b]},
                         {"to_bin", t.bins[b + 1]},
                         {"value", t.salience[b][s]}});
    }
  }
  return {{"record_id", t.record_id}, {"bins", t.bins}, {"nodes", std::move(nodes)},
          {"links", std::move(links)}, {"residual", t.residual}};
}

// Structural check of a sankey document. Returns human-readable problems;
// an empty list means the document is valid.
inline std::vector<std::string> validate_sankey(const json& j) {
  std::vector<std::string> errors;
  auto fail = [&errors](std::string msg) { errors.push_back(std::move(msg)); };
  if (!j.is_object()) return {"document must be an object"};
  if (!j.contains("record_id") || !j["record_id"].is_string()) fail("record_id must be a string");
  std::vector<std::string> bins;
  if (!j.contains("bins") || !j["bins"].is_array() || j["bins"].empty()) {
    fail("bins must be a non-empty array");
  } else {
    for (const auto& b : j["bins"]) {
      if (!b.is_string()) fail("bins entries must be strings");
      else bins.push_back(b.get<std::string>());
    }
  }
  auto known_bin = [&bins](const json& v) {
    return v.is_string() && std::find(bins.begin(), bins.end(), v.get<std::string>()) != bins.end();
  };
  auto unit_value = [](const json& v) {
    return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0;
  };
  if (!j.contains("nodes") || !j["nodes"].is_array()) {
    fail("nodes must be an array");
  } else {
    for (const auto& n : j["nodes"]) {
      if (!n.is_object()) { fail("node must be an object"); continue; }
      if (!n.contains("phenotype") || !n["phenotype"].is_number_integer() || n["phenotype"].get<int>() < 0)
        fail("node.phenotype must be a non-negative integer");
      if (!n.contains("bin") || !known_bin(n["bin"])) fail("node.bin must name one of bins");
      if (!n.contains("value") || !unit_value(n["value"])) fail("node.value must be a number in [0, 1]");
      if (n.contains("label") && !n["label"].is_string()) fail("node.label must be a string");
      for (const auto& [key, _] : n.items())
        if (key != "phenotype" && key != "bin" && key != "value" && key != "label") fail("unexpected node field '" + key + "'");
    }
  }
  if (!j.contains("links") || !j["links"].is_array()) {
    fail("links must be an array");
  } else {
    for (const auto& l : j["links"]) {
      if (!l.is_object()) { fail("link must be an object"); continue; }
      if (!l.contains("phenotype") || !l["phenotype"].is_number_integer() || l["phenotype"].get<int>() < 0)
        fail("link.phenotype must be a non-negative integer");
      if (!l.contains("from_bin") || !known_bin(l["from_bin"])) fail("link.from_bin must name one of bins");
      if (!l.contains("to_bin") || !known_bin(l["to_bin"])) fail("link.to_bin must name one of bins");
      if (!l.contains("value") || !unit_value(l["value"])) fail("link.value must be a number in [0, 1]");
      for (const auto& [key, _] : l.items())
        if (key != "phenotype" && key != "from_bin" && key != "to_bin" && key != "value")
          fail("unexpected link field '" + key + "'");
    }
  }
  if (j.contains("residual")) {
    if (!j["residual"].is_array() || j["residual"].size() != bins.size()) fail("residual must have one entry per bin");
    else
      for (const auto& r : j["residual"])
        if (!unit_value(r)) fail("residual entries must lie in [0, 1]");
  }
  for (const auto& [key, _] : j.items())
    if (key != "record_id" && key != "bins" && key != "nodes" && key != "links" && key != "residual")
      fail("unexpected top-level field '" + key + "'");
  return errors;
}

inline void export_sankey(const SummaryTrajectory& t, const std::filesystem::path& path) {
  write_text_file(path, sankey_to_json(t).dump(2) + "\n");
}

inline std::string trajectory_to_csv(const SummaryTrajectory& t) {
  std::string out = "bin,phenotype,salience\n";
  char buf[64];
  for (std::size_t b = 0; b < t.bins.size(); ++b)
    for (std::size_t s = 0; s < t.selected.size(); ++s) {
      std::snprintf(buf, sizeof buf, "%.17g", t.salience[b][s]);
      out += t.bins[b] + "," + std::to_string(t.selected[s]) + "," + buf + "\n";
    }
  return out;
}

}  // namespace phenoctm
