#pragma once
// Post-training analysis: phenotype definitions with automatic labels,
// population prevalence and the thresholded phenotype relatedness graph.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "phenoctm/learning.hpp"

namespace phenoctm {

struct RankedToken {
  std::string token;
  int index = 0;
  double probability = 0.0;
};

struct PhenotypeDefinition {
  int phenotype_id = 0;
  std::vector<std::vector<RankedToken>> per_type_top_tokens;  // model type order
  std::string label;
  std::string label_type;
};

// Token indices of one beta row sorted by probability, ties to the lower index.
inline std::vector<int> rank_tokens(const Eigen::Ref<const Vector>& row) {
  std::vector<int> order(static_cast<std::size_t>(row.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row[a] > row[b]; });
  return order;
}

inline std::vector<PhenotypeDefinition> extract_phenotypes(const TrainedModel& model, int top_n,
                                                           const std::string& label_type) {
  if (top_n < 1) throw InvalidArgument("top_n must be >= 1");
  const auto label_m = model.type_index(label_type);
  if (!label_m) throw InvalidArgument("unknown label type '" + label_type + "'");
  const auto& params = model.params;
  std::vector<PhenotypeDefinition> out;
  out.reserve(static_cast<std::size_t>(params.num_phenotypes()));
  for (int k = 0; k < params.num_phenotypes(); ++k) {
    PhenotypeDefinition def;
    def.phenotype_id = k;
    def.label_type = label_type;
    for (int m = 0; m < params.num_types(); ++m) {
      const Vector row = params.log_beta(m).row(k).transpose().array().exp();
      const auto order = rank_tokens(row);
      const auto& vocab = model.vocabularies[static_cast<std::size_t>(m)];
      std::vector<RankedToken> top;
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(top_n), order.size());
      for (std::size_t i = 0; i < n; ++i) top.push_back({vocab.token(order[i]), order[i], row[order[i]]});
      if (m == *label_m) def.label = vocab.token(order.front());
      def.per_type_top_tokens.push_back(std::move(top));
    }
    out.push_back(std::move(def));
  }
  return out;
}

inline json phenotypes_to_json(const std::vector<PhenotypeDefinition>& defs, const TrainedModel& model) {
  json arr = json::array();
  for (const auto& d : defs) {
    json j = json::object();
    j["phenotype_id"] = d.phenotype_id;
    j["label"] = d.label;
    j["label_type"] = d.label_type;
    json top = json::object();
    for (std::size_t m = 0; m < d.per_type_top_tokens.size(); ++m) {
      json list = json::array();
      for (const auto& t : d.per_type_top_tokens[m]) list.push_back({{"token", t.token}, {"probability", t.probability}});
      top[model.vocabularies[m].type_name()] = std::move(list);
    }
    j["top_tokens"] = std::move(top);
    arr.push_back(std::move(j));
  }
  return arr;
}

struct CorrelationEdge {
  int i = 0;
  int j = 0;
  double rho = 0.0;
  friend bool operator==(const CorrelationEdge&, const CorrelationEdge&) = default;
};

struct RelatednessGraph {
  Matrix correlation;
  std::vector<CorrelationEdge> edges;  // i < j, |rho| > threshold
  double threshold = 0.5;
};

// D^-1/2 S D^-1/2 with D = diag(S); the diagonal is set to exactly 1.
inline Matrix correlation_matrix(const Matrix& cov) {
  if (cov.rows() != cov.cols()) throw InvalidArgument("correlation_matrix: matrix must be square");
  const Vector d = cov.diagonal();
  if ((d.array() <= 0.0).any()) throw NumericalError("correlation_matrix: non-positive variance");
  const Vector inv_sd = d.array().rsqrt();
  Matrix c = symmetrize(inv_sd.asDiagonal() * symmetrize(cov) * inv_sd.asDiagonal());
  c.diagonal().setOnes();
  return c.cwiseMax(-1.0).cwiseMin(1.0);
}

inline std::vector<CorrelationEdge> threshold_edges(const Matrix& correlation, double threshold) {
  std::vector<CorrelationEdge> edges;
  for (Eigen::Index i = 0; i < correlation.rows(); ++i)
    for (Eigen::Index j = i + 1; j < correlation.cols(); ++j)
      if (std::abs(correlation(i, j)) > threshold)
        edges.push_back({static_cast<int>(i), static_cast<int>(j), correlation(i, j)});
  return edges;
}

inline RelatednessGraph correlation_graph(const Matrix& sigma0, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("correlation threshold must lie in [0, 1]");
  if (!is_positive_definite(symmetrize(sigma0)))
    throw NumericalError("correlation_graph: Sigma0 is not positive definite");
  RelatednessGraph g;
  g.threshold = threshold;
  g.correlation = correlation_matrix(sigma0);
  g.edges = threshold_edges(g.correlation, threshold);
  return g;
}

inline RelatednessGraph correlation_graph(const TrainedModel& model, double threshold) {
  return correlation_graph(model.params.sigma0(), threshold);
}

// Alternate mode: Pearson correlation of softmax(nu_hat_d) across records.
inline RelatednessGraph empirical_correlation_graph(const TrainedModel& model, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("correlation threshold must lie in [0, 1]");
  if (model.doc_posteriors.size() < 2) throw InvalidArgument("empirical correlation needs at least two records");
  const int k = model.num_phenotypes();
  const auto n = static_cast<Eigen::Index>(model.doc_posteriors.size());
  Matrix x(n, k);
  for (Eigen::Index d = 0; d < n; ++d) x.row(d) = model.doc_posteriors[static_cast<std::size_t>(d)].proportions.transpose();
  const Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  // Phenotypes with constant proportions get unit variance (zero correlation).
  for (int i = 0; i < k; ++i)
    if (cov(i, i) <= 0.0) cov(i, i) = 1.0;
  RelatednessGraph g;
  g.threshold = threshold;
  g.correlation = correlation_matrix(cov);
  g.edges = threshold_edges(g.correlation, threshold);
  return g;
}

inline json graph_to_json(const RelatednessGraph& g) {
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back({{"i", e.i}, {"j", e.j}, {"rho", e.rho}});
  return {{"threshold", g.threshold}, {"edges", std::move(edges)}};
}

inline std::string edges_to_csv(const std::vector<CorrelationEdge>& edges) {
  std::string out = "i,j,rho\n";
  char buf[64];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof buf, "%.17g", e.rho);
    out += std::to_string(e.i) + "," + std::to_string(e.j) + "," + buf + "\n";
  }
  return out;
}

// Fraction of records whose proportion for phenotype k is >= present_threshold.
inline Vector prevalence(const TrainedModel& model, double present_threshold = 0.05) {
  if (!(present_threshold > 0.0 && present_threshold <= 1.0))
    throw InvalidArgument("present_threshold must lie in (0, 1]");
  if (model.doc_posteriors.empty()) throw InvalidArgument("prevalence: model has no record posteriors");
  const int k = model.num_phenotypes();
  Vector counts = Vector::Zero(k);
  for (const auto& p : model.doc_posteriors) {
    if (p.proportions.size() != k) throw InvalidArgument("prevalence: posterior dimension mismatch");
    counts += (p.proportions.array() >= present_threshold).cast<double>().matrix();
  }
  return counts / static_cast<double>(model.doc_posteriors.size());
}

struct EdgeSplit {
  std::vector<CorrelationEdge> common;
  std::vector<CorrelationEdge> rare;
};

// Common iff both endpoints have prevalence strictly above `cutoff`.
inline EdgeSplit split_by_prevalence(const RelatednessGraph& graph, const Vector& prev, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw InvalidArgument("prevalence cutoff must lie in (0, 1)");
  EdgeSplit out;
  for (const auto& e : graph.edges) {
    if (e.i >= prev.size() || e.j >= prev.size()) throw InvalidArgument("split_by_prevalence: edge index out of range");
    (prev[e.i] > cutoff && prev[e.j] > cutoff ? out.common : out.rare).push_back(e);
  }
  return out;
}

}  // namespace phenoctm
