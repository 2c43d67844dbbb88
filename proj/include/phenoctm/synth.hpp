#pragma once
// Synthetic ground truth: a sampler for the generative process
//
//   nu_d ~ N(mu0, Sigma0)
//   for each type m, each of N_m tokens:  z ~ Mult(softmax(nu_d)),  x ~ Mult(beta_{z,m})
//
// plus recovery metrics that align learned phenotypes to planted ones by
// optimal assignment on total-variation cost.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "phenoctm/corpus.hpp"
#include "phenoctm/learning.hpp"
#include "phenoctm/model.hpp"
#include "phenoctm/phenotype.hpp"
#include "phenoctm/rng.hpp"

namespace phenoctm {

struct PlantedModel {
  ModelParams params;
  std::vector<Vector> per_record_nu;
  // [record][type][token occurrence] -> phenotype; empty unless requested.
  std::vector<std::vector<std::vector<int>>> per_token_assignments;
  std::uint64_t seed = 0;
};

// Token names "<type>_<index>".
inline std::vector<Vocabulary> synthetic_vocabularies(const std::vector<std::string>& type_names,
                                                      const std::vector<int>& sizes) {
  if (type_names.size() != sizes.size()) throw InvalidArgument("synthetic_vocabularies: names / sizes mismatch");
  std::vector<Vocabulary> out;
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    std::vector<std::string> tokens;
    for (int v = 0; v < sizes[m]; ++v) tokens.push_back(type_names[m] + "_" + std::to_string(v));
    out.emplace_back(type_names[m], std::move(tokens));
  }
  return out;
}

// Draws one record's bags from fixed phenotype proportions.
inline RecordBags sample_record_bags(const ModelParams& truth, const Vector& proportions,
                                     const std::vector<int>& lengths, Rng& rng,
                                     std::vector<std::vector<int>>* assignments = nullptr) {
  const int num_types = truth.num_types();
  if (static_cast<int>(lengths.size()) != num_types) throw InvalidArgument("need one length per data type");
  RecordBags r;
  r.bags.resize(static_cast<std::size_t>(num_types));
  if (assignments) assignments->assign(static_cast<std::size_t>(num_types), {});
  const std::span<const double> pi(proportions.data(), static_cast<std::size_t>(proportions.size()));
  for (int m = 0; m < num_types; ++m) {
    const Matrix beta = truth.beta(m);
    // Row-major copy so each row is a contiguous span.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = beta;
    std::map<int, std::int64_t> counts;
    for (int n = 0; n < lengths[static_cast<std::size_t>(m)]; ++n) {
      const auto z = static_cast<Eigen::Index>(rng.categorical(pi));
      const std::span<const double> row(rows.row(z).data(), static_cast<std::size_t>(rows.cols()));
      counts[static_cast<int>(rng.categorical(row))] += 1;
      if (assignments) (*assignments)[static_cast<std::size_t>(m)].push_back(static_cast<int>(z));
    }
    r.bags[static_cast<std::size_t>(m)] = make_bag(counts);
  }
  return r;
}

// Record d uses its own stream seeded with derive_seed(seed, d).
inline std::pair<Corpus, PlantedModel> sample_corpus(const ModelParams& truth, const std::vector<Vocabulary>& vocabs,
                                                     int num_records, const std::vector<int>& lengths,
                                                     std::uint64_t seed, bool keep_assignments = false) {
  if (num_records < 1) throw InvalidArgument("sample_corpus: D must be >= 1");
  if (static_cast<int>(vocabs.size()) != truth.num_types()) throw InvalidArgument("sample_corpus: vocabulary count mismatch");
  for (int m = 0; m < truth.num_types(); ++m)
    if (vocabs[static_cast<std::size_t>(m)].size() != truth.vocab_size(m))
      throw InvalidArgument("sample_corpus: vocabulary size mismatch for type " + std::to_string(m));
  for (int n : lengths)
    if (n < 0) throw InvalidArgument("sample_corpus: lengths must be >= 0");

  const Matrix chol = Eigen::LLT<Matrix>(truth.sigma0()).matrixL();
  const int k = truth.num_phenotypes();
  Corpus corpus;
  corpus.vocabularies = vocabs;
  PlantedModel planted;
  planted.params = truth;
  planted.seed = seed;
  for (int d = 0; d < num_records; ++d) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(d)));
    Vector xi(k);
    for (int i = 0; i < k; ++i) xi[i] = rng.normal();
    Vector nu = truth.mu0() + chol * xi;
    std::vector<std::vector<int>> z;
    RecordBags r = sample_record_bags(truth, softmax(nu), lengths, rng, keep_assignments ? &z : nullptr);
    r.record_id = "syn" + std::to_string(d);
    corpus.records.push_back(std::move(r));
    planted.per_record_nu.push_back(std::move(nu));
    if (keep_assignments) planted.per_token_assignments.push_back(std::move(z));
  }
  return {std::move(corpus), std::move(planted)};
}

// ---------------------------------------------------------------------------
// Scenario presets

struct CorrelatedPair {
  int i = 0;
  int j = 0;
  double rho = 0.0;
};

struct ScenarioSpec {
  std::string name;
  int K = 5;
  std::vector<std::string> type_names;
  std::vector<int> vocab_sizes;
  int num_records = 1000;
  std::vector<int> tokens_per_type;
  double concentration = 0.9;  // beta mass on a phenotype's own token block
  double block_overlap = 0.0;  // fraction of a block shared with the next phenotype
  double mean = 0.0;           // mu0 = mean * 1
  double variance = 1.0;       // Sigma0 diagonal
  std::vector<CorrelatedPair> correlated_pairs;
  std::uint64_t seed = 1;      // truth construction and sampling

  void validate() const {
    if (K < 1) throw InvalidArgument("scenario: K must be >= 1");
    if (type_names.empty() || type_names.size() != vocab_sizes.size() || type_names.size() != tokens_per_type.size())
      throw InvalidArgument("scenario: types, vocab_sizes and tokens_per_type must have equal non-zero length");
    for (int v : vocab_sizes)
      if (v < K) throw InvalidArgument("scenario: every vocabulary needs at least K tokens");
    if (num_records < 1) throw InvalidArgument("scenario: num_records must be >= 1");
    if (!(concentration >= 0.0 && concentration <= 1.0)) throw InvalidArgument("scenario: concentration must lie in [0, 1]");
    if (!(block_overlap >= 0.0 && block_overlap < 1.0)) throw InvalidArgument("scenario: block_overlap must lie in [0, 1)");
    if (!(variance > 0.0)) throw InvalidArgument("scenario: variance must be > 0");
    for (const auto& p : correlated_pairs)
      if (p.i < 0 || p.j < 0 || p.i >= K || p.j >= K || p.i == p.j || !(std::abs(p.rho) < 1.0))
        throw InvalidArgument("scenario: invalid correlated pair");
  }
};

inline json scenario_to_json(const ScenarioSpec& s) {
  json types = json::array();
  for (std::size_t m = 0; m < s.type_names.size(); ++m)
    types.push_back({{"name", s.type_names[m]}, {"vocab_size", s.vocab_sizes[m]}, {"tokens", s.tokens_per_type[m]}});
  json pairs = json::array();
  for (const auto& p : s.correlated_pairs) pairs.push_back({{"i", p.i}, {"j", p.j}, {"rho", p.rho}});
  return {{"name", s.name},         {"K", s.K},
          {"types", types},         {"num_records", s.num_records},
          {"concentration", s.concentration}, {"block_overlap", s.block_overlap},
          {"mean", s.mean},         {"variance", s.variance},
          {"correlated_pairs", pairs}, {"seed", s.seed}};
}

inline ScenarioSpec scenario_from_json(const json& j) {
  try {
    ScenarioSpec s;
    s.name = j.value("name", std::string("custom"));
    s.K = j.at("K").get<int>();
    for (const auto& t : j.at("types")) {
      s.type_names.push_back(t.at("name").get<std::string>());
      s.vocab_sizes.push_back(t.at("vocab_size").get<int>());
      s.tokens_per_type.push_back(t.at("tokens").get<int>());
    }
    s.num_records = j.at("num_records").get<int>();
    s.concentration = j.value("concentration", 0.9);
    s.block_overlap = j.value("block_overlap", 0.0);
    s.mean = j.value("mean", 0.0);
    s.variance = j.value("variance", 1.0);
    if (j.contains("correlated_pairs"))
      for (const auto& p : j.at("correlated_pairs"))
        s.correlated_pairs.push_back({p.at("i").get<int>(), p.at("j").get<int>(), p.at("rho").get<double>()});
    s.seed = j.value("seed", std::uint64_t{1});
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario file: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("scenario file: ") + e.what());
  }
}

inline std::vector<std::string> preset_names() { return {"separable", "correlated-blocks", "overlapping"}; }

inline ScenarioSpec preset(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  if (name == "separable") {
    s.K = 5;
    s.type_names = {"notes", "labs", "meds"};
    s.vocab_sizes = {40, 40, 40};
    s.tokens_per_type = {80, 80, 80};
    s.num_records = 1000;
    s.concentration = 0.9;
    s.seed = 101;
  } else if (name == "correlated-blocks") {
    s.K = 6;
    s.type_names = {"notes", "labs", "meds"};
    s.vocab_sizes = {48, 48, 48};
    s.tokens_per_type = {80, 80, 80};
    s.num_records = 2000;
    s.concentration = 0.9;
    s.correlated_pairs = {{0, 1, 0.8}};
    s.seed = 202;
  } else if (name == "overlapping") {
    s.K = 5;
    s.type_names = {"notes", "dx"};
    s.vocab_sizes = {40, 40};
    s.tokens_per_type = {80, 80};
    s.num_records = 1000;
    s.concentration = 0.8;
    s.block_overlap = 0.5;
    s.seed = 303;
  } else {
    throw InvalidArgument("unknown preset '" + name + "'");
  }
  s.validate();
  return s;
}

// Phenotype k owns a block of width V/K starting at k*V/K, widened by
// block_overlap into the next block. Within the block, weights are jittered
// by a seeded factor in [0.5, 1.5); `concentration` of the row's mass sits on
// the block, the rest is spread uniformly over the vocabulary.
inline ModelParams build_truth(const ScenarioSpec& s) {
  s.validate();
  const int k = s.K;
  std::vector<Matrix> beta;
  for (std::size_t m = 0; m < s.vocab_sizes.size(); ++m) {
    const int v = s.vocab_sizes[m];
    const int width = v / k;
    const int span = width + static_cast<int>(std::lround(s.block_overlap * width));
    Matrix b(k, v);
    for (int row = 0; row < k; ++row) {
      Rng rng(derive_seed(s.seed, 0x5eed0000ULL + m * 4096 + static_cast<std::uint64_t>(row)));
      Vector block = Vector::Zero(v);
      for (int t = 0; t < span; ++t) block[(row * width + t) % v] = 0.5 + rng.uniform();
      block /= block.sum();
      b.row(row) = (s.concentration * block + Vector::Constant(v, (1.0 - s.concentration) / v)).transpose();
      b.row(row) /= b.row(row).sum();
    }
    beta.push_back(std::move(b));
  }
  Matrix sigma = Matrix::Identity(k, k) * s.variance;
  for (const auto& p : s.correlated_pairs) sigma(p.i, p.j) = sigma(p.j, p.i) = p.rho * s.variance;
  if (!is_positive_definite(sigma)) throw InvalidArgument("scenario: planted covariance is not positive definite");
  return ModelParams::from_beta(Vector::Constant(k, s.mean), sigma, beta);
}

inline std::pair<Corpus, PlantedModel> sample_scenario(const ScenarioSpec& s, bool keep_assignments = false) {
  const ModelParams truth = build_truth(s);
  return sample_corpus(truth, synthetic_vocabularies(s.type_names, s.vocab_sizes), s.num_records, s.tokens_per_type,
                       derive_seed(s.seed, 0xc0ffeeULL), keep_assignments);
}

// A planted model expressed as a model file: the true parameters with the
// drawn nu_d stored as record posteriors.
inline TrainedModel planted_to_model(const PlantedModel& planted, const Corpus& corpus) {
  TrainedModel m;
  m.params = planted.params;
  m.vocabularies = corpus.vocabularies;
  m.vocab_fingerprint = phenoctm::vocab_fingerprint(corpus.vocabularies);
  m.config.K = planted.params.num_phenotypes();
  m.config.seed = planted.seed;
  m.config.max_em_iters = 0;
  m.converged = true;
  for (std::size_t d = 0; d < corpus.records.size(); ++d) {
    m.records.push_back({corpus.records[d].record_id, corpus.records[d].time_bin});
    DocPosterior p;
    p.nu_hat = planted.per_record_nu[d];
    p.proportions = softmax(p.nu_hat);
    for (int t = 0; t < planted.params.num_types(); ++t) p.expected_counts.push_back(Vector::Zero(m.config.K));
    p.converged = true;
    m.doc_posteriors.push_back(std::move(p));
  }
  return m;
}

inline PlantedModel planted_from_model(const TrainedModel& m) {
  PlantedModel p;
  p.params = m.params;
  p.seed = m.config.seed;
  for (const auto& post : m.doc_posteriors) p.per_record_nu.push_back(post.nu_hat);
  return p;
}

// ---------------------------------------------------------------------------
// Matching and recovery

inline double total_variation(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
  return 0.5 * (p - q).cwiseAbs().sum();
}

// cost(i, j) = sum over types of TV(learned row i, truth row j).
inline Matrix tv_cost_matrix(const ModelParams& learned, const ModelParams& truth) {
  const int k = truth.num_phenotypes();
  if (learned.num_phenotypes() != k || learned.num_types() != truth.num_types())
    throw InvalidArgument("match_phenotypes: K / M mismatch");
  Matrix cost = Matrix::Zero(k, k);
  for (int m = 0; m < truth.num_types(); ++m) {
    if (learned.vocab_size(m) != truth.vocab_size(m)) throw InvalidArgument("match_phenotypes: vocabulary size mismatch");
    const Matrix a = learned.beta(m), b = truth.beta(m);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) cost(i, j) += total_variation(a.row(i).transpose(), b.row(j).transpose());
  }
  return cost;
}

namespace detail {

// Hungarian algorithm (shortest augmenting paths with potentials), O(n^3).
// Returns assignment[row] = column minimizing the total cost.
inline std::vector<int> hungarian(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), 0);
  for (int j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

inline double assignment_cost(const Matrix& cost, const std::vector<int>& a) {
  double c = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) c += cost(static_cast<Eigen::Index>(i), a[i]);
  return c;
}

}  // namespace detail

// Largest K for which ties are broken toward the lexicographically smallest
// optimal permutation (O(K^5) refinement); above it the Hungarian result is
// returned as is.
inline constexpr int kLexicographicTieBreakMaxK = 32;

// Minimum-cost bijection. Returns perm[i] = planted phenotype matched to
// learned phenotype i.
inline std::vector<int> optimal_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw InvalidArgument("optimal_assignment: cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  std::vector<int> best = detail::hungarian(cost);
  if (n > kLexicographicTieBreakMaxK) return best;
  const double optimum = detail::assignment_cost(cost, best);
  const double tol = 1e-12 * (1.0 + std::abs(optimum));

  // Fix rows in order to the smallest column that still admits an optimum.
  std::vector<int> fixed;
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  double fixed_cost = 0.0;
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      if (taken[static_cast<std::size_t>(col)]) continue;
      const int rest = n - row - 1;
      double total = fixed_cost + cost(row, col);
      std::vector<int> rest_cols, rest_assign;
      if (rest > 0) {
        for (int c = 0; c < n; ++c)
          if (!taken[static_cast<std::size_t>(c)] && c != col) rest_cols.push_back(c);
        Matrix sub(rest, rest);
        for (int r = 0; r < rest; ++r)
          for (int c = 0; c < rest; ++c) sub(r, c) = cost(row + 1 + r, rest_cols[static_cast<std::size_t>(c)]);
        rest_assign = detail::hungarian(sub);
        total += detail::assignment_cost(sub, rest_assign);
      }
      if (total <= optimum + tol) {
        fixed.push_back(col);
        taken[static_cast<std::size_t>(col)] = 1;
        fixed_cost += cost(row, col);
        break;
      }
    }
    if (static_cast<int>(fixed.size()) != row + 1) return best;  // roundoff; keep the Hungarian answer
  }
  return fixed;
}

inline std::vector<int> match_phenotypes(const ModelParams& learned, const ModelParams& truth) {
  return optimal_assignment(tv_cost_matrix(learned, truth));
}

struct CorrelationRecovery {
  int planted_i = 0;
  int planted_j = 0;
  double planted_rho = 0.0;
  int learned_i = 0;
  int learned_j = 0;
  double learned_rho = 0.0;
};

struct RecoveryReport {
  std::vector<int> matching;  // matching[learned] = planted
  Matrix per_phenotype_tv;    // K x M, rows indexed by planted phenotype
  double mean_tv = 0.0;
  std::vector<CorrelationRecovery> correlation_recovery;
  double max_learned_offdiag_abs = 0.0;  // largest |rho| among learned pairs
};

inline RecoveryReport recovery_report(const ModelParams& learned, const ModelParams& truth, double corr_threshold = 0.5) {
  const int k = truth.num_phenotypes();
  RecoveryReport rep;
  rep.matching = match_phenotypes(learned, truth);
  std::vector<int> inverse(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) inverse[static_cast<std::size_t>(rep.matching[static_cast<std::size_t>(i)])] = i;

  rep.per_phenotype_tv = Matrix::Zero(k, truth.num_types());
  for (int m = 0; m < truth.num_types(); ++m) {
    const Matrix a = learned.beta(m), b = truth.beta(m);
    for (int j = 0; j < k; ++j)
      rep.per_phenotype_tv(j, m) = total_variation(a.row(inverse[static_cast<std::size_t>(j)]).transpose(), b.row(j).transpose());
  }
  rep.mean_tv = rep.per_phenotype_tv.mean();

  const Matrix planted_corr = correlation_matrix(truth.sigma0());
  const Matrix learned_corr = correlation_matrix(learned.sigma0());
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      rep.max_learned_offdiag_abs = std::max(rep.max_learned_offdiag_abs, std::abs(learned_corr(i, j)));
      if (std::abs(planted_corr(i, j)) > corr_threshold) {
        const int li = inverse[static_cast<std::size_t>(i)], lj = inverse[static_cast<std::size_t>(j)];
        rep.correlation_recovery.push_back({i, j, planted_corr(i, j), li, lj, learned_corr(li, lj)});
      }
    }
  return rep;
}

inline RecoveryReport recovery_report(const TrainedModel& learned, const PlantedModel& planted, double corr_threshold = 0.5) {
  return recovery_report(learned.params, planted.params, corr_threshold);
}

inline json recovery_to_json(const RecoveryReport& r) {
  json tv = json::array();
  for (Eigen::Index i = 0; i < r.per_phenotype_tv.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(r.per_phenotype_tv.cols()));
    for (Eigen::Index m = 0; m < r.per_phenotype_tv.cols(); ++m) row[static_cast<std::size_t>(m)] = r.per_phenotype_tv(i, m);
    tv.push_back(row);
  }
  json corr = json::array();
  for (const auto& c : r.correlation_recovery)
    corr.push_back({{"planted_i", c.planted_i}, {"planted_j", c.planted_j}, {"planted_rho", c.planted_rho},
                    {"learned_i", c.learned_i}, {"learned_j", c.learned_j}, {"learned_rho", c.learned_rho}});
  return {{"matching", r.matching}, {"per_phenotype_tv", tv}, {"mean_tv", r.mean_tv},
          {"correlation_recovery", corr}, {"max_learned_offdiag_abs", r.max_learned_offdiag_abs}};
}

}  // namespace phenoctm
