#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "phenoctm/synth.hpp"

using namespace phenoctm;

namespace {

Matrix random_stochastic(Rng& rng, int rows, int cols) {
  Matrix b(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) b(r, c) = 0.01 + rng.uniform();
    b.row(r) /= b.row(r).sum();
  }
  return b;
}

ModelParams random_truth(Rng& rng, int k, const std::vector<int>& vocab) {
  std::vector<Matrix> beta;
  for (int v : vocab) beta.push_back(random_stochastic(rng, k, v));
  return ModelParams::from_beta(Vector::Zero(k), Matrix::Identity(k, k), beta);
}

ModelParams permute_rows(const ModelParams& p, const std::vector<int>& perm) {
  std::vector<Matrix> beta;
  for (int m = 0; m < p.num_types(); ++m) {
    const Matrix b = p.beta(m);
    Matrix out(b.rows(), b.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = b.row(perm[i]);
    beta.push_back(out);
  }
  const auto k = p.num_phenotypes();
  Matrix sigma(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) sigma(i, j) = p.sigma0()(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  Vector mu(k);
  for (int i = 0; i < k; ++i) mu[i] = p.mu0()[perm[static_cast<std::size_t>(i)]];
  return ModelParams::from_beta(mu, sigma, beta);
}

Vector empirical(const Bag& bag, int v) {
  Vector e = Vector::Zero(v);
  for (const auto& tc : bag) e[tc.token] += static_cast<double>(tc.count);
  return e / e.sum();
}

}  // namespace

TEST_CASE("sample_corpus: K=1 assigns everything to phenotype 0 and matches beta") {
  Rng rng(1);
  const auto truth = random_truth(rng, 1, {12, 7});
  const auto vocabs = synthetic_vocabularies({"a", "b"}, {12, 7});
  auto [corpus, planted] = sample_corpus(truth, vocabs, 1, {10000, 10000}, 5, true);
  for (const auto& type_z : planted.per_token_assignments[0])
    CHECK(std::all_of(type_z.begin(), type_z.end(), [](int z) { return z == 0; }));
  for (int m = 0; m < 2; ++m) {
    const Vector e = empirical(corpus.records[0].bags[static_cast<std::size_t>(m)], truth.vocab_size(m));
    CHECK(total_variation(e, truth.beta(m).row(0).transpose()) <= 0.05);
  }
}

TEST_CASE("sample_record_bags: token distribution converges to the proportion-weighted mixture") {
  Rng rng(2);
  const auto truth = random_truth(rng, 4, {20});
  const Vector pi = softmax(Vector{{1.0, -0.5, 0.3, 0.0}});
  const auto rec = sample_record_bags(truth, pi, {10000}, rng);
  const Vector mixture = (pi.transpose() * truth.beta(0)).transpose();
  CHECK(total_variation(empirical(rec.bags[0], 20), mixture) <= 0.05);
}

TEST_CASE("sample_corpus: empirical covariance of nu matches Sigma0 = I") {
  Rng rng(3);
  const int k = 4;
  const auto truth = random_truth(rng, k, {5});
  auto [corpus, planted] = sample_corpus(truth, synthetic_vocabularies({"a"}, {5}), 10000, {0}, 11);
  Vector mean = Vector::Zero(k);
  for (const auto& nu : planted.per_record_nu) mean += nu;
  mean /= 10000.0;
  Matrix cov = Matrix::Zero(k, k);
  for (const auto& nu : planted.per_record_nu) cov += (nu - mean) * (nu - mean).transpose();
  cov /= 9999.0;
  CHECK((cov - Matrix::Identity(k, k)).norm() <= 0.1);
  CHECK(mean.cwiseAbs().maxCoeff() <= 0.05);
}

TEST_CASE("sample_corpus: planted correlation is reproduced in the drawn nu") {
  const auto s = preset("correlated-blocks");
  auto spec = s;
  spec.num_records = 5000;
  spec.tokens_per_type = {0, 0, 0};
  auto [corpus, planted] = sample_scenario(spec);
  double sxy = 0, sxx = 0, syy = 0;
  for (const auto& nu : planted.per_record_nu) {
    sxy += nu[0] * nu[1];
    sxx += nu[0] * nu[0];
    syy += nu[1] * nu[1];
  }
  CHECK(sxy / std::sqrt(sxx * syy) == doctest::Approx(0.8).epsilon(0.05));
}

TEST_CASE("sample_corpus: zero lengths give a valid corpus of empty bags") {
  Rng rng(4);
  const auto truth = random_truth(rng, 3, {4, 6});
  auto [corpus, planted] = sample_corpus(truth, synthetic_vocabularies({"a", "b"}, {4, 6}), 5, {0, 0}, 1);
  CHECK_NOTHROW(corpus.validate());
  for (const auto& r : corpus.records)
    for (const auto& b : r.bags) CHECK(b.empty());
  for (const auto& nu : planted.per_record_nu) CHECK(std::abs(softmax(nu).sum() - 1.0) <= 1e-12);
}

TEST_CASE("sample_corpus: bitwise deterministic under a fixed seed") {
  const auto s = preset("overlapping");
  auto [c1, p1] = sample_scenario(s);
  auto [c2, p2] = sample_scenario(s);
  REQUIRE(c1.records.size() == c2.records.size());
  for (std::size_t d = 0; d < c1.records.size(); ++d) {
    CHECK(record_to_json(c1.records[d], c1.vocabularies).dump() == record_to_json(c2.records[d], c2.vocabularies).dump());
    CHECK(p1.per_record_nu[d] == p2.per_record_nu[d]);
  }
  auto other = s;
  other.seed += 1;
  auto [c3, p3] = sample_scenario(other);
  CHECK_FALSE(p3.per_record_nu[0] == p1.per_record_nu[0]);
}

TEST_CASE("sample_corpus: argument errors") {
  Rng rng(5);
  const auto truth = random_truth(rng, 2, {3});
  const auto vocabs = synthetic_vocabularies({"a"}, {3});
  CHECK_THROWS_AS(sample_corpus(truth, vocabs, 0, {5}, 1), InvalidArgument);
  CHECK_THROWS_AS(sample_corpus(truth, vocabs, 3, {-1}, 1), InvalidArgument);
  CHECK_THROWS_AS(sample_corpus(truth, vocabs, 3, {5, 5}, 1), InvalidArgument);
  CHECK_THROWS_AS(sample_corpus(truth, synthetic_vocabularies({"a"}, {4}), 3, {5}, 1), InvalidArgument);
}

TEST_CASE("match_phenotypes: identity and exact permutations") {
  Rng rng(6);
  for (int k : {2, 3, 5, 8, 12}) {
    const auto truth = random_truth(rng, k, {15, 9});
    std::vector<int> id(static_cast<std::size_t>(k));
    std::iota(id.begin(), id.end(), 0);
    CHECK(match_phenotypes(truth, truth) == id);
    std::vector<int> perm = id;
    for (int i = k - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(rng.uniform() * (i + 1))]);
    const auto learned = permute_rows(truth, perm);
    const auto got = match_phenotypes(learned, truth);
    CHECK(got == perm);
    const auto rep = recovery_report(learned, truth);
    // beta is stored as log beta, so permuted rows round-trip through exp/log
    CHECK(rep.mean_tv <= 1e-15);
  }
}

TEST_CASE("match_phenotypes: equals factorial brute force for K <= 6") {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = 1 + trial % 6;
    const auto truth = random_truth(rng, k, {8});
    const auto learned = random_truth(rng, k, {8});
    const Matrix cost = tv_cost_matrix(learned, truth);
    const auto [oracle_perm, oracle_cost] = oracle::brute_force_assignment(cost);
    const auto got = match_phenotypes(learned, truth);
    double got_cost = 0.0;
    for (int i = 0; i < k; ++i) got_cost += cost(i, got[static_cast<std::size_t>(i)]);
    CHECK(got_cost == doctest::Approx(oracle_cost).epsilon(1e-12));
    CHECK(got == oracle_perm);
  }
}

TEST_CASE("optimal_assignment: ties resolve to the lexicographically smallest optimum") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + trial % 5;
    Matrix cost(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) cost(i, j) = std::floor(3.0 * rng.uniform());
    CHECK(optimal_assignment(cost) == oracle::brute_force_assignment(cost).first);
  }
  CHECK(optimal_assignment(Matrix::Zero(4, 4)) == std::vector<int>{0, 1, 2, 3});
  CHECK_THROWS_AS(optimal_assignment(Matrix::Zero(2, 3)), InvalidArgument);
}

TEST_CASE("recovery_report: learned == planted reproduces correlations exactly") {
  const auto truth = build_truth(preset("correlated-blocks"));
  const auto rep = recovery_report(truth, truth, 0.5);
  CHECK(rep.mean_tv == 0.0);
  REQUIRE(rep.correlation_recovery.size() == 1);
  CHECK(rep.correlation_recovery[0].planted_i == 0);
  CHECK(rep.correlation_recovery[0].planted_j == 1);
  CHECK(rep.correlation_recovery[0].learned_rho == rep.correlation_recovery[0].planted_rho);
  CHECK(rep.correlation_recovery[0].planted_rho == doctest::Approx(0.8));
  CHECK(rep.max_learned_offdiag_abs == doctest::Approx(0.8));
  const json j = recovery_to_json(rep);
  CHECK(j["correlation_recovery"].size() == 1);
  CHECK(j["per_phenotype_tv"].size() == 6);
}

TEST_CASE("recovery_report: uniform learned beta against point-mass truth") {
  // Truth row k puts c + (1-c)/V on token k and (1-c)/V elsewhere; against a
  // uniform row the TV distance is c (1 - 1/V).
  const int k = 4, v = 20;
  const double c = 0.9;
  Matrix beta = Matrix::Constant(k, v, (1.0 - c) / v);
  for (int i = 0; i < k; ++i) beta(i, i) += c;
  const auto truth = ModelParams::from_beta(Vector::Zero(k), Matrix::Identity(k, k), {beta});
  const auto uniform = ModelParams::from_beta(Vector::Zero(k), Matrix::Identity(k, k), {Matrix::Constant(k, v, 1.0 / v)});
  const auto rep = recovery_report(uniform, truth);
  CHECK(rep.mean_tv == doctest::Approx(c * (1.0 - 1.0 / v)).epsilon(1e-12));
  for (Eigen::Index i = 0; i < k; ++i) CHECK(rep.per_phenotype_tv(i, 0) >= 0.0);
}

TEST_CASE("recovery_report: dimension mismatch") {
  Rng rng(9);
  CHECK_THROWS_AS(recovery_report(random_truth(rng, 3, {5}), random_truth(rng, 4, {5})), InvalidArgument);
  CHECK_THROWS_AS(recovery_report(random_truth(rng, 3, {5}), random_truth(rng, 3, {6})), InvalidArgument);
}

TEST_CASE("presets: named, valid, and JSON round-trippable") {
  CHECK(preset_names() == std::vector<std::string>{"separable", "correlated-blocks", "overlapping"});
  for (const auto& name : preset_names()) {
    const auto s = preset(name);
    const auto back = scenario_from_json(scenario_to_json(s));
    CHECK(scenario_to_json(back) == scenario_to_json(s));
    const auto truth = build_truth(s);
    CHECK(truth.num_phenotypes() == s.K);
    for (int m = 0; m < truth.num_types(); ++m)
      CHECK((truth.beta(m).rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  }
  const auto sep = preset("separable");
  CHECK(sep.K == 5);
  CHECK(sep.vocab_sizes == std::vector<int>{40, 40, 40});
  CHECK(sep.num_records == 1000);
  CHECK(sep.tokens_per_type == std::vector<int>{80, 80, 80});
  CHECK(build_truth(sep).sigma0() == Matrix::Identity(5, 5));
  const auto cb = preset("correlated-blocks");
  CHECK(cb.K == 6);
  CHECK(cb.num_records == 2000);
  CHECK_THROWS_AS(preset("nope"), InvalidArgument);
}

TEST_CASE("separable preset: phenotype token blocks are disjoint") {
  const auto truth = build_truth(preset("separable"));
  for (int m = 0; m < truth.num_types(); ++m) {
    const Matrix b = truth.beta(m);
    for (int k = 0; k < 5; ++k) {
      // 90% of the mass on tokens [8k, 8k+8)
      CHECK(b.row(k).segment(8 * k, 8).sum() == doctest::Approx(0.9 + 0.1 * 8.0 / 40.0));
    }
  }
}

TEST_CASE("scenario JSON: validation errors surface as parse errors") {
  json j = scenario_to_json(preset("separable"));
  j["K"] = 0;
  CHECK_THROWS_AS(scenario_from_json(j), ParseError);
  j = scenario_to_json(preset("separable"));
  j["correlated_pairs"] = json::array({{{"i", 0}, {"j", 0}, {"rho", 0.5}}});
  CHECK_THROWS_AS(scenario_from_json(j), ParseError);
  j = scenario_to_json(preset("separable"));
  j.erase("types");
  CHECK_THROWS_AS(scenario_from_json(j), ParseError);
  j = scenario_to_json(preset("separable"));
  j["correlated_pairs"] = json::array({{{"i", 0}, {"j", 1}, {"rho", 0.9}}, {{"i", 1}, {"j", 2}, {"rho", 0.9}},
                                       {{"i", 0}, {"j", 2}, {"rho", -0.9}}});
  CHECK_THROWS(build_truth(scenario_from_json(j)));
}

TEST_CASE("planted model survives the model-file format") {
  auto s = preset("separable");
  s.num_records = 20;
  auto [corpus, planted] = sample_scenario(s);
  const auto back = planted_from_model(model_from_json(model_to_json(planted_to_model(planted, corpus))));
  CHECK(back.params == planted.params);
  CHECK(back.per_record_nu == planted.per_record_nu);
}
