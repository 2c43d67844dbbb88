#include <cmath>

#include "doctest.h"
#include "phenoctm/phenotype.hpp"
#include "phenoctm/synth.hpp"

using namespace phenoctm;

namespace {

// Model with given beta per type, identity prior and no posteriors.
TrainedModel model_with(const std::vector<Vocabulary>& vocabs, const std::vector<Matrix>& beta,
                        const Matrix& sigma0 = Matrix()) {
  const auto k = beta.front().rows();
  TrainedModel m;
  m.vocabularies = vocabs;
  m.vocab_fingerprint = vocab_fingerprint(vocabs);
  m.params = ModelParams::from_beta(Vector::Zero(k), sigma0.size() ? sigma0 : Matrix::Identity(k, k), beta);
  m.config.K = static_cast<int>(k);
  return m;
}

void add_posterior(TrainedModel& m, const Vector& proportions) {
  DocPosterior p;
  p.proportions = proportions;
  p.nu_hat = proportions.array().log();
  m.records.push_back({"r" + std::to_string(m.records.size()), std::nullopt});
  m.doc_posteriors.push_back(std::move(p));
}

}  // namespace

TEST_CASE("extract_phenotypes: label is the most probable token of the label type") {
  const std::vector<Vocabulary> vocabs{Vocabulary("dx", {"hiv", "htn", "dm"}), Vocabulary("meds", {"a", "b"})};
  const auto model = model_with(vocabs, {Matrix{{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}}, Matrix{{0.4, 0.6}, {0.9, 0.1}}});
  const auto defs = extract_phenotypes(model, 2, "dx");
  REQUIRE(defs.size() == 2);
  CHECK(defs[0].label == "hiv");
  CHECK(defs[1].label == "dm");
  CHECK(defs[0].label_type == "dx");
  REQUIRE(defs[0].per_type_top_tokens.size() == 2);
  CHECK(defs[0].per_type_top_tokens[0][0].token == "hiv");
  CHECK(defs[0].per_type_top_tokens[0][0].probability == doctest::Approx(0.7));
  CHECK(defs[0].per_type_top_tokens[0][1].token == "htn");
  CHECK(defs[0].per_type_top_tokens[1][0].token == "b");
  CHECK(extract_phenotypes(model, 1, "meds")[1].label == "a");
}

TEST_CASE("extract_phenotypes: ties go to the lower token index, top_n clamps to V") {
  const std::vector<Vocabulary> vocabs{Vocabulary("dx", {"x", "y", "z"})};
  const auto model = model_with(vocabs, {Matrix{{0.25, 0.5, 0.25}, {0.4, 0.2, 0.4}}});
  const auto defs = extract_phenotypes(model, 10, "dx");
  REQUIRE(defs[0].per_type_top_tokens[0].size() == 3);
  CHECK(defs[0].per_type_top_tokens[0][1].token == "x");
  CHECK(defs[0].per_type_top_tokens[0][2].token == "z");
  CHECK(defs[1].label == "x");
  CHECK(defs[1].per_type_top_tokens[0][1].token == "z");
}

TEST_CASE("extract_phenotypes: argument errors") {
  const std::vector<Vocabulary> vocabs{Vocabulary("dx", {"x", "y"})};
  const auto model = model_with(vocabs, {Matrix{{0.5, 0.5}, {0.2, 0.8}}});
  CHECK_THROWS_AS(extract_phenotypes(model, 1, "labs"), InvalidArgument);
  CHECK_THROWS_AS(extract_phenotypes(model, 0, "dx"), InvalidArgument);
}

TEST_CASE("extract_phenotypes: probabilities sorted descending and label invariant to row rescaling") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int v = 2 + trial % 9;
    std::vector<std::string> toks;
    for (int i = 0; i < v; ++i) toks.push_back("t" + std::to_string(i));
    Matrix b(3, v);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < v; ++c) b(r, c) = 0.01 + rng.uniform();
    Matrix nb = b;
    for (int r = 0; r < 3; ++r) nb.row(r) /= nb.row(r).sum();
    Matrix nb2 = 7.5 * b;
    for (int r = 0; r < 3; ++r) nb2.row(r) /= nb2.row(r).sum();
    const std::vector<Vocabulary> vocabs{Vocabulary("dx", toks)};
    const auto defs = extract_phenotypes(model_with(vocabs, {nb}), v, "dx");
    const auto defs2 = extract_phenotypes(model_with(vocabs, {nb2}), v, "dx");
    for (int k = 0; k < 3; ++k) {
      const auto& top = defs[static_cast<std::size_t>(k)].per_type_top_tokens[0];
      for (std::size_t i = 1; i < top.size(); ++i) CHECK(top[i - 1].probability >= top[i].probability);
      Eigen::Index arg = 0;
      nb.row(k).maxCoeff(&arg);
      CHECK(defs[static_cast<std::size_t>(k)].label == toks[static_cast<std::size_t>(arg)]);
      CHECK(defs2[static_cast<std::size_t>(k)].label == defs[static_cast<std::size_t>(k)].label);
    }
  }
}

TEST_CASE("correlation_graph: strict threshold examples") {
  CHECK(correlation_graph(Matrix{{4.0, 1.0}, {1.0, 1.0}}, 0.5).edges.empty());
  const auto g = correlation_graph(Matrix{{1.0, 0.6}, {0.6, 1.0}}, 0.5);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0] == CorrelationEdge{0, 1, 0.6});
  const auto neg = correlation_graph(Matrix{{1.0, -0.6}, {-0.6, 1.0}}, 0.5);
  REQUIRE(neg.edges.size() == 1);
  CHECK(neg.edges[0].rho == doctest::Approx(-0.6));
  for (double t : {1e-9, 0.1, 0.5, 0.99}) CHECK(correlation_graph(Matrix::Identity(5, 5), t).edges.empty());
  CHECK(correlation_graph(Matrix{{1.0, 0.6}, {0.6, 1.0}}, 1.0).edges.empty());
}

TEST_CASE("correlation_graph: argument and PD errors") {
  CHECK_THROWS_AS(correlation_graph(Matrix::Identity(2, 2), -0.1), InvalidArgument);
  CHECK_THROWS_AS(correlation_graph(Matrix::Identity(2, 2), 1.5), InvalidArgument);
  CHECK_THROWS_AS(correlation_graph(Matrix{{1.0, 2.0}, {2.0, 1.0}}, 0.5), NumericalError);
}

TEST_CASE("correlation_graph: matrix properties and edge set on random SPD matrices") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + trial % 8;
    Matrix a(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) a(i, j) = rng.normal();
    const Matrix sigma = a * a.transpose() + 0.1 * Matrix::Identity(k, k);
    const double threshold = 0.9 * rng.uniform();
    const auto g = correlation_graph(sigma, threshold);
    const auto scaled = correlation_graph(3.7 * sigma, threshold);
    CHECK((g.correlation - g.correlation.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.correlation.diagonal().array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK(g.correlation.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    CHECK((g.correlation - scaled.correlation).cwiseAbs().maxCoeff() <= 1e-12);
    // Edges are exactly the super-threshold pairs i < j of the textbook formula.
    std::size_t expected = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) {
        const double rho = sigma(i, j) / std::sqrt(sigma(i, i) * sigma(j, j));
        if (std::abs(rho) > threshold) {
          REQUIRE(expected < g.edges.size());
          CHECK(g.edges[expected].i == i);
          CHECK(g.edges[expected].j == j);
          CHECK(g.edges[expected].rho == doctest::Approx(rho).epsilon(1e-12));
          ++expected;
        }
      }
    CHECK(g.edges.size() == expected);
  }
}

TEST_CASE("graph and edge export formats") {
  const auto g = correlation_graph(Matrix{{1.0, 0.6, 0.0}, {0.6, 1.0, -0.7}, {0.0, -0.7, 1.0}}, 0.5);
  const json j = graph_to_json(g);
  CHECK(j["threshold"] == 0.5);
  REQUIRE(j["edges"].size() == 2);
  CHECK(j["edges"][1]["i"] == 1);
  CHECK(j["edges"][1]["j"] == 2);
  const std::string csv = edges_to_csv(g.edges);
  CHECK(csv.rfind("i,j,rho\n0,1,", 0) == 0);
  CHECK(csv.find("\n1,2,-0.") != std::string::npos);
}

TEST_CASE("empirical correlation mode") {
  const std::vector<Vocabulary> vocabs{Vocabulary("dx", {"x", "y"})};
  auto model = model_with(vocabs, {Matrix{{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}});
  // phenotypes 0 and 1 trade off; 2 stays constant
  for (double a : {0.1, 0.3, 0.5, 0.7}) add_posterior(model, Vector{{a, 0.8 - a, 0.2}});
  const auto g = empirical_correlation_graph(model, 0.5);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].i == 0);
  CHECK(g.edges[0].j == 1);
  CHECK(g.edges[0].rho == doctest::Approx(-1.0));
  CHECK(g.correlation(0, 2) == 0.0);
}

TEST_CASE("prevalence: closed-form cases") {
  const std::vector<Vocabulary> vocabs{Vocabulary("dx", {"x", "y"})};
  auto model = model_with(vocabs, {Matrix::Constant(4, 2, 0.5)});
  CHECK_THROWS_AS(prevalence(model, 0.05), InvalidArgument);
  for (int d = 0; d < 10; ++d) add_posterior(model, Vector::Constant(4, 0.25));
  CHECK(prevalence(model, 1.0 / 8.0) == Vector::Ones(4));
  CHECK(prevalence(model, 1.0) == Vector::Zero(4));
  add_posterior(model, Vector{{1.0, 0.0, 0.0, 0.0}});
  const Vector p = prevalence(model, 1.0);
  CHECK(p[0] == doctest::Approx(1.0 / 11.0));
  CHECK(p[1] == 0.0);
  CHECK_THROWS_AS(prevalence(model, 0.0), InvalidArgument);
}

TEST_CASE("prevalence: recovers a planted 30% membership through inference") {
  // Phenotype 0 carries weight 0.5 in 30% of records and 0.01 elsewhere.
  const int k = 3, v = 30;
  std::vector<Matrix> beta{Matrix(k, v)};
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < v; ++c) beta[0](r, c) = (c / 10 == r) ? 0.095 : 0.0025;
  const auto truth = ModelParams::from_beta(Vector::Zero(k), Matrix::Identity(k, k), beta);
  const auto vocabs = synthetic_vocabularies({"dx"}, {v});
  TrainedModel model = model_with(vocabs, beta);
  Rng rng(77);
  const int records = 400;
  int planted = 0;
  for (int d = 0; d < records; ++d) {
    const bool member = d % 10 < 3;
    planted += member;
    const Vector props = member ? Vector{{0.5, 0.25, 0.25}} : Vector{{0.01, 0.495, 0.495}};
    auto rec = sample_record_bags(truth, props, {60}, rng, nullptr);
    rec.record_id = "p" + std::to_string(d);
    const auto post = infer_document(rec, truth);
    model.records.push_back({rec.record_id, std::nullopt});
    model.doc_posteriors.push_back(post);
  }
  CHECK(planted == 120);
  CHECK(prevalence(model, 0.2)[0] == doctest::Approx(0.3).epsilon(0.05 / 0.3));
}

TEST_CASE("split_by_prevalence") {
  RelatednessGraph g;
  g.edges = {{0, 1, 0.7}, {1, 2, -0.6}};
  const Vector prev{{0.1, 0.1, 0.01}};
  const auto s = split_by_prevalence(g, prev, 0.05);
  REQUIRE(s.common.size() == 1);
  CHECK(s.common[0] == CorrelationEdge{0, 1, 0.7});
  REQUIRE(s.rare.size() == 1);
  CHECK(s.rare[0] == CorrelationEdge{1, 2, -0.6});
  const auto empty = split_by_prevalence(RelatednessGraph{}, prev, 0.05);
  CHECK(empty.common.empty());
  CHECK(empty.rare.empty());
  CHECK_THROWS_AS(split_by_prevalence(g, prev, 0.0), InvalidArgument);
}
