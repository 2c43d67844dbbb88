#pragma once
// Variational EM over a corpus.
//
//   E-step: infer_document for every record against frozen parameters
//           (parallel across records, warm-started from the previous nu_hat).
//   M-step: beta_{m,k,v} ∝ eps + sum_d count_{d,m,v} q_d(z = k | v)
//           mu0    = mean_d nu_hat_d
//           Sigma0 = mean_d [C_d + (nu_hat_d - mu0)(nu_hat_d - mu0)']
//
// Convergence is declared on the relative change of the summed per-record
// ELBO. Model files are versioned JSON; see save_model for the layout.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "phenoctm/corpus.hpp"
#include "phenoctm/model.hpp"
#include "phenoctm/numerics.hpp"
#include "phenoctm/parallel.hpp"
#include "phenoctm/rng.hpp"
#include "phenoctm/variational.hpp"

namespace phenoctm {

struct TrainConfig {
  int K = 10;
  std::uint64_t seed = 0;
  int max_em_iters = 200;
  double em_tol = 1e-5;
  double beta_smoothing = 1e-8;
  double noise_scale = 0.5;
  double doc_tol = 1e-4;
  int doc_max_outer = 100;
  bool update_prior = true;  // re-estimate mu0 / Sigma0 in the M-step
  // Leading EM iterations whose M-step re-estimates beta only; mu0 / Sigma0
  // stay at their initial values meanwhile.
  int prior_warmup_iters = 20;
  // Independent EM runs from different initializations; the one with the
  // highest final objective is kept.
  int restarts = 1;

  void validate() const {
    if (K < 2) throw InvalidArgument("K must be >= 2");
    if (max_em_iters < 0) throw InvalidArgument("max_em_iters must be >= 0");
    if (!(em_tol >= 0.0)) throw InvalidArgument("em_tol must be >= 0");
    if (!(beta_smoothing > 0.0)) throw InvalidArgument("beta_smoothing must be > 0");
    if (!(noise_scale >= 0.0)) throw InvalidArgument("noise_scale must be >= 0");
    if (prior_warmup_iters < 0) throw InvalidArgument("prior_warmup_iters must be >= 0");
    if (restarts < 1) throw InvalidArgument("restarts must be >= 1");
    inference().validate();
  }

  InferenceConfig inference() const {
    InferenceConfig c;
    c.tol = doc_tol;
    c.max_outer = doc_max_outer;
    return c;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline json to_json(const TrainConfig& c) {
  json j = json::object();
  j["K"] = c.K;
  j["seed"] = c.seed;
  j["max_em_iters"] = c.max_em_iters;
  j["em_tol"] = c.em_tol;
  j["beta_smoothing"] = c.beta_smoothing;
  j["noise_scale"] = c.noise_scale;
  j["doc_tol"] = c.doc_tol;
  j["doc_max_outer"] = c.doc_max_outer;
  j["update_prior"] = c.update_prior;
  j["prior_warmup_iters"] = c.prior_warmup_iters;
  j["restarts"] = c.restarts;
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.K = j.at("K").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_em_iters = j.at("max_em_iters").get<int>();
  c.em_tol = j.at("em_tol").get<double>();
  c.beta_smoothing = j.at("beta_smoothing").get<double>();
  c.noise_scale = j.at("noise_scale").get<double>();
  c.doc_tol = j.at("doc_tol").get<double>();
  c.doc_max_outer = j.at("doc_max_outer").get<int>();
  c.update_prior = j.at("update_prior").get<bool>();
  c.prior_warmup_iters = j.at("prior_warmup_iters").get<int>();
  c.restarts = j.at("restarts").get<int>();
  return c;
}

struct RecordKey {
  std::string id;
  std::optional<std::string> time_bin;
  friend bool operator==(const RecordKey&, const RecordKey&) = default;
};

struct TrainedModel {
  ModelParams params;
  std::vector<Vocabulary> vocabularies;
  std::vector<RecordKey> records;          // aligned with doc_posteriors
  std::vector<DocPosterior> doc_posteriors;
  std::vector<double> history;             // summed ELBO per EM iteration
  TrainConfig config;
  std::string vocab_fingerprint;
  bool converged = false;
  int flagged_records = 0;  // posteriors with optimizer flags in the final E-step
  int selected_restart = 0;

  int num_phenotypes() const { return params.num_phenotypes(); }
  std::optional<int> type_index(const std::string& name) const {
    for (std::size_t m = 0; m < vocabularies.size(); ++m)
      if (vocabularies[m].type_name() == name) return static_cast<int>(m);
    return std::nullopt;
  }
};

// Throws CompatibilityError when `vocabs` is not the vocabulary set the model
// was trained on.
inline void check_compatible(const TrainedModel& model, const std::vector<Vocabulary>& vocabs) {
  const std::string fp = phenoctm::vocab_fingerprint(vocabs);
  if (fp != model.vocab_fingerprint)
    throw CompatibilityError("vocabulary fingerprint mismatch: model " + model.vocab_fingerprint + ", data " + fp);
}

// mu0 = 0, Sigma0 = I, each beta row uniform plus U[0, noise_scale / V_m]
// noise, renormalized. Row (m, k) draws from its own seeded stream.
inline ModelParams initialize(const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  corpus.validate();
  const int k = cfg.K;
  std::vector<Matrix> beta;
  for (int m = 0; m < corpus.num_types(); ++m) {
    const int v = corpus.vocabularies[static_cast<std::size_t>(m)].size();
    if (v < 1) throw InvalidArgument("vocabulary '" + corpus.vocabularies[static_cast<std::size_t>(m)].type_name() + "' is empty");
    Matrix b(k, v);
    for (int row = 0; row < k; ++row) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(m) * 1000003ULL + static_cast<std::uint64_t>(row)));
      for (int col = 0; col < v; ++col) b(row, col) = 1.0 / v + rng.uniform() * cfg.noise_scale / v;
      b.row(row) /= b.row(row).sum();
    }
    beta.push_back(std::move(b));
  }
  return ModelParams::from_beta(Vector::Zero(k), Matrix::Identity(k, k), beta);
}

// `previous` supplies mu0 / Sigma0 when cfg.update_prior is false.
// Sets *sigma_repaired when Sigma0 needed a ridge to stay positive definite.
inline ModelParams m_step(const Corpus& corpus, const std::vector<DocPosterior>& posteriors, const TrainConfig& cfg,
                          const ModelParams* previous = nullptr, bool* sigma_repaired = nullptr) {
  if (posteriors.size() != corpus.records.size())
    throw InvalidArgument("m_step: need exactly one posterior per record");
  if (posteriors.empty()) throw InvalidArgument("m_step: corpus has no records");
  const int k = cfg.K;
  const int num_types = corpus.num_types();

  std::vector<Matrix> beta;
  beta.reserve(static_cast<std::size_t>(num_types));
  for (int m = 0; m < num_types; ++m)
    beta.push_back(Matrix::Constant(k, corpus.vocabularies[static_cast<std::size_t>(m)].size(), cfg.beta_smoothing));
  for (std::size_t d = 0; d < posteriors.size(); ++d) {
    const auto& post = posteriors[d];
    const auto& record = corpus.records[d];
    if (post.nu_hat.size() != k || static_cast<int>(post.responsibilities.size()) != num_types)
      throw InvalidArgument("m_step: posterior " + std::to_string(d) + " does not match K / M");
    for (int m = 0; m < num_types; ++m) {
      const Bag& bag = record.bags[static_cast<std::size_t>(m)];
      const Matrix& resp = post.responsibilities[static_cast<std::size_t>(m)];
      if (resp.cols() != static_cast<Eigen::Index>(bag.size()))
        throw InvalidArgument("m_step: responsibilities of record " + std::to_string(d) + " do not match its bags");
      Matrix& acc = beta[static_cast<std::size_t>(m)];
      for (std::size_t j = 0; j < bag.size(); ++j)
        acc.col(bag[j].token) += static_cast<double>(bag[j].count) * resp.col(static_cast<Eigen::Index>(j));
    }
  }
  for (auto& b : beta)
    for (Eigen::Index row = 0; row < b.rows(); ++row) b.row(row) /= b.row(row).sum();

  Vector mu0;
  Matrix sigma0;
  bool repaired = false;
  if (cfg.update_prior || previous == nullptr) {
    const double n = static_cast<double>(posteriors.size());
    mu0 = Vector::Zero(k);
    for (const auto& p : posteriors) mu0 += p.nu_hat;
    mu0 /= n;
    sigma0 = Matrix::Zero(k, k);
    for (const auto& p : posteriors) {
      if (p.nu_cov.rows() != k) throw InvalidArgument("m_step: posterior covariance missing");
      const Vector diff = p.nu_hat - mu0;
      sigma0 += p.nu_cov + diff * diff.transpose();
    }
    sigma0 /= n;
    repaired = repair_spd(sigma0, 1e-6);
  } else {
    mu0 = previous->mu0();
    sigma0 = previous->sigma0();
  }
  if (sigma_repaired) *sigma_repaired = repaired;
  return ModelParams::from_beta(std::move(mu0), std::move(sigma0), beta);
}

struct EmIterationInfo {
  int restart = 0;
  int iteration = 0;  // 1-based
  double objective = 0.0;
  double relative_change = 0.0;  // NaN on the first iteration
  int flagged_records = 0;
  int unconverged_records = 0;
  bool sigma_repaired = false;  // set by the M-step that preceded this E-step
  double seconds = 0.0;
};

struct TrainOptions {
  unsigned threads = 0;  // 0 = hardware concurrency
  std::optional<ModelParams> initial_params;
  // Called after every E-step with the parameters it ran against and the
  // resulting posteriors.
  std::function<void(const EmIterationInfo&, const ModelParams&, const std::vector<DocPosterior>&)> observer;
};

namespace detail {

inline void e_step(const Corpus& corpus, const ModelParams& params, const InferenceConfig& icfg,
                   std::vector<DocPosterior>& posteriors, unsigned threads) {
  std::vector<DocPosterior> next(corpus.records.size());
  parallel_for(corpus.records.size(), threads, [&](std::size_t d) {
    std::optional<Vector> warm;
    if (d < posteriors.size() && posteriors[d].nu_hat.size() == params.num_phenotypes()) warm = posteriors[d].nu_hat;
    next[d] = infer_document(corpus.records[d], params, icfg, warm);
  });
  posteriors = std::move(next);
}

// One EM run; `init_seed` replaces cfg.seed for the initialization only.
inline TrainedModel train_once(const Corpus& corpus, const TrainConfig& cfg, const TrainOptions& options, int restart,
                               std::uint64_t init_seed) {
  TrainedModel model;
  model.config = cfg;
  model.vocabularies = corpus.vocabularies;
  model.vocab_fingerprint = phenoctm::vocab_fingerprint(corpus.vocabularies);
  for (const auto& r : corpus.records) model.records.push_back({r.record_id, r.time_bin});

  TrainConfig init_cfg = cfg;
  init_cfg.seed = init_seed;
  ModelParams params = options.initial_params ? *options.initial_params : initialize(corpus, init_cfg);
  if (params.num_phenotypes() != cfg.K || params.num_types() != corpus.num_types())
    throw InvalidArgument("train: initial parameters do not match K / M");
  for (int m = 0; m < corpus.num_types(); ++m)
    if (params.vocab_size(m) != corpus.vocabularies[static_cast<std::size_t>(m)].size())
      throw InvalidArgument("train: initial parameters do not match the vocabulary sizes");

  const InferenceConfig icfg = cfg.inference();
  std::vector<DocPosterior> posteriors;
  bool sigma_repaired = false;
  bool fresh = false;  // posteriors computed against the current params
  for (int it = 1; it <= cfg.max_em_iters; ++it) {
    const auto start = std::chrono::steady_clock::now();
    detail::e_step(corpus, params, icfg, posteriors, options.threads);
    fresh = true;
    EmIterationInfo info;
    info.restart = restart;
    info.iteration = it;
    info.sigma_repaired = sigma_repaired;
    double objective = 0.0;
    for (std::size_t d = 0; d < posteriors.size(); ++d) {
      objective += elbo(corpus.records[d], posteriors[d], params);
      info.flagged_records += posteriors[d].optimizer_flagged ? 1 : 0;
      info.unconverged_records += posteriors[d].converged ? 0 : 1;
    }
    if (!std::isfinite(objective))
      throw NumericalError("train: non-finite objective at EM iteration " + std::to_string(it));
    info.objective = objective;
    info.relative_change = model.history.empty()
                               ? std::numeric_limits<double>::quiet_NaN()
                               : std::abs(objective - model.history.back()) /
                                     std::max(std::abs(model.history.back()), 1e-300);
    model.history.push_back(objective);
    info.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.observer) options.observer(info, params, posteriors);
    // With prior updates enabled, convergence is only checked once an E-step
    // has run against re-estimated mu0 / Sigma0.
    const bool prior_phase = !cfg.update_prior || it > cfg.prior_warmup_iters + 1;
    if (model.history.size() > 1 && prior_phase && info.relative_change <= cfg.em_tol) {
      model.converged = true;
      break;
    }
    if (it == cfg.max_em_iters) break;
    TrainConfig step_cfg = cfg;
    step_cfg.update_prior = cfg.update_prior && it > cfg.prior_warmup_iters;
    try {
      params = m_step(corpus, posteriors, step_cfg, &params, &sigma_repaired);
    } catch (const InvalidArgument& e) {
      throw NumericalError("train: invariant violated after M-step at iteration " + std::to_string(it) + ": " +
                           e.what());
    }
    fresh = false;
  }
  if (!fresh) detail::e_step(corpus, params, icfg, posteriors, options.threads);
  for (const auto& p : posteriors) model.flagged_records += p.optimizer_flagged ? 1 : 0;
  model.params = std::move(params);
  model.doc_posteriors = std::move(posteriors);
  return model;
}

}  // namespace detail

// Runs EM until the relative change of the summed ELBO drops to cfg.em_tol or
// cfg.max_em_iters E-steps have run. Restart 0 initializes from cfg.seed,
// restart r > 0 from derive_seed(cfg.seed, r); the run with the highest final
// objective wins (earliest on ties). The returned posteriors always belong to
// the returned parameters.
inline TrainedModel train(const Corpus& corpus, const TrainConfig& cfg, const TrainOptions& options = {}) {
  cfg.validate();
  corpus.validate();
  if (options.initial_params && cfg.restarts > 1)
    throw InvalidArgument("train: restarts cannot be combined with explicit initial parameters");
  std::optional<TrainedModel> best;
  for (int r = 0; r < cfg.restarts; ++r) {
    const std::uint64_t init_seed = r == 0 ? cfg.seed : derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    TrainedModel run = detail::train_once(corpus, cfg, options, r, init_seed);
    run.selected_restart = r;
    // max_em_iters = 0 leaves no history; the first run is kept then.
    if (!best || (!run.history.empty() && !best->history.empty() && run.history.back() > best->history.back()))
      best = std::move(run);
  }
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Model files
//
// {"format": "phenoctm-model", "version": 1, "K", "M", "vocab_fingerprint",
//  "vocabularies": {type: [token, ...]}, "mu0": [K], "sigma0": [K*K row-major],
//  "log_beta": {type: [K*V row-major]}, "config": {...}, "history": [...],
//  "converged": bool, "selected_restart": int, "posteriors": [{"id", "time_bin"?, "nu_hat", "expected_counts",
//  "converged", "iterations", "flagged"}]}

inline constexpr const char* kModelFormat = "phenoctm-model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json matrix_to_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return flat;
}

inline Vector vector_from_json(const json& j, Eigen::Index n, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    throw ParseError(std::string("model file: '") + what + "' must be an array of " + std::to_string(n) + " numbers");
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  const Vector flat = vector_from_json(j, rows * cols, what);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];
  return m;
}

}  // namespace detail

inline json model_to_json(const TrainedModel& model) {
  const auto& p = model.params;
  json j = json::object();
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["K"] = p.num_phenotypes();
  j["M"] = p.num_types();
  j["vocab_fingerprint"] = model.vocab_fingerprint;
  j["vocabularies"] = vocabularies_to_json(model.vocabularies);
  j["mu0"] = detail::vector_to_json(p.mu0());
  j["sigma0"] = detail::matrix_to_json(p.sigma0());
  json lb = json::object();
  for (int m = 0; m < p.num_types(); ++m)
    lb[model.vocabularies[static_cast<std::size_t>(m)].type_name()] = detail::matrix_to_json(p.log_beta(m));
  j["log_beta"] = std::move(lb);
  j["config"] = to_json(model.config);
  j["history"] = model.history;
  j["converged"] = model.converged;
  j["selected_restart"] = model.selected_restart;
  json posts = json::array();
  for (std::size_t d = 0; d < model.doc_posteriors.size(); ++d) {
    const auto& post = model.doc_posteriors[d];
    json e = json::object();
    e["id"] = model.records[d].id;
    if (model.records[d].time_bin) e["time_bin"] = *model.records[d].time_bin;
    e["nu_hat"] = detail::vector_to_json(post.nu_hat);
    json counts = json::array();
    for (const auto& c : post.expected_counts) counts.push_back(detail::vector_to_json(c));
    e["expected_counts"] = std::move(counts);
    e["converged"] = post.converged;
    e["iterations"] = post.iterations;
    e["flagged"] = post.optimizer_flagged;
    posts.push_back(std::move(e));
  }
  j["posteriors"] = std::move(posts);
  return j;
}

inline TrainedModel model_from_json(const json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kModelFormat)
    throw ParseError("not a phenoctm model file");
  if (j.value("version", -1) != kModelVersion)
    throw CompatibilityError("unsupported model file version " + j.value("version", json()).dump() +
                             " (expected " + std::to_string(kModelVersion) + ")");
  try {
    TrainedModel model;
    model.vocabularies = vocabularies_from_json(j.at("vocabularies"));
    model.vocab_fingerprint = j.at("vocab_fingerprint").get<std::string>();
    if (model.vocab_fingerprint != phenoctm::vocab_fingerprint(model.vocabularies))
      throw ParseError("model file: stored fingerprint does not match the stored vocabularies");
    const int k = j.at("K").get<int>();
    const int num_types = j.at("M").get<int>();
    if (k < 1 || num_types != static_cast<int>(model.vocabularies.size()))
      throw ParseError("model file: K / M inconsistent with vocabularies");
    Vector mu0 = detail::vector_from_json(j.at("mu0"), k, "mu0");
    Matrix sigma0 = detail::matrix_from_json(j.at("sigma0"), k, k, "sigma0");
    std::vector<Matrix> log_beta;
    const json& lb = j.at("log_beta");
    for (const auto& v : model.vocabularies)
      log_beta.push_back(detail::matrix_from_json(lb.at(v.type_name()), k, v.size(), "log_beta"));
    model.params = ModelParams(std::move(mu0), std::move(sigma0), std::move(log_beta));
    model.config = train_config_from_json(j.at("config"));
    model.history = j.at("history").get<std::vector<double>>();
    model.converged = j.at("converged").get<bool>();
    model.selected_restart = j.at("selected_restart").get<int>();
    for (const auto& e : j.at("posteriors")) {
      RecordKey key{e.at("id").get<std::string>(), std::nullopt};
      if (e.contains("time_bin")) key.time_bin = e.at("time_bin").get<std::string>();
      DocPosterior post;
      post.nu_hat = detail::vector_from_json(e.at("nu_hat"), k, "nu_hat");
      post.proportions = softmax(post.nu_hat);
      for (const auto& c : e.at("expected_counts")) post.expected_counts.push_back(detail::vector_from_json(c, k, "expected_counts"));
      post.converged = e.at("converged").get<bool>();
      post.iterations = e.at("iterations").get<int>();
      post.optimizer_flagged = e.at("flagged").get<bool>();
      model.flagged_records += post.optimizer_flagged ? 1 : 0;
      model.records.push_back(std::move(key));
      model.doc_posteriors.push_back(std::move(post));
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
}

inline void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_text_file(path, model_to_json(model).dump() + "\n");
}

inline TrainedModel load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

// Loads and checks the model against the vocabularies it will be applied to.
inline TrainedModel load_model(const std::filesystem::path& path, const std::vector<Vocabulary>& vocabs) {
  TrainedModel model = load_model(path);
  check_compatible(model, vocabs);
  return model;
}

}  // namespace phenoctm
