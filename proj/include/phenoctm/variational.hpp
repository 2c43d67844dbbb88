#pragma once
// Per-record Laplace variational inference.
//
// The variational family is q(nu) * prod_m q(z_m). Coordinate ascent
// alternates
//   q(z_m):  q(z = k | token v of type m) ∝ exp(eta(nu)_k + log beta_{m,k,v})
//   q(nu):   N(nu_hat, -H(nu_hat)^-1), nu_hat = argmax f(nu)
// with
//   f(nu)   = eta(nu)' S - 1/2 (nu - mu0)' Sigma0^-1 (nu - mu0)
//   eta(nu) = nu - logsumexp(nu) * 1
//   S       = sum_m E_q[t(z_m)]   (expected phenotype counts over all types)
//
// E_q(nu)[eta(nu)] has no closed form under the Gaussian. The q(z) update
// evaluates it at the mode. The ELBO instead bounds
//   E_q[logsumexp(nu)] <= log sum_k exp(nu_hat_k + C_kk / 2)
// so that the reported value is a true lower bound on log p(x).

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "phenoctm/corpus.hpp"
#include "phenoctm/model.hpp"
#include "phenoctm/numerics.hpp"

namespace phenoctm {

struct DocPosterior {
  Vector nu_hat;
  Matrix nu_cov;  // empty when loaded from a model file
  // responsibilities[m] is K x (distinct tokens in bag m); column j belongs
  // to the j-th bag entry.
  std::vector<Matrix> responsibilities;
  std::vector<Vector> expected_counts;
  Vector proportions;
  bool converged = false;
  int iterations = 0;
  // Newton did not reach its gradient tolerance or the covariance needed a
  // ridge repair at some outer iteration.
  bool optimizer_flagged = false;
};

struct InferenceConfig {
  double tol = 1e-4;  // on ||delta nu_hat||_inf
  int max_outer = 100;
  NewtonConfig newton{};

  void validate() const {
    if (!(tol > 0.0)) throw InvalidArgument("InferenceConfig: tol must be > 0");
    if (max_outer < 1) throw InvalidArgument("InferenceConfig: max_outer must be >= 1");
    newton.validate();
  }
};

inline Vector sum_expected_counts(const std::vector<Vector>& expected_counts, int k) {
  Vector s = Vector::Zero(k);
  for (const auto& e : expected_counts) {
    if (e.size() != k) throw InvalidArgument("expected counts must have length K");
    s += e;
  }
  return s;
}

namespace detail {

inline void check_nu(const Vector& nu, const ModelParams& params) {
  if (nu.size() != params.num_phenotypes()) throw InvalidArgument("nu must have length K");
  require_finite(nu, "variational");
}

// f, its gradient and Hessian for a fixed summed count vector S.
struct LaplaceObjective {
  const ModelParams& params;
  Vector counts;
  double total;

  LaplaceObjective(const ModelParams& p, Vector s) : params(p), counts(std::move(s)), total(counts.sum()) {}

  double value(const Vector& nu) const {
    const Vector diff = nu - params.mu0();
    const double lse = log_sum_exp(nu);
    return nu.dot(counts) - lse * total - 0.5 * diff.dot(params.sigma0_inv() * diff);
  }
  Vector gradient(const Vector& nu) const {
    return counts - total * softmax(nu) - params.sigma0_inv() * (nu - params.mu0());
  }
  Matrix hessian(const Vector& nu) const {
    const Vector pi = softmax(nu);
    Matrix h = total * (pi * pi.transpose());
    h.diagonal() -= total * pi;
    return h - params.sigma0_inv();
  }
};

}  // namespace detail

inline double f_nu(const Vector& nu, const std::vector<Vector>& expected_counts, const ModelParams& params) {
  detail::check_nu(nu, params);
  return detail::LaplaceObjective(params, sum_expected_counts(expected_counts, params.num_phenotypes())).value(nu);
}

inline Vector grad_f(const Vector& nu, const std::vector<Vector>& expected_counts, const ModelParams& params) {
  detail::check_nu(nu, params);
  return detail::LaplaceObjective(params, sum_expected_counts(expected_counts, params.num_phenotypes()))
      .gradient(nu);
}

inline Matrix hess_f(const Vector& nu, const std::vector<Vector>& expected_counts, const ModelParams& params) {
  detail::check_nu(nu, params);
  return detail::LaplaceObjective(params, sum_expected_counts(expected_counts, params.num_phenotypes()))
      .hessian(nu);
}

struct LaplaceUpdate {
  Vector nu_hat;
  Matrix nu_cov;
  NewtonStatus status = NewtonStatus::converged;
  bool cov_repaired = false;
};

inline LaplaceUpdate update_q_nu(const std::vector<Vector>& expected_counts, const ModelParams& params,
                                 const Vector& nu_init, const NewtonConfig& newton = {}) {
  const int k = params.num_phenotypes();
  Vector s = sum_expected_counts(expected_counts, k);
  if (!s.allFinite() || (s.array() < 0.0).any())
    throw InvalidArgument("update_q_nu: expected counts must be finite and non-negative");
  detail::check_nu(nu_init, params);

  LaplaceUpdate out;
  if (s.sum() == 0.0) {
    // No data: f is the log prior, maximized at mu0 with covariance Sigma0.
    out.nu_hat = params.mu0();
    out.nu_cov = params.sigma0();
    return out;
  }
  const detail::LaplaceObjective objective(params, std::move(s));
  NewtonResult r = maximize_concave(objective, nu_init, newton);
  out.status = r.status;
  out.nu_hat = std::move(r.x);
  Matrix precision = symmetrize(-r.hessian);
  out.cov_repaired = repair_spd(precision, 1e-10);
  out.nu_cov = spd_inverse(precision);
  return out;
}

struct QzUpdate {
  std::vector<Matrix> responsibilities;
  std::vector<Vector> expected_counts;
};

inline QzUpdate update_q_z(const RecordBags& record, const Vector& nu_hat, const ModelParams& params) {
  detail::check_nu(nu_hat, params);
  const int k = params.num_phenotypes();
  const int num_types = params.num_types();
  if (static_cast<int>(record.bags.size()) != num_types)
    throw InvalidArgument("update_q_z: record has " + std::to_string(record.bags.size()) + " bags, model has " +
                          std::to_string(num_types) + " types");
  const Vector eta = nu_hat.array() - log_sum_exp(nu_hat);

  QzUpdate out;
  out.responsibilities.resize(static_cast<std::size_t>(num_types));
  out.expected_counts.assign(static_cast<std::size_t>(num_types), Vector::Zero(k));
  for (int m = 0; m < num_types; ++m) {
    const Bag& bag = record.bags[static_cast<std::size_t>(m)];
    const Matrix& log_beta = params.log_beta(m);
    Matrix& resp = out.responsibilities[static_cast<std::size_t>(m)];
    resp.resize(k, static_cast<Eigen::Index>(bag.size()));
    Vector& expected = out.expected_counts[static_cast<std::size_t>(m)];
    for (std::size_t j = 0; j < bag.size(); ++j) {
      const int v = bag[j].token;
      if (v < 0 || v >= log_beta.cols())
        throw InvalidArgument("update_q_z: token index " + std::to_string(v) + " out of range for type " +
                              std::to_string(m));
      const Vector q = softmax(eta + log_beta.col(v));
      resp.col(static_cast<Eigen::Index>(j)) = q;
      expected += static_cast<double>(bag[j].count) * q;
    }
  }
  return out;
}

// Coordinate ascent from nu_init (mu0 when absent) until nu_hat moves less
// than cfg.tol. The returned responsibilities are the optimal q(z) given the
// final q(nu).
inline DocPosterior infer_document(const RecordBags& record, const ModelParams& params,
                                   const InferenceConfig& cfg = {},
                                   const std::optional<Vector>& nu_init = std::nullopt) {
  cfg.validate();
  DocPosterior post;
  Vector nu = nu_init ? *nu_init : params.mu0();
  detail::check_nu(nu, params);
  Matrix cov = params.sigma0();
  for (int outer = 1; outer <= cfg.max_outer; ++outer) {
    const QzUpdate qz = update_q_z(record, nu, params);
    LaplaceUpdate lap = update_q_nu(qz.expected_counts, params, nu, cfg.newton);
    if (lap.status != NewtonStatus::converged || lap.cov_repaired) post.optimizer_flagged = true;
    const double delta = (lap.nu_hat - nu).lpNorm<Eigen::Infinity>();
    nu = std::move(lap.nu_hat);
    cov = std::move(lap.nu_cov);
    post.iterations = outer;
    if (delta <= cfg.tol) {
      post.converged = true;
      break;
    }
  }
  QzUpdate qz = update_q_z(record, nu, params);
  post.responsibilities = std::move(qz.responsibilities);
  post.expected_counts = std::move(qz.expected_counts);
  post.proportions = softmax(nu);
  post.nu_hat = std::move(nu);
  post.nu_cov = std::move(cov);
  return post;
}

// Evidence lower bound E_q[log p(nu, z, x)] - E_q[log q(nu, z)] for one record.
// Tokens are treated as an ordered sequence (no multinomial coefficient).
// Requires nu_cov; posteriors read back from a model file do not carry it.
inline double elbo(const RecordBags& record, const DocPosterior& post, const ModelParams& params) {
  const int k = params.num_phenotypes();
  const int num_types = params.num_types();
  if (post.nu_hat.size() != k || post.nu_cov.rows() != k || post.nu_cov.cols() != k)
    throw InvalidArgument("elbo: posterior dimensions do not match the model");
  if (static_cast<int>(record.bags.size()) != num_types ||
      static_cast<int>(post.responsibilities.size()) != num_types)
    throw InvalidArgument("elbo: number of data types does not match the model");

  // -KL(q(nu) || p(nu)) for two Gaussians.
  const Vector diff = post.nu_hat - params.mu0();
  const double trace_term = (params.sigma0_inv().cwiseProduct(post.nu_cov)).sum();
  const double neg_kl = -0.5 * (trace_term + diff.dot(params.sigma0_inv() * diff) - k +
                                params.sigma0_log_det() - log_det_spd(post.nu_cov));

  // E_q[eta(nu)_k] = nu_hat_k - E_q[logsumexp(nu)], the latter bounded above.
  const Vector shifted = post.nu_hat + 0.5 * post.nu_cov.diagonal();
  const Vector eta = post.nu_hat.array() - log_sum_exp(shifted);
  double data_terms = 0.0;
  for (int m = 0; m < num_types; ++m) {
    const Bag& bag = record.bags[static_cast<std::size_t>(m)];
    const Matrix& resp = post.responsibilities[static_cast<std::size_t>(m)];
    if (resp.rows() != k || resp.cols() != static_cast<Eigen::Index>(bag.size()))
      throw InvalidArgument("elbo: responsibilities do not match the record bags");
    const Matrix& log_beta = params.log_beta(m);
    for (std::size_t j = 0; j < bag.size(); ++j) {
      const double c = static_cast<double>(bag[j].count);
      const auto q = resp.col(static_cast<Eigen::Index>(j));
      double term = 0.0;
      for (int kk = 0; kk < k; ++kk) {
        const double qk = q[kk];
        if (qk <= 0.0) continue;
        term += qk * (eta[kk] + log_beta(kk, bag[j].token) - std::log(qk));
      }
      data_terms += c * term;
    }
  }
  return neg_kl + data_terms;
}

}  // namespace phenoctm
