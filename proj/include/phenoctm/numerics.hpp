#pragma once
// Shared numerical kernels: stable softmax / log-sum-exp, a damped Newton
// maximizer, SPD helpers and a central-difference gradient oracle.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <sstream>
#include <string>

#include "phenoctm/error.hpp"

namespace phenoctm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace detail {

inline std::string format_vector(const Vector& v) {
  std::ostringstream os;
  os.precision(17);
  os << '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ']';
  return os.str();
}

inline void require_finite(const Vector& v, const char* where) {
  if (!v.allFinite())
    throw NumericalError(std::string(where) + ": non-finite input " + format_vector(v));
}

}  // namespace detail

inline double log_sum_exp(const Vector& v) {
  detail::require_finite(v, "log_sum_exp");
  if (v.size() == 0) throw InvalidArgument("log_sum_exp: empty vector");
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// Logistic transform onto the simplex, computed with a max shift.
inline Vector softmax(const Vector& v) {
  detail::require_finite(v, "softmax");
  if (v.size() == 0) throw InvalidArgument("softmax: empty vector");
  const double m = v.maxCoeff();
  Vector e = (v.array() - m).exp();
  return e / e.sum();
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline bool is_positive_definite(const Matrix& a) {
  if (a.rows() != a.cols() || !a.allFinite()) return false;
  Eigen::LLT<Matrix> llt(a);
  return llt.info() == Eigen::Success;
}

// Inverse of a symmetric positive definite matrix; the result is symmetrized.
inline Matrix spd_inverse(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalError("spd_inverse: matrix is not positive definite");
  return symmetrize(llt.solve(Matrix::Identity(a.rows(), a.cols())));
}

inline double log_det_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalError("log_det_spd: matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// Symmetrizes `a` and adds `ridge`·I (growing tenfold) until Cholesky
// succeeds. Returns true when a ridge had to be added.
inline bool repair_spd(Matrix& a, double ridge) {
  a = symmetrize(a);
  if (is_positive_definite(a)) return false;
  const Eigen::Index n = a.rows();
  for (double lambda = ridge; lambda < 1e12; lambda *= 10.0) {
    Matrix candidate = a + lambda * Matrix::Identity(n, n);
    if (is_positive_definite(candidate)) {
      a = std::move(candidate);
      return true;
    }
  }
  throw NumericalError("repair_spd: could not restore positive definiteness");
}

struct NewtonConfig {
  int max_iters = 100;
  double grad_tol = 1e-6;
  double step_shrink = 0.5;
  double min_step = 1e-12;
  double hessian_damping = 1e-8;  // first ridge tried when -H is not PD

  void validate() const {
    if (max_iters < 1) throw InvalidArgument("NewtonConfig: max_iters must be >= 1");
    if (!(grad_tol > 0.0)) throw InvalidArgument("NewtonConfig: grad_tol must be > 0");
    if (!(step_shrink > 0.0 && step_shrink < 1.0))
      throw InvalidArgument("NewtonConfig: step_shrink must lie in (0, 1)");
    if (!(min_step > 0.0)) throw InvalidArgument("NewtonConfig: min_step must be > 0");
    if (!(hessian_damping > 0.0))
      throw InvalidArgument("NewtonConfig: hessian_damping must be > 0");
  }
};

enum class NewtonStatus { converged, max_iters, line_search_failed };

inline const char* to_string(NewtonStatus s) {
  switch (s) {
    case NewtonStatus::converged: return "converged";
    case NewtonStatus::max_iters: return "max_iters";
    case NewtonStatus::line_search_failed: return "line_search_failed";
  }
  return "unknown";
}

struct NewtonResult {
  Vector x;
  Matrix hessian;  // exact Hessian at x
  double value = 0.0;
  NewtonStatus status = NewtonStatus::max_iters;
  int iterations = 0;
  bool damped = false;  // some step needed a ridge on the Hessian
  bool converged() const { return status == NewtonStatus::converged; }
};

template <class F>
concept SmoothObjective = requires(const F& f, const Vector& x) {
  { f.value(x) } -> std::convertible_to<double>;
  { f.gradient(x) } -> std::convertible_to<Vector>;
  { f.hessian(x) } -> std::convertible_to<Matrix>;
};

// Newton ascent with backtracking. Directions solve (-H + λI) d = g with the
// smallest λ in {0, damping, 10·damping, ...} making the system PD, so every
// direction is an ascent direction even where f is not concave.
template <SmoothObjective F>
NewtonResult maximize_concave(const F& f, Vector x, const NewtonConfig& cfg) {
  cfg.validate();
  constexpr double kArmijo = 1e-4;
  const Eigen::Index n = x.size();

  NewtonResult out;
  double fx = f.value(x);
  if (!std::isfinite(fx))
    throw NumericalError("maximize_concave: non-finite objective at " + detail::format_vector(x));

  for (int iter = 0;; ++iter) {
    Vector g = f.gradient(x);
    if (!g.allFinite())
      throw NumericalError("maximize_concave: non-finite gradient at " + detail::format_vector(x));
    out.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      out.status = NewtonStatus::converged;
      break;
    }
    if (iter >= cfg.max_iters) {
      out.status = NewtonStatus::max_iters;
      break;
    }

    Matrix neg_h = -f.hessian(x);
    if (!neg_h.allFinite())
      throw NumericalError("maximize_concave: non-finite Hessian at " + detail::format_vector(x));
    neg_h = symmetrize(neg_h);
    Eigen::LLT<Matrix> llt(neg_h);
    if (llt.info() != Eigen::Success) {
      out.damped = true;
      double lambda = cfg.hessian_damping;
      for (;;) {
        llt.compute(neg_h + lambda * Matrix::Identity(n, n));
        if (llt.info() == Eigen::Success) break;
        lambda *= 10.0;
        if (!(lambda < 1e300))
          throw NumericalError("maximize_concave: damping diverged at " + detail::format_vector(x));
      }
    }
    const Vector d = llt.solve(g);
    const double slope = g.dot(d);
    // Roundoff allowance so a converged-but-not-yet-under-tolerance iterate
    // can still take its final step.
    const double slack = 16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(fx));

    double t = 1.0;
    bool accepted = false;
    while (t >= cfg.min_step) {
      Vector trial = x + t * d;
      const double ft = f.value(trial);
      if (std::isfinite(ft) && ft >= fx + kArmijo * t * slope - slack) {
        x = std::move(trial);
        fx = ft;
        accepted = true;
        break;
      }
      t *= cfg.step_shrink;
    }
    if (!accepted) {
      out.iterations = iter + 1;
      out.status = NewtonStatus::line_search_failed;
      break;
    }
  }
  out.x = x;
  out.value = fx;
  out.hessian = f.hessian(x);
  return out;
}

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
template <class Fn>
Vector finite_difference_gradient(Fn&& f, const Vector& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_difference_gradient: step must be > 0");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericalError("finite_difference_gradient: non-finite evaluation");
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace phenoctm
