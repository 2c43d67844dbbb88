#pragma once
// Model parameters: logistic-normal prior over log phenotype proportions and
// one K x V_m topic-token matrix per data type (stored as log probabilities).

#include <cmath>
#include <string>
#include <vector>

#include "phenoctm/error.hpp"
#include "phenoctm/numerics.hpp"

namespace phenoctm {

class ModelParams {
 public:
  ModelParams() = default;

  // Takes row-stochastic beta matrices (probabilities, not logs).
  static ModelParams from_beta(Vector mu0, Matrix sigma0, const std::vector<Matrix>& beta) {
    std::vector<Matrix> log_beta;
    log_beta.reserve(beta.size());
    for (const auto& b : beta) log_beta.push_back(b.array().log().matrix());
    return ModelParams(std::move(mu0), std::move(sigma0), std::move(log_beta));
  }

  ModelParams(Vector mu0, Matrix sigma0, std::vector<Matrix> log_beta)
      : mu0_(std::move(mu0)), sigma0_(std::move(sigma0)), log_beta_(std::move(log_beta)) {
    const Eigen::Index k = mu0_.size();
    if (k < 1) throw InvalidArgument("ModelParams: K must be >= 1");
    if (sigma0_.rows() != k || sigma0_.cols() != k)
      throw InvalidArgument("ModelParams: sigma0 must be K x K");
    if (!mu0_.allFinite()) throw InvalidArgument("ModelParams: mu0 must be finite");
    if ((sigma0_ - sigma0_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + sigma0_.cwiseAbs().maxCoeff()))
      throw InvalidArgument("ModelParams: sigma0 must be symmetric");
    sigma0_ = symmetrize(sigma0_);
    if (!is_positive_definite(sigma0_)) throw InvalidArgument("ModelParams: sigma0 must be positive definite");
    if (log_beta_.empty()) throw InvalidArgument("ModelParams: need at least one data type");
    for (std::size_t m = 0; m < log_beta_.size(); ++m) {
      const Matrix& lb = log_beta_[m];
      if (lb.rows() != k || lb.cols() < 1)
        throw InvalidArgument("ModelParams: log_beta[" + std::to_string(m) + "] must be K x V_m");
      if (!lb.allFinite())
        throw InvalidArgument("ModelParams: log_beta[" + std::to_string(m) + "] has non-finite entries");
      for (Eigen::Index r = 0; r < k; ++r) {
        const double s = lb.row(r).array().exp().sum();
        if (std::abs(s - 1.0) > 1e-9)
          throw InvalidArgument("ModelParams: beta row " + std::to_string(r) + " of type " + std::to_string(m) +
                                " sums to " + std::to_string(s));
      }
    }
    sigma0_inv_ = spd_inverse(sigma0_);
    sigma0_log_det_ = log_det_spd(sigma0_);
  }

  int num_phenotypes() const noexcept { return static_cast<int>(mu0_.size()); }
  int num_types() const noexcept { return static_cast<int>(log_beta_.size()); }
  int vocab_size(int m) const { return static_cast<int>(log_beta_.at(static_cast<std::size_t>(m)).cols()); }

  const Vector& mu0() const noexcept { return mu0_; }
  const Matrix& sigma0() const noexcept { return sigma0_; }
  const Matrix& sigma0_inv() const noexcept { return sigma0_inv_; }
  double sigma0_log_det() const noexcept { return sigma0_log_det_; }
  const std::vector<Matrix>& log_beta() const noexcept { return log_beta_; }
  const Matrix& log_beta(int m) const { return log_beta_.at(static_cast<std::size_t>(m)); }
  Matrix beta(int m) const { return log_beta(m).array().exp().matrix(); }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.mu0_.size() != b.mu0_.size() || a.log_beta_.size() != b.log_beta_.size()) return false;
    if (a.mu0_ != b.mu0_ || a.sigma0_ != b.sigma0_) return false;
    for (std::size_t m = 0; m < a.log_beta_.size(); ++m) {
      if (a.log_beta_[m].rows() != b.log_beta_[m].rows() || a.log_beta_[m].cols() != b.log_beta_[m].cols())
        return false;
      if (a.log_beta_[m] != b.log_beta_[m]) return false;
    }
    return true;
  }

 private:
  Vector mu0_;
  Matrix sigma0_;
  Matrix sigma0_inv_;
  double sigma0_log_det_ = 0.0;
  std::vector<Matrix> log_beta_;
};

}  // namespace phenoctm
