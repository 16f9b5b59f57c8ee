#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"

namespace dmlrc {

// Paired true/surrogate exposure data used to fit the measurement-error
// model. X may contain NaN cells (removed outliers); Z and W must be
// complete.
struct ValidationStudy {
  Eigen::MatrixXd X;  // n x (p+1) true exposures, NaN = missing cell
  Eigen::MatrixXd Z;  // n x (p+1) surrogate exposures
  Eigen::MatrixXd W;  // n x q error-free covariates

  Eigen::Index n() const { return Z.rows(); }
  Eigen::Index p_plus_1() const { return Z.cols(); }
  Eigen::Index q() const { return W.cols(); }
  // (1, Z_i, W_i)
  Eigen::VectorXd design_row(Eigen::Index i) const;
  void validate() const;
};

enum class MeatPolicy {
  kCompleteCase,      // rows complete in every constituent (default)
  kPairwiseComplete,  // each (j,k) block over rows with both cells observed
};

// Fitted calibration model: per-constituent coefficient blocks over
// L = (1, Z, W), residual variances, and the sandwich covariance of the
// stacked coefficient vector.
struct CalibrationModel {
  int p = 0;  // number of non-target constituents; p+1 blocks total
  int q = 0;
  long n = 0;
  Eigen::MatrixXd theta;      // (p+1) x (p+q+2); row j = block j
  Eigen::VectorXd sigma2;     // p+1 residual variances
  Eigen::MatrixXd var_theta;  // (p+1)(p+q+2) square
  std::string missing_policy = "complete-case";

  Eigen::Index block_len() const { return p + q + 2; }
  Eigen::Index theta_len() const { return (p + 1) * (p + q + 2); }

  // X-hat for one subject: block-wise dot products with (1, z, w)
  Eigen::VectorXd predict(const Eigen::VectorXd& z, const Eigen::VectorXd& w) const;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& W) const;

  nlohmann::json to_json() const;
  static CalibrationModel from_json(const nlohmann::json& j);
};

// Working-independence GEE estimate of the stacked calibration coefficients;
// block j is fit over the rows where constituent j is observed.
Eigen::MatrixXd fit_theta(const ValidationStudy& evs);

// Stacked solve of the full estimating equations with a diagonal working
// variance; agrees with fit_theta for any positive diagonal. Complete-case
// rows only (the stacked system has no per-block missing handling).
Eigen::VectorXd fit_theta_stacked(const ValidationStudy& evs, const Eigen::VectorXd& vdiag);

Eigen::VectorXd residual_variances(const ValidationStudy& evs, const Eigen::MatrixXd& theta);

Eigen::MatrixXd sandwich_var_theta(const ValidationStudy& evs, const Eigen::MatrixXd& theta,
                                   const Eigen::VectorXd& sigma2,
                                   MeatPolicy policy = MeatPolicy::kCompleteCase);

// fit_theta + residual_variances + sandwich_var_theta in one step
CalibrationModel fit_calibration(const ValidationStudy& evs,
                                 MeatPolicy policy = MeatPolicy::kCompleteCase);

}  // namespace dmlrc
