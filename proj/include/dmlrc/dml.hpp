#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dmlrc/calibration.hpp"
#include "dmlrc/learners.hpp"
#include "json.hpp"

namespace dmlrc {

// Outcome + exposures + covariates for the estimation sample.
struct MainStudy {
  Eigen::VectorXd Y;
  Eigen::MatrixXd Zexp;  // N x (p+1) surrogate exposures
  Eigen::MatrixXd W;     // N x q
  Eigen::Index N() const { return Y.size(); }
  void validate() const;
};

struct SplitPlan {
  int K = 2;
  std::vector<int> assignment;  // fold index per row
  std::uint64_t seed = 0;
};

// Seeded uniform shuffle followed by round-robin assignment; fold sizes
// differ by at most one.
SplitPlan make_folds(Eigen::Index N, int K, std::uint64_t seed);

enum class ExposureMode { kTrue, kUncorrected, kCorrected };
const char* mode_name(ExposureMode mode);

struct LearnerConfig {
  enum class Kind { kLassoCv, kOls };
  Kind kind = Kind::kLassoCv;
  int cv_folds = 5;
  int grid_size = 100;
  double grid_min_ratio = 1e-3;
};

// Fold-specific nuisance fits: g_hat predicts the outcome, m_hat predicts the
// exposure of interest, both over the expanded basis and both trained off the
// fold they score.
struct NuisancePair {
  LinearFit g_hat;
  LinearFit m_hat;
  int fold = 0;
};

struct DmlEstimate {
  double beta_hat = 0.0;
  double ase = 0.0;
  std::pair<double, double> ci95{0.0, 0.0};
  double p_value = 1.0;
  std::vector<double> per_fold_betas;
  double component1 = 0.0;  // score variance given fixed predicted exposures
  double component2 = 0.0;  // calibration-uncertainty contribution
  double jacobian = 0.0;
  ExposureMode mode = ExposureMode::kTrue;
  int K = 1;
  std::uint64_t seed = 0;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

// One estimation task. `exposures` holds the columns the chosen mode works
// with (true values in oracle runs, surrogates otherwise); in corrected mode
// `calibration` turns surrogates into predicted exposures and contributes the
// second variance component.
struct DmlProblem {
  const Eigen::VectorXd& y;
  const Eigen::MatrixXd& exposures;
  const Eigen::MatrixXd& covariates;
  int x1_index = 0;
  ExposureMode mode = ExposureMode::kUncorrected;
  const CalibrationModel* calibration = nullptr;
  DesignSpec spec;  // basis over the non-target exposures and covariates
  // exposure columns entering the basis; nullopt = all except x1_index
  // (single-pollutant runs restrict this to the total-mass column)
  std::optional<std::vector<int>> basis_exposures;
};

// Resolved basis columns for a problem, validated against its spec.
std::vector<Eigen::Index> basis_exposure_columns(const DmlProblem& prob);

// Exposure matrix the estimator actually runs on: calibrated predictions in
// corrected mode, the input columns otherwise.
Eigen::MatrixXd working_exposures(const DmlProblem& prob);

NuisancePair fit_nuisances(const std::vector<Eigen::Index>& train_rows,
                           const Eigen::VectorXd& y, const Eigen::VectorXd& x1,
                           const Eigen::MatrixXd& basis, const LearnerConfig& cfg,
                           std::uint64_t seed, int fold);

// Orthogonalized per-fold estimate:
//   [sum x1 (x1 - m)]^{-1} sum (x1 - m)(y - g)  over the fold rows.
double orthogonal_beta(const std::vector<Eigen::Index>& fold_rows, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& x1, const Eigen::MatrixXd& basis,
                       const NuisancePair& pair);

// Per-observation score (x1 - m)(y - x1*beta - g) with fold-matched pairs,
// evaluated on an explicit exposure matrix (predicted or raw).
Eigen::VectorXd per_row_scores(const DmlProblem& prob, const Eigen::MatrixXd& exposures,
                               double beta, const std::vector<NuisancePair>& pairs,
                               const std::vector<int>& fold_of);

// Single-observation score with predicted exposures recomputed from theta so
// that perturbations of theta flow through.
double score_one(const DesignSpec& spec, double y, const Eigen::VectorXd& z,
                 const Eigen::VectorXd& w, int x1_index, double beta,
                 const CalibrationModel& model, const NuisancePair& pair);

// Forward-difference derivative of the mean score with respect to each
// calibration coefficient, nuisance functions held fixed.
Eigen::VectorXd numeric_score_gradient(const DmlProblem& prob, double beta,
                                       const std::vector<NuisancePair>& pairs,
                                       const std::vector<int>& fold_of, double delta = 1e-4);

struct VarianceBreakdown {
  double var = 0.0;
  double component1 = 0.0;
  double component2 = 0.0;
  double jacobian = 0.0;
};

VarianceBreakdown variance_total(const DmlProblem& prob, double beta_hat,
                                 const std::vector<NuisancePair>& pairs,
                                 const std::vector<int>& fold_of, double delta = 1e-4);

DmlEstimate dml_estimate(const DmlProblem& prob, int K, std::uint64_t seed,
                         const LearnerConfig& learner);

// Saturated linear regression comparator: the coefficient of x1 in the OLS of
// y on (1, x1, other exposures, covariates), with the same variance machinery
// run at K=1 over the implied partial fits.
DmlEstimate slr_estimate(const DmlProblem& prob);

}  // namespace dmlrc
