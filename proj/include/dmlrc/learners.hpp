#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace dmlrc {

// Design layout for the nuisance regressions: main effects of the non-target
// exposures and the covariates, optionally followed by all pairwise products.
struct DesignSpec {
  std::vector<std::string> exposure_columns;   // the X2 block, in input order
  std::vector<std::string> covariate_columns;  // the W block
  bool interactions = false;

  std::size_t input_dim() const { return exposure_columns.size() + covariate_columns.size(); }
  std::size_t column_count() const {
    std::size_t d = input_dim();
    return interactions ? d + d * (d - 1) / 2 : d;
  }
  std::vector<std::string> column_names() const;
};

// Main effects in input order, then pairwise products (i<j) in lexicographic
// index order.
Eigen::VectorXd expand_basis(const DesignSpec& spec, const Eigen::VectorXd& x2,
                             const Eigen::VectorXd& w);
Eigen::MatrixXd expand_basis_matrix(const DesignSpec& spec, const Eigen::MatrixXd& X2,
                                    const Eigen::MatrixXd& W);

// A fitted linear predictor on the original (unstandardized) column scale.
struct LinearFit {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;  // one per design column
  std::vector<std::string> columns;
  double lambda = 0.0;                 // penalty used; 0 for OLS
  Eigen::VectorXd standard_mean;       // per-column centering applied before fitting
  Eigen::VectorXd standard_scale;      // per-column scale applied before fitting

  double predict(const Eigen::Ref<const Eigen::VectorXd>& row) const {
    return intercept + coefficients.dot(row);
  }
  Eigen::VectorXd predict_rows(const Eigen::Ref<const Eigen::MatrixXd>& rows) const {
    return (rows * coefficients).array() + intercept;
  }
  static LinearFit constant(double value, Eigen::Index ncols);
};

LinearFit ols_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  std::vector<std::string> columns = {});

struct LassoOptions {
  long max_sweeps = 10000;
  double tolerance = 1e-8;  // max absolute coefficient change per sweep
};

LinearFit lasso_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, double lambda,
                    std::vector<std::string> columns = {}, const LassoOptions& opts = {});

// Largest penalty with an all-zero solution: max_k |<x_k, y - ybar>| / N over
// standardized columns.
double lasso_lambda_max(const Eigen::MatrixXd& design, const Eigen::VectorXd& y);

Eigen::VectorXd default_lambda_grid(double lambda_max, int count = 100,
                                    double min_ratio = 1e-3);

struct LassoCvResult {
  double lambda = 0.0;                // selected penalty
  LinearFit fit;                      // refit on all rows at the selected penalty
  Eigen::VectorXd grid;               // penalties evaluated, descending
  Eigen::VectorXd cv_error;           // mean out-of-fold squared error per grid point
};

// Minimum-CV-error penalty selection over a seeded fold split; ties broken
// toward the larger penalty.
LassoCvResult lasso_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, int folds,
                       Eigen::VectorXd grid, std::uint64_t seed,
                       std::vector<std::string> columns = {}, const LassoOptions& opts = {});

}  // namespace dmlrc
