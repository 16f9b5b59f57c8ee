#include "dmlrc/learners.hpp"

#include <algorithm>
#include <cmath>

#include "dmlrc/errors.hpp"
#include "dmlrc/rng.hpp"

namespace dmlrc {

std::vector<std::string> DesignSpec::column_names() const {
  std::vector<std::string> names = exposure_columns;
  names.insert(names.end(), covariate_columns.begin(), covariate_columns.end());
  if (interactions) {
    std::size_t d = names.size();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) names.push_back(names[i] + ":" + names[j]);
  }
  return names;
}

Eigen::VectorXd expand_basis(const DesignSpec& spec, const Eigen::VectorXd& x2,
                             const Eigen::VectorXd& w) {
  const auto p = static_cast<Eigen::Index>(spec.exposure_columns.size());
  const auto q = static_cast<Eigen::Index>(spec.covariate_columns.size());
  if (x2.size() != p || w.size() != q)
    throw DataError("expand_basis: input dimensions do not match the design spec");
  const Eigen::Index d = p + q;
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.column_count()));
  out.head(p) = x2;
  out.segment(p, q) = w;
  if (spec.interactions) {
    Eigen::Index k = d;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i + 1; j < d; ++j) out[k++] = out[i] * out[j];
  }
  return out;
}

Eigen::MatrixXd expand_basis_matrix(const DesignSpec& spec, const Eigen::MatrixXd& X2,
                                    const Eigen::MatrixXd& W) {
  if (X2.rows() != W.rows()) throw DataError("expand_basis: row count mismatch");
  Eigen::MatrixXd out(X2.rows(), static_cast<Eigen::Index>(spec.column_count()));
  for (Eigen::Index i = 0; i < X2.rows(); ++i)
    out.row(i) = expand_basis(spec, X2.row(i), W.row(i)).transpose();
  return out;
}

LinearFit LinearFit::constant(double value, Eigen::Index ncols) {
  LinearFit fit;
  fit.intercept = value;
  fit.coefficients = Eigen::VectorXd::Zero(ncols);
  fit.standard_mean = Eigen::VectorXd::Zero(ncols);
  fit.standard_scale = Eigen::VectorXd::Ones(ncols);
  return fit;
}

namespace {

// Column standardization: center to zero mean, scale to unit sample SD
// (columns with zero spread keep scale 1 and never enter the active set).
struct Standardized {
  Eigen::MatrixXd X;
  Eigen::VectorXd mean, scale;
  Eigen::VectorXd y_centered;
  double y_mean = 0.0;
};

Standardized standardize(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  Standardized s;
  const auto n = static_cast<double>(design.rows());
  s.mean = design.colwise().mean();
  s.X = design.rowwise() - s.mean.transpose();
  s.scale.resize(design.cols());
  for (Eigen::Index k = 0; k < design.cols(); ++k) {
    double sd = std::sqrt(s.X.col(k).squaredNorm() / n);
    s.scale[k] = sd > 0.0 ? sd : 1.0;
    s.X.col(k) /= s.scale[k];
  }
  s.y_mean = y.mean();
  s.y_centered = y.array() - s.y_mean;
  return s;
}

LinearFit destandardize(const Standardized& s, const Eigen::VectorXd& beta_std,
                        double lambda, std::vector<std::string> columns) {
  LinearFit fit;
  fit.lambda = lambda;
  fit.columns = std::move(columns);
  fit.standard_mean = s.mean;
  fit.standard_scale = s.scale;
  fit.coefficients = beta_std.cwiseQuotient(s.scale);
  fit.intercept = s.y_mean - fit.coefficients.dot(s.mean);
  return fit;
}

// One coordinate-descent solve with covariance updates. `gram` = X'X/N and
// `xty` = X'y/N over standardized columns; `beta` is the warm start.
void cd_solve(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda,
              Eigen::VectorXd& beta, const LassoOptions& opts) {
  const Eigen::Index d = xty.size();
  for (long sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      double gk = gram(k, k);
      if (gk <= 0.0) continue;  // constant column
      double rho = xty[k] - gram.col(k).dot(beta) + gk * beta[k];
      double bnew = 0.0;
      if (rho > lambda)
        bnew = (rho - lambda) / gk;
      else if (rho < -lambda)
        bnew = (rho + lambda) / gk;
      max_delta = std::max(max_delta, std::abs(bnew - beta[k]));
      beta[k] = bnew;
    }
    if (max_delta < opts.tolerance) return;
  }
  throw ConvergenceError("lasso coordinate descent did not converge after " +
                             std::to_string(opts.max_sweeps) + " sweeps",
                         opts.max_sweeps);
}

}  // namespace

LinearFit ols_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  std::vector<std::string> columns) {
  if (design.rows() != y.size()) throw DataError("ols_fit: row count mismatch");
  if (design.rows() <= design.cols() + 1)
    throw DataError("ols_fit: need more rows than columns + 1");
  // solve on centered columns; the intercept absorbs the means
  Standardized s = standardize(design, y);
  Eigen::MatrixXd gram = s.X.transpose() * s.X;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  Eigen::VectorXd d = ldlt.vectorD();
  double dmax = d.size() ? d.maxCoeff() : 0.0;
  if (d.size() && (ldlt.info() != Eigen::Success || d.minCoeff() < 1e-10 * dmax))
    throw NumericError("ols_fit: singular design (rank-deficient normal equations)");
  Eigen::VectorXd beta_std = ldlt.solve(s.X.transpose() * s.y_centered);
  return destandardize(s, beta_std, 0.0, std::move(columns));
}

double lasso_lambda_max(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  Standardized s = standardize(design, y);
  const auto n = static_cast<double>(design.rows());
  return (s.X.transpose() * s.y_centered).cwiseAbs().maxCoeff() / n;
}

Eigen::VectorXd default_lambda_grid(double lambda_max, int count, double min_ratio) {
  if (count < 1 || lambda_max <= 0.0) return Eigen::VectorXd::Constant(1, std::max(lambda_max, 0.0));
  Eigen::VectorXd grid(count);
  double log_hi = std::log(lambda_max);
  double log_lo = std::log(lambda_max * min_ratio);
  for (int i = 0; i < count; ++i)
    grid[i] = std::exp(log_hi + (log_lo - log_hi) * static_cast<double>(i) /
                                    static_cast<double>(count - 1));
  return grid;
}

LinearFit lasso_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, double lambda,
                    std::vector<std::string> columns, const LassoOptions& opts) {
  if (design.rows() != y.size()) throw DataError("lasso_fit: row count mismatch");
  if (design.rows() < 2) throw DataError("lasso_fit: need at least 2 rows");
  if (lambda < 0.0) throw ConfigError("lasso_fit: lambda must be nonnegative");
  Standardized s = standardize(design, y);
  const auto n = static_cast<double>(design.rows());
  Eigen::MatrixXd gram = (s.X.transpose() * s.X) / n;
  Eigen::VectorXd xty = (s.X.transpose() * s.y_centered) / n;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.cols());
  cd_solve(gram, xty, lambda, beta, opts);
  return destandardize(s, beta, lambda, std::move(columns));
}

LassoCvResult lasso_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, int folds,
                       Eigen::VectorXd grid, std::uint64_t seed,
                       std::vector<std::string> columns, const LassoOptions& opts) {
  const Eigen::Index n = design.rows();
  if (folds < 2) throw ConfigError("lasso_cv: need at least 2 folds");
  if (grid.size() == 0) throw ConfigError("lasso_cv: empty penalty grid");
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    if (grid[i] > grid[i - 1]) throw ConfigError("lasso_cv: grid must be sorted descending");

  // seeded shuffle, round-robin fold labels
  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold_of(n);
  for (Eigen::Index i = 0; i < n; ++i) fold_of[order[i]] = static_cast<int>(i % folds);

  Eigen::VectorXd sq_err = Eigen::VectorXd::Zero(grid.size());
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train, val;
    for (Eigen::Index i = 0; i < n; ++i) (fold_of[i] == f ? val : train).push_back(i);
    Eigen::MatrixXd Xtr(train.size(), design.cols()), Xva(val.size(), design.cols());
    Eigen::VectorXd ytr(train.size()), yva(val.size());
    for (std::size_t i = 0; i < train.size(); ++i) Xtr.row(i) = design.row(train[i]), ytr[i] = y[train[i]];
    for (std::size_t i = 0; i < val.size(); ++i) Xva.row(i) = design.row(val[i]), yva[i] = y[val[i]];

    Standardized s = standardize(Xtr, ytr);
    const auto ntr = static_cast<double>(Xtr.rows());
    Eigen::MatrixXd gram = (s.X.transpose() * s.X) / ntr;
    Eigen::VectorXd xty = (s.X.transpose() * s.y_centered) / ntr;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.cols());
    for (Eigen::Index gi = 0; gi < grid.size(); ++gi) {
      cd_solve(gram, xty, grid[gi], beta, opts);  // warm start from previous lambda
      Eigen::VectorXd coef = beta.cwiseQuotient(s.scale);
      double intercept = s.y_mean - coef.dot(s.mean);
      Eigen::VectorXd pred = (Xva * coef).array() + intercept;
      sq_err[gi] += (yva - pred).squaredNorm();
    }
  }
  Eigen::VectorXd cv_error = sq_err / static_cast<double>(n);

  Eigen::Index best = 0;
  for (Eigen::Index gi = 1; gi < grid.size(); ++gi)
    if (cv_error[gi] < cv_error[best]) best = gi;

  LassoCvResult out;
  out.lambda = grid[best];
  out.grid = std::move(grid);
  out.cv_error = std::move(cv_error);
  out.fit = lasso_fit(design, y, out.lambda, std::move(columns), opts);
  return out;
}

}  // namespace dmlrc
