#include "dmlrc/dml.hpp"

#include <algorithm>
#include <cmath>

#include "dmlrc/errors.hpp"
#include "dmlrc/rng.hpp"
#include "dmlrc/stats.hpp"

namespace dmlrc {

void MainStudy::validate() const {
  if (Zexp.rows() != Y.size() || (W.size() > 0 && W.rows() != Y.size()))
    throw DataError("main study: row counts differ");
  if (!Y.allFinite() || !Zexp.allFinite() || (W.size() > 0 && !W.allFinite()))
    throw DataError("main study: data must be complete");
}

const char* mode_name(ExposureMode mode) {
  switch (mode) {
    case ExposureMode::kTrue: return "true";
    case ExposureMode::kUncorrected: return "uncorrected";
    case ExposureMode::kCorrected: return "corrected";
  }
  return "?";
}

SplitPlan make_folds(Eigen::Index N, int K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("make_folds: K must be at least 2");
  if (K > N / 2) throw ConfigError("make_folds: K exceeds N/2");
  std::vector<Eigen::Index> order(N);
  for (Eigen::Index i = 0; i < N; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  SplitPlan plan;
  plan.K = K;
  plan.seed = seed;
  plan.assignment.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) plan.assignment[order[i]] = static_cast<int>(i % K);
  return plan;
}

Eigen::MatrixXd working_exposures(const DmlProblem& prob) {
  if (prob.mode == ExposureMode::kCorrected) {
    if (!prob.calibration)
      throw ConfigError("corrected mode requires a calibration model");
    return prob.calibration->predict(prob.exposures, prob.covariates);
  }
  return prob.exposures;
}

std::vector<Eigen::Index> basis_exposure_columns(const DmlProblem& prob) {
  std::vector<Eigen::Index> cols;
  if (!prob.basis_exposures.has_value()) {
    for (Eigen::Index c = 0; c < prob.exposures.cols(); ++c)
      if (c != prob.x1_index) cols.push_back(c);
  } else {
    for (int c : *prob.basis_exposures) {
      if (c < 0 || c >= prob.exposures.cols() || c == prob.x1_index)
        throw ConfigError("basis exposure column out of range or equal to x1");
      cols.push_back(c);
    }
  }
  if (cols.size() != prob.spec.exposure_columns.size())
    throw ConfigError("design spec exposure columns do not match the problem");
  if (static_cast<Eigen::Index>(prob.spec.covariate_columns.size()) != prob.covariates.cols())
    throw ConfigError("design spec covariate columns do not match the problem");
  return cols;
}

namespace {

// basis row for observation i of an exposure matrix
void expand_row(const DesignSpec& spec, const Eigen::MatrixXd& E, const Eigen::MatrixXd& W,
                const std::vector<Eigen::Index>& cols, Eigen::Index i, Eigen::VectorXd& out) {
  Eigen::Index k = 0;
  for (Eigen::Index c : cols) out[k++] = E(i, c);
  for (Eigen::Index c = 0; c < W.cols(); ++c) out[k++] = W(i, c);
  if (spec.interactions) {
    const Eigen::Index d = k;
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = a + 1; b < d; ++b) out[k++] = out[a] * out[b];
  }
}

Eigen::MatrixXd basis_matrix(const DmlProblem& prob, const Eigen::MatrixXd& E) {
  const std::vector<Eigen::Index> cols = basis_exposure_columns(prob);
  Eigen::MatrixXd basis(E.rows(), static_cast<Eigen::Index>(prob.spec.column_count()));
  Eigen::VectorXd row(basis.cols());
  for (Eigen::Index i = 0; i < E.rows(); ++i) {
    expand_row(prob.spec, E, prob.covariates, cols, i, row);
    basis.row(i) = row;
  }
  return basis;
}

std::uint64_t nuisance_seed(std::uint64_t seed, int fold, int role) {
  return mix64(seed ^ (0x6e75697361ULL + static_cast<std::uint64_t>(fold) * 2 +
                       static_cast<std::uint64_t>(role)));
}

LinearFit fit_learner(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                      const LearnerConfig& cfg, std::uint64_t seed,
                      std::vector<std::string> columns) {
  if (cfg.kind == LearnerConfig::Kind::kOls)
    return ols_fit(design, y, std::move(columns));
  double lmax = lasso_lambda_max(design, y);
  Eigen::VectorXd grid = default_lambda_grid(lmax, cfg.grid_size, cfg.grid_min_ratio);
  return lasso_cv(design, y, cfg.cv_folds, std::move(grid), seed, std::move(columns)).fit;
}

void check_variance_component(double value, const char* which) {
  if (value < 0.0)
    throw NumericError(std::string("variance component ") + which + " is negative");
}

}  // namespace

NuisancePair fit_nuisances(const std::vector<Eigen::Index>& train_rows,
                           const Eigen::VectorXd& y, const Eigen::VectorXd& x1,
                           const Eigen::MatrixXd& basis, const LearnerConfig& cfg,
                           std::uint64_t seed, int fold) {
  Eigen::MatrixXd design(train_rows.size(), basis.cols());
  Eigen::VectorXd ytr(train_rows.size()), xtr(train_rows.size());
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    design.row(i) = basis.row(train_rows[i]);
    ytr[i] = y[train_rows[i]];
    xtr[i] = x1[train_rows[i]];
  }
  NuisancePair pair;
  pair.fold = fold;
  pair.g_hat = fit_learner(design, ytr, cfg, nuisance_seed(seed, fold, 0), {});
  pair.m_hat = fit_learner(design, xtr, cfg, nuisance_seed(seed, fold, 1), {});
  return pair;
}

double orthogonal_beta(const std::vector<Eigen::Index>& fold_rows, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& x1, const Eigen::MatrixXd& basis,
                       const NuisancePair& pair) {
  double denom = 0.0, numer = 0.0, x1_scale = 0.0;
  for (Eigen::Index i : fold_rows) {
    double m = pair.m_hat.predict(basis.row(i).transpose());
    double g = pair.g_hat.predict(basis.row(i).transpose());
    denom += x1[i] * (x1[i] - m);
    numer += (x1[i] - m) * (y[i] - g);
    x1_scale += x1[i] * x1[i];
  }
  if (std::abs(denom) < 1e-10 * x1_scale)
    throw NumericError(
        "degenerate orthogonalization: exposure residual is numerically zero "
        "(m-hat fits the exposure of interest exactly)");
  return numer / denom;
}

Eigen::VectorXd per_row_scores(const DmlProblem& prob, const Eigen::MatrixXd& exposures,
                               double beta, const std::vector<NuisancePair>& pairs,
                               const std::vector<int>& fold_of) {
  const Eigen::Index N = prob.y.size();
  const std::vector<Eigen::Index> cols = basis_exposure_columns(prob);
  Eigen::VectorXd scores(N);
  Eigen::VectorXd u(static_cast<Eigen::Index>(prob.spec.column_count()));
  for (Eigen::Index i = 0; i < N; ++i) {
    expand_row(prob.spec, exposures, prob.covariates, cols, i, u);
    const NuisancePair& pair = pairs[fold_of[i]];
    double x1 = exposures(i, prob.x1_index);
    double m = pair.m_hat.predict(u);
    double g = pair.g_hat.predict(u);
    scores[i] = (x1 - m) * (prob.y[i] - x1 * beta - g);
  }
  return scores;
}

double score_one(const DesignSpec& spec, double y, const Eigen::VectorXd& z,
                 const Eigen::VectorXd& w, int x1_index, double beta,
                 const CalibrationModel& model, const NuisancePair& pair) {
  Eigen::VectorXd xhat = model.predict(z, w);
  Eigen::VectorXd x2(xhat.size() - 1);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < xhat.size(); ++c)
    if (c != x1_index) x2[k++] = xhat[c];
  Eigen::VectorXd u = expand_basis(spec, x2, w);
  double x1 = xhat[x1_index];
  return (x1 - pair.m_hat.predict(u)) * (y - x1 * beta - pair.g_hat.predict(u));
}

Eigen::VectorXd numeric_score_gradient(const DmlProblem& prob, double beta,
                                       const std::vector<NuisancePair>& pairs,
                                       const std::vector<int>& fold_of, double delta) {
  if (!prob.calibration) throw ConfigError("score gradient requires a calibration model");
  if (delta <= 0.0) throw ConfigError("score gradient: delta must be positive");
  const CalibrationModel& model = *prob.calibration;
  const auto N = static_cast<double>(prob.y.size());

  auto mean_score_at = [&](const CalibrationModel& m) {
    Eigen::MatrixXd xhat = m.predict(prob.exposures, prob.covariates);
    return per_row_scores(prob, xhat, beta, pairs, fold_of).sum() / N;
  };

  const double base = mean_score_at(model);
  Eigen::VectorXd grad(model.theta_len());
  CalibrationModel perturbed = model;
  const Eigen::Index m = model.block_len();
  for (Eigen::Index c = 0; c < grad.size(); ++c) {
    const Eigen::Index block = c / m, offset = c % m;
    perturbed.theta(block, offset) = model.theta(block, offset) + delta;
    grad[c] = (mean_score_at(perturbed) - base) / delta;
    perturbed.theta(block, offset) = model.theta(block, offset);
  }
  return grad;
}

VarianceBreakdown variance_total(const DmlProblem& prob, double beta_hat,
                                 const std::vector<NuisancePair>& pairs,
                                 const std::vector<int>& fold_of, double delta) {
  const Eigen::Index N = prob.y.size();
  Eigen::MatrixXd E = working_exposures(prob);
  Eigen::MatrixXd basis = basis_matrix(prob, E);

  VarianceBreakdown out;
  double jac = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    double x1 = E(i, prob.x1_index);
    double m = pairs[fold_of[i]].m_hat.predict(basis.row(i).transpose());
    jac += x1 * (x1 - m);
  }
  out.jacobian = jac / static_cast<double>(N);
  if (out.jacobian == 0.0) throw NumericError("variance: zero score jacobian");

  Eigen::VectorXd scores = per_row_scores(prob, E, beta_hat, pairs, fold_of);
  out.component1 = scores.squaredNorm() / (static_cast<double>(N) * static_cast<double>(N));
  check_variance_component(out.component1, "1");

  if (prob.mode == ExposureMode::kCorrected) {
    Eigen::VectorXd grad = numeric_score_gradient(prob, beta_hat, pairs, fold_of, delta);
    double c2 = grad.dot(prob.calibration->var_theta * grad);
    // PSD up to the covariance symmetrization tolerance
    double tol = 1e-8 * grad.squaredNorm() *
                 std::max(1.0, prob.calibration->var_theta.diagonal().cwiseAbs().maxCoeff());
    if (c2 < -tol) throw NumericError("variance component 2 is negative beyond tolerance");
    out.component2 = std::max(c2, 0.0);
  }
  out.var = (out.component1 + out.component2) / (out.jacobian * out.jacobian);
  return out;
}

namespace {

DmlEstimate finalize(const DmlProblem& prob, double beta_hat, std::vector<double> per_fold,
                     const std::vector<NuisancePair>& pairs, const std::vector<int>& fold_of,
                     int K, std::uint64_t seed) {
  DmlEstimate est;
  est.mode = prob.mode;
  est.K = K;
  est.seed = seed;
  est.beta_hat = beta_hat;
  est.per_fold_betas = std::move(per_fold);
  VarianceBreakdown vb = variance_total(prob, beta_hat, pairs, fold_of);
  est.component1 = vb.component1;
  est.component2 = vb.component2;
  est.jacobian = vb.jacobian;
  est.ase = std::sqrt(vb.var);
  est.ci95 = {beta_hat - kZ95 * est.ase, beta_hat + kZ95 * est.ase};
  est.p_value = est.ase > 0.0 ? two_sided_p(beta_hat / est.ase) : (beta_hat == 0.0 ? 1.0 : 0.0);
  return est;
}

}  // namespace

DmlEstimate dml_estimate(const DmlProblem& prob, int K, std::uint64_t seed,
                         const LearnerConfig& learner) {
  const Eigen::Index N = prob.y.size();
  if (prob.exposures.rows() != N || prob.covariates.rows() != N)
    throw DataError("dml_estimate: row counts differ");
  Eigen::MatrixXd E = working_exposures(prob);
  Eigen::MatrixXd basis = basis_matrix(prob, E);
  Eigen::VectorXd x1 = E.col(prob.x1_index);

  SplitPlan plan = make_folds(N, K, seed);
  std::vector<std::vector<Eigen::Index>> fold_rows(K);
  for (Eigen::Index i = 0; i < N; ++i) fold_rows[plan.assignment[i]].push_back(i);

  std::vector<NuisancePair> pairs(K);
  std::vector<double> per_fold(K);
  std::string failures;
  for (int k = 0; k < K; ++k) {
    try {
      std::vector<Eigen::Index> train;
      train.reserve(N - fold_rows[k].size());
      for (Eigen::Index i = 0; i < N; ++i)
        if (plan.assignment[i] != k) train.push_back(i);
      pairs[k] = fit_nuisances(train, prob.y, x1, basis, learner, seed, k);
      per_fold[k] = orthogonal_beta(fold_rows[k], prob.y, x1, basis, pairs[k]);
    } catch (const Error& e) {
      failures += "fold " + std::to_string(k) + ": " + e.what() + "; ";
    }
  }
  if (!failures.empty()) throw NumericError("dml_estimate failed: " + failures);

  double beta_hat = 0.0;
  for (double b : per_fold) beta_hat += b;
  beta_hat /= static_cast<double>(K);

  DmlEstimate est = finalize(prob, beta_hat, per_fold, pairs, plan.assignment, K, seed);
  est.config = {{"K", K},
                {"seed", seed},
                {"learner", learner.kind == LearnerConfig::Kind::kOls ? "ols" : "lasso-cv"},
                {"interactions", prob.spec.interactions},
                {"x1_index", prob.x1_index}};
  return est;
}

DmlEstimate slr_estimate(const DmlProblem& prob) {
  const Eigen::Index N = prob.y.size();
  Eigen::MatrixXd E = working_exposures(prob);
  DmlProblem slr_prob = prob;
  slr_prob.spec.interactions = false;  // saturated model: main effects of everything
  Eigen::MatrixXd basis = basis_matrix(slr_prob, E);
  Eigen::VectorXd x1 = E.col(prob.x1_index);

  // implied partial fits: project outcome and exposure on the confounder block
  std::vector<NuisancePair> pairs(1);
  pairs[0].fold = 0;
  pairs[0].g_hat = ols_fit(basis, prob.y);
  pairs[0].m_hat = ols_fit(basis, x1);

  std::vector<Eigen::Index> all(N);
  for (Eigen::Index i = 0; i < N; ++i) all[i] = i;
  double beta_hat = orthogonal_beta(all, prob.y, x1, basis, pairs[0]);

  std::vector<int> fold_of(N, 0);
  DmlEstimate est = finalize(slr_prob, beta_hat, {beta_hat}, pairs, fold_of, 1, 0);
  est.config = {{"K", 1}, {"learner", "slr"}, {"x1_index", prob.x1_index}};
  return est;
}

nlohmann::json DmlEstimate::to_json() const {
  return nlohmann::json{{"mode", mode_name(mode)},
                        {"beta", beta_hat},
                        {"ase", ase},
                        {"ci95", {ci95.first, ci95.second}},
                        {"p", p_value},
                        {"per_fold", per_fold_betas},
                        {"var_components", {component1, component2}},
                        {"config", config.is_null() ? nlohmann::json::object() : config}};
}

}  // namespace dmlrc
