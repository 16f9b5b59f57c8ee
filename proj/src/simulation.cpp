#include "dmlrc/simulation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "dmlrc/errors.hpp"
#include "dmlrc/rng.hpp"
#include "dmlrc/stats.hpp"

namespace dmlrc {

namespace {

// Correlations of log-transformed surrogate exposures across the 12
// constituents (Br, Ca, Cu, Fe, Mn, Ni, S, Se, Si, Ti, V, Zn).
constexpr double kSurrogateCorr[12][12] = {
    {1.00, 0.08, 0.24, 0.28, 0.31, 0.17, 0.00, 0.15, -0.02, 0.06, 0.22, 0.36},
    {0.08, 1.00, 0.69, 0.74, 0.76, 0.48, -0.28, -0.40, 0.73, 0.61, 0.62, 0.56},
    {0.24, 0.69, 1.00, 0.74, 0.69, 0.38, -0.14, -0.33, 0.47, 0.66, 0.45, 0.50},
    {0.28, 0.74, 0.74, 1.00, 0.73, 0.48, -0.03, -0.28, 0.61, 0.67, 0.56, 0.69},
    {0.31, 0.76, 0.69, 0.73, 1.00, 0.48, -0.20, -0.20, 0.45, 0.47, 0.62, 0.67},
    {0.17, 0.48, 0.38, 0.48, 0.48, 1.00, 0.11, -0.19, 0.20, 0.30, 0.68, 0.60},
    {0.00, -0.28, -0.14, -0.03, -0.20, 0.11, 1.00, 0.20, 0.01, 0.11, -0.09, -0.02},
    {0.15, -0.40, -0.33, -0.28, -0.20, -0.19, 0.20, 1.00, -0.27, -0.26, -0.12, -0.22},
    {-0.02, 0.73, 0.47, 0.61, 0.45, 0.20, 0.01, -0.27, 1.00, 0.72, 0.32, 0.15},
    {0.06, 0.61, 0.66, 0.67, 0.47, 0.30, 0.11, -0.26, 0.72, 1.00, 0.32, 0.28},
    {0.22, 0.62, 0.45, 0.56, 0.62, 0.68, -0.09, -0.12, 0.32, 0.32, 1.00, 0.57},
    {0.36, 0.56, 0.50, 0.69, 0.67, 0.60, -0.02, -0.22, 0.15, 0.28, 0.57, 1.00}};

// Correlations of the log-scale measurement errors for the same constituents.
constexpr double kErrorCorr[12][12] = {
    {1.00, 0.25, 0.13, 0.37, 0.17, 0.25, 0.51, -0.07, 0.19, 0.21, 0.06, 0.27},
    {0.25, 1.00, 0.25, 0.60, 0.20, 0.28, 0.46, -0.05, 0.66, 0.73, 0.19, 0.34},
    {0.13, 0.25, 1.00, 0.42, 0.12, 0.11, 0.23, -0.10, 0.37, 0.28, 0.27, 0.41},
    {0.37, 0.60, 0.42, 1.00, 0.36, 0.40, 0.53, 0.02, 0.51, 0.58, 0.14, 0.54},
    {0.17, 0.20, 0.12, 0.36, 1.00, 0.19, 0.26, 0.02, 0.16, 0.15, 0.17, 0.14},
    {0.25, 0.28, 0.11, 0.40, 0.19, 1.00, 0.33, -0.05, 0.15, 0.24, 0.01, 0.22},
    {0.51, 0.46, 0.23, 0.53, 0.26, 0.33, 1.00, 0.16, 0.36, 0.25, 0.23, 0.36},
    {-0.07, -0.05, -0.10, 0.02, 0.02, -0.05, 0.16, 1.00, -0.16, -0.15, -0.08, -0.15},
    {0.19, 0.66, 0.37, 0.51, 0.16, 0.15, 0.36, -0.16, 1.00, 0.69, 0.24, 0.32},
    {0.21, 0.73, 0.28, 0.58, 0.15, 0.24, 0.25, -0.15, 0.69, 1.00, 0.21, 0.26},
    {0.06, 0.19, 0.27, 0.14, 0.17, 0.01, 0.23, -0.08, 0.24, 0.21, 1.00, 0.10},
    {0.27, 0.34, 0.41, 0.54, 0.14, 0.22, 0.36, -0.15, 0.32, 0.26, 0.10, 1.00}};

// Target proportions of outcome variance explained, per scenario.
constexpr double kR2Target[8] = {0.40, 0.60, 0.40, 0.60, 0.42, 0.59, 0.40, 0.58};

// Outcome noise variances frozen so a 50,000-row pilot under the default
// exposure structure realizes the targets above (see freeze_noise tool).
constexpr double kSigmaXi2[8] = {864.0, 384.0, 864.0, 384.0, 88.4, 44.5, 88.4, 44.5};

constexpr std::uint64_t kPilotSeed = 0x70696c6f745f7364ULL;

constexpr double kW2Prob = 0.16;
constexpr double kW1Lo = 18.0, kW1Hi = 91.0;
constexpr double kW2Bump = 0.1;

Eigen::MatrixXd table_matrix(const double t[12][12]) {
  Eigen::MatrixXd M(12, 12);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) M(i, j) = t[i][j];
  return M;
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& S) {
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw ConfigError("covariance matrix is not positive semidefinite");
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

// draw `count` accepted rows through rejection against the positive orthant
Eigen::MatrixXd rejection_rows(const Eigen::VectorXd& mu, const Eigen::MatrixXd& factor,
                               long count, Rng& rng) {
  const Eigen::Index d = mu.size();
  Eigen::MatrixXd out(count, d);
  Eigen::VectorXd z(d), x(d);
  for (long r = 0; r < count;) {
    for (Eigen::Index k = 0; k < d; ++k) z[k] = rng.normal();
    x = mu + factor * z;
    if ((x.array() > 0.0).all()) out.row(r++) = x;
  }
  return out;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (scenario < 1 || scenario > 8) throw ConfigError("scenario must be 1-8");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0,1)");
  if (N < 20 || n < 10) throw ConfigError("main/validation sample sizes too small");
  const Eigen::Index d = mu.size();
  if (sigma.rows() != d || sigma.cols() != d || err_corr.rows() != d || err_corr.cols() != d)
    throw ConfigError("mu, sigma, err_corr dimensions disagree");
  if (!sigma.isApprox(sigma.transpose(), 1e-8) || !err_corr.isApprox(err_corr.transpose(), 1e-8))
    throw ConfigError("sigma and err_corr must be symmetric");
  if ((err_corr.diagonal().array() - 1.0).abs().maxCoeff() > 1e-8)
    throw ConfigError("err_corr must have unit diagonal");
  if (sigma_xi2 < 0.0) throw ConfigError("sigma_xi2 must be nonnegative");
}

ScenarioConfig ScenarioConfig::defaults(int scenario, double rho, std::uint64_t seed) {
  if (scenario < 1 || scenario > 8) throw ConfigError("scenario must be 1-8");
  ScenarioConfig cfg;
  cfg.scenario = scenario;
  cfg.rho = rho;
  cfg.seed = seed;
  cfg.mu = Eigen::VectorXd::Constant(12, 3.0);
  cfg.sigma = nearest_correlation(table_matrix(kSurrogateCorr));
  cfg.err_corr = nearest_correlation(table_matrix(kErrorCorr));
  cfg.sigma_xi2 = kSigmaXi2[scenario - 1];
  return cfg;
}

Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& A, double eig_floor) {
  Eigen::MatrixXd S = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(eig_floor);
  Eigen::MatrixXd M = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  Eigen::VectorXd d = M.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) /= d[i] * d[j];
  return 0.5 * (M + M.transpose());
}

Eigen::MatrixXd sample_truncated_mvn(const Eigen::VectorXd& mu, const Eigen::MatrixXd& Sigma,
                                     long count, std::uint64_t seed) {
  if (count <= 0) throw ConfigError("sample count must be positive");
  Eigen::MatrixXd factor = psd_factor(Sigma);

  // feasibility pilot on a separate stream
  Rng pilot(mix64(seed ^ kPilotSeed));
  const Eigen::Index d = mu.size();
  Eigen::VectorXd z(d);
  long accepted = 0;
  for (long t = 0; t < 10000; ++t) {
    for (Eigen::Index k = 0; k < d; ++k) z[k] = pilot.normal();
    if (((mu + factor * z).array() > 0.0).all()) ++accepted;
  }
  if (accepted < 10)
    throw ConfigError("truncated sampler: acceptance probability below 1e-3");

  Rng rng(seed);
  return rejection_rows(mu, factor, count, rng);
}

Eigen::VectorXd error_scales_for_rho(const Eigen::VectorXd& sd_x, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0,1)");
  return sd_x * (std::sqrt(1.0 - rho * rho) / rho);
}

double g_star(int scenario, const Eigen::Ref<const Eigen::VectorXd>& x2,
              const Eigen::Ref<const Eigen::VectorXd>& w) {
  auto logistic = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
  switch (scenario) {
    case 1:
    case 2:
      return 1.0 + 22.0 * x2[0];
    case 3:
    case 4:
      return 1.0 + 12.0 * (x2[0] + x2[1] + x2[2] + w[1]);
    case 5:
    case 6:
      return 1.0 + 16.0 * logistic(20.0 * x2[0] - 0.4);
    case 7:
    case 8:
      return 1.0 + 8.0 * logistic(20.0 * x2[0] - 0.4) + 8.0 * logistic(30.0 * x2[1] - 0.3) +
             8.0 * logistic(500.0 * x2[2] - 0.02) + 8.0 * w[1];
    default:
      throw ConfigError("scenario must be 1-8");
  }
}

PreparedScenario prepare_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  PreparedScenario prep;
  prep.cfg = cfg;
  prep.exposure_factor = psd_factor(cfg.sigma);

  // truncated-distribution SDs from a fixed-seed pilot, including the binary
  // covariate shift on the exposure of interest
  const long pilot_rows = 100000;
  Rng rng(kPilotSeed);
  Eigen::MatrixXd X = rejection_rows(cfg.mu, prep.exposure_factor, pilot_rows, rng);
  Rng wrng(mix64(kPilotSeed ^ 0x77));
  for (long i = 0; i < pilot_rows; ++i)
    if (wrng.bernoulli(kW2Prob)) X(i, 0) += kW2Bump;
  Eigen::RowVectorXd mean = X.colwise().mean();
  prep.sd_x = ((X.rowwise() - mean).colwise().squaredNorm() / double(pilot_rows))
                  .cwiseSqrt()
                  .transpose();

  prep.tau_sd = error_scales_for_rho(prep.sd_x, cfg.rho);
  prep.sigma_err = prep.tau_sd.asDiagonal() * cfg.err_corr * prep.tau_sd.asDiagonal();
  prep.error_factor = psd_factor(prep.sigma_err);
  return prep;
}

GeneratedStudy generate_study(const PreparedScenario& prep, std::uint64_t seed) {
  const ScenarioConfig& cfg = prep.cfg;
  const long total = cfg.N + cfg.n;
  const Eigen::Index d = cfg.dim();

  Eigen::MatrixXd X = sample_truncated_mvn(cfg.mu, cfg.sigma, total, mix64(seed ^ 0x58));

  Rng wrng(mix64(seed ^ 0x57));
  Eigen::MatrixXd W(total, 2);
  for (long i = 0; i < total; ++i) {
    W(i, 0) = wrng.uniform(kW1Lo, kW1Hi);
    W(i, 1) = wrng.bernoulli(kW2Prob) ? 1.0 : 0.0;
  }
  X.col(0) += kW2Bump * W.col(1);

  Rng erng(mix64(seed ^ 0x45));
  Eigen::MatrixXd Z(total, d);
  Eigen::VectorXd z(d);
  for (long i = 0; i < total; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) z[k] = erng.normal();
    Z.row(i) = X.row(i) + (prep.error_factor * z).transpose();
  }

  Rng xirng(mix64(seed ^ 0x78));
  const double xi_sd = std::sqrt(cfg.sigma_xi2);
  Eigen::VectorXd Y(cfg.N);
  for (long i = 0; i < cfg.N; ++i) {
    Y[i] = cfg.beta0 * X(i, 0) +
           g_star(cfg.scenario, X.row(i).tail(d - 1).transpose(), W.row(i).transpose()) +
           xi_sd * xirng.normal();
  }

  GeneratedStudy study;
  study.ms.Y = Y;
  study.ms.Zexp = Z.topRows(cfg.N);
  study.ms.W = W.topRows(cfg.N);
  study.ms_true_exposures = X.topRows(cfg.N);
  study.evs.X = X.bottomRows(cfg.n);
  study.evs.Z = Z.bottomRows(cfg.n);
  study.evs.W = W.bottomRows(cfg.n);
  return study;
}

GeneratedStudy generate_study(const ScenarioConfig& cfg, std::uint64_t seed) {
  return generate_study(prepare_scenario(cfg), seed);
}

const char* method_name(Method m) { return m == Method::kDml ? "dml" : "slr"; }

std::vector<MethodMode> all_method_modes() {
  return {{Method::kSlr, ExposureMode::kTrue},       {Method::kDml, ExposureMode::kTrue},
          {Method::kSlr, ExposureMode::kUncorrected}, {Method::kDml, ExposureMode::kUncorrected},
          {Method::kSlr, ExposureMode::kCorrected},   {Method::kDml, ExposureMode::kCorrected}};
}

ReplicateStats summarize_replicates(const std::vector<double>& betas,
                                    const std::vector<double>& ases, double beta0) {
  if (betas.size() < 2 || betas.size() != ases.size())
    throw DataError("summarize_replicates: need at least two paired estimates");
  const auto R = static_cast<double>(betas.size());
  ReplicateStats s{};
  double bmean = mean(betas);
  s.relative_bias = (bmean - beta0) / beta0;
  s.ese = sample_sd(betas);
  s.ase_mean = mean(ases);
  long covered = 0;
  double mse = 0.0;
  for (std::size_t r = 0; r < betas.size(); ++r) {
    if (std::abs(betas[r] - beta0) <= kZ95 * ases[r]) ++covered;
    mse += (betas[r] - beta0) * (betas[r] - beta0);
  }
  s.coverage = static_cast<double>(covered) / R;
  s.mse = mse / R;
  s.ase_degenerate = s.ase_mean < 1e-10 * std::max(1.0, std::abs(beta0));
  s.ase_ese_ratio = s.ese > 0.0 ? s.ase_mean / s.ese : std::nan("");
  return s;
}

MetricsSummary run_replicates(const ScenarioConfig& cfg, long R,
                              const std::vector<MethodMode>& methods, std::uint64_t base_seed,
                              int threads, const LearnerConfig& learner) {
  if (R < 2) throw ConfigError("run_replicates: need at least 2 replicates");
  if (methods.empty()) throw ConfigError("run_replicates: no methods requested");
  PreparedScenario prep = prepare_scenario(cfg);

  bool need_model = false;
  for (const auto& mm : methods)
    if (mm.mode == ExposureMode::kCorrected) need_model = true;

  const auto M = methods.size();
  std::vector<std::vector<double>> beta(M, std::vector<double>(R, 0.0));
  std::vector<std::vector<double>> ase(M, std::vector<double>(R, 0.0));
  std::vector<std::string> failure(R);

  DesignSpec spec;
  for (Eigen::Index c = 1; c < cfg.dim(); ++c)
    spec.exposure_columns.push_back("x2_" + std::to_string(c));
  spec.covariate_columns = {"w1", "w2"};

  auto run_one = [&](long r) {
    const std::uint64_t rep_seed = base_seed ^ static_cast<std::uint64_t>(r);
    try {
      GeneratedStudy study = generate_study(prep, rep_seed);
      CalibrationModel model;
      if (need_model) model = fit_calibration(study.evs);
      const std::uint64_t est_seed = mix64(rep_seed ^ 0xd31);
      for (std::size_t m = 0; m < M; ++m) {
        const Eigen::MatrixXd& expo = methods[m].mode == ExposureMode::kTrue
                                          ? study.ms_true_exposures
                                          : study.ms.Zexp;
        DmlProblem prob{study.ms.Y,
                        expo,
                        study.ms.W,
                        0,
                        methods[m].mode,
                        methods[m].mode == ExposureMode::kCorrected ? &model : nullptr,
                        spec};
        DmlEstimate est = methods[m].method == Method::kDml
                              ? dml_estimate(prob, 2, est_seed, learner)
                              : slr_estimate(prob);
        beta[m][r] = est.beta_hat;
        ase[m][r] = est.ase;
      }
    } catch (const Error& e) {
      failure[r] = e.what();
      if (failure[r].empty()) failure[r] = "unknown error";
    }
  };

  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (workers > R) workers = static_cast<int>(R);
  if (workers == 1) {
    for (long r = 0; r < R; ++r) run_one(r);
  } else {
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (long r = next.fetch_add(1); r < R; r = next.fetch_add(1)) run_one(r);
      });
    for (auto& th : pool) th.join();
  }

  long failed = 0;
  for (long r = 0; r < R; ++r)
    if (!failure[r].empty()) ++failed;
  if (failed * 100 > R)
    throw NumericError("run_replicates: " + std::to_string(failed) + " of " +
                       std::to_string(R) + " replicates failed; first error: " +
                       [&] {
                         for (long r = 0; r < R; ++r)
                           if (!failure[r].empty()) return failure[r];
                         return std::string();
                       }());

  MetricsSummary out;
  out.failed_replicates = failed;
  std::vector<ReplicateStats> stats(M);
  std::vector<double> bias(M), mse(M);
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> b, a;
    b.reserve(R - failed);
    a.reserve(R - failed);
    for (long r = 0; r < R; ++r) {
      if (!failure[r].empty()) continue;
      b.push_back(beta[m][r]);
      a.push_back(ase[m][r]);
    }
    stats[m] = summarize_replicates(b, a, cfg.beta0);
    bias[m] = mean(b) - cfg.beta0;
    mse[m] = stats[m].mse;
  }

  for (std::size_t m = 0; m < M; ++m) {
    MetricsRow row;
    row.scenario = cfg.scenario;
    row.rho = cfg.rho;
    row.method = methods[m].method;
    row.mode = methods[m].mode;
    row.replicates = R - failed;
    row.failures = failed;
    row.relative_bias = stats[m].relative_bias;
    row.coverage = stats[m].coverage;
    row.ese = stats[m].ese;
    row.ase_mean = stats[m].ase_mean;
    row.ase_ese_ratio = stats[m].ase_ese_ratio;
    row.ase_degenerate = stats[m].ase_degenerate;
    row.bias_ratio = std::nan("");
    row.mse_ratio = std::nan("");
    if (methods[m].method == Method::kDml) {
      for (std::size_t s = 0; s < M; ++s) {
        if (methods[s].method == Method::kSlr && methods[s].mode == methods[m].mode) {
          row.bias_ratio = bias[m] / bias[s];
          row.mse_ratio = mse[m] / mse[s];
        }
      }
    }
    out.rows.push_back(row);
  }
  return out;
}

namespace {

std::string fmt17(double x) {
  if (std::isnan(x)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string MetricsSummary::to_csv() const {
  std::string csv =
      "scenario,rho,method,mode,replicates,failures,relative_bias,coverage,ese,"
      "ase_mean,ase_ese_ratio,bias_ratio,mse_ratio,ase_degenerate\n";
  for (const MetricsRow& r : rows) {
    csv += std::to_string(r.scenario) + "," + fmt17(r.rho) + "," + method_name(r.method) + "," +
           mode_name(r.mode) + "," + std::to_string(r.replicates) + "," +
           std::to_string(r.failures) + "," + fmt17(r.relative_bias) + "," + fmt17(r.coverage) +
           "," + fmt17(r.ese) + "," + fmt17(r.ase_mean) + "," + fmt17(r.ase_ese_ratio) + "," +
           fmt17(r.bias_ratio) + "," + fmt17(r.mse_ratio) + "," +
           (r.ase_degenerate ? "1" : "0") + "\n";
  }
  return csv;
}

}  // namespace dmlrc
