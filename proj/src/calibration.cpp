#include "dmlrc/calibration.hpp"

#include <cmath>

#include "dmlrc/errors.hpp"

namespace dmlrc {

Eigen::VectorXd ValidationStudy::design_row(Eigen::Index i) const {
  Eigen::VectorXd L(1 + Z.cols() + W.cols());
  L[0] = 1.0;
  L.segment(1, Z.cols()) = Z.row(i);
  L.segment(1 + Z.cols(), W.cols()) = W.row(i);
  return L;
}

void ValidationStudy::validate() const {
  if (X.rows() != Z.rows() || (W.size() > 0 && W.rows() != Z.rows()))
    throw DataError("validation study: X, Z, W row counts differ");
  if (X.cols() != Z.cols())
    throw DataError("validation study: X and Z column counts differ");
  if (!Z.allFinite() || (W.size() > 0 && !W.allFinite()))
    throw DataError("validation study: Z and W must be complete");
}

Eigen::VectorXd CalibrationModel::predict(const Eigen::VectorXd& z,
                                          const Eigen::VectorXd& w) const {
  if (z.size() != p + 1 || w.size() != q)
    throw DataError("calibration predict: dimension mismatch");
  Eigen::VectorXd L(block_len());
  L[0] = 1.0;
  L.segment(1, z.size()) = z;
  L.segment(1 + z.size(), w.size()) = w;
  return theta * L;
}

Eigen::MatrixXd CalibrationModel::predict(const Eigen::MatrixXd& Z,
                                          const Eigen::MatrixXd& W) const {
  if (Z.cols() != p + 1 || W.cols() != q || Z.rows() != W.rows())
    throw DataError("calibration predict: dimension mismatch");
  Eigen::MatrixXd L(Z.rows(), block_len());
  L.col(0).setOnes();
  L.middleCols(1, Z.cols()) = Z;
  L.middleCols(1 + Z.cols(), W.cols()) = W;
  return L * theta.transpose();
}

namespace {

// L'L and L'x over the rows where constituent j is observed
struct BlockSystem {
  Eigen::MatrixXd ltl;
  Eigen::VectorXd ltx;
  long rows = 0;
};

BlockSystem block_system(const ValidationStudy& evs, Eigen::Index j) {
  const Eigen::Index m = 1 + evs.p_plus_1() + evs.q();
  BlockSystem sys{Eigen::MatrixXd::Zero(m, m), Eigen::VectorXd::Zero(m), 0};
  for (Eigen::Index i = 0; i < evs.n(); ++i) {
    double xij = evs.X(i, j);
    if (std::isnan(xij)) continue;
    Eigen::VectorXd L = evs.design_row(i);
    sys.ltl += L * L.transpose();
    sys.ltx += xij * L;
    ++sys.rows;
  }
  return sys;
}

Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& ltl, const Eigen::VectorXd& ltx,
                                       const std::string& label) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(ltl);
  Eigen::VectorXd d = ldlt.vectorD();
  double dmax = d.maxCoeff();
  if (ldlt.info() != Eigen::Success || d.minCoeff() < 1e-10 * dmax)
    throw NumericError("singular calibration design for " + label +
                       " (pivot below 1e-10 of the largest)");
  return ldlt.solve(ltx);
}

std::vector<Eigen::Index> complete_rows(const ValidationStudy& evs) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < evs.n(); ++i)
    if (!evs.X.row(i).hasNaN()) rows.push_back(i);
  return rows;
}

}  // namespace

Eigen::MatrixXd fit_theta(const ValidationStudy& evs) {
  evs.validate();
  const Eigen::Index pp1 = evs.p_plus_1();
  const Eigen::Index m = 1 + pp1 + evs.q();
  Eigen::MatrixXd theta(pp1, m);
  for (Eigen::Index j = 0; j < pp1; ++j) {
    BlockSystem sys = block_system(evs, j);
    if (sys.rows < m + 1)
      throw DataError("constituent " + std::to_string(j) + ": " + std::to_string(sys.rows) +
                      " complete cases, need more than " + std::to_string(m));
    theta.row(j) =
        solve_normal_equations(sys.ltl, sys.ltx, "constituent block " + std::to_string(j));
  }
  return theta;
}

Eigen::VectorXd fit_theta_stacked(const ValidationStudy& evs, const Eigen::VectorXd& vdiag) {
  evs.validate();
  const Eigen::Index pp1 = evs.p_plus_1();
  const Eigen::Index m = 1 + pp1 + evs.q();
  if (vdiag.size() != pp1 || vdiag.minCoeff() <= 0.0)
    throw ConfigError("stacked fit: working variance must be positive with p+1 entries");
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(pp1 * m, pp1 * m);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(pp1 * m);
  for (Eigen::Index i : complete_rows(evs)) {
    Eigen::VectorXd L = evs.design_row(i);
    Eigen::MatrixXd ll = L * L.transpose();
    for (Eigen::Index j = 0; j < pp1; ++j) {
      lhs.block(j * m, j * m, m, m) += ll / vdiag[j];
      rhs.segment(j * m, m) += evs.X(i, j) / vdiag[j] * L;
    }
  }
  return solve_normal_equations(lhs, rhs, "stacked system");
}

Eigen::VectorXd residual_variances(const ValidationStudy& evs, const Eigen::MatrixXd& theta) {
  const Eigen::Index pp1 = evs.p_plus_1();
  if (theta.rows() != pp1 || theta.cols() != 1 + pp1 + evs.q())
    throw DataError("residual_variances: theta dimensions do not match the study");
  Eigen::VectorXd sigma2 = Eigen::VectorXd::Zero(pp1);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(pp1);
  for (Eigen::Index i = 0; i < evs.n(); ++i) {
    Eigen::VectorXd L = evs.design_row(i);
    for (Eigen::Index j = 0; j < pp1; ++j) {
      double xij = evs.X(i, j);
      if (std::isnan(xij)) continue;
      double r = xij - theta.row(j).dot(L);
      sigma2[j] += r * r;
      counts[j] += 1.0;
    }
  }
  for (Eigen::Index j = 0; j < pp1; ++j) {
    if (counts[j] <= 0.0)
      throw DataError("constituent " + std::to_string(j) + ": no observed cells");
    sigma2[j] /= counts[j];
  }
  return sigma2;
}

Eigen::MatrixXd sandwich_var_theta(const ValidationStudy& evs, const Eigen::MatrixXd& theta,
                                   const Eigen::VectorXd& sigma2, MeatPolicy policy) {
  const Eigen::Index pp1 = evs.p_plus_1();
  const Eigen::Index m = 1 + pp1 + evs.q();
  const Eigen::Index dim = pp1 * m;
  if (theta.rows() != pp1 || sigma2.size() != pp1)
    throw DataError("sandwich_var_theta: dimension mismatch");

  // V = diag(sigma2); a zero entry makes the bread singular unless the fit is
  // exact everywhere, in which case the variance is exactly zero.
  bool any_zero = (sigma2.array() <= 0.0).any();
  if (any_zero) {
    if (sigma2.maxCoeff() <= 0.0) return Eigen::MatrixXd::Zero(dim, dim);
    throw NumericError(
        "sandwich_var_theta: a residual variance is zero while others are not; "
        "the working-variance bread is singular");
  }
  Eigen::VectorXd vinv = sigma2.cwiseInverse();

  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(dim, dim);
  auto add_row = [&](Eigen::Index i, bool to_meat) {
    Eigen::VectorXd L = evs.design_row(i);
    Eigen::MatrixXd ll = L * L.transpose();
    for (Eigen::Index j = 0; j < pp1; ++j)
      bread.block(j * m, j * m, m, m) += vinv[j] * ll;
    if (!to_meat) return;
    Eigen::VectorXd r(pp1);
    for (Eigen::Index j = 0; j < pp1; ++j) r[j] = evs.X(i, j) - theta.row(j).dot(L);
    for (Eigen::Index j = 0; j < pp1; ++j)
      for (Eigen::Index k = 0; k < pp1; ++k) {
        if (std::isnan(r[j]) || std::isnan(r[k])) continue;
        meat.block(j * m, k * m, m, m) += vinv[j] * r[j] * r[k] * vinv[k] * ll;
      }
  };

  if (policy == MeatPolicy::kCompleteCase) {
    for (Eigen::Index i : complete_rows(evs)) add_row(i, true);
  } else {
    // pairwise-complete meat: every row contributes the blocks it can
    for (Eigen::Index i = 0; i < evs.n(); ++i) add_row(i, true);
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(bread);
  Eigen::VectorXd d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || d.minCoeff() < 1e-10 * d.maxCoeff())
    throw NumericError("sandwich_var_theta: singular bread matrix");
  Eigen::MatrixXd cov = ldlt.solve(ldlt.solve(meat).transpose());
  return 0.5 * (cov + cov.transpose());
}

CalibrationModel fit_calibration(const ValidationStudy& evs, MeatPolicy policy) {
  CalibrationModel model;
  model.p = static_cast<int>(evs.p_plus_1()) - 1;
  model.q = static_cast<int>(evs.q());
  model.n = evs.n();
  model.theta = fit_theta(evs);
  model.sigma2 = residual_variances(evs, model.theta);
  model.var_theta = sandwich_var_theta(evs, model.theta, model.sigma2, policy);
  model.missing_policy =
      policy == MeatPolicy::kCompleteCase ? "complete-case" : "pairwise-complete";
  return model;
}

nlohmann::json CalibrationModel::to_json() const {
  nlohmann::json j;
  j["p"] = p;
  j["q"] = q;
  j["n"] = n;
  nlohmann::json blocks = nlohmann::json::array();
  for (Eigen::Index b = 0; b < theta.rows(); ++b) {
    nlohmann::json block = nlohmann::json::array();
    for (Eigen::Index k = 0; k < theta.cols(); ++k) block.push_back(theta(b, k));
    blocks.push_back(std::move(block));
  }
  j["theta"] = std::move(blocks);
  j["sigma2"] = std::vector<double>(sigma2.data(), sigma2.data() + sigma2.size());
  nlohmann::json vt = nlohmann::json::array();
  for (Eigen::Index r = 0; r < var_theta.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < var_theta.cols(); ++c) row.push_back(var_theta(r, c));
    vt.push_back(std::move(row));
  }
  j["var_theta"] = std::move(vt);
  j["missing_policy"] = missing_policy;
  return j;
}

CalibrationModel CalibrationModel::from_json(const nlohmann::json& j) {
  CalibrationModel m;
  try {
    m.p = j.at("p").get<int>();
    m.q = j.at("q").get<int>();
    m.n = j.at("n").get<long>();
    const auto& blocks = j.at("theta");
    m.theta.resize(m.p + 1, m.p + m.q + 2);
    if (static_cast<Eigen::Index>(blocks.size()) != m.theta.rows())
      throw DataError("calibration json: wrong number of theta blocks");
    for (Eigen::Index b = 0; b < m.theta.rows(); ++b) {
      const auto& block = blocks.at(b);
      if (static_cast<Eigen::Index>(block.size()) != m.theta.cols())
        throw DataError("calibration json: wrong theta block length");
      for (Eigen::Index k = 0; k < m.theta.cols(); ++k) m.theta(b, k) = block.at(k).get<double>();
    }
    const auto& s2 = j.at("sigma2");
    m.sigma2.resize(m.p + 1);
    for (Eigen::Index k = 0; k < m.sigma2.size(); ++k) m.sigma2[k] = s2.at(k).get<double>();
    const auto& vt = j.at("var_theta");
    m.var_theta.resize(m.theta_len(), m.theta_len());
    for (Eigen::Index r = 0; r < m.var_theta.rows(); ++r)
      for (Eigen::Index c = 0; c < m.var_theta.cols(); ++c)
        m.var_theta(r, c) = vt.at(r).at(c).get<double>();
    if (j.contains("missing_policy")) m.missing_policy = j["missing_policy"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("calibration json: ") + e.what());
  }
  return m;
}

}  // namespace dmlrc
