#include "dmlrc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmlrc/errors.hpp"
#include "dmlrc/preprocess.hpp"
#include "dmlrc/rng.hpp"
#include "dmlrc/version.hpp"

namespace dmlrc {

std::vector<double> bh_adjust(const std::vector<double>& pvalues) {
  const std::size_t m = pvalues.size();
  for (double p : pvalues)
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("bh_adjust: p-value outside [0,1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
  std::vector<double> adjusted(m);
  double running = 1.0;
  for (std::size_t rank = m; rank >= 1; --rank) {
    std::size_t idx = order[rank - 1];
    double q = pvalues[idx] * static_cast<double>(m) / static_cast<double>(rank);
    running = std::min(running, std::min(q, 1.0));
    adjusted[idx] = running;
  }
  return adjusted;
}

namespace {

ExposureColumns exposure_from_json(const nlohmann::json& j) {
  ExposureColumns e;
  e.name = j.at("name").get<std::string>();
  e.surrogate_column = j.at("surrogate").get<std::string>();
  if (j.contains("true")) e.true_column = j["true"].get<std::string>();
  return e;
}

}  // namespace

StudySchema StudySchema::from_json(const nlohmann::json& j) {
  StudySchema s;
  try {
    if (j.contains("id")) s.id_column = j["id"].get<std::string>();
    s.outcome_column = j.at("outcome").get<std::string>();
    for (const auto& e : j.at("exposures")) s.exposures.push_back(exposure_from_json(e));
    if (j.contains("total_mass")) {
      s.total_mass = exposure_from_json(j["total_mass"]);
      if (j["total_mass"].contains("calibrated"))
        s.total_mass_calibrated = j["total_mass"]["calibrated"].get<bool>();
    }
    if (j.contains("covariates")) {
      for (const auto& c : j["covariates"]) {
        CovariateColumns cov;
        cov.name = c.at("name").get<std::string>();
        std::string kind = c.contains("kind") ? c["kind"].get<std::string>() : "continuous";
        if (kind == "continuous")
          cov.kind = ColumnKind::kNumeric;
        else if (kind == "categorical")
          cov.kind = ColumnKind::kCategorical;
        else
          throw ConfigError("schema: covariate kind must be continuous or categorical");
        s.covariates.push_back(cov);
      }
    }
    if (j.contains("preprocessing")) {
      const auto& pp = j["preprocessing"];
      if (pp.contains("log_transform")) s.log_transform_exposures = pp["log_transform"].get<bool>();
      if (pp.contains("outlier_removal"))
        s.remove_exposure_outliers = pp["outlier_removal"].get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  if (s.exposures.empty()) throw ConfigError("schema: exposure set must be nonempty");
  std::vector<std::string> names;
  names.push_back(s.outcome_column);
  for (const auto& e : s.exposures) names.push_back(e.name);
  for (const auto& c : s.covariates) names.push_back(c.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw ConfigError("schema: names must be unique");
  return s;
}

nlohmann::json StudySchema::to_json() const {
  nlohmann::json j;
  if (!id_column.empty()) j["id"] = id_column;
  j["outcome"] = outcome_column;
  nlohmann::json exps = nlohmann::json::array();
  for (const auto& e : exposures)
    exps.push_back({{"name", e.name}, {"surrogate", e.surrogate_column}, {"true", e.true_column}});
  j["exposures"] = std::move(exps);
  if (total_mass) {
    j["total_mass"] = {{"name", total_mass->name},
                       {"surrogate", total_mass->surrogate_column},
                       {"true", total_mass->true_column},
                       {"calibrated", total_mass_calibrated}};
  }
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& c : covariates)
    covs.push_back({{"name", c.name},
                    {"kind", c.kind == ColumnKind::kNumeric ? "continuous" : "categorical"}});
  j["covariates"] = std::move(covs);
  j["preprocessing"] = {{"log_transform", log_transform_exposures},
                        {"outlier_removal", remove_exposure_outliers}};
  return j;
}

StudySchema load_schema(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema file " + path + ": " + e.what());
  }
  return StudySchema::from_json(j);
}

namespace {

struct MethodToken {
  std::string token;
  Method method;
  ExposureMode mode;
};

std::vector<MethodToken> parse_methods(const std::vector<std::string>& tokens) {
  std::vector<MethodToken> out;
  auto add = [&](const std::string& t) {
    for (const auto& m : out)
      if (m.token == t) return;
    if (t == "slr-uncorrected")
      out.push_back({t, Method::kSlr, ExposureMode::kUncorrected});
    else if (t == "slr-corrected")
      out.push_back({t, Method::kSlr, ExposureMode::kCorrected});
    else if (t == "dml-uncorrected")
      out.push_back({t, Method::kDml, ExposureMode::kUncorrected});
    else if (t == "dml-corrected")
      out.push_back({t, Method::kDml, ExposureMode::kCorrected});
    else
      throw ConfigError("unknown method '" + t +
                        "' (expected slr-uncorrected, slr-corrected, dml-uncorrected, "
                        "dml-corrected, or all)");
  };
  for (const std::string& t : tokens) {
    if (t == "all") {
      add("slr-uncorrected");
      add("slr-corrected");
      add("dml-uncorrected");
      add("dml-corrected");
    } else {
      add(t);
    }
  }
  if (out.empty()) throw ConfigError("no methods requested");
  return out;
}

// categorical levels usable as dummies: present in both studies, ordered by
// first appearance in the main study
struct DummyCoding {
  std::vector<std::string> levels;  // [0] is the reference
};

DummyCoding shared_coding(const Column& ms, const Column& evs) {
  DummyCoding coding;
  auto count_in = [](const Column& c, const std::string& level) {
    long n = 0;
    for (int code : c.codes)
      if (code >= 0 && c.levels[code] == level) ++n;
    return n;
  };
  for (const std::string& level : ms.levels)
    if (count_in(ms, level) > 0 && count_in(evs, level) > 0) coding.levels.push_back(level);
  if (coding.levels.empty())
    throw DataError("covariate " + ms.name + ": no category level appears in both studies");
  return coding;
}

struct DesignBlock {
  Eigen::MatrixXd W;
  std::vector<std::string> names;
};

// numeric design for the covariates: continuous columns as-is, categorical as
// reference-coded dummies over levels shared across studies, then missing
// indicators, then the error-free total-mass surrogate when not calibrated
DesignBlock covariate_design(const Table& table, const StudySchema& schema,
                             const std::vector<DummyCoding>& codings,
                             const std::vector<std::string>& indicator_columns,
                             const std::string& extra_numeric) {
  DesignBlock block;
  std::vector<Eigen::VectorXd> cols;
  for (std::size_t c = 0; c < schema.covariates.size(); ++c) {
    const Column& col = table.column(schema.covariates[c].name);
    if (schema.covariates[c].kind == ColumnKind::kNumeric) {
      cols.emplace_back(Eigen::Map<const Eigen::VectorXd>(col.values.data(), col.values.size()));
      block.names.push_back(col.name);
    } else {
      const DummyCoding& coding = codings[c];
      for (std::size_t l = 1; l < coding.levels.size(); ++l) {
        Eigen::VectorXd dummy(table.rows);
        for (std::size_t i = 0; i < table.rows; ++i) {
          int code = col.codes[i];
          dummy[i] = (code >= 0 && col.levels[code] == coding.levels[l]) ? 1.0 : 0.0;
        }
        cols.push_back(std::move(dummy));
        block.names.push_back(col.name + "=" + coding.levels[l]);
      }
    }
  }
  for (const std::string& name : indicator_columns) {
    const Column& col = table.column(name);
    cols.emplace_back(Eigen::Map<const Eigen::VectorXd>(col.values.data(), col.values.size()));
    block.names.push_back(name);
  }
  if (!extra_numeric.empty()) {
    const Column& col = table.column(extra_numeric);
    cols.emplace_back(Eigen::Map<const Eigen::VectorXd>(col.values.data(), col.values.size()));
    block.names.push_back(extra_numeric);
  }
  block.W.resize(table.rows, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) block.W.col(c) = cols[c];
  return block;
}

Eigen::MatrixXd exposure_matrix(const Table& table, const std::vector<std::string>& columns) {
  Eigen::MatrixXd M(table.rows, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const Column& col = table.column(columns[c]);
    M.col(c) = Eigen::Map<const Eigen::VectorXd>(col.values.data(), col.values.size());
  }
  return M;
}

}  // namespace

AnalysisReport multi_pollutant_analyze(const Table& ms_raw, const Table& evs_raw,
                                       const StudySchema& schema, const AnalysisOptions& opts) {
  std::vector<MethodToken> methods = parse_methods(opts.methods);
  bool need_model = false;
  for (const auto& m : methods)
    if (m.mode == ExposureMode::kCorrected) need_model = true;

  Table ms = ms_raw;
  Table evs = evs_raw;

  std::vector<std::string> surrogate_cols, true_cols, joint_names;
  for (const auto& e : schema.exposures) {
    surrogate_cols.push_back(e.surrogate_column);
    true_cols.push_back(e.true_column);
    joint_names.push_back(e.name);
  }
  if (schema.total_mass && schema.total_mass_calibrated) {
    surrogate_cols.push_back(schema.total_mass->surrogate_column);
    true_cols.push_back(schema.total_mass->true_column);
    joint_names.push_back(schema.total_mass->name);
  }
  std::vector<std::string> covariate_names;
  for (const auto& c : schema.covariates) covariate_names.push_back(c.name);

  // ---- main-study preprocessing
  PreprocessAudit audit_ms;
  audit_ms.rows_in = static_cast<long>(ms.rows);
  {
    std::vector<std::string> required = surrogate_cols;
    required.push_back(schema.outcome_column);
    if (schema.total_mass && !schema.total_mass_calibrated)
      required.push_back(schema.total_mass->surrogate_column);
    drop_rows_with_missing(ms, required, audit_ms);
  }
  std::vector<std::string> ms_log_cols = surrogate_cols;
  if (schema.total_mass && !schema.total_mass_calibrated)
    ms_log_cols.push_back(schema.total_mass->surrogate_column);
  if (schema.log_transform_exposures) log_transform(ms, ms_log_cols, audit_ms);
  if (schema.remove_exposure_outliers)
    remove_outliers(ms, ms_log_cols, OutlierPolicy::kDropRow, audit_ms);
  audit_ms.snapshot_missing_in(ms);
  std::vector<std::string> ms_indicators = impute(ms, covariate_names, audit_ms);
  audit_ms.snapshot_missing_out(ms);
  audit_ms.rows_out = static_cast<long>(ms.rows);

  // ---- validation-study preprocessing
  PreprocessAudit audit_evs;
  audit_evs.rows_in = static_cast<long>(evs.rows);
  {
    std::vector<std::string> required = surrogate_cols;
    if (schema.total_mass && !schema.total_mass_calibrated)
      required.push_back(schema.total_mass->surrogate_column);
    drop_rows_with_missing(evs, required, audit_evs);
  }
  std::vector<std::string> evs_log_cols = ms_log_cols;
  if (need_model)
    evs_log_cols.insert(evs_log_cols.end(), true_cols.begin(), true_cols.end());
  if (schema.log_transform_exposures) log_transform(evs, evs_log_cols, audit_evs);
  if (schema.remove_exposure_outliers) {
    std::vector<std::string> evs_surrogates = ms_log_cols;
    remove_outliers(evs, evs_surrogates, OutlierPolicy::kDropRow, audit_evs);
  }
  audit_evs.snapshot_missing_in(evs);
  if (schema.remove_exposure_outliers && need_model)
    remove_outliers(evs, true_cols, OutlierPolicy::kDropCell, audit_evs);
  std::vector<std::string> evs_indicators = impute(evs, covariate_names, audit_evs);
  audit_evs.snapshot_missing_out(evs);
  audit_evs.rows_out = static_cast<long>(evs.rows);

  // indicator sets must agree so the covariate design transports
  std::vector<std::string> indicators = ms_indicators;
  for (const std::string& ind : evs_indicators)
    if (std::find(indicators.begin(), indicators.end(), ind) == indicators.end())
      indicators.push_back(ind);
  std::sort(indicators.begin(), indicators.end());
  for (const std::string& ind : indicators) {
    ensure_indicator_column(ms, ind);
    ensure_indicator_column(evs, ind);
  }

  std::vector<DummyCoding> codings(schema.covariates.size());
  for (std::size_t c = 0; c < schema.covariates.size(); ++c)
    if (schema.covariates[c].kind == ColumnKind::kCategorical)
      codings[c] = shared_coding(ms.column(schema.covariates[c].name),
                                 evs.column(schema.covariates[c].name));

  std::string error_free_total;
  if (schema.total_mass && !schema.total_mass_calibrated)
    error_free_total = schema.total_mass->surrogate_column;
  DesignBlock Wms = covariate_design(ms, schema, codings, indicators, error_free_total);
  DesignBlock Wevs = covariate_design(evs, schema, codings, indicators, error_free_total);

  Eigen::MatrixXd Zms = exposure_matrix(ms, surrogate_cols);
  const Column& ycol = ms.column(schema.outcome_column);
  if (ycol.kind != ColumnKind::kNumeric) throw DataError("outcome column must be numeric");
  Eigen::VectorXd Y = Eigen::Map<const Eigen::VectorXd>(ycol.values.data(), ycol.values.size());

  CalibrationModel model;
  if (need_model) {
    ValidationStudy vs;
    vs.Z = exposure_matrix(evs, surrogate_cols);
    vs.X = exposure_matrix(evs, true_cols);
    vs.W = Wevs.W;
    model = fit_calibration(vs, opts.meat_policy);
  }

  const int p1 = static_cast<int>(joint_names.size());
  const int total_index = schema.total_mass && schema.total_mass_calibrated ? p1 - 1 : -1;
  const int n_constituents = static_cast<int>(schema.exposures.size());

  struct CellResult {
    bool ok = false;
    DmlEstimate est;
    std::string error;
  };
  std::vector<std::vector<CellResult>> results(
      n_constituents, std::vector<CellResult>(methods.size()));

  bool any_failure = false;
  for (int c = 0; c < n_constituents; ++c) {
    const std::uint64_t seed_c = mix64(opts.seed ^ fnv1a64(joint_names[c]));
    for (std::size_t m = 0; m < methods.size(); ++m) {
      CellResult& cell = results[c][m];
      try {
        DesignSpec spec;
        std::optional<std::vector<int>> basis_cols;
        if (opts.single_pollutant) {
          std::vector<int> cols;
          if (total_index >= 0) {
            cols.push_back(total_index);
            spec.exposure_columns.push_back(joint_names[total_index]);
          }
          basis_cols = cols;
        } else {
          for (int o = 0; o < p1; ++o)
            if (o != c) spec.exposure_columns.push_back(joint_names[o]);
        }
        spec.covariate_columns = Wms.names;
        spec.interactions = methods[m].method == Method::kDml && opts.interactions;

        DmlProblem prob{Y,
                        Zms,
                        Wms.W,
                        c,
                        methods[m].mode,
                        methods[m].mode == ExposureMode::kCorrected ? &model : nullptr,
                        spec,
                        basis_cols};
        cell.est = methods[m].method == Method::kDml
                       ? dml_estimate(prob, opts.K, seed_c, opts.learner)
                       : slr_estimate(prob);
        cell.ok = true;
      } catch (const Error& e) {
        cell.error = e.what();
        any_failure = true;
      }
    }
  }

  // BH adjustment per method column over the constituents that produced a p
  std::vector<std::vector<double>> adjusted(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<double> ps;
    for (int c = 0; c < n_constituents; ++c)
      if (results[c][m].ok) ps.push_back(results[c][m].est.p_value);
    std::vector<double> adj = ps.empty() ? ps : bh_adjust(ps);
    adjusted[m].assign(n_constituents, std::nan(""));
    std::size_t k = 0;
    for (int c = 0; c < n_constituents; ++c)
      if (results[c][m].ok) adjusted[m][c] = adj[k++];
  }

  nlohmann::json constituents = nlohmann::json::array();
  for (int c = 0; c < n_constituents; ++c) {
    nlohmann::json entry;
    entry["name"] = joint_names[c];
    nlohmann::json per_method = nlohmann::json::object();
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const CellResult& cell = results[c][m];
      if (cell.ok) {
        nlohmann::json j = cell.est.to_json();
        j["p_adjusted"] = adjusted[m][c];
        j["significant"] = adjusted[m][c] <= opts.fdr;
        per_method[methods[m].token] = std::move(j);
      } else {
        per_method[methods[m].token] = {{"error", cell.error}};
      }
    }
    entry["methods"] = std::move(per_method);
    constituents.push_back(std::move(entry));
  }

  AnalysisReport report;
  report.partial_failure = any_failure;
  nlohmann::json methods_json = nlohmann::json::array();
  for (const auto& m : methods) methods_json.push_back(m.token);
  report.json = {
      {"meta",
       {{"version", kVersion},
        {"seed", opts.seed},
        {"methods", methods_json},
        {"interactions", opts.interactions},
        {"single_pollutant", opts.single_pollutant},
        {"fdr", opts.fdr},
        {"K", opts.K},
        {"missing_policy",
         opts.meat_policy == MeatPolicy::kCompleteCase ? "complete-case" : "pairwise-complete"},
        {"total_mass_calibrated", schema.total_mass.has_value() && schema.total_mass_calibrated},
        {"covariate_columns", Wms.names},
        {"preprocessing",
         {{"main", audit_ms.to_json()}, {"validation", audit_evs.to_json()}}}}},
      {"constituents", std::move(constituents)}};
  if (need_model) report.json["calibration"] = model.to_json();
  return report;
}

}  // namespace dmlrc
