#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmlrc/calibration.hpp"
#include "dmlrc/dml.hpp"
#include "dmlrc/table.hpp"
#include "json.hpp"

namespace dmlrc {

// Benjamini-Hochberg step-up adjustment; inputs in [0,1].
std::vector<double> bh_adjust(const std::vector<double>& pvalues);

struct ExposureColumns {
  std::string name;              // constituent label
  std::string surrogate_column;  // present in MS and EVS
  std::string true_column;       // present in EVS only
};

struct CovariateColumns {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
};

// Column roles for a main-study/validation-study analysis, loaded from a
// JSON schema file.
struct StudySchema {
  std::string id_column;  // optional
  std::string outcome_column;
  std::vector<ExposureColumns> exposures;
  std::optional<ExposureColumns> total_mass;  // joins the calibrated block, never x1
  bool total_mass_calibrated = true;          // false: treated as error-free covariate
  std::vector<CovariateColumns> covariates;
  bool log_transform_exposures = true;
  bool remove_exposure_outliers = true;

  static StudySchema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

StudySchema load_schema(const std::string& path);

struct AnalysisOptions {
  std::vector<std::string> methods;  // of: slr-uncorrected, slr-corrected,
                                     //     dml-uncorrected, dml-corrected
  bool interactions = false;         // DML basis includes two-way products
  bool single_pollutant = false;     // confounders: total mass + covariates only
  int K = 2;
  std::uint64_t seed = 0;
  double fdr = 0.05;
  LearnerConfig learner;
  MeatPolicy meat_policy = MeatPolicy::kCompleteCase;
};

struct AnalysisReport {
  nlohmann::json json;
  bool partial_failure = false;
};

// Fits the calibration model once, then treats each constituent in turn as
// the exposure of interest, runs the requested estimators, and adjusts each
// method's p-values across constituents with BH.
AnalysisReport multi_pollutant_analyze(const Table& ms_raw, const Table& evs_raw,
                                       const StudySchema& schema, const AnalysisOptions& opts);

}  // namespace dmlrc
