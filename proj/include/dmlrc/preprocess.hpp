#pragma once

#include <string>
#include <vector>

#include "dmlrc/table.hpp"
#include "json.hpp"

namespace dmlrc {

struct ColumnAudit {
  std::string column;
  long missing_in = 0;       // at entry to the cell-level phases
  long missing_out = 0;      // after imputation
  long outlier_cells = 0;    // cells blanked by the drop-cell rule
  long imputed = 0;
};

// Book-keeping for one table's preprocessing pass. Row-level drops happen
// first; the missing_in/missing_out snapshots bracket the cell-level phases,
// so missing_out = missing_in + outlier_cells - imputed per column.
struct PreprocessAudit {
  long rows_in = 0;
  long rows_out = 0;
  long rows_dropped_missing = 0;   // rows dropped for missing required cells
  long rows_dropped_outlier = 0;   // rows dropped by the drop-row rule
  std::vector<std::string> log_columns;
  std::vector<ColumnAudit> columns;

  ColumnAudit& entry(const std::string& name);
  void snapshot_missing_in(const Table& table);
  void snapshot_missing_out(const Table& table);
  nlohmann::json to_json() const;
};

// Natural log in place; any nonpositive non-missing cell is an error listing
// the offenders.
void log_transform(Table& table, const std::vector<std::string>& columns,
                   PreprocessAudit& audit);

enum class OutlierPolicy { kDropRow, kDropCell };

// Flags cells outside [Q1 - k*IQR, Q3 + k*IQR], quartiles by linear
// interpolation. Bounds for every column are computed before anything is
// removed.
void remove_outliers(Table& table, const std::vector<std::string>& columns,
                     OutlierPolicy policy, PreprocessAudit& audit, double iqr_multiple = 3.0);

// Drops rows with a missing cell in any of the listed columns.
void drop_rows_with_missing(Table& table, const std::vector<std::string>& columns,
                            PreprocessAudit& audit);

// Mean-imputes continuous columns, mode-imputes categorical ones (ties broken
// by first appearance), and appends a 0/1 <name>_missing indicator for every
// column that had missing cells. Returns the indicator column names.
std::vector<std::string> impute(Table& table, const std::vector<std::string>& columns,
                                PreprocessAudit& audit);

// Adds an all-zero indicator column when absent (keeps covariate layouts
// aligned across tables imputed separately).
void ensure_indicator_column(Table& table, const std::string& name);

}  // namespace dmlrc
