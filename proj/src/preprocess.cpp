#include "dmlrc/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "dmlrc/errors.hpp"
#include "dmlrc/stats.hpp"

namespace dmlrc {

ColumnAudit& PreprocessAudit::entry(const std::string& name) {
  for (ColumnAudit& c : columns)
    if (c.column == name) return c;
  columns.push_back(ColumnAudit{name});
  return columns.back();
}

void PreprocessAudit::snapshot_missing_in(const Table& table) {
  for (const Column& c : table.columns) entry(c.name).missing_in = c.missing_count();
}

void PreprocessAudit::snapshot_missing_out(const Table& table) {
  for (const Column& c : table.columns) entry(c.name).missing_out = c.missing_count();
}

nlohmann::json PreprocessAudit::to_json() const {
  nlohmann::json cols = nlohmann::json::object();
  for (const ColumnAudit& c : columns) {
    cols[c.column] = {{"missing_in", c.missing_in},
                      {"missing_out", c.missing_out},
                      {"outlier_cells", c.outlier_cells},
                      {"imputed", c.imputed}};
  }
  return nlohmann::json{{"rows_in", rows_in},
                        {"rows_out", rows_out},
                        {"rows_dropped_missing", rows_dropped_missing},
                        {"rows_dropped_outlier", rows_dropped_outlier},
                        {"log_columns", log_columns},
                        {"columns", cols}};
}

void log_transform(Table& table, const std::vector<std::string>& columns,
                   PreprocessAudit& audit) {
  std::string offenders;
  for (const std::string& name : columns) {
    Column& col = table.column(name);
    if (col.kind != ColumnKind::kNumeric)
      throw DataError("log_transform: column " + name + " is not numeric");
    for (std::size_t i = 0; i < col.values.size(); ++i) {
      if (std::isnan(col.values[i])) continue;
      if (col.values[i] <= 0.0)
        offenders += name + "[row " + std::to_string(i + 1) + "]=" +
                     std::to_string(col.values[i]) + " ";
    }
  }
  if (!offenders.empty())
    throw DataError("log_transform: nonpositive values: " + offenders);
  for (const std::string& name : columns) {
    Column& col = table.column(name);
    for (double& v : col.values)
      if (!std::isnan(v)) v = std::log(v);
    audit.log_columns.push_back(name);
  }
}

namespace {

struct Bounds {
  double lo, hi;
};

Bounds outlier_bounds(const Column& col, double k) {
  std::vector<double> vals;
  vals.reserve(col.values.size());
  for (double v : col.values)
    if (!std::isnan(v)) vals.push_back(v);
  if (vals.size() < 4)
    throw DataError("remove_outliers: column " + col.name + " has fewer than 4 values");
  std::sort(vals.begin(), vals.end());
  double q1 = quantile_sorted(vals, 0.25);
  double q3 = quantile_sorted(vals, 0.75);
  double iqr = q3 - q1;
  return {q1 - k * iqr, q3 + k * iqr};
}

}  // namespace

void remove_outliers(Table& table, const std::vector<std::string>& columns,
                     OutlierPolicy policy, PreprocessAudit& audit, double iqr_multiple) {
  std::vector<Bounds> bounds;
  bounds.reserve(columns.size());
  for (const std::string& name : columns) {
    const Column& col = table.column(name);
    if (col.kind != ColumnKind::kNumeric)
      throw DataError("remove_outliers: column " + name + " is not numeric");
    bounds.push_back(outlier_bounds(col, iqr_multiple));
  }

  if (policy == OutlierPolicy::kDropRow) {
    std::vector<bool> drop(table.rows, false);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const Column& col = table.column(columns[c]);
      for (std::size_t i = 0; i < table.rows; ++i) {
        double v = col.values[i];
        if (!std::isnan(v) && (v < bounds[c].lo || v > bounds[c].hi)) drop[i] = true;
      }
    }
    long dropped = std::count(drop.begin(), drop.end(), true);
    table.drop_rows(drop);
    audit.rows_dropped_outlier += dropped;
  } else {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      Column& col = table.column(columns[c]);
      long cells = 0;
      for (std::size_t i = 0; i < table.rows; ++i) {
        double v = col.values[i];
        if (!std::isnan(v) && (v < bounds[c].lo || v > bounds[c].hi)) {
          col.values[i] = std::nan("");
          ++cells;
        }
      }
      audit.entry(columns[c]).outlier_cells += cells;
    }
  }
}

void drop_rows_with_missing(Table& table, const std::vector<std::string>& columns,
                            PreprocessAudit& audit) {
  std::vector<bool> drop(table.rows, false);
  for (const std::string& name : columns) {
    const Column& col = table.column(name);
    for (std::size_t i = 0; i < table.rows; ++i)
      if (col.is_missing(i)) drop[i] = true;
  }
  long dropped = std::count(drop.begin(), drop.end(), true);
  table.drop_rows(drop);
  audit.rows_dropped_missing += dropped;
}

std::vector<std::string> impute(Table& table, const std::vector<std::string>& columns,
                                PreprocessAudit& audit) {
  std::vector<std::string> indicators;
  for (const std::string& name : columns) {
    std::vector<bool> was_missing(table.rows, false);
    long missing = 0;
    {
      const Column& col = table.column(name);
      for (std::size_t i = 0; i < table.rows; ++i)
        if (col.is_missing(i)) was_missing[i] = true, ++missing;
    }
    if (missing == 0) continue;
    if (static_cast<std::size_t>(missing) == table.rows)
      throw DataError("impute: column " + name + " has no observed values");

    Column& col = table.column(name);
    if (col.kind == ColumnKind::kNumeric) {
      double sum = 0.0;
      long count = 0;
      for (double v : col.values)
        if (!std::isnan(v)) sum += v, ++count;
      double fill = sum / static_cast<double>(count);
      for (double& v : col.values)
        if (std::isnan(v)) v = fill;
    } else {
      // modal level; ties resolve to the earliest-seen level
      std::vector<long> freq(col.levels.size(), 0);
      for (int code : col.codes)
        if (code >= 0) ++freq[code];
      int fill = 0;
      for (std::size_t l = 1; l < freq.size(); ++l)
        if (freq[l] > freq[fill]) fill = static_cast<int>(l);
      for (int& code : col.codes)
        if (code < 0) code = fill;
    }
    audit.entry(name).imputed += missing;

    Column ind;
    ind.name = name + "_missing";
    ind.kind = ColumnKind::kNumeric;
    ind.values.assign(table.rows, 0.0);
    for (std::size_t i = 0; i < table.rows; ++i)
      if (was_missing[i]) ind.values[i] = 1.0;
    indicators.push_back(ind.name);
    table.add_column(std::move(ind));
  }
  return indicators;
}

void ensure_indicator_column(Table& table, const std::string& name) {
  if (table.has_column(name)) return;
  Column ind;
  ind.name = name;
  ind.kind = ColumnKind::kNumeric;
  ind.values.assign(table.rows, 0.0);
  table.add_column(std::move(ind));
}

}  // namespace dmlrc
