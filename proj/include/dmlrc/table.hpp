#pragma once

#include <cmath>
#include <string>
#include <vector>

namespace dmlrc {

enum class ColumnKind { kNumeric, kCategorical };

// One typed column. Numeric cells use NaN for missing; categorical cells are
// level codes with -1 for missing, levels recorded in first-appearance order.
struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
  std::vector<double> values;
  std::vector<int> codes;
  std::vector<std::string> levels;

  std::size_t size() const {
    return kind == ColumnKind::kNumeric ? values.size() : codes.size();
  }
  bool is_missing(std::size_t i) const {
    return kind == ColumnKind::kNumeric ? std::isnan(values[i]) : codes[i] < 0;
  }
  long missing_count() const {
    long c = 0;
    for (std::size_t i = 0; i < size(); ++i)
      if (is_missing(i)) ++c;
    return c;
  }
};

struct Table {
  std::vector<Column> columns;
  std::size_t rows = 0;

  bool has_column(const std::string& name) const;
  const Column& column(const std::string& name) const;
  Column& column(const std::string& name);
  void add_column(Column col);
  // removes the flagged rows from every column
  void drop_rows(const std::vector<bool>& drop);
};

struct ColumnRequest {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
};

// Reads the requested columns from a headered CSV file. Empty cells are
// missing, never zero; a numeric cell that fails to parse is an error naming
// the row and column.
Table ingest_csv(const std::string& path, const std::vector<ColumnRequest>& requests);
Table parse_csv(const std::string& text, const std::vector<ColumnRequest>& requests,
                const std::string& origin = "<string>");

// Numeric cells are written with 17 significant digits so a round-trip
// reproduces them exactly.
std::string to_csv(const Table& table);
void write_csv(const Table& table, const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace dmlrc
