#include "dmlrc/table.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dmlrc/errors.hpp"

namespace dmlrc {

bool Table::has_column(const std::string& name) const {
  for (const Column& c : columns)
    if (c.name == name) return true;
  return false;
}

const Column& Table::column(const std::string& name) const {
  for (const Column& c : columns)
    if (c.name == name) return c;
  throw DataError("no such column: " + name);
}

Column& Table::column(const std::string& name) {
  for (Column& c : columns)
    if (c.name == name) return c;
  throw DataError("no such column: " + name);
}

void Table::add_column(Column col) {
  if (col.size() != rows && !(columns.empty() && rows == 0))
    throw DataError("column " + col.name + " has the wrong length");
  if (columns.empty()) rows = col.size();
  if (has_column(col.name)) throw DataError("duplicate column: " + col.name);
  columns.push_back(std::move(col));
}

void Table::drop_rows(const std::vector<bool>& drop) {
  if (drop.size() != rows) throw DataError("drop mask has the wrong length");
  std::size_t kept = 0;
  for (bool d : drop)
    if (!d) ++kept;
  for (Column& c : columns) {
    if (c.kind == ColumnKind::kNumeric) {
      std::vector<double> v;
      v.reserve(kept);
      for (std::size_t i = 0; i < rows; ++i)
        if (!drop[i]) v.push_back(c.values[i]);
      c.values = std::move(v);
    } else {
      std::vector<int> v;
      v.reserve(kept);
      for (std::size_t i = 0; i < rows; ++i)
        if (!drop[i]) v.push_back(c.codes[i]);
      c.codes = std::move(v);
    }
  }
  rows = kept;
}

namespace {

// splits one CSV record; supports quoted fields with "" escapes
std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n") != std::string::npos;
}

std::string quote_field(const std::string& s) {
  if (!needs_quoting(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += '"';
  return out;
}

std::string fmt_cell(double x) {
  if (std::isnan(x)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

Table parse_csv(const std::string& text, const std::vector<ColumnRequest>& requests,
                const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(origin + ": empty file, header row required");
  std::vector<std::string> header = split_record(line);

  std::vector<int> index(requests.size(), -1);
  for (std::size_t r = 0; r < requests.size(); ++r) {
    for (std::size_t h = 0; h < header.size(); ++h)
      if (header[h] == requests[r].name) index[r] = static_cast<int>(h);
    if (index[r] < 0)
      throw DataError(origin + ": missing declared column '" + requests[r].name + "'");
  }

  Table table;
  for (const ColumnRequest& r : requests) {
    Column c;
    c.name = r.name;
    c.kind = r.kind;
    table.columns.push_back(std::move(c));
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields = split_record(line);
    for (std::size_t r = 0; r < requests.size(); ++r) {
      std::string cell = static_cast<std::size_t>(index[r]) < fields.size()
                             ? fields[index[r]]
                             : std::string();
      Column& col = table.columns[r];
      if (col.kind == ColumnKind::kNumeric) {
        if (cell.empty()) {
          col.values.push_back(std::nan(""));
        } else {
          char* end = nullptr;
          double v = std::strtod(cell.c_str(), &end);
          if (end == cell.c_str() || *end != '\0')
            throw DataError(origin + ": row " + std::to_string(row) + ", column '" +
                            col.name + "': cannot parse numeric value '" + cell + "'");
          col.values.push_back(v);
        }
      } else {
        if (cell.empty()) {
          col.codes.push_back(-1);
        } else {
          int code = -1;
          for (std::size_t l = 0; l < col.levels.size(); ++l)
            if (col.levels[l] == cell) code = static_cast<int>(l);
          if (code < 0) {
            code = static_cast<int>(col.levels.size());
            col.levels.push_back(cell);
          }
          col.codes.push_back(code);
        }
      }
    }
  }
  table.rows = row == 0 ? 0 : table.columns.front().size();
  for (const Column& c : table.columns)
    if (c.size() != table.rows) throw DataError(origin + ": ragged column " + c.name);
  return table;
}

Table ingest_csv(const std::string& path, const std::vector<ColumnRequest>& requests) {
  return parse_csv(read_text_file(path), requests, path);
}

std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) out += ',';
    out += quote_field(table.columns[c].name);
  }
  out += '\n';
  for (std::size_t i = 0; i < table.rows; ++i) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      if (c) out += ',';
      const Column& col = table.columns[c];
      if (col.kind == ColumnKind::kNumeric) {
        out += fmt_cell(col.values[i]);
      } else if (col.codes[i] >= 0) {
        out += quote_field(col.levels[col.codes[i]]);
      }
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Table& table, const std::string& path) {
  write_text_file(path, to_csv(table));
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dmlrc
