#pragma once

// Plain CSV ingestion and loss-minimal output. Comma separated, decimal
// point only, optional single header row.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "treecpd/errors.hpp"
#include "treecpd/marginals.hpp"

namespace treecpd {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Parses a full field as a double; nan/inf spellings count as numeric so
// they are rejected as non-finite rather than taken for a header.
inline bool parse_double(std::string_view field, double& value) {
  if (field.empty()) return false;
  if (field.front() == '+') field.remove_prefix(1);
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  return res.ec == std::errc() && res.ptr == field.data() + field.size();
}

}  // namespace detail

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has none
  Eigen::MatrixXd values;
};

// Reads a numeric table. A first row with any non-numeric field is a header.
inline CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  CsvTable table;
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t line_no = 0;
  size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (size_t c = 0; c < fields.size(); ++c)
      if (!detail::parse_double(fields[c], row[c])) numeric = false;
    if (rows.empty() && table.header.empty() && !numeric) {
      for (auto f : fields) table.header.emplace_back(f);
      width = fields.size();
      continue;
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      std::ostringstream os;
      os << path << ": ragged row at line " << line_no << " (" << fields.size() << " fields, expected " << width
         << ")";
      throw IngestionError(os.str());
    }
    for (size_t c = 0; c < fields.size(); ++c) {
      if (!detail::parse_double(fields[c], row[c])) {
        std::ostringstream os;
        os << path << ": non-numeric cell '" << fields[c] << "' at line " << line_no << ", column " << c + 1;
        throw IngestionError(os.str());
      }
      if (!std::isfinite(row[c])) {
        std::ostringstream os;
        os << path << ": non-finite value at line " << line_no << ", column " << c + 1;
        throw IngestionError(os.str());
      }
    }
    rows.push_back(std::move(row));
  }
  table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < width; ++c) table.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return table;
}

// Rows are time-points, columns are variables.
inline Dataset read_dataset_csv(const std::string& path) {
  CsvTable t = read_csv_table(path);
  Dataset data;
  data.values = std::move(t.values);
  data.variable_names = std::move(t.header);
  data.replicate_id = path;
  try {
    validate_dataset(data);
  } catch (const Error& e) {
    throw IngestionError(path + ": " + e.what());
  }
  return data;
}

inline Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  CsvTable t = read_csv_table(path);
  if (t.values.rows() == 0) throw IngestionError(path + ": empty matrix");
  return t.values;
}

inline std::string format_double(double v) {
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path), path_(path) {
    if (!out_) throw Error(ErrorKind::configuration, "cannot write '" + path + "'");
  }

  void header(std::initializer_list<std::string_view> cols) {
    bool first = true;
    for (auto c : cols) {
      if (!first) out_ << ',';
      out_ << c;
      first = false;
    }
    out_ << '\n';
  }
  void header(const std::vector<std::string>& cols) {
    for (size_t k = 0; k < cols.size(); ++k) out_ << (k ? "," : "") << cols[k];
    out_ << '\n';
  }

  CsvWriter& cell(long long v) {
    sep();
    out_ << v;
    return *this;
  }
  CsvWriter& cell(double v) {
    sep();
    out_ << format_double(v);
    return *this;
  }
  CsvWriter& cell(std::string_view v) {
    sep();
    out_ << v;
    return *this;
  }
  void end_row() {
    out_ << '\n';
    fresh_ = true;
  }

  void close() {
    out_.close();
    if (!out_) throw Error(ErrorKind::configuration, "failed writing '" + path_ + "'");
  }

 private:
  void sep() {
    if (!fresh_) out_ << ',';
    fresh_ = false;
  }
  std::ofstream out_;
  std::string path_;
  bool fresh_ = true;
};

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
  CsvWriter w(path);
  std::vector<std::string> names = data.variable_names;
  if (names.empty())
    for (Index j = 0; j < data.dim(); ++j) names.push_back("y" + std::to_string(j + 1));
  w.header(names);
  for (Index r = 0; r < data.length(); ++r) {
    for (Index j = 0; j < data.dim(); ++j) w.cell(data.values(r, j));
    w.end_row();
  }
  w.close();
}

inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  CsvWriter w(path);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) w.cell(m(r, c));
    w.end_row();
  }
  w.close();
}

}  // namespace treecpd
