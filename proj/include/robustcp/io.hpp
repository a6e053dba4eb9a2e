#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "robustcp/dataset.hpp"

namespace robustcp {

/// Malformed input file; line is 1-based (0 when the file cannot be opened).
class io_error : public std::runtime_error {
 public:
  io_error(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + (line ? ":" + std::to_string(line) : "") + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline double parse_field(std::string_view field, const std::string& path, std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw io_error(path, line, "cannot parse number '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) throw io_error(path, line, "value must be finite");
  return value;
}

/// Lines with trailing CR stripped; false at EOF.
inline bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline std::string feature_header(std::size_t d) {
  std::string h;
  for (std::size_t j = 1; j <= d; ++j) {
    if (j > 1) h += ',';
    h += "x" + std::to_string(j);
  }
  return h;
}

}  // namespace detail

/// Reads a scores file: header `score`, one finite value per row.
inline std::vector<double> read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path, 0, "cannot open file");
  std::string line;
  if (!detail::next_line(in, line) || line != "score") {
    throw io_error(path, 1, "expected header 'score'");
  }
  std::vector<double> out;
  std::size_t lineno = 1;
  while (detail::next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(detail::parse_field(line, path, lineno));
  }
  if (out.empty()) throw io_error(path, lineno, "no score rows");
  return out;
}

struct FeatureMatrix {
  std::vector<double> values;  // row-major
  std::size_t dim = 0;
  std::size_t rows = 0;
};

/// Reads a features file: header `x1,...,xd`, one row of d finite values per
/// line. Also the format for direction lists.
inline FeatureMatrix read_features_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path, 0, "cannot open file");
  std::string line;
  if (!detail::next_line(in, line)) throw io_error(path, 1, "missing header");
  const auto header = detail::split_fields(line);
  const std::size_t d = header.size();
  if (line != detail::feature_header(d)) {
    throw io_error(path, 1, "expected header 'x1,...,xd'");
  }
  FeatureMatrix out;
  out.dim = d;
  std::size_t lineno = 1;
  while (detail::next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != d) {
      throw io_error(path, lineno,
                     "expected " + std::to_string(d) + " fields, got " +
                         std::to_string(fields.size()));
    }
    for (const auto f : fields) out.values.push_back(detail::parse_field(f, path, lineno));
    ++out.rows;
  }
  if (out.rows == 0) throw io_error(path, lineno, "no data rows");
  return out;
}

/// Reads a joint file: header `x1,...,xd,score`.
inline TabularDataset read_joint_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path, 0, "cannot open file");
  std::string line;
  if (!detail::next_line(in, line)) throw io_error(path, 1, "missing header");
  const auto header = detail::split_fields(line);
  if (header.size() < 2 || header.back() != "score" ||
      line != detail::feature_header(header.size() - 1) + ",score") {
    throw io_error(path, 1, "expected header 'x1,...,xd,score'");
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> features;
  std::vector<double> scores;
  std::size_t lineno = 1;
  while (detail::next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != d + 1) {
      throw io_error(path, lineno,
                     "expected " + std::to_string(d + 1) + " fields, got " +
                         std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      features.push_back(detail::parse_field(fields[j], path, lineno));
    }
    scores.push_back(detail::parse_field(fields[d], path, lineno));
  }
  if (scores.empty()) throw io_error(path, lineno, "no data rows");
  return TabularDataset(std::move(features), d, std::move(scores));
}

/// 12 significant digits, the precision all CLI surfaces print.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path, 0, "cannot open file for writing");
  out << content;
  if (!out) throw io_error(path, 0, "write failed");
}

}  // namespace robustcp
