#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace blockcal {

// Minimal CSV support: comma separated, first row is the header, no quoting
// (none of the file formats used here need embedded commas). Parse failures
// carry the 1-based line number.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const;  // throws ParseError if absent
  bool has_col(const std::string& name) const;
  double num(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(const std::string& path);

// Shortest round-trip decimal form of a double.
std::string format_double(double x);

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void header(const std::vector<std::string>& columns);
  void row(const std::vector<std::string>& cells);

 private:
  struct Impl;
  Impl* impl_;
};

}  // namespace blockcal
