#include "blockcal/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "blockcal/errors.hpp"

namespace blockcal {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

std::size_t CsvTable::col(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end())
    throw ParseError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

bool CsvTable::has_col(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

double CsvTable::num(std::size_t row, std::size_t c) const {
  const std::string& s = rows.at(row).at(c);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ParseError("line " + std::to_string(row + 2) + ": '" + s + "' is not a number");
  return v;
}

long long CsvTable::integer(std::size_t row, std::size_t c) const {
  const std::string& s = rows.at(row).at(c);
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ParseError("line " + std::to_string(row + 2) + ": '" + s + "' is not an integer");
  return v;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (lineno == 1) {
      t.columns = cells;
      continue;
    }
    if (cells.size() != t.columns.size())
      throw ParseError(path + " line " + std::to_string(lineno) + ": expected " +
                       std::to_string(t.columns.size()) + " cells, got " +
                       std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.columns.empty()) throw ParseError(path + ": empty file");
  return t;
}

std::string format_double(double x) {
  // shortest round-trip form; plain decimal unless scientific is shorter
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

struct CsvWriter::Impl {
  std::ofstream out;
  std::string path;
  std::size_t ncols = 0;
};

CsvWriter::CsvWriter(const std::string& path) : impl_(new Impl) {
  impl_->out.open(path);
  impl_->path = path;
  if (!impl_->out) {
    delete impl_;
    throw IoError("cannot write " + path);
  }
}

CsvWriter::~CsvWriter() { delete impl_; }

void CsvWriter::header(const std::vector<std::string>& columns) {
  impl_->ncols = columns.size();
  row(columns);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (impl_->ncols != 0 && cells.size() != impl_->ncols)
    throw DimensionMismatch("csv row width mismatch writing " + impl_->path);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) impl_->out << ',';
    impl_->out << cells[i];
  }
  impl_->out << '\n';
}

}  // namespace blockcal
