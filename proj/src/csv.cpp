#include "tmr/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tmr/types.hpp"

namespace tmr::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

} // namespace

File::File(const std::filesystem::path& path) : name_(path.filename().string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError(name_ + ": cannot open file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  text_ = buf.str();

  std::string_view rest = text_;
  int line = 0;
  while (!rest.empty()) {
    ++line;
    auto eol = rest.find('\n');
    auto raw = trim(rest.substr(0, eol));
    rest = eol == std::string_view::npos ? std::string_view{} : rest.substr(eol + 1);
    if (raw.empty())
      continue;
    Row row{line, {}};
    while (true) {
      auto comma = raw.find(',');
      row.fields.push_back(trim(raw.substr(0, comma)));
      if (comma == std::string_view::npos)
        break;
      raw.remove_prefix(comma + 1);
    }
    rows_.push_back(std::move(row));
  }
}

void File::fail(const Row& row, std::string_view what) const {
  throw ValidationError(name_ + ":" + std::to_string(row.line) + ": " + std::string(what));
}

double File::number(const Row& row, std::size_t col) const {
  if (col >= row.fields.size())
    fail(row, "missing field " + std::to_string(col + 1));
  auto f = row.fields[col];
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
  if (ec != std::errc{} || ptr != f.data() + f.size())
    fail(row, "not a number: '" + std::string(f) + "'");
  return value;
}

int File::integer(const Row& row, std::size_t col) const {
  if (col >= row.fields.size())
    fail(row, "missing field " + std::to_string(col + 1));
  auto f = row.fields[col];
  int value = 0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
  if (ec != std::errc{} || ptr != f.data() + f.size())
    fail(row, "not an integer: '" + std::string(f) + "'");
  return value;
}

std::string format(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out)
    throw ValidationError("write failed: " + path.string());
}

std::string matrix_text(const Matrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      if (k)
        out += ',';
      out += format(m(i, k));
    }
    out += '\n';
  }
  return out;
}

Matrix read_nonneg_matrix(const std::filesystem::path& path, int rows, int cols) {
  File file(path);
  if (static_cast<int>(file.rows().size()) != rows)
    throw ValidationError(file.name() + ": expected " + std::to_string(rows) + " rows, got " +
                          std::to_string(file.rows().size()));
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto& row = file.rows()[i];
    if (static_cast<int>(row.fields.size()) != cols)
      file.fail(row, "expected " + std::to_string(cols) + " values, got " +
                         std::to_string(row.fields.size()));
    for (int k = 0; k < cols; ++k) {
      const double v = file.number(row, k);
      if (!std::isfinite(v) || v < 0.0)
        file.fail(row, "value must be finite and nonnegative");
      m(i, k) = v;
    }
  }
  return m;
}

} // namespace tmr::csv
