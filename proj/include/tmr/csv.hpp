#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tmr/types.hpp"

namespace tmr::csv {

/// One non-empty line of a CSV file with its 1-based line number.
struct Row {
  int line = 0;
  std::vector<std::string_view> fields;
};

class File {
public:
  /// Reads the whole file; throws ValidationError if it cannot be opened.
  explicit File(const std::filesystem::path& path);

  const std::vector<Row>& rows() const { return rows_; }
  const std::string& name() const { return name_; }

  /// Parses a field, throwing ValidationError "<file>:<line>: ..." on failure.
  double number(const Row& row, std::size_t col) const;
  int integer(const Row& row, std::size_t col) const;
  [[noreturn]] void fail(const Row& row, std::string_view what) const;

private:
  std::string name_;
  std::string text_;
  std::vector<Row> rows_;
};

/// Shortest decimal form that parses back to the same double.
std::string format(double value);

/// One line per matrix row, values comma separated.
std::string matrix_text(const Matrix& m);

/// Reads a rows x cols numeric table; every value must be finite and
/// nonnegative. Throws ValidationError with file and line context.
Matrix read_nonneg_matrix(const std::filesystem::path& path, int rows, int cols);

/// Writes `text` to `path`, throwing ValidationError on I/O failure.
void write_file(const std::filesystem::path& path, const std::string& text);

} // namespace tmr::csv
