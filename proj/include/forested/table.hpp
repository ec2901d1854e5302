#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace forested {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : std::runtime_error(what), row_(row) {}
  /// 0-based data row index (header excluded) where parsing failed.
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class SchemaError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AttributeMeta {
  std::string name;
  std::size_t index = 0;
};

struct CsvOptions {
  char delimiter = ',';
};

/// Immutable grid of raw text cells. An empty string is a missing value.
class Table {
 public:
  Table() = default;
  Table(std::vector<std::string> attribute_names, std::vector<std::vector<std::string>> rows);

  std::size_t n_rows() const { return rows_.size(); }
  std::size_t n_cols() const { return attributes_.size(); }

  const std::vector<AttributeMeta>& attributes() const { return attributes_; }
  const std::string& attribute_name(std::size_t j) const { return attributes_.at(j).name; }
  /// Returns n_cols() when the name is unknown.
  std::size_t attribute_index(std::string_view name) const;

  const std::string& cell(std::size_t i, std::size_t j) const { return rows_[i][j]; }
  const std::vector<std::string>& row(std::size_t i) const { return rows_[i]; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::vector<std::string> column(std::size_t j) const;

  /// Copy with a single cell replaced.
  Table with_cell(std::size_t i, std::size_t j, std::string value) const;

  bool operator==(const Table& other) const;

 private:
  std::vector<AttributeMeta> attributes_;
  std::vector<std::vector<std::string>> rows_;
};

Table parse_csv(std::string_view text, const CsvOptions& options = {});
Table load_table(const std::filesystem::path& path, const CsvOptions& options = {});
std::string to_csv(const Table& table);
void write_table(const Table& table, const std::filesystem::path& path);

enum class MatrixKind { ground_truth, tree_prediction, consensus };

/// Dense N x M binary matrix, row-major.
class ErrorMatrix {
 public:
  ErrorMatrix() = default;
  ErrorMatrix(std::size_t rows, std::size_t cols, MatrixKind kind = MatrixKind::tree_prediction,
              std::vector<std::string> column_names = {});

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  MatrixKind kind() const { return kind_; }
  void set_kind(MatrixKind kind) { kind_ = kind; }

  std::uint8_t at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  void set(std::size_t i, std::size_t j, bool flag) { data_[i * cols_ + j] = flag ? 1 : 0; }

  const std::vector<std::uint8_t>& data() const { return data_; }
  const std::vector<std::string>& column_names() const { return column_names_; }

  std::size_t count_ones() const;
  double mean() const;

  /// Same shape and entries; kind and column names are ignored.
  bool same_entries(const ErrorMatrix& other) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  MatrixKind kind_ = MatrixKind::tree_prediction;
  std::vector<std::string> column_names_;
  std::vector<std::uint8_t> data_;
};

/// Cell (i,j) is 1 exactly when the raw texts differ after trimming trailing carriage returns.
ErrorMatrix diff_error_matrix(const Table& dirty, const Table& clean);

/// Layout: header `row_index,column_name,is_error`, one line per cell in row-major order.
std::string matrix_to_csv(const ErrorMatrix& m);
ErrorMatrix matrix_from_csv(std::string_view text, MatrixKind kind = MatrixKind::tree_prediction);
void write_matrix(const ErrorMatrix& m, const std::filesystem::path& path);
ErrorMatrix read_matrix(const std::filesystem::path& path, MatrixKind kind = MatrixKind::tree_prediction);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace forested
