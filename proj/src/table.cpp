#include "forested/table.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace forested {

Table::Table(std::vector<std::string> attribute_names, std::vector<std::vector<std::string>> rows)
    : rows_(std::move(rows)) {
  std::set<std::string> seen;
  attributes_.reserve(attribute_names.size());
  for (std::size_t j = 0; j < attribute_names.size(); ++j) {
    if (!seen.insert(attribute_names[j]).second) {
      throw SchemaError("duplicate attribute name '" + attribute_names[j] + "'");
    }
    attributes_.push_back({std::move(attribute_names[j]), j});
  }
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (rows_[i].size() != attributes_.size()) {
      throw ParseError("row " + std::to_string(i) + " has " + std::to_string(rows_[i].size()) +
                           " fields, expected " + std::to_string(attributes_.size()),
                       i);
    }
  }
}

std::size_t Table::attribute_index(std::string_view name) const {
  for (const auto& a : attributes_) {
    if (a.name == name) return a.index;
  }
  return attributes_.size();
}

std::vector<std::string> Table::column(std::size_t j) const {
  std::vector<std::string> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[j]);
  return out;
}

Table Table::with_cell(std::size_t i, std::size_t j, std::string value) const {
  Table copy = *this;
  copy.rows_.at(i).at(j) = std::move(value);
  return copy;
}

bool Table::operator==(const Table& other) const {
  if (n_cols() != other.n_cols() || rows_ != other.rows_) return false;
  for (std::size_t j = 0; j < n_cols(); ++j) {
    if (attributes_[j].name != other.attributes_[j].name) return false;
  }
  return true;
}

namespace {

// Splits RFC-4180 records. Quoted fields may contain delimiters, doubled quotes and newlines.
std::vector<std::vector<std::string>> split_records(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t pos = 0;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  while (pos < text.size()) {
    char c = text[pos];
    if (in_quotes) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
          continue;
        }
        in_quotes = false;
      } else {
        field.push_back(c);
      }
      ++pos;
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == delim) {
      end_field();
    } else if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') {
      end_record();
      ++pos;
    } else if (c == '\n') {
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
    ++pos;
  }
  if (in_quotes) {
    throw ParseError("unterminated quoted field", records.empty() ? 0 : records.size() - 1);
  }
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

bool needs_quotes(const std::string& v) {
  return v.find_first_of(",\"\r\n") != std::string::npos;
}

void append_field(std::string& out, const std::string& v) {
  if (!needs_quotes(v)) {
    out += v;
    return;
  }
  out.push_back('"');
  for (char c : v) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

}  // namespace

Table parse_csv(std::string_view text, const CsvOptions& options) {
  auto records = split_records(text, options.delimiter);
  if (records.empty()) throw ParseError("missing header row", 0);
  std::vector<std::string> header = std::move(records.front());
  std::vector<std::vector<std::string>> rows(std::make_move_iterator(records.begin() + 1),
                                             std::make_move_iterator(records.end()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != header.size()) {
      throw ParseError("ragged row at index " + std::to_string(i) + ": " +
                           std::to_string(rows[i].size()) + " fields under a " +
                           std::to_string(header.size()) + "-column header",
                       i);
    }
  }
  return Table(std::move(header), std::move(rows));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Table load_table(const std::filesystem::path& path, const CsvOptions& options) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  return parse_csv(read_file(path), options);
}

std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t j = 0; j < table.n_cols(); ++j) {
    if (j) out.push_back(',');
    append_field(out, table.attribute_name(j));
  }
  out.push_back('\n');
  for (const auto& row : table.rows()) {
    // A lone empty field would read back as a blank line.
    if (row.size() == 1 && row[0].empty()) {
      out += "\"\"\n";
      continue;
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out.push_back(',');
      append_field(out, row[j]);
    }
    out.push_back('\n');
  }
  return out;
}

void write_table(const Table& table, const std::filesystem::path& path) {
  write_file(path, to_csv(table));
}

ErrorMatrix::ErrorMatrix(std::size_t rows, std::size_t cols, MatrixKind kind,
                         std::vector<std::string> column_names)
    : rows_(rows), cols_(cols), kind_(kind), column_names_(std::move(column_names)),
      data_(rows * cols, 0) {
  if (column_names_.empty()) {
    for (std::size_t j = 0; j < cols; ++j) column_names_.push_back("c" + std::to_string(j));
  }
  if (column_names_.size() != cols) throw ShapeError("column name count does not match width");
}

std::size_t ErrorMatrix::count_ones() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

double ErrorMatrix::mean() const {
  return data_.empty() ? 0.0 : static_cast<double>(count_ones()) / static_cast<double>(data_.size());
}

bool ErrorMatrix::same_entries(const ErrorMatrix& other) const {
  return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
}

namespace {
std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}
}  // namespace

ErrorMatrix diff_error_matrix(const Table& dirty, const Table& clean) {
  if (dirty.n_rows() != clean.n_rows() || dirty.n_cols() != clean.n_cols()) {
    throw ShapeError("table shapes differ: " + std::to_string(dirty.n_rows()) + "x" +
                     std::to_string(dirty.n_cols()) + " vs " + std::to_string(clean.n_rows()) +
                     "x" + std::to_string(clean.n_cols()));
  }
  std::vector<std::string> names;
  for (const auto& a : dirty.attributes()) names.push_back(a.name);
  ErrorMatrix m(dirty.n_rows(), dirty.n_cols(), MatrixKind::ground_truth, std::move(names));
  for (std::size_t i = 0; i < dirty.n_rows(); ++i) {
    for (std::size_t j = 0; j < dirty.n_cols(); ++j) {
      m.set(i, j, trim_cr(dirty.cell(i, j)) != trim_cr(clean.cell(i, j)));
    }
  }
  return m;
}

std::string matrix_to_csv(const ErrorMatrix& m) {
  std::string out = "row_index,column_name,is_error\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      out += std::to_string(i);
      out.push_back(',');
      append_field(out, m.column_names()[j]);
      out.push_back(',');
      out.push_back(m.at(i, j) ? '1' : '0');
      out.push_back('\n');
    }
  }
  return out;
}

ErrorMatrix matrix_from_csv(std::string_view text, MatrixKind kind) {
  Table t = parse_csv(text);
  if (t.n_cols() != 3 || t.attribute_name(0) != "row_index" || t.attribute_name(1) != "column_name" ||
      t.attribute_name(2) != "is_error") {
    throw SchemaError("matrix CSV must have header row_index,column_name,is_error");
  }
  std::vector<std::string> names;
  std::size_t n_rows = 0;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const auto& name = t.cell(r, 1);
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    n_rows = std::max<std::size_t>(n_rows, std::stoul(t.cell(r, 0)) + 1);
  }
  if (n_rows * names.size() != t.n_rows()) {
    throw ParseError("matrix CSV is not a dense grid", t.n_rows());
  }
  ErrorMatrix m(n_rows, names.size(), kind, names);
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    std::size_t i = std::stoul(t.cell(r, 0));
    std::size_t j = static_cast<std::size_t>(
        std::find(names.begin(), names.end(), t.cell(r, 1)) - names.begin());
    const auto& flag = t.cell(r, 2);
    if (flag != "0" && flag != "1") throw ParseError("is_error must be 0 or 1", r);
    m.set(i, j, flag == "1");
  }
  return m;
}

void write_matrix(const ErrorMatrix& m, const std::filesystem::path& path) {
  write_file(path, matrix_to_csv(m));
}

ErrorMatrix read_matrix(const std::filesystem::path& path, MatrixKind kind) {
  return matrix_from_csv(read_file(path), kind);
}

}  // namespace forested
