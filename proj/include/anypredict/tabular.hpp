#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace anypredict::tabular {

enum class ColumnKind { categorical, binary, numerical, text };

std::string_view to_string(ColumnKind kind);
ColumnKind parse_column_kind(std::string_view name);

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::string explanation;
  std::optional<std::string> unit;

  bool operator==(const ColumnSchema&) const = default;
};

using TableSchema = std::vector<ColumnSchema>;

// Throws SchemaMismatch on empty/duplicate names or empty explanations.
void validate_schema(const TableSchema& schema);

struct Missing {
  bool operator==(const Missing&) const = default;
};
struct Categorical {
  std::string value;
  bool operator==(const Categorical&) const = default;
};
struct Numerical {
  double value = 0.0;
  // Source text as it appeared in the input; rendering prefers it so "3.0" stays "3.0".
  std::string text;
  bool operator==(const Numerical&) const = default;
};
struct Text {
  std::string value;
  bool operator==(const Text&) const = default;
};

using CellValue = std::variant<Missing, Categorical, bool, Numerical, Text>;
using Row = std::vector<CellValue>;

bool is_missing(const CellValue& cell);
bool matches_kind(const CellValue& cell, ColumnKind kind);

Numerical make_numerical(double value);

// Reference string for a present cell: the rendered value, or "yes" for binary true.
std::string render_value(const CellValue& cell);

struct TableDataset {
  std::string id;
  TableSchema schema;
  std::vector<Row> rows;
  std::optional<std::vector<int>> labels;
  std::string task_id;
  std::optional<std::string> label_column;

  std::size_t size() const { return rows.size(); }
  bool operator==(const TableDataset&) const = default;
};

// Throws DataError when a row length, a cell tag or a label breaks the invariants.
void validate_dataset(const TableDataset& dataset);

struct Task {
  std::string id;
  std::vector<std::string> datasets;
  std::string label_name;
  std::string positive_meaning;
};

// A column of the row that survives linearization.
struct Segment {
  std::size_t column = 0;
  std::string text;
};

std::vector<Segment> linearize_segments(const TableSchema& schema, const Row& row);
std::string join_segments(const std::vector<Segment>& segments);

// "name value; name; ..." in schema order. Binary false and missing cells are omitted,
// binary true renders the bare column name.
std::string linearize(const TableSchema& schema, const Row& row);

// One "name(kind): explanation" line per column.
std::string render_schema_definition(const TableSchema& schema);

// CSV + JSON schema file. The dataset id defaults to the CSV file stem.
TableDataset load_dataset(const std::filesystem::path& csv_path,
                          const std::filesystem::path& schema_path);

// JSON Lines persistence: line 1 is the schema header, then one object per row.
void save_dataset_jsonl(const TableDataset& dataset, const std::filesystem::path& path);
TableDataset load_dataset_jsonl(const std::filesystem::path& path);

}  // namespace anypredict::tabular
