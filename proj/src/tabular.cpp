#include "anypredict/tabular.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "anypredict/csv.hpp"
#include "anypredict/error.hpp"
#include "json.hpp"

namespace anypredict {

SchemaMismatch::SchemaMismatch(std::vector<std::string> columns)
    : DataError([&] {
        std::string joined;
        for (const auto& c : columns) joined += (joined.empty() ? "" : ", ") + c;
        return "schema mismatch: " + joined;
      }()),
      columns_(std::move(columns)) {}

ParseError::ParseError(std::size_t row, std::string column, const std::string& detail)
    : DataError(fmt::format("row {}, column '{}': {}", row, column, detail)),
      row_(row),
      column_(std::move(column)) {}

}  // namespace anypredict

namespace anypredict::tabular {

namespace {

using json = nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_double(std::string_view text) {
  double value = 0.0;
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

std::optional<bool> parse_bool(std::string_view text) {
  const auto v = lower(text);
  if (v == "1" || v == "true" || v == "yes" || v == "y" || v == "t") return true;
  if (v == "0" || v == "false" || v == "no" || v == "n" || v == "f") return false;
  return std::nullopt;
}

CellValue parse_cell(std::string_view raw, const ColumnSchema& column, std::size_t row) {
  const auto text = trim(raw);
  if (text.empty()) return Missing{};
  switch (column.kind) {
    case ColumnKind::categorical:
      return Categorical{std::string(text)};
    case ColumnKind::text:
      return Text{std::string(text)};
    case ColumnKind::binary:
      if (auto b = parse_bool(text)) return *b;
      throw ParseError(row, column.name, fmt::format("'{}' is not a binary value", text));
    case ColumnKind::numerical:
      if (auto d = parse_double(text)) return Numerical{*d, std::string(text)};
      throw ParseError(row, column.name, fmt::format("'{}' is not a number", text));
  }
  return Missing{};
}

json cell_to_json(const CellValue& cell) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Missing>) return nullptr;
        else if constexpr (std::is_same_v<T, bool>) return v;
        else if constexpr (std::is_same_v<T, Numerical>) return v.text;
        else return v.value;
      },
      cell);
}

CellValue cell_from_json(const json& j, const ColumnSchema& column, std::size_t row) {
  if (j.is_null()) return Missing{};
  switch (column.kind) {
    case ColumnKind::binary:
      if (j.is_boolean()) return j.get<bool>();
      break;
    case ColumnKind::numerical:
      if (j.is_string()) {
        const auto text = j.get<std::string>();
        if (auto d = parse_double(text)) return Numerical{*d, text};
      }
      if (j.is_number()) return make_numerical(j.get<double>());
      break;
    case ColumnKind::categorical:
      if (j.is_string()) return Categorical{j.get<std::string>()};
      break;
    case ColumnKind::text:
      if (j.is_string()) return Text{j.get<std::string>()};
      break;
  }
  throw ParseError(row, column.name, "cell does not match column kind");
}

json schema_to_json(const ColumnSchema& c) {
  json j = {{"name", c.name}, {"kind", std::string(to_string(c.kind))}, {"explanation", c.explanation}};
  if (c.unit) j["unit"] = *c.unit;
  return j;
}

}  // namespace

std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::binary: return "binary";
    case ColumnKind::numerical: return "numerical";
    case ColumnKind::text: return "text";
  }
  return "categorical";
}

ColumnKind parse_column_kind(std::string_view name) {
  const auto v = lower(name);
  if (v == "categorical") return ColumnKind::categorical;
  if (v == "binary") return ColumnKind::binary;
  if (v == "numerical") return ColumnKind::numerical;
  if (v == "text") return ColumnKind::text;
  throw DataError(fmt::format("unknown column kind '{}'", name));
}

void validate_schema(const TableSchema& schema) {
  std::set<std::string> seen;
  std::vector<std::string> bad;
  for (const auto& c : schema) {
    if (c.name.empty() || !seen.insert(c.name).second || c.explanation.empty())
      bad.push_back(c.name);
  }
  if (!bad.empty()) throw SchemaMismatch(std::move(bad));
}

bool is_missing(const CellValue& cell) { return std::holds_alternative<Missing>(cell); }

bool matches_kind(const CellValue& cell, ColumnKind kind) {
  switch (cell.index()) {
    case 0: return true;
    case 1: return kind == ColumnKind::categorical;
    case 2: return kind == ColumnKind::binary;
    case 3: return kind == ColumnKind::numerical;
    case 4: return kind == ColumnKind::text;
  }
  return false;
}

Numerical make_numerical(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return Numerical{value, std::string(buf, ec == std::errc{} ? ptr : buf)};
}

std::string render_value(const CellValue& cell) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Missing>) return {};
        else if constexpr (std::is_same_v<T, bool>) return v ? "yes" : "no";
        else if constexpr (std::is_same_v<T, Numerical>)
          return v.text.empty() ? make_numerical(v.value).text : v.text;
        else return v.value;
      },
      cell);
}

void validate_dataset(const TableDataset& dataset) {
  validate_schema(dataset.schema);
  for (std::size_t r = 0; r < dataset.rows.size(); ++r) {
    const auto& row = dataset.rows[r];
    if (row.size() != dataset.schema.size())
      throw ParseError(r, "", fmt::format("row has {} cells, schema has {}", row.size(), dataset.schema.size()));
    for (std::size_t c = 0; c < row.size(); ++c)
      if (!matches_kind(row[c], dataset.schema[c].kind))
        throw ParseError(r, dataset.schema[c].name, "cell does not match column kind");
  }
  if (dataset.labels) {
    if (dataset.labels->size() != dataset.rows.size())
      throw DataError(fmt::format("{} labels for {} rows", dataset.labels->size(), dataset.rows.size()));
    for (std::size_t r = 0; r < dataset.labels->size(); ++r)
      if ((*dataset.labels)[r] != 0 && (*dataset.labels)[r] != 1)
        throw ParseError(r, dataset.label_column.value_or("label"), "label must be 0 or 1");
  }
}

std::vector<Segment> linearize_segments(const TableSchema& schema, const Row& row) {
  std::vector<Segment> out;
  for (std::size_t c = 0; c < schema.size() && c < row.size(); ++c) {
    const auto& cell = row[c];
    if (is_missing(cell)) continue;
    if (const bool* b = std::get_if<bool>(&cell)) {
      if (*b) out.push_back({c, schema[c].name});
      continue;
    }
    out.push_back({c, schema[c].name + " " + render_value(cell)});
  }
  return out;
}

std::string join_segments(const std::vector<Segment>& segments) {
  std::string out;
  for (const auto& s : segments) {
    if (!out.empty()) out += "; ";
    out += s.text;
  }
  return out;
}

std::string linearize(const TableSchema& schema, const Row& row) {
  return join_segments(linearize_segments(schema, row));
}

std::string render_schema_definition(const TableSchema& schema) {
  std::string out;
  for (const auto& c : schema) {
    if (!out.empty()) out += '\n';
    out += fmt::format("{}({}): {}", c.name, to_string(c.kind), c.explanation);
  }
  return out;
}

TableDataset load_dataset(const std::filesystem::path& csv_path,
                          const std::filesystem::path& schema_path) {
  std::ifstream schema_in(schema_path);
  if (!schema_in) throw DataError("cannot open schema file " + schema_path.string());
  json spec;
  try {
    spec = json::parse(schema_in);
  } catch (const json::exception& e) {
    throw DataError(fmt::format("invalid schema JSON {}: {}", schema_path.string(), e.what()));
  }
  if (!spec.is_object()) throw DataError("schema file must hold a JSON object");

  std::ifstream csv_in(csv_path);
  if (!csv_in) throw DataError("cannot open CSV file " + csv_path.string());
  auto records = csv::read(csv_in);
  if (records.empty()) throw DataError("CSV has no header row: " + csv_path.string());
  const auto header = records.front();

  std::vector<std::string> offending;
  std::set<std::string> header_set;
  for (const auto& name : header) {
    if (!spec.contains(name) || !header_set.insert(name).second) offending.push_back(name);
  }
  for (const auto& [name, _] : spec.items())
    if (!header_set.contains(name)) offending.push_back(name);
  if (!offending.empty()) throw SchemaMismatch(std::move(offending));

  TableDataset ds;
  ds.id = csv_path.stem().string();
  std::vector<int> column_slot(header.size(), -1);  // -1 marks the label column
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& entry = spec.at(header[i]);
    const auto kind = lower(entry.value("kind", std::string{}));
    if (entry.value("is_label", false) || kind == "label") {
      if (ds.label_column) throw SchemaMismatch({*ds.label_column, header[i]});
      ds.label_column = header[i];
      continue;
    }
    ColumnSchema col;
    col.name = header[i];
    col.kind = parse_column_kind(kind);
    col.explanation = entry.value("explanation", std::string{});
    if (entry.contains("unit") && entry["unit"].is_string()) col.unit = entry["unit"].get<std::string>();
    column_slot[i] = static_cast<int>(ds.schema.size());
    ds.schema.push_back(std::move(col));
  }
  validate_schema(ds.schema);

  if (ds.label_column) ds.labels.emplace();
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t row_index = r - 1;
    if (rec.size() != header.size())
      throw ParseError(row_index, "", fmt::format("expected {} fields, found {}", header.size(), rec.size()));
    Row row(ds.schema.size(), Missing{});
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (column_slot[i] < 0) {
        const auto text = trim(rec[i]);
        const auto b = parse_bool(text);
        if (!b) throw ParseError(row_index, header[i], fmt::format("label '{}' is not 0 or 1", text));
        ds.labels->push_back(*b ? 1 : 0);
        continue;
      }
      row[column_slot[i]] = parse_cell(rec[i], ds.schema[column_slot[i]], row_index);
    }
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

void save_dataset_jsonl(const TableDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  json header = {{"id", dataset.id}, {"task_id", dataset.task_id}, {"columns", json::array()}};
  header["label_column"] = dataset.label_column ? json(*dataset.label_column) : json(nullptr);
  for (const auto& c : dataset.schema) header["columns"].push_back(schema_to_json(c));
  out << header.dump() << '\n';
  for (std::size_t r = 0; r < dataset.rows.size(); ++r) {
    json cells = json::array();
    for (const auto& cell : dataset.rows[r]) cells.push_back(cell_to_json(cell));
    json line = {{"cells", std::move(cells)}};
    line["label"] = dataset.labels ? json((*dataset.labels)[r]) : json(nullptr);
    out << line.dump() << '\n';
  }
}

TableDataset load_dataset_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty dataset file " + path.string());
  TableDataset ds;
  try {
    const auto header = json::parse(line);
    ds.id = header.at("id").get<std::string>();
    ds.task_id = header.value("task_id", std::string{});
    if (header.contains("label_column") && header["label_column"].is_string()) {
      ds.label_column = header["label_column"].get<std::string>();
      ds.labels.emplace();
    }
    for (const auto& c : header.at("columns")) {
      ColumnSchema col;
      col.name = c.at("name").get<std::string>();
      col.kind = parse_column_kind(c.at("kind").get<std::string>());
      col.explanation = c.at("explanation").get<std::string>();
      if (c.contains("unit")) col.unit = c["unit"].get<std::string>();
      ds.schema.push_back(std::move(col));
    }
    std::size_t r = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto obj = json::parse(line);
      const auto& cells = obj.at("cells");
      if (cells.size() != ds.schema.size())
        throw ParseError(r, "", "row length differs from schema length");
      Row row;
      for (std::size_t c = 0; c < cells.size(); ++c) row.push_back(cell_from_json(cells[c], ds.schema[c], r));
      ds.rows.push_back(std::move(row));
      if (obj.contains("label") && !obj["label"].is_null()) {
        if (!ds.labels) ds.labels.emplace();
        ds.labels->push_back(obj["label"].get<int>());
      }
      ++r;
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed dataset file {}: {}", path.string(), e.what()));
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace anypredict::tabular
