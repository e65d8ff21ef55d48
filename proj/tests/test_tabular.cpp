#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "anypredict/error.hpp"
#include "anypredict/tabular.hpp"
#include "fixtures.hpp"

using namespace anypredict;
using namespace anypredict::tabular;

namespace {

TableDataset load_text(const TempDir& dir, const std::string& csv, const std::string& schema,
                       const std::string& stem = "t") {
  write_file(dir.path / (stem + ".csv"), csv);
  write_file(dir.path / (stem + ".schema.json"), schema);
  return load_dataset(dir.path / (stem + ".csv"), dir.path / (stem + ".schema.json"));
}

TableSchema four_columns() {
  return {{"age", ColumnKind::numerical, "age in years", {}},
          {"gender", ColumnKind::categorical, "sex", {}},
          {"smoker", ColumnKind::binary, "smokes", {}},
          {"note", ColumnKind::text, "free text", {}}};
}

}  // namespace

TEST(LoadDataset, MinimalCsvWithLabel) {
  TempDir dir;
  const auto ds = load_text(dir, "age,mortality\n18,0\n",
                            R"({"age": {"kind": "numerical", "explanation": "age"},
                                "mortality": {"kind": "label", "explanation": "died"}})");
  ASSERT_EQ(ds.size(), 1u);
  ASSERT_TRUE(ds.labels);
  EXPECT_EQ(*ds.labels, std::vector<int>{0});
  EXPECT_EQ(ds.schema.size(), 1u);
  EXPECT_EQ(ds.id, "t");
}

TEST(LoadDataset, ColumnAbsentFromSchema) {
  TempDir dir;
  try {
    load_text(dir, "age,weight\n18,60\n", R"({"age": {"kind": "numerical", "explanation": "age"}})");
    FAIL() << "expected SchemaMismatch";
  } catch (const SchemaMismatch& e) {
    EXPECT_EQ(e.columns(), std::vector<std::string>{"weight"});
  }
}

TEST(LoadDataset, SampleTableFromFourFeatures) {
  TempDir dir;
  const auto ds = load_text(dir, "age,gender,height,weight,mortality\n18,f,1.7,60,0\n",
                            R"({"age": {"kind": "numerical", "explanation": "age"},
                                "gender": {"kind": "categorical", "explanation": "gender"},
                                "height": {"kind": "numerical", "explanation": "height", "unit": "m"},
                                "weight": {"kind": "numerical", "explanation": "weight", "unit": "kg"},
                                "mortality": {"is_label": true, "kind": "binary", "explanation": "died"}})");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.schema.size(), 4u);
  EXPECT_EQ(*ds.labels, std::vector<int>{0});
  EXPECT_EQ(linearize(ds.schema, ds.rows[0]), "age 18; gender f; height 1.7; weight 60");
}

TEST(LoadDataset, BadNumberIsParseError) {
  TempDir dir;
  try {
    load_text(dir, "age\nold\n", R"({"age": {"kind": "numerical", "explanation": "age"}})");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 0u);
    EXPECT_EQ(e.column(), "age");
  }
}

TEST(LoadDataset, NonBinaryLabelRejected) {
  TempDir dir;
  EXPECT_THROW(load_text(dir, "age,y\n1,2\n", R"({"age": {"kind": "numerical", "explanation": "a"},
                                                 "y": {"kind": "label", "explanation": "y"}})"),
               ParseError);
}

TEST(LoadDataset, QuotedFieldsAndSourceTextKept) {
  TempDir dir;
  const auto ds = load_text(dir, "size,site\n3.0,\"ward 4, east\"\n",
                            R"({"size": {"kind": "numerical", "explanation": "tumor size"},
                                "site": {"kind": "categorical", "explanation": "site"}})");
  EXPECT_EQ(linearize(ds.schema, ds.rows[0]), "size 3.0; site ward 4, east");
}

TEST(Linearize, OmitsFalseBinaryAndKeepsSourceDecimal) {
  const TableSchema schema = {{"post-menopause", ColumnKind::binary, "status", {}},
                              {"prior hormonal therapy", ColumnKind::binary, "therapy", {}},
                              {"tumor size", ColumnKind::numerical, "size", {}}};
  const Row row = {true, false, Numerical{3.0, "3.0"}};
  EXPECT_EQ(linearize(schema, row), "post-menopause; tumor size 3.0");
}

TEST(Linearize, AllMissingIsEmpty) {
  const auto schema = four_columns();
  EXPECT_EQ(linearize(schema, Row(schema.size(), Missing{})), "");
}

TEST(Linearize, NumericalWithoutSourceUsesShortestRoundTrip) {
  const TableSchema schema = {{"x", ColumnKind::numerical, "x", {}}};
  EXPECT_EQ(linearize(schema, {make_numerical(0.1)}), "x 0.1");
  EXPECT_EQ(linearize(schema, {make_numerical(24.883)}), "x 24.883");
  EXPECT_EQ(linearize(schema, {make_numerical(60)}), "x 60");
}

TEST(SchemaDefinition, Lines) {
  EXPECT_EQ(render_schema_definition({{"demo1", ColumnKind::numerical, "the age of the patient in years", {}}}),
            "demo1(numerical): the age of the patient in years");
  EXPECT_EQ(render_schema_definition({}), "");
  EXPECT_EQ(render_schema_definition({{"a", ColumnKind::binary, "first", {}}, {"b", ColumnKind::text, "second", {}}}),
            "a(binary): first\nb(text): second");
}

TEST(SchemaDefinition, LineCountMatchesFeatureColumns) {
  TempDir dir;
  const auto ds = load_text(dir, "a,b,c,y\n1,x,1,0\n",
                            R"({"a": {"kind": "numerical", "explanation": "a"},
                                "b": {"kind": "categorical", "explanation": "b"},
                                "c": {"kind": "binary", "explanation": "c"},
                                "y": {"kind": "label", "explanation": "y"}})");
  const auto text = render_schema_definition(ds.schema);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n') + 1, 3);
}

TEST(Schema, ValidationRejectsDuplicatesAndBlankExplanations) {
  EXPECT_THROW(validate_schema({{"a", ColumnKind::text, "x", {}}, {"a", ColumnKind::text, "y", {}}}), SchemaMismatch);
  EXPECT_THROW(validate_schema({{"a", ColumnKind::text, "", {}}}), SchemaMismatch);
  EXPECT_THROW(validate_schema({{"", ColumnKind::text, "x", {}}}), SchemaMismatch);
}

TEST(LinearizeProperty, SegmentsAreTheKeptColumnsInOrder) {
  const auto schema = four_columns();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    Row row;
    std::vector<std::string> expected;
    for (const auto& col : schema) {
      const bool missing = rng() % 4 == 0;
      if (missing) {
        row.emplace_back(Missing{});
        continue;
      }
      switch (col.kind) {
        case ColumnKind::numerical: {
          const double v = static_cast<double>(rng() % 1000) / 10.0;
          row.emplace_back(make_numerical(v));
          expected.push_back(col.name + " " + render_value(row.back()));
          break;
        }
        case ColumnKind::binary: {
          const bool b = rng() % 2;
          row.emplace_back(b);
          if (b) expected.push_back(col.name);
          break;
        }
        case ColumnKind::categorical:
          row.emplace_back(Categorical{"v" + std::to_string(rng() % 5)});
          expected.push_back(col.name + " " + std::get<Categorical>(row.back()).value);
          break;
        case ColumnKind::text:
          row.emplace_back(Text{"w" + std::to_string(rng() % 5)});
          expected.push_back(col.name + " " + std::get<Text>(row.back()).value);
          break;
      }
    }
    std::string joined;
    for (const auto& e : expected) joined += (joined.empty() ? "" : "; ") + e;
    ASSERT_EQ(linearize(schema, row), joined);
    const auto segments = linearize_segments(schema, row);
    for (const auto& s : segments) {
      ASSERT_FALSE(is_missing(row[s.column]));
      if (const auto* b = std::get_if<bool>(&row[s.column])) ASSERT_TRUE(*b);
    }
  }
}

TEST(Persistence, JsonlRoundTripIsIdentical) {
  TempDir dir;
  auto ds = load_text(dir, "age,gender,smoker,note,y\n18,f,yes,\"said \"\"hi\"\"\",1\n3.0,,no,,0\n,m,,x,1\n",
                      R"({"age": {"kind": "numerical", "explanation": "age", "unit": "years"},
                          "gender": {"kind": "categorical", "explanation": "sex"},
                          "smoker": {"kind": "binary", "explanation": "smokes"},
                          "note": {"kind": "text", "explanation": "note"},
                          "y": {"kind": "label", "explanation": "outcome"}})");
  ds.task_id = "mortality";
  save_dataset_jsonl(ds, dir.path / "a.jsonl");
  const auto once = load_dataset_jsonl(dir.path / "a.jsonl");
  EXPECT_EQ(once, ds);
  save_dataset_jsonl(once, dir.path / "b.jsonl");
  EXPECT_EQ(load_dataset_jsonl(dir.path / "b.jsonl"), ds);
  EXPECT_EQ(read_file(dir.path / "a.jsonl"), read_file(dir.path / "b.jsonl"));
}

TEST(Dataset, ValidateCatchesKindMismatch) {
  TableDataset ds;
  ds.id = "d";
  ds.schema = {{"a", ColumnKind::numerical, "a", {}}};
  ds.rows = {{Categorical{"x"}}};
  EXPECT_THROW(validate_dataset(ds), DataError);
  ds.rows = {{make_numerical(1)}};
  ds.labels = std::vector<int>{0, 1};
  EXPECT_THROW(validate_dataset(ds), DataError);
}
