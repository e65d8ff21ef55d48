#include <gtest/gtest.h>

#include <random>

#include "anypredict/auditor.hpp"
#include "anypredict/consolidator.hpp"
#include "anypredict/edit_distance.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace anypredict;
using namespace anypredict::tabular;
using audit::AuditOptions;

namespace {

std::string random_string(std::mt19937_64& rng, std::size_t max_len, std::string_view alphabet = "abcd") {
  std::string s(rng() % (max_len + 1), ' ');
  for (auto& c : s) c = alphabet[rng() % alphabet.size()];
  return s;
}

TableDataset tumor_dataset(std::size_t rows) {
  TableDataset ds;
  ds.id = "breast";
  ds.schema = {{"age", ColumnKind::numerical, "age", {}},
               {"post-menopause", ColumnKind::binary, "status", {}},
               {"grade", ColumnKind::categorical, "tumor grade", {}},
               {"tumor size", ColumnKind::numerical, "size in cm", {}}};
  ds.labels.emplace();
  for (std::size_t r = 0; r < rows; ++r) {
    ds.rows.push_back({make_numerical(40.0 + static_cast<double>(r)), r % 2 == 0,
                       Categorical{r % 3 ? "high" : "low"}, Numerical{3.0, "3.0"}});
    ds.labels->push_back(static_cast<int>(r % 2));
  }
  return ds;
}

std::vector<ConsolidatedSample> describe_all(const TableDataset& ds, llm::Gateway& gw) {
  std::vector<ConsolidatedSample> out;
  for (std::size_t r = 0; r < ds.size(); ++r) out.push_back(consolidate::consolidate_row(ds, r, gw));
  return out;
}

}  // namespace

TEST(EditDistance, Examples) {
  EXPECT_EQ(edit_distance("", "abc"), 3u);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(oracle::edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(edit_distance("flaw", "lawn"), 2u);
  for (std::string s : {"", "a", "abc", "post-menopause"}) EXPECT_EQ(edit_distance(s, s), 0u);
}

TEST(EditDistance, MatchesRecursiveOracleExhaustivelyUpToLengthFour) {
  std::vector<std::string> all{""};
  for (std::size_t len = 1, begin = 0; len <= 4; ++len) {
    const auto end = all.size();
    for (auto i = begin; i < end; ++i)
      for (char c : std::string_view("abcd")) all.push_back(all[i] + c);
    begin = end;
  }
  for (const auto& a : all)
    for (std::size_t j = 0; j < all.size(); j += 7) ASSERT_EQ(edit_distance(a, all[j]), oracle::edit_distance(a, all[j]));
}

TEST(EditDistance, WorksOnTokenSequences) {
  const std::vector<std::string> a = {"the", "age", "is", "18"}, b = {"age", "is", "19"};
  EXPECT_EQ(edit_distance(a, b), 2u);
}

TEST(Ned, Examples) {
  EXPECT_DOUBLE_EQ(ned("60", "60"), 1.0);
  EXPECT_NEAR(ned("3.0", "3"), 1.0 - 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(ned("", ""), 1.0);
  EXPECT_DOUBLE_EQ(ned("abc", ""), 0.0);
}

TEST(NedProperty, SymmetricBoundedIdentityAndSingleEditStep) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20000; ++trial) {
    const auto a = random_string(rng, 8), b = random_string(rng, 8);
    const double v = ned(a, b);
    ASSERT_EQ(v, ned(b, a));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_EQ(v == 1.0, a == b);
    // one substitution, insertion or deletion applied to b
    auto c = b;
    const auto op = rng() % 3;
    if (op == 0 && !c.empty()) c[rng() % c.size()] = "abcd"[rng() % 4];
    else if (op == 1) c.insert(c.begin() + static_cast<long>(rng() % (c.size() + 1)), 'a');
    else if (!c.empty()) c.erase(c.begin() + static_cast<long>(rng() % c.size()));
    const auto d_ab = edit_distance(a, b), d_ac = edit_distance(a, c);
    ASSERT_LE(d_ac, d_ab + 1) << a << " " << b << " " << c;
    ASSERT_LE(d_ab, d_ac + 1) << a << " " << b << " " << c;
    ASSERT_LE(d_ab, std::max(a.size(), b.size()));
  }
}

TEST(Answers, Normalisation) {
  EXPECT_EQ(audit::normalize_answer("  High.  "), "high");
  EXPECT_EQ(audit::normalize_answer("Stage\t II"), "stage ii");
  EXPECT_EQ(audit::normalize_answer("\"3.0\""), "3.0");
  EXPECT_TRUE(audit::is_affirmative("Yes."));
  EXPECT_TRUE(audit::is_affirmative("(a) yes"));
  EXPECT_TRUE(audit::is_affirmative("a"));
  EXPECT_FALSE(audit::is_affirmative("(b) no"));
  EXPECT_FALSE(audit::is_affirmative("no"));
}

TEST(AuditSample, FaithfulMockPasses) {
  TableDataset ds;
  ds.id = "d";
  ds.schema = {{"age", ColumnKind::numerical, "age", {}}};
  ds.rows = {{Numerical{18, "18"}}};
  llm::MockGateway mock;
  const auto sample = consolidate::consolidate_row(ds, 0, mock);
  const auto out = audit::audit_sample(sample, ds, mock, {});
  ASSERT_EQ(out.report.per_feature.size(), 1u);
  EXPECT_EQ(out.report.per_feature[0].ned, 1.0);
  EXPECT_EQ(out.report.mned, 1.0);
  EXPECT_EQ(out.report.status, AuditStatus::passed);
  EXPECT_EQ(out.sample.audit_status, AuditStatus::passed);
  EXPECT_EQ(out.sample.text, sample.text);
}

TEST(AuditSample, LossyMockIsCorrected) {
  const auto ds = tumor_dataset(1);
  const auto before = ds;
  llm::MockGateway lossy(true);
  const auto sample = consolidate::consolidate_row(ds, 0, lossy);
  ASSERT_EQ(sample.text.find("3.0"), std::string::npos);
  AuditOptions opts;
  opts.max_rounds = 1;
  const auto out = audit::audit_sample(sample, ds, lossy, opts);
  EXPECT_EQ(out.report.status, AuditStatus::corrected);
  EXPECT_NE(out.sample.text.find("3.0"), std::string::npos);
  EXPECT_TRUE(out.report.missed.empty());
  EXPECT_GT(out.report.mned, out.report.initial_mned);
  std::vector<std::string> initially_missed;
  for (const auto& f : out.report.initial_per_feature)
    if (f.ned < opts.threshold) initially_missed.push_back(f.column);
  EXPECT_EQ(initially_missed, std::vector<std::string>{"tumor size"});
  EXPECT_EQ(ds, before);
}

TEST(AuditSample, NoRoundsMeansFailed) {
  const auto ds = tumor_dataset(1);
  llm::MockGateway lossy(true);
  AuditOptions opts;
  opts.max_rounds = 0;
  const auto out = audit::audit_sample(consolidate::consolidate_row(ds, 0, lossy), ds, lossy, opts);
  EXPECT_EQ(out.report.status, AuditStatus::failed);
  EXPECT_FALSE(out.report.missed.empty());
  EXPECT_EQ(out.report.rounds_used, 0);
}

TEST(AuditSample, BinaryProbesScoreZeroOrOne) {
  const auto ds = tumor_dataset(2);
  llm::MockGateway mock;
  for (std::size_t r = 0; r < 2; ++r) {
    const auto out = audit::audit_sample(consolidate::consolidate_row(ds, r, mock), ds, mock, {});
    for (const auto& f : out.report.per_feature)
      if (f.column == "post-menopause") EXPECT_TRUE(f.ned == 0.0 || f.ned == 1.0);
  }
}

TEST(AuditSample, ProvenanceMustMatchDataset) {
  const auto ds = tumor_dataset(1);
  llm::MockGateway mock;
  auto sample = consolidate::consolidate_row(ds, 0, mock);
  sample.provenance.dataset_id = "other";
  EXPECT_THROW(audit::audit_sample(sample, ds, mock, {}), ProvenanceError);
  sample.provenance = {"breast", 5, 0};
  EXPECT_THROW(audit::audit_sample(sample, ds, mock, {}), ProvenanceError);
}

TEST(AuditDataset, AllPassKeepsMned) {
  const auto ds = tumor_dataset(6);
  llm::MockGateway mock;
  const auto samples = describe_all(ds, mock);
  const auto result = audit::audit_dataset(samples, ds, mock, {});
  EXPECT_EQ(result.mned_before, result.mned_after);
  EXPECT_EQ(result.n_failed, 0u);
}

TEST(AuditDataset, LossyCorpusImprovesAndParallelAgrees) {
  const auto ds = tumor_dataset(20);
  llm::MockGateway lossy(true);
  const auto samples = describe_all(ds, lossy);
  AuditOptions opts;
  opts.max_rounds = 1;
  const auto serial = audit::audit_dataset(samples, ds, lossy, opts);
  EXPECT_GT(serial.mned_after, serial.mned_before);
  opts.parallelism = 4;
  const auto parallel = audit::audit_dataset(samples, ds, lossy, opts);
  EXPECT_EQ(parallel.mned_after, serial.mned_after);
  for (std::size_t i = 0; i < samples.size(); ++i)
    EXPECT_EQ(parallel.outcomes[i].sample, serial.outcomes[i].sample);
}

TEST(AuditDatasetProperty, CorrectionNeverLowersMned) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    TableDataset ds;
    ds.id = "r";
    const auto cols = 1 + rng() % 5;
    for (std::size_t c = 0; c < cols; ++c)
      ds.schema.push_back({"feature " + std::to_string(c), c % 2 ? ColumnKind::categorical : ColumnKind::numerical,
                           "x", {}});
    for (int r = 0; r < 8; ++r) {
      Row row;
      for (std::size_t c = 0; c < cols; ++c) {
        if (rng() % 5 == 0) row.emplace_back(Missing{});
        else if (c % 2) row.emplace_back(Categorical{random_string(rng, 4, "xyz") + "v"});
        else row.emplace_back(make_numerical(static_cast<double>(rng() % 100)));
      }
      if (linearize(ds.schema, row).empty()) row[0] = make_numerical(1);
      ds.rows.push_back(std::move(row));
    }
    llm::MockGateway lossy(true);
    AuditOptions opts;
    opts.max_rounds = 1 + static_cast<int>(rng() % 2);
    opts.averaging = rng() % 2 ? audit::MnedAveraging::per_sample : audit::MnedAveraging::per_feature;
    const auto result = audit::audit_dataset(describe_all(ds, lossy), ds, lossy, opts);
    ASSERT_GE(result.mned_after, result.mned_before);
  }
}

TEST(AuditArtifacts, SummaryCsvLayout) {
  TempDir dir;
  const auto ds = tumor_dataset(4);
  llm::MockGateway lossy(true);
  AuditOptions opts;
  opts.max_rounds = 0;
  const auto result = audit::audit_dataset(describe_all(ds, lossy), ds, lossy, opts);
  const std::vector<audit::DatasetAudit> audits = {result};
  audit::write_summary_csv(audits, dir.path / "s.csv");
  const auto text = read_file(dir.path / "s.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "dataset_id,mned_before,mned_after,n_failed");
  EXPECT_NE(text.find("breast,"), std::string::npos);
  EXPECT_NE(text.find(",4\n"), std::string::npos);
  audit::write_reports_jsonl(result.outcomes, dir.path / "r.jsonl");
  const auto reports = read_file(dir.path / "r.jsonl");
  EXPECT_EQ(std::count(reports.begin(), reports.end(), '\n'), 4);
}
