#include "anypredict/auditor.hpp"

#include <cctype>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "anypredict/csv.hpp"
#include "anypredict/parallel.hpp"
#include "json.hpp"

namespace anypredict::audit {

namespace {

using json = nlohmann::json;

bool is_edge_char(unsigned char c) { return std::isspace(c) || std::ispunct(c); }

double mean_ned(const std::vector<FeatureScore>& scores) {
  if (scores.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& s : scores) sum += s.ned;
  return sum / static_cast<double>(scores.size());
}

struct Probe {
  std::vector<FeatureScore> scores;
  std::vector<std::size_t> missed;  // indices into segments
};

Probe probe(const std::string& text, const tabular::TableDataset& ds, const tabular::Row& row,
            const std::vector<tabular::Segment>& segments, llm::Gateway& gateway, double threshold) {
  Probe p;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& column = ds.schema[segments[i].column];
    const auto& cell = row[segments[i].column];
    FeatureScore fs;
    fs.column = column.name;
    fs.reference = tabular::render_value(cell);
    if (column.kind == tabular::ColumnKind::binary) {
      const auto prompt = llm::build_prompt(llm::PromptMode::qa_binary, {}, text, column.name);
      fs.probed_answer = gateway.complete(llm::make_request(prompt, 16));
      fs.ned = is_affirmative(fs.probed_answer) ? 1.0 : 0.0;
    } else {
      const auto prompt = llm::build_prompt(llm::PromptMode::qa_categorical, {}, text, column.name);
      fs.probed_answer = gateway.complete(llm::make_request(prompt, 64));
      fs.ned = ned(normalize_answer(fs.probed_answer), normalize_answer(fs.reference));
    }
    if (fs.ned < threshold) p.missed.push_back(i);
    p.scores.push_back(std::move(fs));
  }
  return p;
}

json scores_json(const std::vector<FeatureScore>& scores) {
  json arr = json::array();
  for (const auto& s : scores)
    arr.push_back({{"column", s.column}, {"probed_answer", s.probed_answer}, {"reference", s.reference}, {"ned", s.ned}});
  return arr;
}

}  // namespace

std::string normalize_answer(std::string_view answer) {
  std::size_t b = 0, e = answer.size();
  while (b < e && is_edge_char(static_cast<unsigned char>(answer[b]))) ++b;
  while (e > b && is_edge_char(static_cast<unsigned char>(answer[e - 1]))) --e;
  std::string out;
  bool space = false;
  for (std::size_t i = b; i < e; ++i) {
    const auto c = static_cast<unsigned char>(answer[i]);
    if (std::isspace(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool is_affirmative(std::string_view answer) {
  const auto norm = normalize_answer(answer);
  std::string first;
  for (char c : norm) {
    if (std::isalnum(static_cast<unsigned char>(c))) first.push_back(c);
    else if (!first.empty()) break;
  }
  return first == "yes" || first == "a";
}

AuditOutcome audit_sample(const ConsolidatedSample& sample, const tabular::TableDataset& dataset,
                          llm::Gateway& gateway, const AuditOptions& options) {
  if (sample.provenance.dataset_id != dataset.id)
    throw ProvenanceError(fmt::format("sample {} does not belong to dataset {}", sample.provenance.key(), dataset.id));
  if (sample.provenance.row_index >= dataset.rows.size())
    throw ProvenanceError(fmt::format("sample {} points past the end of {}", sample.provenance.key(), dataset.id));
  if (!(options.threshold > 0.0 && options.threshold <= 1.0))
    throw ConfigError("audit threshold must lie in (0, 1]");
  if (options.max_rounds < 0) throw ConfigError("audit max_rounds must be non-negative");

  const auto& row = dataset.rows[sample.provenance.row_index];
  const auto segments = tabular::linearize_segments(dataset.schema, row);
  const auto schema_definition = tabular::render_schema_definition(dataset.schema);

  AuditOutcome out{sample, {}};
  auto& report = out.report;
  report.provenance = sample.provenance;

  auto current = probe(out.sample.text, dataset, row, segments, gateway, options.threshold);
  report.initial_per_feature = current.scores;
  report.initial_mned = mean_ned(current.scores);

  while (!current.missed.empty() && report.rounds_used < options.max_rounds) {
    std::vector<tabular::Segment> missed;
    for (auto i : current.missed) missed.push_back(segments[i]);
    const auto prompt = llm::build_prompt(llm::PromptMode::correct, schema_definition, out.sample.text,
                                          tabular::join_segments(missed));
    out.sample.text = gateway.complete(llm::make_request(prompt));
    ++report.rounds_used;
    current = probe(out.sample.text, dataset, row, segments, gateway, options.threshold);
  }

  report.per_feature = std::move(current.scores);
  report.mned = mean_ned(report.per_feature);
  for (auto i : current.missed) report.missed.push_back(dataset.schema[segments[i].column].name);
  if (report.missed.empty())
    report.status = report.rounds_used == 0 ? AuditStatus::passed : AuditStatus::corrected;
  else
    report.status = AuditStatus::failed;
  out.sample.audit_status = report.status;
  return out;
}

DatasetAudit audit_dataset(std::span<const ConsolidatedSample> samples,
                           const tabular::TableDataset& dataset, llm::Gateway& gateway,
                           const AuditOptions& options) {
  DatasetAudit result;
  result.dataset_id = dataset.id;
  result.outcomes.resize(samples.size());
  parallel_for(samples.size(), options.parallelism, [&](std::size_t i) {
    result.outcomes[i] = audit_sample(samples[i], dataset, gateway, options);
  });

  double before = 0.0, after = 0.0;
  std::size_t count = 0;
  for (const auto& o : result.outcomes) {
    result.n_failed += o.report.status == AuditStatus::failed;
    if (options.averaging == MnedAveraging::per_sample) {
      before += o.report.initial_mned;
      after += o.report.mned;
      ++count;
    } else {
      for (const auto& f : o.report.initial_per_feature) before += f.ned;
      for (const auto& f : o.report.per_feature) after += f.ned;
      count += o.report.per_feature.size();
    }
  }
  if (count > 0) {
    result.mned_before = before / static_cast<double>(count);
    result.mned_after = after / static_cast<double>(count);
  }
  return result;
}

void write_reports_jsonl(std::span<const AuditOutcome> outcomes, const std::filesystem::path& path,
                         bool append) {
  std::ofstream out(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& o : outcomes) {
    const auto& r = o.report;
    json j = {{"provenance_key", r.provenance.key()},
              {"per_feature", scores_json(r.per_feature)},
              {"mned", r.mned},
              {"missed", r.missed},
              {"rounds_used", r.rounds_used},
              {"initial_per_feature", scores_json(r.initial_per_feature)},
              {"initial_mned", r.initial_mned},
              {"status", std::string(to_string(r.status))}};
    out << j.dump() << '\n';
  }
}

void write_summary_csv(std::span<const DatasetAudit> audits, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"dataset_id", "mned_before", "mned_after", "n_failed"});
  for (const auto& a : audits)
    csv::write_row(out, {a.dataset_id, fmt::format("{:.4f}", a.mned_before), fmt::format("{:.4f}", a.mned_after),
                         std::to_string(a.n_failed)});
}

}  // namespace anypredict::audit
