#include "anypredict/consolidator.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "anypredict/parallel.hpp"
#include "json.hpp"

namespace anypredict {

std::string_view to_string(AuditStatus status) {
  switch (status) {
    case AuditStatus::unaudited: return "unaudited";
    case AuditStatus::passed: return "passed";
    case AuditStatus::corrected: return "corrected";
    case AuditStatus::failed: return "failed";
  }
  return "unaudited";
}

AuditStatus parse_audit_status(std::string_view name) {
  if (name == "unaudited") return AuditStatus::unaudited;
  if (name == "passed") return AuditStatus::passed;
  if (name == "corrected") return AuditStatus::corrected;
  if (name == "failed") return AuditStatus::failed;
  throw DataError(fmt::format("unknown audit status '{}'", name));
}

std::string Provenance::key() const {
  return fmt::format("{}:{}:{}", dataset_id, row_index, paraphrase_index);
}

std::optional<int> training_target(const ConsolidatedSample& sample) {
  if (sample.label) return sample.label;
  if (sample.pseudo_label) return sample.pseudo_label->value;
  return std::nullopt;
}

}  // namespace anypredict

namespace anypredict::consolidate {

namespace {

using json = nlohmann::json;

std::optional<int> row_label(const tabular::TableDataset& ds, std::size_t row) {
  if (!ds.labels) return std::nullopt;
  return (*ds.labels)[row];
}

void check_row(const tabular::TableDataset& ds, std::size_t row) {
  if (row >= ds.rows.size())
    throw DataError(fmt::format("row {} out of range for {} ({} rows)", row, ds.id, ds.rows.size()));
}

std::string std_trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// Rethrows gateway and data errors with the row coordinates prefixed.
template <typename Fn>
auto with_row_context(const tabular::TableDataset& ds, std::size_t row, Fn&& fn) {
  try {
    return fn();
  } catch (const Timeout& e) {
    throw Timeout(fmt::format("{} row {}: {}", ds.id, row, e.what()));
  } catch (const CacheMiss&) {
    throw;
  } catch (const GatewayError& e) {
    throw GatewayError(fmt::format("{} row {}: {}", ds.id, row, e.what()), e.status(), e.body());
  }
}

}  // namespace

ConsolidatedSample consolidate_row(const tabular::TableDataset& dataset, std::size_t row_index,
                                   llm::Gateway& gateway) {
  check_row(dataset, row_index);
  const auto body = tabular::linearize(dataset.schema, dataset.rows[row_index]);
  if (body.empty()) throw EmptyLinearization(dataset.id, row_index);
  const auto prompt = llm::build_prompt(llm::PromptMode::describe,
                                        tabular::render_schema_definition(dataset.schema), body);
  auto text = with_row_context(dataset, row_index,
                               [&] { return gateway.complete(llm::make_request(prompt)); });
  text = std_trim(text);
  if (text.empty()) throw DataError(fmt::format("{} row {}: empty description", dataset.id, row_index));
  ConsolidatedSample s;
  s.text = std::move(text);
  s.label = row_label(dataset, row_index);
  s.provenance = {dataset.id, row_index, 0};
  return s;
}

std::vector<std::string> parse_numbered_list(std::string_view completion, std::size_t max_items) {
  std::vector<std::string> items;
  bool open = false;
  std::size_t start = 0;
  while (start <= completion.size()) {
    auto end = completion.find('\n', start);
    if (end == std::string_view::npos) end = completion.size();
    auto line = completion.substr(start, end - start);
    start = end + 1;

    std::size_t i = line.find_first_not_of(" \t");
    if (i == std::string_view::npos) {
      open = false;  // blank line closes the current item
      continue;
    }
    std::size_t digits = i;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits > i && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) {
      auto text = std_trim(line.substr(digits + 1));
      if (!text.empty()) {
        items.push_back(std::move(text));
        open = true;
      }
    } else if (open && !items.empty()) {
      items.back() += " " + std_trim(line);
    }
    if (end == completion.size()) break;
  }
  if (items.size() > max_items) items.resize(max_items);
  return items;
}

std::vector<ConsolidatedSample> augment_row(const tabular::TableDataset& dataset,
                                            std::size_t row_index, llm::Gateway& gateway) {
  check_row(dataset, row_index);
  const auto body = tabular::linearize(dataset.schema, dataset.rows[row_index]);
  if (body.empty()) throw EmptyLinearization(dataset.id, row_index);
  const auto prompt = llm::build_prompt(llm::PromptMode::paraphrase5,
                                        tabular::render_schema_definition(dataset.schema), body);
  const auto raw = with_row_context(dataset, row_index,
                                    [&] { return gateway.complete(llm::make_request(prompt, 1024)); });
  const auto items = parse_numbered_list(raw);
  if (items.empty()) throw ParseFailure(raw);
  std::vector<ConsolidatedSample> out;
  for (std::size_t k = 0; k < items.size(); ++k) {
    ConsolidatedSample s;
    s.text = items[k];
    s.label = row_label(dataset, row_index);
    s.provenance = {dataset.id, row_index, k + 1};
    out.push_back(std::move(s));
  }
  return out;
}

ConsolidationAborted::ConsolidationAborted(ErrorCategory dominant, ConsolidationResult partial)
    : Error(dominant, fmt::format("consolidation aborted: {} of {} rows failed",
                                  partial.failures.size(), partial.rows_attempted)),
      partial_(std::move(partial)) {}

ConsolidationResult consolidate_task(const tabular::Task& task,
                                     std::span<const tabular::TableDataset> datasets,
                                     llm::Gateway& gateway, const ConsolidationOptions& options) {
  std::vector<const tabular::TableDataset*> members;
  for (const auto& id : task.datasets) {
    auto it = std::find_if(datasets.begin(), datasets.end(), [&](const auto& d) { return d.id == id; });
    if (it == datasets.end()) throw DataError(fmt::format("task {} references unloaded dataset {}", task.id, id));
    members.push_back(&*it);
  }
  std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->id < b->id; });

  struct Job {
    const tabular::TableDataset* dataset;
    std::size_t row;
  };
  std::vector<Job> jobs;
  for (auto* d : members)
    for (std::size_t r = 0; r < d->rows.size(); ++r) jobs.push_back({d, r});

  struct Outcome {
    std::vector<ConsolidatedSample> samples;
    std::optional<RowFailure> failure;
  };
  std::vector<Outcome> outcomes(jobs.size());

  parallel_for(jobs.size(), options.parallelism, [&](std::size_t i) {
    const auto& job = jobs[i];
    auto& out = outcomes[i];
    try {
      out.samples.push_back(consolidate_row(*job.dataset, job.row, gateway));
      if (options.augment) {
        auto extra = augment_row(*job.dataset, job.row, gateway);
        std::move(extra.begin(), extra.end(), std::back_inserter(out.samples));
      }
    } catch (const Error& e) {
      out.samples.clear();
      out.failure = RowFailure{job.dataset->id, job.row, e.category(), e.what()};
    } catch (const std::exception& e) {
      out.samples.clear();
      out.failure = RowFailure{job.dataset->id, job.row, ErrorCategory::data, e.what()};
    }
  });

  ConsolidationResult result;
  result.rows_attempted = jobs.size();
  std::size_t gateway_failures = 0;
  for (auto& o : outcomes) {
    std::move(o.samples.begin(), o.samples.end(), std::back_inserter(result.samples));
    if (o.failure) {
      gateway_failures += o.failure->category == ErrorCategory::gateway;
      result.failures.push_back(std::move(*o.failure));
    }
  }
  if (!jobs.empty() &&
      static_cast<double>(result.failures.size()) > options.abort_failure_ratio * static_cast<double>(jobs.size())) {
    const auto dominant = 2 * gateway_failures >= result.failures.size() ? ErrorCategory::gateway
                                                                          : ErrorCategory::data;
    throw ConsolidationAborted(dominant, std::move(result));
  }
  return result;
}

void write_samples_jsonl(std::span<const ConsolidatedSample> samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : samples) {
    json j = {{"text", s.text},
              {"provenance",
               {{"dataset_id", s.provenance.dataset_id},
                {"row_index", s.provenance.row_index},
                {"paraphrase_index", s.provenance.paraphrase_index}}},
              {"audit_status", std::string(to_string(s.audit_status))}};
    j["label"] = s.label ? json(*s.label) : json(nullptr);
    j["pseudo_label"] = s.pseudo_label
                            ? json{{"value", s.pseudo_label->value}, {"confidence", s.pseudo_label->confidence}}
                            : json(nullptr);
    out << j.dump() << '\n';
  }
}

std::vector<ConsolidatedSample> read_samples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ConsolidatedSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      ConsolidatedSample s;
      s.text = j.at("text").get<std::string>();
      const auto& p = j.at("provenance");
      s.provenance = {p.at("dataset_id").get<std::string>(), p.at("row_index").get<std::size_t>(),
                      p.at("paraphrase_index").get<std::size_t>()};
      s.audit_status = parse_audit_status(j.value("audit_status", std::string("unaudited")));
      if (j.contains("label") && !j["label"].is_null()) s.label = j["label"].get<int>();
      if (j.contains("pseudo_label") && !j["pseudo_label"].is_null())
        s.pseudo_label = PseudoLabel{j["pseudo_label"].at("value").get<int>(),
                                     j["pseudo_label"].at("confidence").get<double>()};
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

}  // namespace anypredict::consolidate
