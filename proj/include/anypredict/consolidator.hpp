#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anypredict/error.hpp"
#include "anypredict/gateway.hpp"
#include "anypredict/tabular.hpp"

namespace anypredict {

enum class AuditStatus { unaudited, passed, corrected, failed };

std::string_view to_string(AuditStatus status);
AuditStatus parse_audit_status(std::string_view name);

struct Provenance {
  std::string dataset_id;
  std::size_t row_index = 0;
  std::size_t paraphrase_index = 0;  // 0 is the primary description

  // "dataset:row:paraphrase"; ordering on keys matches canonical sample order only
  // within one dataset, use operator<=> for the canonical order.
  std::string key() const;
  auto operator<=>(const Provenance&) const = default;
};

struct PseudoLabel {
  int value = 0;
  double confidence = 0.5;
  bool operator==(const PseudoLabel&) const = default;
};

struct ConsolidatedSample {
  std::string text;
  std::optional<int> label;
  std::optional<PseudoLabel> pseudo_label;
  Provenance provenance;
  AuditStatus audit_status = AuditStatus::unaudited;

  bool operator==(const ConsolidatedSample&) const = default;
};

// The training target: the true label when present, else the pseudo-label.
std::optional<int> training_target(const ConsolidatedSample& sample);

}  // namespace anypredict

namespace anypredict::consolidate {

ConsolidatedSample consolidate_row(const tabular::TableDataset& dataset, std::size_t row_index,
                                   llm::Gateway& gateway);

// Up to five paraphrases, paraphrase_index 1..k. Throws ParseFailure when the
// completion holds no numbered item.
std::vector<ConsolidatedSample> augment_row(const tabular::TableDataset& dataset,
                                            std::size_t row_index, llm::Gateway& gateway);

// Accepts "1." and "1)" prefixes; continuation lines join the preceding item.
std::vector<std::string> parse_numbered_list(std::string_view completion, std::size_t max_items = 5);

struct RowFailure {
  std::string dataset_id;
  std::size_t row_index = 0;
  ErrorCategory category = ErrorCategory::data;
  std::string message;
};

struct ConsolidationResult {
  std::vector<ConsolidatedSample> samples;  // canonical (dataset id, row, paraphrase) order
  std::vector<RowFailure> failures;
  std::size_t rows_attempted = 0;
};

struct ConsolidationOptions {
  bool augment = false;
  std::size_t parallelism = 1;
  double abort_failure_ratio = 0.5;
};

// Thrown when more than the abort ratio of rows fail; carries the partial result.
class ConsolidationAborted : public Error {
 public:
  ConsolidationAborted(ErrorCategory dominant, ConsolidationResult partial);
  const ConsolidationResult& partial() const noexcept { return partial_; }

 private:
  ConsolidationResult partial_;
};

// Consolidates every row of the task's datasets. Rows fail independently: a row
// that errors is reported in `failures` and contributes no samples.
ConsolidationResult consolidate_task(const tabular::Task& task,
                                     std::span<const tabular::TableDataset> datasets,
                                     llm::Gateway& gateway, const ConsolidationOptions& options);

void write_samples_jsonl(std::span<const ConsolidatedSample> samples, const std::filesystem::path& path);
std::vector<ConsolidatedSample> read_samples_jsonl(const std::filesystem::path& path);

}  // namespace anypredict::consolidate
