#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "anypredict/consolidator.hpp"
#include "anypredict/edit_distance.hpp"
#include "anypredict/gateway.hpp"
#include "anypredict/tabular.hpp"

namespace anypredict::audit {

struct FeatureScore {
  std::string column;
  std::string probed_answer;
  std::string reference;
  double ned = 0.0;
};

struct AuditReport {
  Provenance provenance;
  std::vector<FeatureScore> per_feature;  // final round
  double mned = 1.0;                      // mean of per_feature ned
  std::vector<std::string> missed;        // final-round columns below threshold
  int rounds_used = 0;
  std::vector<FeatureScore> initial_per_feature;  // round 0, before any correction
  double initial_mned = 1.0;
  AuditStatus status = AuditStatus::unaudited;
};

enum class MnedAveraging { per_feature, per_sample };

struct AuditOptions {
  double threshold = 0.5;
  int max_rounds = 2;
  MnedAveraging averaging = MnedAveraging::per_feature;
  std::size_t parallelism = 1;
};

// Lowercase, trim surrounding punctuation and whitespace, collapse inner whitespace.
std::string normalize_answer(std::string_view answer);

// Accepts "yes", "(a) yes", "a", ... after normalization.
bool is_affirmative(std::string_view answer);

struct AuditOutcome {
  ConsolidatedSample sample;
  AuditReport report;
};

// Probes every feature present in the linearization, re-prompts with the missed
// features while rounds remain, and sets the sample's audit status.
AuditOutcome audit_sample(const ConsolidatedSample& sample, const tabular::TableDataset& dataset,
                          llm::Gateway& gateway, const AuditOptions& options);

struct DatasetAudit {
  std::string dataset_id;
  double mned_before = 1.0;
  double mned_after = 1.0;
  std::size_t n_failed = 0;
  std::vector<AuditOutcome> outcomes;  // input order
};

DatasetAudit audit_dataset(std::span<const ConsolidatedSample> samples,
                           const tabular::TableDataset& dataset, llm::Gateway& gateway,
                           const AuditOptions& options);

void write_reports_jsonl(std::span<const AuditOutcome> outcomes, const std::filesystem::path& path,
                         bool append = false);
// dataset_id,mned_before,mned_after,n_failed
void write_summary_csv(std::span<const DatasetAudit> audits, const std::filesystem::path& path);

}  // namespace anypredict::audit
