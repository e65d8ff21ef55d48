#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anypredict/auditor.hpp"
#include "anypredict/gateway.hpp"
#include "anypredict/predictor.hpp"
#include "anypredict/valuation.hpp"
#include "json.hpp"

namespace anypredict::pipeline {

struct DatasetSource {
  std::string id;  // empty: the CSV stem
  std::filesystem::path csv;
  std::filesystem::path schema;
};

struct TaskConfig {
  std::string id;
  std::string label_name;
  std::string positive_meaning;
  std::vector<DatasetSource> datasets;
};

struct ValuationConfig {
  int k = 5;
  std::size_t budget = 1000;
  // Share of the target training split (grouped by row) held out as the Shapley validation set.
  double valuation_fraction = 0.2;
  // Embeddings for neighbour search reuse the n-gram featurizer at this dimension.
  std::size_t embedding_dimension = 1024;
  std::size_t histogram_bins = 20;
};

struct FewShotConfig {
  std::vector<std::size_t> shots = {8, 32, 128};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
};

struct PipelineConfig {
  TaskConfig target;
  std::vector<TaskConfig> out_domain;
  llm::GatewayConfig gateway;
  bool augment = false;
  double abort_failure_ratio = 0.5;
  bool audit_enabled = true;
  audit::AuditOptions audit;
  ValuationConfig valuation;
  double test_fraction = 0.3;
  predict::TrainConfig train;
  predict::FeaturizerConfig featurizer;
  std::vector<predict::Regimen> regimens = {predict::Regimen::augment, predict::Regimen::finetune,
                                            predict::Regimen::scratch, predict::Regimen::zeroshot};
  FewShotConfig fewshot;
  std::filesystem::path artifact_dir;
  std::uint64_t rng_seed = 0;
  std::size_t parallelism = 1;

  // Digest of the effective configuration (artifact_dir excluded) and input file contents.
  std::string digest;
};

// Replaces ${NAME} with the environment value; unset variables are a ConfigError.
std::string interpolate_env(std::string_view text);

// Relative paths resolve against `base_dir`.
PipelineConfig parse_config(nlohmann::json doc, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

// ---- manifest ----

struct ArtifactRecord {
  std::string path;  // relative to the artifact directory
  std::string digest;
};

struct StepRecord {
  std::vector<ArtifactRecord> artifacts;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_digest;
  std::map<std::string, StepRecord> steps;

  // Covers the config digest and every artifact digest; timing is excluded.
  std::string digest() const;
};

std::filesystem::path manifest_path(const PipelineConfig& config);
RunManifest read_manifest(const std::filesystem::path& path);
// Read-modify-write under an exclusive lock on the manifest's lock file.
void record_step(const PipelineConfig& config, const std::string& step,
                 const std::vector<std::filesystem::path>& artifacts, double seconds);

// ---- artifact names ----

inline constexpr const char* kTargetSamples = "samples_target.jsonl";
inline constexpr const char* kOutDomainSamples = "samples_outdomain.jsonl";
inline constexpr const char* kAuditReports = "audit_reports.jsonl";
inline constexpr const char* kAuditSummary = "audit_summary.csv";
inline constexpr const char* kFailures = "consolidation_failures.csv";
inline constexpr const char* kScores = "scores.csv";
inline constexpr const char* kHistogram = "score_histogram.csv";
inline constexpr const char* kLabelRatio = "pseudo_label_ratio.csv";
inline constexpr const char* kSupplementary = "t_sup.jsonl";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kRanking = "ranking.csv";

// ---- splits ----

struct TargetSplit {
  std::vector<ConsolidatedSample> train;
  std::vector<ConsolidatedSample> test;  // primary descriptions only
};

// Per dataset and label, whole rows (with their paraphrases) go to one side.
TargetSplit split_target(const std::vector<ConsolidatedSample>& samples, double test_fraction, std::uint64_t seed);

std::vector<predict::HeldOutSet> test_sets_by_dataset(const std::vector<ConsolidatedSample>& test);

// ---- commands ----

struct ConsolidateReport {
  std::size_t target_samples = 0;
  std::size_t out_domain_samples = 0;
  std::vector<audit::DatasetAudit> audits;  // outcomes cleared
  std::vector<consolidate::RowFailure> failures;
};

struct EnrichReport {
  std::vector<valuation::ScoreRow> scores;  // every pseudo-labeled out-domain sample, canonical order
  std::vector<ConsolidatedSample> supplementary;
  std::vector<std::string> warnings;
  std::vector<std::string> validation_keys;
  std::vector<std::string> supervision_keys;  // samples the initial model was trained on
};

struct FewShotRow {
  std::size_t shots = 0;  // requested
  std::size_t shots_used = 0;
  std::uint64_t seed = 0;
  predict::EvalMetrics metrics;
};

ConsolidateReport cmd_consolidate(const PipelineConfig& config);
EnrichReport cmd_enrich(const PipelineConfig& config);
std::vector<predict::MetricsRow> cmd_train_eval(const PipelineConfig& config);
predict::EvalMetrics cmd_zeroshot_protocol(const PipelineConfig& config, const std::string& held_out);
std::vector<FewShotRow> cmd_fewshot_protocol(const PipelineConfig& config, const std::string& held_out,
                                             std::optional<std::size_t> shots = {});
// consolidate, enrich, train in sequence.
void run(const PipelineConfig& config);

// Exit status for an error category (2 config, 3 upstream, 4 gateway, 5 data).
int exit_code(ErrorCategory category);

}  // namespace anypredict::pipeline
