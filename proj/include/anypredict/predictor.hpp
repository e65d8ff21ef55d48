#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "anypredict/consolidator.hpp"
#include "anypredict/featurizer.hpp"

namespace anypredict::predict {

struct EpochRecord {
  int epoch = 0;
  double validation_auroc = 0.0;  // NaN when the validation split is single-class
  double train_loss = 0.0;
};

struct PredictorModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  FeaturizerConfig featurizer;
  std::vector<EpochRecord> history;

  static PredictorModel zeros(const FeaturizerConfig& featurizer);
};

struct TrainConfig {
  double learning_rate = 0.01;
  int max_epochs = 200;
  std::size_t batch_size = 32;
  double l2_penalty = 1e-4;
  int early_stop_patience = 30;
  // Epochs before this one are never kept as the best model.
  int min_epochs = 10;
  double validation_fraction = 0.2;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct EvalMetrics {
  double auroc = 0.0;
  double prauc = 0.0;
  std::size_t n_test = 0;
  double positive_ratio = 0.0;
};

struct LabeledFeatures {
  std::vector<SparseFeatures> x;
  std::vector<int> y;
};

double sigmoid(double z);

// Mean log-loss over `rows` plus (l2/2)|w|^2; the bias is not penalised.
double logistic_loss(const Eigen::VectorXd& w, double b, const LabeledFeatures& data,
                     std::span<const std::size_t> rows, double l2);
void logistic_gradient(const Eigen::VectorXd& w, double b, const LabeledFeatures& data,
                       std::span<const std::size_t> rows, double l2, Eigen::VectorXd& grad_w, double& grad_b);

std::vector<SparseFeatures> featurize_all(std::span<const ConsolidatedSample> samples,
                                          const FeaturizerConfig& config, std::size_t parallelism = 1);

double predict_proba(const PredictorModel& model, const SparseFeatures& features);
double predict_proba(const PredictorModel& model, std::string_view text);

// Samples must carry a training target. `init` seeds the weights; without it
// training starts from zero.
PredictorModel train(std::span<const ConsolidatedSample> samples, const TrainConfig& config,
                     const FeaturizerConfig& featurizer = {}, const PredictorModel* init = nullptr);

PseudoLabel pseudo_label_of(double p);
// Returns copies whose target is the pseudo-label; any foreign label is dropped.
std::vector<ConsolidatedSample> pseudo_label(const PredictorModel& model,
                                             std::span<const ConsolidatedSample> samples);

// Undefined metrics (single-class test sets) come back as NaN.
EvalMetrics evaluate(const PredictorModel& model, std::span<const ConsolidatedSample> test);

enum class Regimen { augment, finetune, scratch, zeroshot };
std::string_view to_string(Regimen regimen);
Regimen parse_regimen(std::string_view name);

struct HeldOutSet {
  std::string dataset_id;
  std::vector<ConsolidatedSample> samples;
};

struct RegimenResult {
  PredictorModel model;
  std::vector<std::pair<std::string, EvalMetrics>> metrics;  // in test-set order
};

RegimenResult run_regimen(Regimen regimen, std::span<const ConsolidatedSample> target,
                          std::span<const ConsolidatedSample> supplementary,
                          std::span<const HeldOutSet> test_sets, const TrainConfig& config,
                          const FeaturizerConfig& featurizer = {});

void save_model_json(const PredictorModel& model, const std::filesystem::path& path);
PredictorModel load_model_json(const std::filesystem::path& path);

struct MetricsRow {
  std::string dataset_id;
  std::string regimen;
  EvalMetrics metrics;
};

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path);

}  // namespace anypredict::predict
