#include "anypredict/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "anypredict/csv.hpp"
#include "anypredict/metrics.hpp"
#include "anypredict/parallel.hpp"
#include "anypredict/random.hpp"
#include "json.hpp"

namespace anypredict::predict {

namespace {

using json = nlohmann::json;

double dot(const Eigen::VectorXd& w, const SparseFeatures& x) {
  double s = 0.0;
  for (SparseFeatures::InnerIterator it(x); it; ++it) s += w[it.index()] * it.value();
  return s;
}

double softplus(double z) { return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0); }

LabeledFeatures labeled_features(std::span<const ConsolidatedSample> samples, const FeaturizerConfig& featurizer) {
  LabeledFeatures data;
  data.x = featurize_all(samples, featurizer);
  data.y.reserve(samples.size());
  for (const auto& s : samples) {
    const auto target = training_target(s);
    if (!target) throw DataError(fmt::format("sample {} has no training target", s.provenance.key()));
    if (*target != 0 && *target != 1) throw DataError(fmt::format("sample {} has a non-binary target", s.provenance.key()));
    data.y.push_back(*target);
  }
  return data;
}

struct Split {
  std::vector<std::size_t> train, validation;
};

// Paraphrases of one row stay on the same side so validation never sees a near copy
// of a training text.
Split grouped_stratified_split(std::span<const ConsolidatedSample> samples, const std::vector<int>& y,
                               double fraction, std::mt19937_64& rng) {
  std::map<std::pair<std::string, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i)
    groups[{samples[i].provenance.dataset_id, samples[i].provenance.row_index}].push_back(i);

  std::vector<std::vector<std::size_t>> by_class[2];
  for (auto& [key, members] : groups) by_class[y[members.front()]].push_back(members);

  Split split;
  for (auto& cls : by_class) {
    shuffle_in_place(cls, rng);
    const auto n = cls.size();
    auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    else n_val = 0;
    for (std::size_t g = 0; g < n; ++g) {
      auto& dst = g < n_val ? split.validation : split.train;
      dst.insert(dst.end(), cls[g].begin(), cls[g].end());
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

bool has_both(const std::vector<int>& y, std::span<const std::size_t> rows) {
  bool seen[2] = {false, false};
  for (auto r : rows) seen[y[r]] = true;
  return seen[0] && seen[1];
}

double subset_auroc(const Eigen::VectorXd& w, double b, const LabeledFeatures& data, std::span<const std::size_t> rows) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (auto r : rows) {
    scores.push_back(dot(w, data.x[r]) + b);
    labels.push_back(data.y[r]);
  }
  return auroc<double>(scores, labels);
}

}  // namespace

PredictorModel PredictorModel::zeros(const FeaturizerConfig& featurizer) {
  PredictorModel m;
  m.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(featurizer.dimension));
  m.featurizer = featurizer;
  return m;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(l2_penalty >= 0.0)) throw ConfigError("l2_penalty must be non-negative");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be at least 1");
  if (min_epochs < 1 || min_epochs > max_epochs) throw ConfigError("min_epochs must lie in [1, max_epochs]");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in (0, 1)");
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logistic_loss(const Eigen::VectorXd& w, double b, const LabeledFeatures& data,
                     std::span<const std::size_t> rows, double l2) {
  double sum = 0.0;
  for (auto r : rows) {
    const double z = dot(w, data.x[r]) + b;
    sum += softplus(z) - data.y[r] * z;
  }
  const double mean = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
  return mean + 0.5 * l2 * w.squaredNorm();
}

void logistic_gradient(const Eigen::VectorXd& w, double b, const LabeledFeatures& data,
                       std::span<const std::size_t> rows, double l2, Eigen::VectorXd& grad_w, double& grad_b) {
  grad_w = l2 * w;
  grad_b = 0.0;
  if (rows.empty()) return;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto r : rows) {
    const double residual = (sigmoid(dot(w, data.x[r]) + b) - data.y[r]) * inv;
    for (SparseFeatures::InnerIterator it(data.x[r]); it; ++it) grad_w[it.index()] += residual * it.value();
    grad_b += residual;
  }
}

std::vector<SparseFeatures> featurize_all(std::span<const ConsolidatedSample> samples,
                                          const FeaturizerConfig& config, std::size_t parallelism) {
  std::vector<SparseFeatures> out(samples.size());
  parallel_for(samples.size(), parallelism, [&](std::size_t i) { out[i] = featurize(samples[i].text, config); });
  return out;
}

double predict_proba(const PredictorModel& model, const SparseFeatures& features) {
  if (features.size() != model.weights.size()) throw DimensionError("feature dimension differs from the model");
  const double p = sigmoid(dot(model.weights, features) + model.bias);
  return std::clamp(p, std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon() / 2);
}

double predict_proba(const PredictorModel& model, std::string_view text) {
  return predict_proba(model, featurize(text, model.featurizer));
}

PredictorModel train(std::span<const ConsolidatedSample> samples, const TrainConfig& config,
                     const FeaturizerConfig& featurizer, const PredictorModel* init) {
  config.validate();
  if (init && (init->featurizer != featurizer ||
               init->weights.size() != static_cast<Eigen::Index>(featurizer.dimension)))
    throw ConfigError("initial model uses a different featurizer");

  const auto data = labeled_features(samples, featurizer);
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (!has_both(data.y, all)) throw DegenerateLabels("training needs both target values");

  std::mt19937_64 rng(config.rng_seed);
  const auto split = grouped_stratified_split(samples, data.y, config.validation_fraction, rng);
  const bool val_auroc = has_both(data.y, split.validation);
  const auto& monitor = split.validation.empty() ? split.train : split.validation;

  PredictorModel model = init ? *init : PredictorModel::zeros(featurizer);
  model.history.clear();
  // Adam on the full L2-penalised objective; optimizer state starts fresh on every call.
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Eigen::VectorXd w = model.weights;
  double b = model.bias;
  Eigen::VectorXd grad(w.size()), m = Eigen::VectorXd::Zero(w.size()), s = Eigen::VectorXd::Zero(w.size());
  double mb = 0.0, sb = 0.0;
  double decay1 = 1.0, decay2 = 1.0;

  Eigen::VectorXd best_w = model.weights;
  double best_b = b;
  constexpr double kLow = -std::numeric_limits<double>::infinity();
  std::pair<double, double> best{kLow, kLow};
  int since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto order = split.train;
    shuffle_in_place(order, rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      double gb = 0.0;
      logistic_gradient(w, b, data, batch, config.l2_penalty, grad, gb);
      decay1 *= kBeta1;
      decay2 *= kBeta2;
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      s = kBeta2 * s + (1.0 - kBeta2) * grad.cwiseAbs2();
      mb = kBeta1 * mb + (1.0 - kBeta1) * gb;
      sb = kBeta2 * sb + (1.0 - kBeta2) * gb * gb;
      const double lr = config.learning_rate * std::sqrt(1.0 - decay2) / (1.0 - decay1);
      w.array() -= lr * m.array() / (s.array().sqrt() + kEps);
      b -= lr * mb / (std::sqrt(sb) + kEps);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = logistic_loss(w, b, data, split.train, config.l2_penalty);
    rec.validation_auroc = val_auroc ? subset_auroc(w, b, data, split.validation) : std::nan("");
    model.history.push_back(rec);

    // AUROC saturates early on small splits; equal AUROC falls back to the held-out loss.
    const std::pair<double, double> criterion{val_auroc ? rec.validation_auroc : 0.0,
                                              -logistic_loss(w, b, data, monitor, 0.0)};
    if (epoch < config.min_epochs) continue;
    if (criterion > best) {
      best = criterion;
      best_w = w;
      best_b = b;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }
  model.weights = std::move(best_w);
  model.bias = best_b;
  return model;
}

PseudoLabel pseudo_label_of(double p) { return {p >= 0.5 ? 1 : 0, std::max(p, 1.0 - p)}; }

std::vector<ConsolidatedSample> pseudo_label(const PredictorModel& model, std::span<const ConsolidatedSample> samples) {
  std::vector<ConsolidatedSample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    s.pseudo_label = pseudo_label_of(predict_proba(model, s.text));
    s.label.reset();
  }
  return out;
}

EvalMetrics evaluate(const PredictorModel& model, std::span<const ConsolidatedSample> test) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : test) {
    const auto target = training_target(s);
    if (!target) throw DataError(fmt::format("test sample {} has no label", s.provenance.key()));
    scores.push_back(predict_proba(model, s.text));
    labels.push_back(*target);
  }
  EvalMetrics m;
  m.n_test = test.size();
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  m.positive_ratio = test.empty() ? 0.0 : static_cast<double>(positives) / static_cast<double>(test.size());
  try {
    m.auroc = auroc<double>(scores, labels);
  } catch (const UndefinedMetric&) {
    m.auroc = std::nan("");
  }
  try {
    m.prauc = prauc<double>(scores, labels);
  } catch (const UndefinedMetric&) {
    m.prauc = std::nan("");
  }
  return m;
}

std::string_view to_string(Regimen regimen) {
  switch (regimen) {
    case Regimen::augment: return "augment";
    case Regimen::finetune: return "finetune";
    case Regimen::scratch: return "scratch";
    case Regimen::zeroshot: return "zeroshot";
  }
  return "?";
}

Regimen parse_regimen(std::string_view name) {
  for (auto r : {Regimen::augment, Regimen::finetune, Regimen::scratch, Regimen::zeroshot})
    if (to_string(r) == name) return r;
  throw ConfigError(fmt::format("unknown regimen '{}'", name));
}

RegimenResult run_regimen(Regimen regimen, std::span<const ConsolidatedSample> target,
                          std::span<const ConsolidatedSample> supplementary,
                          std::span<const HeldOutSet> test_sets, const TrainConfig& config,
                          const FeaturizerConfig& featurizer) {
  const bool needs_target = regimen != Regimen::zeroshot;
  if (needs_target && target.empty())
    throw RegimenInputError(fmt::format("regimen {} needs labeled target samples; run consolidate first", to_string(regimen)));
  if (regimen == Regimen::zeroshot && supplementary.empty())
    throw RegimenInputError("regimen zeroshot needs supplementary samples; run enrich first");

  RegimenResult result;
  switch (regimen) {
    case Regimen::scratch:
      result.model = train(target, config, featurizer);
      break;
    case Regimen::zeroshot:
      result.model = train(supplementary, config, featurizer);
      break;
    case Regimen::augment: {
      std::vector<ConsolidatedSample> merged(target.begin(), target.end());
      merged.insert(merged.end(), supplementary.begin(), supplementary.end());
      result.model = train(merged, config, featurizer);
      break;
    }
    case Regimen::finetune: {
      if (supplementary.empty()) {
        result.model = train(target, config, featurizer);
        break;
      }
      auto stage1 = config;
      stage1.rng_seed = derive_seed(config.rng_seed, 1);
      const auto pretrained = train(supplementary, stage1, featurizer);
      result.model = train(target, config, featurizer, &pretrained);
      break;
    }
  }
  for (const auto& t : test_sets) result.metrics.emplace_back(t.dataset_id, evaluate(result.model, t.samples));
  return result;
}

void save_model_json(const PredictorModel& model, const std::filesystem::path& path) {
  json weights = json::array();
  for (Eigen::Index i = 0; i < model.weights.size(); ++i)
    if (model.weights[i] != 0.0) weights.push_back({i, model.weights[i]});
  json history = json::array();
  for (const auto& h : model.history)
    history.push_back({{"epoch", h.epoch},
                       {"validation_auroc", std::isnan(h.validation_auroc) ? json(nullptr) : json(h.validation_auroc)},
                       {"train_loss", h.train_loss}});
  const auto& f = model.featurizer;
  json j = {{"featurizer", {{"min_n", f.min_n}, {"max_n", f.max_n}, {"dimension", f.dimension}, {"seed", f.seed}}},
            {"bias", model.bias},
            {"weights", std::move(weights)},
            {"history", std::move(history)}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << '\n';
}

PredictorModel load_model_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineOrderError("missing model artifact " + path.string());
  json j;
  try {
    j = json::parse(in);
    FeaturizerConfig f;
    const auto& jf = j.at("featurizer");
    f.min_n = jf.at("min_n").get<int>();
    f.max_n = jf.at("max_n").get<int>();
    f.dimension = jf.at("dimension").get<std::size_t>();
    f.seed = jf.at("seed").get<std::uint64_t>();
    auto model = PredictorModel::zeros(f);
    model.bias = j.at("bias").get<double>();
    for (const auto& w : j.at("weights")) {
      const auto i = w.at(0).get<Eigen::Index>();
      if (i < 0 || i >= model.weights.size()) throw DimensionError("weight index out of range");
      model.weights[i] = w.at(1).get<double>();
    }
    for (const auto& h : j.at("history"))
      model.history.push_back({h.at("epoch").get<int>(),
                               h.at("validation_auroc").is_null() ? std::nan("") : h.at("validation_auroc").get<double>(),
                               h.at("train_loss").get<double>()});
    return model;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed model artifact {}: {}", path.string(), e.what()));
  }
}

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"dataset_id", "regimen", "auroc", "prauc", "n_test"});
  for (const auto& r : rows)
    csv::write_row(out, {r.dataset_id, r.regimen, fmt::format("{:.6f}", r.metrics.auroc),
                         fmt::format("{:.6f}", r.metrics.prauc), std::to_string(r.metrics.n_test)});
}

}  // namespace anypredict::predict
