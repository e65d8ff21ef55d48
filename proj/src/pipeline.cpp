#include "anypredict/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "anypredict/csv.hpp"
#include "anypredict/digest.hpp"
#include "anypredict/random.hpp"

namespace anypredict::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Stream salts; each sub-step draws from its own seed so adding one step does not
// perturb the others.
enum Salt : std::uint64_t { kSaltSplit = 11, kSaltValuation = 12, kSaltInitial = 13, kSaltShots = 14 };

template <typename... Args>
void note(fmt::format_string<Args...> f, Args&&... args) {
  fmt::print(stderr, "{}\n", fmt::format(f, std::forward<Args>(args)...));
}

std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::upstream: return "upstream";
    case ErrorCategory::gateway: return "gateway";
    case ErrorCategory::data: return "data";
  }
  return "?";
}

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object", where));
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
}

json interpolate_all(const json& j) {
  if (j.is_string()) return interpolate_env(j.get<std::string>());
  if (j.is_array()) {
    json out = json::array();
    for (const auto& e : j) out.push_back(interpolate_all(e));
    return out;
  }
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_all(v);
    return out;
  }
  return j;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string dataset_id(const DatasetSource& s) { return s.id.empty() ? s.csv.stem().string() : s.id; }

TaskConfig parse_task(const json& j, const fs::path& base, std::string_view where) {
  check_keys(j, where, {"id", "label_name", "positive_meaning", "datasets"});
  TaskConfig t;
  t.id = j.at("id").get<std::string>();
  t.label_name = j.value("label_name", std::string{});
  t.positive_meaning = j.value("positive_meaning", std::string{});
  for (const auto& d : j.at("datasets")) {
    check_keys(d, "dataset entry", {"id", "csv", "schema"});
    DatasetSource s;
    s.id = d.value("id", std::string{});
    s.csv = resolve(base, d.at("csv").get<std::string>());
    s.schema = resolve(base, d.at("schema").get<std::string>());
    t.datasets.push_back(std::move(s));
  }
  if (t.datasets.empty()) throw ConfigError(fmt::format("task {} lists no datasets", t.id));
  return t;
}

std::vector<const TaskConfig*> all_tasks(const PipelineConfig& c) {
  std::vector<const TaskConfig*> tasks{&c.target};
  for (const auto& t : c.out_domain) tasks.push_back(&t);
  return tasks;
}

// ---- row groups ----

struct RowGroup {
  std::string dataset;
  std::size_t row = 0;
  int label = 0;
  std::vector<std::size_t> members;
};

std::vector<RowGroup> row_groups(const std::vector<ConsolidatedSample>& samples) {
  std::map<std::pair<std::string, std::size_t>, std::size_t> index;
  std::vector<RowGroup> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& p = samples[i].provenance;
    auto [it, fresh] = index.try_emplace({p.dataset_id, p.row_index}, groups.size());
    if (fresh) {
      const auto target = training_target(samples[i]);
      if (!target) throw DataError(fmt::format("sample {} has no label", p.key()));
      groups.push_back({p.dataset_id, p.row_index, *target, {}});
    }
    groups[it->second].members.push_back(i);
  }
  std::sort(groups.begin(), groups.end(),
            [](const auto& a, const auto& b) { return std::tie(a.dataset, a.row) < std::tie(b.dataset, b.row); });
  return groups;
}

// Marks roughly `fraction` of the groups of every (dataset, label) stratum; a stratum
// with two or more groups keeps at least one on each side.
std::vector<bool> mark_stratified(const std::vector<RowGroup>& groups, double fraction, std::mt19937_64& rng) {
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
  for (std::size_t g = 0; g < groups.size(); ++g) strata[{groups[g].dataset, groups[g].label}].push_back(g);
  std::vector<bool> marked(groups.size(), false);
  for (auto& [key, members] : strata) {
    shuffle_in_place(members, rng);
    const auto n = members.size();
    auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    m = n >= 2 ? std::clamp<std::size_t>(m, 1, n - 1) : 0;
    for (std::size_t i = 0; i < m; ++i) marked[members[i]] = true;
  }
  return marked;
}

std::vector<ConsolidatedSample> gather(const std::vector<ConsolidatedSample>& samples,
                                       const std::vector<RowGroup>& groups, const std::vector<bool>& take) {
  std::vector<std::size_t> idx;
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (take[g]) idx.insert(idx.end(), groups[g].members.begin(), groups[g].members.end());
  std::sort(idx.begin(), idx.end());
  std::vector<ConsolidatedSample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(samples[i]);
  return out;
}

// ---- artifacts ----

std::vector<ConsolidatedSample> read_upstream(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path))
    throw PipelineOrderError(fmt::format("missing {}; run `anypredict {}` first", path.string(), producer));
  return consolidate::read_samples_jsonl(path);
}

void write_keys_json(const fs::path& path, const std::vector<std::string>& supervision,
                     const std::vector<std::string>& validation) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << json{{"supervision", supervision}, {"validation", validation}}.dump() << '\n';
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

valuation::EmbeddedBatch<double> embed(const std::vector<ConsolidatedSample>& samples,
                                       const predict::FeaturizerConfig& featurizer, std::vector<int> targets,
                                       std::size_t parallelism) {
  valuation::EmbeddedBatch<double> batch;
  batch.vectors = valuation::RowMatrix<double>::Zero(static_cast<Eigen::Index>(samples.size()),
                                                     static_cast<Eigen::Index>(featurizer.dimension));
  parallel_for(samples.size(), parallelism, [&](std::size_t i) {
    const auto f = predict::featurize(samples[i].text, featurizer);
    if (f.nonZeros() == 0) throw DataError(fmt::format("sample {} has an empty embedding", samples[i].provenance.key()));
    for (predict::SparseFeatures::InnerIterator it(f); it; ++it)
      batch.vectors(static_cast<Eigen::Index>(i), it.index()) = it.value();
  });
  batch.targets = std::move(targets);
  for (const auto& s : samples) batch.keys.push_back(s.provenance.key());
  return batch;
}

struct EnrichOutput {
  EnrichReport report;
  std::vector<fs::path> artifacts;
};

EnrichOutput enrich_into(const PipelineConfig& config, const std::vector<ConsolidatedSample>& target_train,
                         const std::vector<ConsolidatedSample>& out_domain, const fs::path& dir) {
  if (out_domain.empty()) throw DataError("the out-domain pool is empty");
  const auto groups = row_groups(target_train);
  std::mt19937_64 rng(derive_seed(config.rng_seed, kSaltValuation));
  const auto val_mark = mark_stratified(groups, config.valuation.valuation_fraction, rng);
  std::vector<bool> sup_mark(val_mark.size());
  for (std::size_t g = 0; g < val_mark.size(); ++g) sup_mark[g] = !val_mark[g];
  const auto validation = gather(target_train, groups, val_mark);
  const auto supervision = gather(target_train, groups, sup_mark);
  if (validation.empty()) throw DataError("target training split too small for a Shapley validation set");

  auto train_cfg = config.train;
  train_cfg.rng_seed = derive_seed(config.rng_seed, kSaltInitial);
  const auto initial = predict::train(supervision, train_cfg, config.featurizer);
  const auto noisy = predict::pseudo_label(initial, out_domain);

  auto emb_cfg = config.featurizer;
  emb_cfg.dimension = config.valuation.embedding_dimension;
  std::vector<int> pseudo, truth;
  for (const auto& s : noisy) pseudo.push_back(s.pseudo_label->value);
  for (const auto& s : validation) truth.push_back(*training_target(s));
  const auto train_batch = embed(noisy, emb_cfg, pseudo, config.parallelism);
  const auto val_batch = embed(validation, emb_cfg, truth, config.parallelism);
  const auto result = valuation::knn_shapley(train_batch, val_batch, config.valuation.k, config.parallelism);

  EnrichOutput out;
  auto& report = out.report;
  std::vector<valuation::ScoredItem> scored;
  std::vector<double> phi;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const double p = result.phi[static_cast<Eigen::Index>(i)];
    scored.push_back({train_batch.keys[i], pseudo[i], p});
    report.scores.push_back({train_batch.keys[i], pseudo[i], noisy[i].pseudo_label->confidence, p});
    phi.push_back(p);
  }
  auto budget = config.valuation.budget;
  if (budget > noisy.size()) {
    report.warnings.push_back(fmt::format("budget {} exceeds the {} scored samples; keeping all", budget, noisy.size()));
    budget = noisy.size();
  }
  auto selection = valuation::stratified_select(scored, budget);
  report.warnings.insert(report.warnings.end(), selection.warnings.begin(), selection.warnings.end());
  std::sort(selection.indices.begin(), selection.indices.end());
  for (auto i : selection.indices) report.supplementary.push_back(noisy[i]);
  for (const auto& s : supervision) report.supervision_keys.push_back(s.provenance.key());
  for (const auto& s : validation) report.validation_keys.push_back(s.provenance.key());
  for (const auto& w : report.warnings) note("warning: {}", w);

  fs::create_directories(dir);
  const auto histogram = valuation::score_histogram(phi, pseudo, config.valuation.histogram_bins);
  out.artifacts = {dir / kScores,         dir / kHistogram,          dir / kLabelRatio,
                   dir / kSupplementary,  dir / "enrich_inputs.json", dir / "model_initial.json"};
  valuation::write_scores_csv(report.scores, out.artifacts[0]);
  valuation::write_histogram_csv(histogram, out.artifacts[1]);
  valuation::write_label_ratio_csv(histogram, out.artifacts[2]);
  consolidate::write_samples_jsonl(report.supplementary, out.artifacts[3]);
  write_keys_json(out.artifacts[4], report.supervision_keys, report.validation_keys);
  predict::save_model_json(initial, out.artifacts[5]);
  note("enrich: {} of {} out-domain samples kept, mean utility {:.4f}", report.supplementary.size(), noisy.size(),
       result.value_of_full);
  return out;
}

void write_ranking_csv(const std::vector<predict::MetricsRow>& rows, const fs::path& path) {
  std::vector<std::string> datasets, regimens;
  for (const auto& r : rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset_id) == datasets.end()) datasets.push_back(r.dataset_id);
    if (std::find(regimens.begin(), regimens.end(), r.regimen) == regimens.end()) regimens.push_back(r.regimen);
  }
  // rank[regimen][dataset]; higher AUROC ranks first, ties share the mean rank.
  std::map<std::string, std::map<std::string, double>> rank;
  for (const auto& d : datasets) {
    std::vector<const predict::MetricsRow*> present;
    for (const auto& r : rows)
      if (r.dataset_id == d && !std::isnan(r.metrics.auroc)) present.push_back(&r);
    for (const auto* a : present) {
      double better = 0, equal = 0;
      for (const auto* b : present) {
        better += b->metrics.auroc > a->metrics.auroc;
        equal += b->metrics.auroc == a->metrics.auroc;
      }
      rank[a->regimen][d] = better + (equal + 1) / 2;
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  auto header = std::vector<std::string>{"regimen"};
  header.insert(header.end(), datasets.begin(), datasets.end());
  header.push_back("avg_rank");
  csv::write_row(out, header);
  for (const auto& reg : regimens) {
    std::vector<std::string> cells{reg};
    double sum = 0;
    int n = 0;
    for (const auto& d : datasets) {
      auto it = rank[reg].find(d);
      if (it == rank[reg].end()) {
        cells.emplace_back();
        continue;
      }
      cells.push_back(fmt::format("{:.2f}", it->second));
      sum += it->second;
      ++n;
    }
    cells.push_back(n ? fmt::format("{:.2f}", sum / n) : std::string{});
    csv::write_row(out, cells);
  }
}

struct ZeroShotRun {
  fs::path dir;
  TargetSplit split;
  predict::PredictorModel model;
  predict::EvalMetrics metrics;
  std::vector<fs::path> artifacts;
};

ZeroShotRun zeroshot_run(const PipelineConfig& config, const std::string& held_out) {
  bool known = false;
  for (const auto& d : config.target.datasets) known |= dataset_id(d) == held_out;
  if (!known) throw NotFound(fmt::format("dataset '{}' is not part of target task {}", held_out, config.target.id));

  const auto target = read_upstream(config.artifact_dir / kTargetSamples, "consolidate");
  const auto out_domain = read_upstream(config.artifact_dir / kOutDomainSamples, "consolidate");
  ZeroShotRun run;
  run.split = split_target(target, config.test_fraction, derive_seed(config.rng_seed, kSaltSplit));
  std::vector<ConsolidatedSample> remaining;
  for (const auto& s : run.split.train)
    if (s.provenance.dataset_id != held_out) remaining.push_back(s);
  std::vector<predict::HeldOutSet> tests;
  for (auto& t : test_sets_by_dataset(run.split.test))
    if (t.dataset_id == held_out) tests.push_back(std::move(t));
  if (tests.empty()) throw DataError(fmt::format("dataset {} has no test rows", held_out));

  run.dir = config.artifact_dir / ("heldout-" + held_out);
  auto enriched = enrich_into(config, remaining, out_domain, run.dir);
  auto train_cfg = config.train;
  train_cfg.rng_seed = config.rng_seed;
  auto result = predict::run_regimen(predict::Regimen::zeroshot, {}, enriched.report.supplementary, tests, train_cfg,
                                     config.featurizer);
  run.model = std::move(result.model);
  run.metrics = result.metrics.front().second;
  run.artifacts = std::move(enriched.artifacts);
  run.artifacts.push_back(run.dir / "model_zeroshot.json");
  predict::save_model_json(run.model, run.artifacts.back());
  run.artifacts.push_back(run.dir / "zeroshot_metrics.csv");
  const predict::MetricsRow row{held_out, "zeroshot", run.metrics};
  predict::write_metrics_csv(std::span(&row, 1), run.artifacts.back());
  return run;
}

}  // namespace

std::string interpolate_env(std::string_view text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto open = text.find("${", i);
    if (open == std::string_view::npos) break;
    const auto close = text.find('}', open + 2);
    if (close == std::string_view::npos) throw ConfigError(fmt::format("unterminated '${{' in '{}'", text));
    out.append(text.substr(i, open - i));
    const std::string name(text.substr(open + 2, close - open - 2));
    const char* value = std::getenv(name.c_str());
    if (!value) throw ConfigError(fmt::format("environment variable {} is not set", name));
    out += value;
    i = close + 1;
  }
  out.append(text.substr(i));
  return out;
}

PipelineConfig parse_config(json doc, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    doc = interpolate_all(doc);
    check_keys(doc, "config", {"target_task", "out_domain_tasks", "gateway", "consolidation", "audit", "valuation",
                               "split", "train", "featurizer", "regimens", "fewshot", "artifact_dir", "rng_seed",
                               "parallelism"});
    c.target = parse_task(doc.at("target_task"), base_dir, "target_task");
    for (const auto& t : doc.value("out_domain_tasks", json::array()))
      c.out_domain.push_back(parse_task(t, base_dir, "out_domain_tasks entry"));
    c.artifact_dir = resolve(base_dir, doc.at("artifact_dir").get<std::string>());
    c.rng_seed = doc.value("rng_seed", std::uint64_t{0});
    c.parallelism = doc.value("parallelism", std::size_t{1});

    if (doc.contains("gateway")) {
      const auto& g = doc["gateway"];
      check_keys(g, "gateway", {"backend", "endpoint_url", "cache_path", "request_timeout_ms", "max_retries",
                                "rate_limit", "model", "api_key_env", "initial_backoff_ms", "lossy_mock"});
      auto& gw = c.gateway;
      gw.backend = llm::parse_backend(g.value("backend", std::string("mock")));
      if (g.contains("endpoint_url")) gw.endpoint_url = g["endpoint_url"].get<std::string>();
      if (g.contains("cache_path")) gw.cache_path = resolve(base_dir, g["cache_path"].get<std::string>());
      gw.request_timeout = std::chrono::milliseconds(g.value("request_timeout_ms", 60'000));
      gw.max_retries = g.value("max_retries", gw.max_retries);
      gw.rate_limit = g.value("rate_limit", gw.rate_limit);
      gw.model = g.value("model", gw.model);
      gw.api_key_env = g.value("api_key_env", gw.api_key_env);
      gw.initial_backoff = std::chrono::milliseconds(g.value("initial_backoff_ms", 1'000));
      gw.lossy_mock = g.value("lossy_mock", false);
    }
    llm::validate(c.gateway);

    if (doc.contains("consolidation")) {
      const auto& j = doc["consolidation"];
      check_keys(j, "consolidation", {"augment", "abort_failure_ratio"});
      c.augment = j.value("augment", c.augment);
      c.abort_failure_ratio = j.value("abort_failure_ratio", c.abort_failure_ratio);
    }
    if (doc.contains("audit")) {
      const auto& j = doc["audit"];
      check_keys(j, "audit", {"enabled", "threshold", "max_rounds", "averaging"});
      c.audit_enabled = j.value("enabled", true);
      c.audit.threshold = j.value("threshold", c.audit.threshold);
      c.audit.max_rounds = j.value("max_rounds", c.audit.max_rounds);
      const auto averaging = j.value("averaging", std::string("per_feature"));
      if (averaging == "per_feature") c.audit.averaging = audit::MnedAveraging::per_feature;
      else if (averaging == "per_sample") c.audit.averaging = audit::MnedAveraging::per_sample;
      else throw ConfigError(fmt::format("unknown audit averaging '{}'", averaging));
    }
    if (doc.contains("valuation")) {
      const auto& j = doc["valuation"];
      check_keys(j, "valuation", {"k", "budget", "valuation_fraction", "embedding_dimension", "histogram_bins"});
      auto& v = c.valuation;
      v.k = j.value("k", v.k);
      v.budget = j.value("budget", v.budget);
      v.valuation_fraction = j.value("valuation_fraction", v.valuation_fraction);
      v.embedding_dimension = j.value("embedding_dimension", v.embedding_dimension);
      v.histogram_bins = j.value("histogram_bins", v.histogram_bins);
    }
    if (doc.contains("split")) {
      check_keys(doc["split"], "split", {"test_fraction"});
      c.test_fraction = doc["split"].value("test_fraction", c.test_fraction);
    }
    if (doc.contains("train")) {
      const auto& j = doc["train"];
      check_keys(j, "train", {"learning_rate", "max_epochs", "batch_size", "l2_penalty", "early_stop_patience",
                              "min_epochs", "validation_fraction"});
      auto& t = c.train;
      t.learning_rate = j.value("learning_rate", t.learning_rate);
      t.max_epochs = j.value("max_epochs", t.max_epochs);
      t.batch_size = j.value("batch_size", t.batch_size);
      t.l2_penalty = j.value("l2_penalty", t.l2_penalty);
      t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
      t.min_epochs = j.value("min_epochs", t.min_epochs);
      t.validation_fraction = j.value("validation_fraction", t.validation_fraction);
    }
    if (doc.contains("featurizer")) {
      const auto& j = doc["featurizer"];
      check_keys(j, "featurizer", {"min_n", "max_n", "dimension", "seed"});
      auto& f = c.featurizer;
      f.min_n = j.value("min_n", f.min_n);
      f.max_n = j.value("max_n", f.max_n);
      f.dimension = j.value("dimension", f.dimension);
      f.seed = j.value("seed", f.seed);
    }
    if (doc.contains("regimens")) {
      c.regimens.clear();
      for (const auto& r : doc["regimens"]) c.regimens.push_back(predict::parse_regimen(r.get<std::string>()));
    }
    if (doc.contains("fewshot")) {
      const auto& j = doc["fewshot"];
      check_keys(j, "fewshot", {"shots", "seeds"});
      c.fewshot.shots = j.value("shots", c.fewshot.shots);
      c.fewshot.seeds = j.value("seeds", c.fewshot.seeds);
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid configuration: {}", e.what()));
  }

  c.train.validate();
  if (c.valuation.k < 1) throw ConfigError("valuation.k must be at least 1");
  if (c.valuation.budget < 1) throw ConfigError("valuation.budget must be positive");
  if (!(c.valuation.valuation_fraction > 0 && c.valuation.valuation_fraction < 1))
    throw ConfigError("valuation.valuation_fraction must lie in (0, 1)");
  if (c.valuation.embedding_dimension < 1 || c.valuation.histogram_bins < 1)
    throw ConfigError("valuation dimensions must be positive");
  if (!(c.test_fraction > 0 && c.test_fraction < 1)) throw ConfigError("split.test_fraction must lie in (0, 1)");
  if (!(c.abort_failure_ratio > 0 && c.abort_failure_ratio <= 1))
    throw ConfigError("consolidation.abort_failure_ratio must lie in (0, 1]");
  if (c.fewshot.seeds.empty()) throw ConfigError("fewshot.seeds is empty");
  if (c.parallelism < 1) throw ConfigError("parallelism must be at least 1");
  c.audit.parallelism = c.parallelism;

  std::set<std::string> ids;
  for (const auto* t : all_tasks(c)) {
    for (const auto& d : t->datasets) {
      if (!fs::exists(d.csv)) throw ConfigError("dataset file not found: " + d.csv.string());
      if (!fs::exists(d.schema)) throw ConfigError("schema file not found: " + d.schema.string());
      if (!ids.insert(dataset_id(d)).second) throw ConfigError("duplicate dataset id " + dataset_id(d));
    }
  }

  // The digest covers the effective settings and the input bytes, not where artifacts go.
  auto digested = doc;
  digested.erase("artifact_dir");
  digested["rng_seed"] = c.rng_seed;
  std::string material = digested.dump();
  for (const auto* t : all_tasks(c))
    for (const auto& d : t->datasets) material += "\n" + dataset_id(d) + " " + sha256_file(d.csv) + " " + sha256_file(d.schema);
  c.digest = sha256_hex(material);
  return c;
}

PipelineConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config {} is not valid JSON: {}", path.string(), e.what()));
  }
  if (seed_override) {
    doc["rng_seed"] = *seed_override;
  }
  return parse_config(std::move(doc), fs::absolute(path).parent_path());
}

// ---- manifest ----

std::string RunManifest::digest() const {
  std::string material = config_digest;
  for (const auto& [name, step] : steps) {
    material += "\n[" + name + "]";
    for (const auto& a : step.artifacts) material += "\n" + a.path + " " + a.digest;
  }
  return sha256_hex(material);
}

fs::path manifest_path(const PipelineConfig& config) { return config.artifact_dir / "manifest.json"; }

RunManifest read_manifest(const fs::path& path) {
  RunManifest m;
  std::ifstream in(path, std::ios::binary);
  if (!in) return m;
  try {
    const auto j = json::parse(in);
    m.config_digest = j.at("config_digest").get<std::string>();
    for (const auto& [name, s] : j.at("steps").items()) {
      StepRecord rec;
      rec.seconds = s.value("seconds", 0.0);
      for (const auto& a : s.at("artifacts"))
        rec.artifacts.push_back({a.at("path").get<std::string>(), a.at("digest").get<std::string>()});
      m.steps[name] = std::move(rec);
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed manifest {}: {}", path.string(), e.what()));
  }
  return m;
}

void record_step(const PipelineConfig& config, const std::string& step, const std::vector<fs::path>& artifacts,
                 double seconds) {
  fs::create_directories(config.artifact_dir);
  const auto path = manifest_path(config);
  const auto lock_path = config.artifact_dir / "manifest.lock";
  const int fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
  if (fd < 0) throw DataError("cannot open " + lock_path.string());
  struct Unlock {
    int fd;
    ~Unlock() {
      ::flock(fd, LOCK_UN);
      ::close(fd);
    }
  } guard{fd};
  if (::flock(fd, LOCK_EX) != 0) throw DataError("cannot lock " + lock_path.string());

  auto manifest = read_manifest(path);
  if (manifest.config_digest != config.digest) {
    manifest.steps.clear();
    manifest.config_digest = config.digest;
  }
  StepRecord rec;
  rec.seconds = seconds;
  for (const auto& a : artifacts)
    rec.artifacts.push_back({fs::relative(a, config.artifact_dir).generic_string(), sha256_file(a)});
  manifest.steps[step] = std::move(rec);

  json steps = json::object();
  for (const auto& [name, s] : manifest.steps) {
    json arts = json::array();
    for (const auto& a : s.artifacts) arts.push_back({{"path", a.path}, {"digest", a.digest}});
    steps[name] = {{"artifacts", std::move(arts)}, {"seconds", s.seconds}};
  }
  const json doc = {{"config_digest", manifest.config_digest}, {"digest", manifest.digest()}, {"steps", steps}};
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << doc.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

// ---- splits ----

TargetSplit split_target(const std::vector<ConsolidatedSample>& samples, double test_fraction, std::uint64_t seed) {
  const auto groups = row_groups(samples);
  std::mt19937_64 rng(seed);
  const auto test_mark = mark_stratified(groups, test_fraction, rng);
  TargetSplit split;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (auto i : groups[g].members) {
      if (!test_mark[g]) split.train.push_back(samples[i]);
      else if (samples[i].provenance.paraphrase_index == 0) split.test.push_back(samples[i]);
    }
  }
  return split;
}

std::vector<predict::HeldOutSet> test_sets_by_dataset(const std::vector<ConsolidatedSample>& test) {
  std::vector<predict::HeldOutSet> sets;
  for (const auto& s : test) {
    if (sets.empty() || sets.back().dataset_id != s.provenance.dataset_id)
      sets.push_back({s.provenance.dataset_id, {}});
    sets.back().samples.push_back(s);
  }
  return sets;
}

// ---- commands ----

ConsolidateReport cmd_consolidate(const PipelineConfig& config) {
  Stopwatch clock;
  std::vector<tabular::TableDataset> datasets;
  for (const auto* t : all_tasks(config)) {
    for (const auto& src : t->datasets) {
      auto ds = tabular::load_dataset(src.csv, src.schema);
      ds.id = dataset_id(src);
      ds.task_id = t->id;
      tabular::validate_dataset(ds);
      if (t == &config.target && !ds.labels) throw DataError(fmt::format("target dataset {} has no label column", ds.id));
      datasets.push_back(std::move(ds));
    }
  }

  auto gateway = llm::make_gateway(config.gateway);
  consolidate::ConsolidationOptions options;
  options.augment = config.augment;
  options.parallelism = config.parallelism;
  options.abort_failure_ratio = config.abort_failure_ratio;

  ConsolidateReport report;
  std::vector<audit::AuditOutcome> outcomes;
  auto process = [&](const TaskConfig& t) {
    tabular::Task task{t.id, {}, t.label_name, t.positive_meaning};
    for (const auto& d : t.datasets) task.datasets.push_back(dataset_id(d));
    auto result = consolidate::consolidate_task(task, datasets, *gateway, options);
    report.failures.insert(report.failures.end(), result.failures.begin(), result.failures.end());
    if (!config.audit_enabled) return std::move(result.samples);

    std::vector<ConsolidatedSample> audited;
    for (std::size_t begin = 0; begin < result.samples.size();) {
      const auto& id = result.samples[begin].provenance.dataset_id;
      auto end = begin;
      while (end < result.samples.size() && result.samples[end].provenance.dataset_id == id) ++end;
      const auto& ds = *std::find_if(datasets.begin(), datasets.end(), [&](const auto& d) { return d.id == id; });
      auto a = audit::audit_dataset(std::span(result.samples).subspan(begin, end - begin), ds, *gateway, config.audit);
      for (auto& o : a.outcomes) {
        audited.push_back(o.sample);
        outcomes.push_back(std::move(o));
      }
      a.outcomes.clear();
      note("audit {}: mned {:.4f} -> {:.4f}, {} failed", a.dataset_id, a.mned_before, a.mned_after, a.n_failed);
      report.audits.push_back(std::move(a));
      begin = end;
    }
    return audited;
  };
  const auto target = process(config.target);
  std::vector<ConsolidatedSample> out_domain;
  for (const auto& t : config.out_domain) {
    auto s = process(t);
    out_domain.insert(out_domain.end(), s.begin(), s.end());
  }
  report.target_samples = target.size();
  report.out_domain_samples = out_domain.size();

  fs::create_directories(config.artifact_dir);
  const auto& dir = config.artifact_dir;
  std::vector<fs::path> artifacts = {dir / kTargetSamples, dir / kOutDomainSamples, dir / kFailures};
  consolidate::write_samples_jsonl(target, artifacts[0]);
  consolidate::write_samples_jsonl(out_domain, artifacts[1]);
  {
    std::ofstream out(artifacts[2], std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + artifacts[2].string());
    csv::write_row(out, {"dataset_id", "row_index", "category", "message"});
    for (const auto& f : report.failures)
      csv::write_row(out, {f.dataset_id, std::to_string(f.row_index), std::string(category_name(f.category)), f.message});
  }
  if (config.audit_enabled) {
    artifacts.push_back(dir / kAuditReports);
    artifacts.push_back(dir / kAuditSummary);
    audit::write_reports_jsonl(outcomes, artifacts[3]);
    audit::write_summary_csv(report.audits, artifacts[4]);
  }
  for (const auto& f : report.failures)
    note("warning: {} row {} failed ({}): {}", f.dataset_id, f.row_index, category_name(f.category), f.message);
  note("consolidate: {} target and {} out-domain samples", target.size(), out_domain.size());
  record_step(config, "consolidate", artifacts, clock.seconds());
  return report;
}

EnrichReport cmd_enrich(const PipelineConfig& config) {
  Stopwatch clock;
  const auto target = read_upstream(config.artifact_dir / kTargetSamples, "consolidate");
  const auto out_domain = read_upstream(config.artifact_dir / kOutDomainSamples, "consolidate");
  const auto split = split_target(target, config.test_fraction, derive_seed(config.rng_seed, kSaltSplit));
  auto out = enrich_into(config, split.train, out_domain, config.artifact_dir);
  record_step(config, "enrich", out.artifacts, clock.seconds());
  return std::move(out.report);
}

std::vector<predict::MetricsRow> cmd_train_eval(const PipelineConfig& config) {
  Stopwatch clock;
  const auto target = read_upstream(config.artifact_dir / kTargetSamples, "consolidate");
  const auto split = split_target(target, config.test_fraction, derive_seed(config.rng_seed, kSaltSplit));
  const auto tests = test_sets_by_dataset(split.test);

  std::vector<ConsolidatedSample> supplementary;
  const bool needs_sup = std::any_of(config.regimens.begin(), config.regimens.end(),
                                     [](auto r) { return r != predict::Regimen::scratch; });
  if (needs_sup) supplementary = read_upstream(config.artifact_dir / kSupplementary, "enrich");

  auto train_cfg = config.train;
  train_cfg.rng_seed = config.rng_seed;
  std::vector<predict::MetricsRow> rows;
  std::vector<fs::path> artifacts;
  for (auto regimen : config.regimens) {
    auto result = predict::run_regimen(regimen, split.train, supplementary, tests, train_cfg, config.featurizer);
    const auto name = std::string(predict::to_string(regimen));
    artifacts.push_back(config.artifact_dir / fmt::format("model_{}.json", name));
    predict::save_model_json(result.model, artifacts.back());
    for (const auto& [id, m] : result.metrics) {
      rows.push_back({id, name, m});
      note("train {} on {}: auroc {:.4f} prauc {:.4f} (n={})", name, id, m.auroc, m.prauc, m.n_test);
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.dataset_id < b.dataset_id; });
  artifacts.push_back(config.artifact_dir / kMetrics);
  predict::write_metrics_csv(rows, artifacts.back());
  artifacts.push_back(config.artifact_dir / kRanking);
  write_ranking_csv(rows, artifacts.back());
  record_step(config, "train", artifacts, clock.seconds());
  return rows;
}

predict::EvalMetrics cmd_zeroshot_protocol(const PipelineConfig& config, const std::string& held_out) {
  Stopwatch clock;
  auto run = zeroshot_run(config, held_out);
  note("zeroshot on {}: auroc {:.4f} prauc {:.4f} (n={})", held_out, run.metrics.auroc, run.metrics.prauc,
       run.metrics.n_test);
  record_step(config, "zeroshot:" + held_out, run.artifacts, clock.seconds());
  return run.metrics;
}

std::vector<FewShotRow> cmd_fewshot_protocol(const PipelineConfig& config, const std::string& held_out,
                                             std::optional<std::size_t> shots) {
  Stopwatch clock;
  auto zs = zeroshot_run(config, held_out);
  std::vector<ConsolidatedSample> pool;
  for (const auto& s : zs.split.train)
    if (s.provenance.dataset_id == held_out) pool.push_back(s);
  const auto groups = row_groups(pool);
  std::vector<predict::HeldOutSet> tests;
  for (auto& t : test_sets_by_dataset(zs.split.test))
    if (t.dataset_id == held_out) tests.push_back(std::move(t));

  std::vector<std::size_t> by_class[2];
  for (std::size_t g = 0; g < groups.size(); ++g) by_class[groups[g].label].push_back(g);
  const std::vector<std::size_t> counts = {by_class[0].size(), by_class[1].size()};

  const auto grid = shots ? std::vector<std::size_t>{*shots} : config.fewshot.shots;
  std::vector<FewShotRow> rows;
  for (auto requested : grid) {
    auto n = requested;
    if (n > groups.size()) {
      note("warning: {} shots requested but {} has {} training rows; clipping", n, held_out, groups.size());
      n = groups.size();
    }
    auto quota = valuation::largest_remainder(counts, n);
    // Keep both classes represented whenever the draw allows it.
    for (int c = 0; c < 2; ++c) {
      if (n >= 2 && quota[c] == 0 && counts[c] > 0) {
        ++quota[c];
        --quota[1 - c];
      }
    }
    for (auto seed : config.fewshot.seeds) {
      // Draws are indexed within the run; the run seed picks the family of draws.
      const auto draw_seed = derive_seed(derive_seed(config.rng_seed, kSaltShots), seed);
      std::mt19937_64 rng(draw_seed);
      std::vector<bool> take(groups.size(), false);
      for (int c = 0; c < 2; ++c) {
        auto members = by_class[c];
        shuffle_in_place(members, rng);
        for (std::size_t i = 0; i < quota[c]; ++i) take[members[i]] = true;
      }
      const auto shot_samples = gather(pool, groups, take);
      auto model = zs.model;
      const bool both = quota[0] > 0 && quota[1] > 0;
      if (n > 0 && !both) note("warning: a {}-shot draw holds one class; keeping the zero-shot model", n);
      if (n > 0 && both) {
        auto cfg = config.train;
        cfg.rng_seed = derive_seed(draw_seed, 1);
        model = predict::train(shot_samples, cfg, config.featurizer, &zs.model);
      }
      rows.push_back({requested, n, seed, predict::evaluate(model, tests.front().samples)});
      note("fewshot {} shots seed {}: auroc {:.4f}", n, seed, rows.back().metrics.auroc);
    }
  }

  auto artifacts = zs.artifacts;
  artifacts.push_back(zs.dir / "fewshot.csv");
  {
    std::ofstream out(artifacts.back(), std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + artifacts.back().string());
    csv::write_row(out, {"shots", "shots_used", "seed", "auroc", "prauc", "n_test"});
    for (const auto& r : rows)
      csv::write_row(out, {std::to_string(r.shots), std::to_string(r.shots_used), std::to_string(r.seed),
                           fmt::format("{:.6f}", r.metrics.auroc), fmt::format("{:.6f}", r.metrics.prauc),
                           std::to_string(r.metrics.n_test)});
  }
  artifacts.push_back(zs.dir / "fewshot_summary.csv");
  {
    std::ofstream out(artifacts.back(), std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + artifacts.back().string());
    csv::write_row(out, {"shots", "mean_auroc", "sd_auroc", "mean_prauc", "sd_prauc", "runs"});
    for (auto requested : grid) {
      std::vector<double> a, p;
      for (const auto& r : rows)
        if (r.shots == requested) {
          a.push_back(r.metrics.auroc);
          p.push_back(r.metrics.prauc);
        }
      auto mean_sd = [](const std::vector<double>& v) {
        double m = 0, s = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) s += (x - m) * (x - m);
        return std::pair{m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
      };
      const auto [ma, sa] = mean_sd(a);
      const auto [mp, sp] = mean_sd(p);
      csv::write_row(out, {std::to_string(requested), fmt::format("{:.6f}", ma), fmt::format("{:.6f}", sa),
                           fmt::format("{:.6f}", mp), fmt::format("{:.6f}", sp), std::to_string(a.size())});
    }
  }
  record_step(config, "fewshot:" + held_out, artifacts, clock.seconds());
  return rows;
}

void run(const PipelineConfig& config) {
  cmd_consolidate(config);
  cmd_enrich(config);
  cmd_train_eval(config);
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::upstream: return 3;
    case ErrorCategory::gateway: return 4;
    case ErrorCategory::data: return 5;
  }
  return 1;
}

}  // namespace anypredict::pipeline
