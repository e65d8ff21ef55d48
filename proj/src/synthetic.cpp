#include "anypredict/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include <fmt/format.h>

#include "anypredict/csv.hpp"
#include "anypredict/error.hpp"
#include "anypredict/random.hpp"
#include "json.hpp"

namespace anypredict::synthetic {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::vector<std::string> make_words(std::size_t n, std::set<std::string>& taken, std::mt19937_64& rng) {
  std::vector<std::string> words;
  while (words.size() < n) {
    const auto syllables = 2 + uniform_below(rng, 2);
    std::string w;
    for (std::uint64_t s = 0; s < syllables; ++s) {
      w += kConsonants[uniform_below(rng, kConsonants.size())];
      w += kVowels[uniform_below(rng, kVowels.size())];
    }
    if (taken.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

const std::string& pick(const std::vector<std::string>& pool, std::mt19937_64& rng) {
  return pool[uniform_below(rng, pool.size())];
}

bool coin(std::mt19937_64& rng, double p) { return uniform_unit(rng) < p; }

struct Column {
  std::string name;
  std::string kind;
  std::string explanation;
};

void write_table(const fs::path& dir, const std::string& id, const std::vector<Column>& columns,
                 const std::vector<std::vector<std::string>>& rows) {
  json schema = json::object();
  for (const auto& c : columns) {
    json entry = {{"kind", c.kind}, {"explanation", c.explanation}};
    if (c.name == "age") entry["unit"] = "years";
    schema[c.name] = entry;
  }
  std::ofstream(dir / (id + ".schema.json"), std::ios::binary) << schema.dump(2) << '\n';
  std::ofstream out(dir / (id + ".csv"), std::ios::binary);
  std::vector<std::string> header;
  for (const auto& c : columns) header.push_back(c.name);
  csv::write_row(out, header);
  for (const auto& r : rows) csv::write_row(out, r);
}

}  // namespace

void write_benchmark(const fs::path& dir, const BenchmarkSpec& spec) {
  if (spec.target_rows.size() != 3) throw ConfigError("the benchmark has exactly three target datasets");
  fs::create_directories(dir);
  std::mt19937_64 rng(spec.seed);
  std::set<std::string> taken;
  const std::vector<std::vector<std::string>> vocab = {make_words(spec.concept_vocabulary, taken, rng),
                                                        make_words(spec.concept_vocabulary, taken, rng)};
  const auto filler = make_words(spec.filler_vocabulary, taken, rng);

  struct TargetLayout {
    std::string id;
    std::vector<std::string> features;
    Column extra;
  };
  const std::vector<TargetLayout> layouts = {
      {"cohort_a", {"finding_1", "finding_2", "finding_3"}, {"smoker", "binary", "whether the patient smokes"}},
      {"cohort_b", {"marker_a", "marker_b", "marker_c"}, {"prior_treatment", "binary", "received earlier therapy"}},
      {"cohort_c", {"observation_1", "observation_2", "observation_3"}, {"stage", "categorical", "disease stage"}},
  };
  const std::vector<std::string> stages = {"I", "II", "III", "IV"};

  json target_datasets = json::array();
  for (std::size_t d = 0; d < layouts.size(); ++d) {
    const auto& layout = layouts[d];
    std::vector<Column> columns;
    for (const auto& f : layout.features) columns.push_back({f, "categorical", "a recorded clinical finding"});
    columns.push_back({"age", "numerical", "age at enrolment"});
    columns.push_back(layout.extra);
    columns.push_back({"response", "label", "responded to treatment"});

    // Exact class balance per dataset, so no dataset identity predicts the label.
    std::vector<int> latents(spec.target_rows[d], 0);
    const auto positives = static_cast<std::size_t>(std::llround(spec.positive_rate * static_cast<double>(latents.size())));
    std::fill_n(latents.begin(), positives, 1);
    shuffle_in_place(latents, rng);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t r = 0; r < spec.target_rows[d]; ++r) {
      const int latent = latents[r];
      std::vector<std::string> row;
      for (std::size_t f = 0; f < layout.features.size(); ++f) {
        const auto& token = coin(rng, spec.concept_rate) ? pick(vocab[latent], rng) : pick(filler, rng);
        row.push_back(coin(rng, spec.missing_rate) ? std::string{} : token);
      }
      row.push_back(std::to_string(30 + uniform_below(rng, 50)));
      if (layout.extra.kind == "binary") row.push_back(coin(rng, 0.3) ? "yes" : "no");
      else row.push_back(stages[uniform_below(rng, stages.size())]);
      const int label = coin(rng, spec.label_noise) ? 1 - latent : latent;
      row.push_back(std::to_string(label));
      rows.push_back(std::move(row));
    }
    write_table(dir, layout.id, columns, rows);
    target_datasets.push_back({{"csv", layout.id + ".csv"}, {"schema", layout.id + ".schema.json"}});
  }

  const std::vector<Column> registry_columns = {
      {"finding_1", "categorical", "a recorded clinical finding"},
      {"finding_2", "categorical", "a recorded clinical finding"},
      {"marker_a", "categorical", "a recorded clinical finding"},
      {"marker_b", "categorical", "a recorded clinical finding"},
      {"observation_1", "categorical", "a recorded clinical finding"},
      {"observation_2", "categorical", "a recorded clinical finding"},
      {"note", "categorical", "a term from the visit note"},
      {"age", "numerical", "age at the visit"},
      {"site", "categorical", "recruiting site"},
      {"event", "label", "an adverse event was reported"},
  };
  std::vector<std::vector<std::string>> registry;
  std::ofstream kinds(dir / "outdomain_kinds.csv", std::ios::binary);
  csv::write_row(kinds, {"row_index", "kind", "concept_class"});
  for (std::size_t r = 0; r < spec.out_domain_rows; ++r) {
    const bool bearing = coin(rng, 0.5);
    const int latent = coin(rng, 0.5) ? 1 : 0;
    std::vector<std::string> row;
    // Registry rows carry more findings than target rows, so each concept row holds more evidence.
    for (int f = 0; f < 6; ++f) row.push_back(bearing && coin(rng, 0.85) ? pick(vocab[latent], rng) : pick(filler, rng));
    row.push_back(pick(filler, rng));
    row.push_back(std::to_string(30 + uniform_below(rng, 50)));
    row.push_back(fmt::format("site_{}", uniform_below(rng, 12)));
    row.push_back(coin(rng, 0.3) ? "1" : "0");
    registry.push_back(std::move(row));
    csv::write_row(kinds, {std::to_string(r), bearing ? "concept" : "noise", bearing ? std::to_string(latent) : ""});
  }
  write_table(dir, "registry", registry_columns, registry);

  json config = {
      {"target_task",
       {{"id", "treatment_response"},
        {"label_name", "response"},
        {"positive_meaning", "the patient responded"},
        {"datasets", target_datasets}}},
      {"out_domain_tasks",
       json::array({{{"id", "adverse_events"},
                     {"label_name", "event"},
                     {"positive_meaning", "an adverse event occurred"},
                     {"datasets", json::array({{{"csv", "registry.csv"}, {"schema", "registry.schema.json"}}})}}})},
      {"gateway", {{"backend", "mock"}}},
      {"audit", {{"enabled", true}, {"threshold", 0.5}, {"max_rounds", 1}}},
      {"valuation", {{"k", 5}, {"budget", 1000}, {"valuation_fraction", 0.25}, {"embedding_dimension", 1024}}},
      {"split", {{"test_fraction", 0.3}}},
      {"regimens", json::array({"augment", "finetune", "scratch", "zeroshot"})},
      {"fewshot", {{"shots", json::array({8, 32, 128})}, {"seeds", json::array({0, 1, 2, 3, 4, 5, 6, 7, 8, 9})}}},
      {"artifact_dir", "artifacts"},
      {"rng_seed", spec.seed},
      {"parallelism", 1},
  };
  std::ofstream(dir / "config.json", std::ios::binary) << config.dump(2) << '\n';
}

}  // namespace anypredict::synthetic
