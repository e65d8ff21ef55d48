#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "anypredict/pipeline.hpp"

namespace ap = anypredict::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Tabular prediction through LLM consolidation, valuation and transfer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string dataset;
  std::optional<std::size_t> shots;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "pipeline configuration (JSON)")->required();
    cmd->add_option("--seed", seed, "override rng_seed");
  };
  auto* consolidate = app.add_subcommand("consolidate", "describe and audit every table row");
  auto* enrich = app.add_subcommand("enrich", "pseudo-label, score and select supplementary samples");
  auto* train = app.add_subcommand("train", "train and evaluate the configured regimens");
  auto* zeroshot = app.add_subcommand("zeroshot", "hold out one target dataset and train without it");
  auto* fewshot = app.add_subcommand("fewshot", "fine-tune the zero-shot model on a few labeled rows");
  auto* run = app.add_subcommand("run", "consolidate, enrich and train in sequence");
  for (auto* c : {consolidate, enrich, train, zeroshot, fewshot, run}) add_common(c);
  zeroshot->add_option("--dataset", dataset, "held-out dataset id")->required();
  fewshot->add_option("--dataset", dataset, "held-out dataset id")->required();
  fewshot->add_option("--shots", shots, "labeled rows to fine-tune on (default: configured grid)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto config = ap::load_config(config_path, seed);
    if (*consolidate) ap::cmd_consolidate(config);
    else if (*enrich) ap::cmd_enrich(config);
    else if (*train) ap::cmd_train_eval(config);
    else if (*zeroshot) ap::cmd_zeroshot_protocol(config, dataset);
    else if (*fewshot) ap::cmd_fewshot_protocol(config, dataset, shots);
    else if (*run) ap::run(config);
  } catch (const anypredict::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return ap::exit_code(e.category());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 5;
  }
  return 0;
}
