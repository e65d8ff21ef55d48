#include <exception>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "anypredict/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic transfer benchmark"};
  std::string out = "benchmarks/synthetic";
  anypredict::synthetic::BenchmarkSpec spec;
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", spec.seed, "generator seed");
  app.add_option("--out-domain-rows", spec.out_domain_rows, "rows in the out-domain pool");
  app.add_option("--concept-vocabulary", spec.concept_vocabulary, "concept tokens per class");
  app.add_option("--concept-rate", spec.concept_rate, "chance a target feature carries a concept token");
  app.add_option("--label-noise", spec.label_noise, "chance a target label is flipped");
  app.add_option("--positive-rate", spec.positive_rate, "share of positive target rows");
  CLI11_PARSE(app, argc, argv);
  try {
    anypredict::synthetic::write_benchmark(out, spec);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 5;
  }
  return 0;
}
