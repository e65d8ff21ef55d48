#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace anypredict::synthetic {

// Two tasks whose rows mention tokens from a shared pair of concept vocabularies.
// Target rows carry a noisy label tied to their concept class; half of the
// out-domain rows draw from the concept vocabularies, the rest only from filler.
struct BenchmarkSpec {
  std::uint64_t seed = 0;
  std::vector<std::size_t> target_rows = {30, 50, 120};
  std::size_t out_domain_rows = 5000;
  std::size_t concept_vocabulary = 150;  // per class
  std::size_t filler_vocabulary = 400;
  double concept_rate = 0.85;   // chance a target feature draws from the row's class vocabulary
  double label_noise = 0.1;
  double positive_rate = 0.5;
  double missing_rate = 0.05;
};

// Writes CSV + schema files, config.json and outdomain_kinds.csv into `dir`.
void write_benchmark(const std::filesystem::path& dir, const BenchmarkSpec& spec = {});

}  // namespace anypredict::synthetic
