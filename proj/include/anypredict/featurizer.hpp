#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace anypredict::predict {

struct FeaturizerConfig {
  int min_n = 3;
  int max_n = 5;
  std::size_t dimension = std::size_t{1} << 16;
  std::uint64_t seed = 0x5eedf00dULL;

  bool operator==(const FeaturizerConfig&) const = default;
};

using SparseFeatures = Eigen::SparseVector<double>;

// Seeded 64-bit hash (FNV-1a body, murmur3 finaliser).
std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t seed);

// Lowercased character n-grams hashed into `dimension` buckets with a hash-derived
// +/-1 sign, term-frequency weighted, then L2-normalised. Text without any n-gram
// maps to the zero vector.
SparseFeatures featurize(std::string_view text, const FeaturizerConfig& config);

Eigen::VectorXd to_dense(const SparseFeatures& features);

}  // namespace anypredict::predict
