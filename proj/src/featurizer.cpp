#include "anypredict/featurizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "anypredict/error.hpp"

namespace anypredict::predict {

std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return h;
}

SparseFeatures featurize(std::string_view text, const FeaturizerConfig& config) {
  if (config.dimension == 0 || config.min_n < 1 || config.max_n < config.min_n)
    throw ConfigError("invalid featurizer configuration");
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  std::vector<std::pair<std::size_t, double>> hits;
  for (int n = config.min_n; n <= config.max_n; ++n) {
    const auto width = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + width <= lowered.size(); ++i) {
      const auto h = hash_bytes(std::string_view(lowered).substr(i, width), config.seed);
      hits.emplace_back(h % config.dimension, (h >> 63) ? -1.0 : 1.0);
    }
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  SparseFeatures out(static_cast<Eigen::Index>(config.dimension));
  double norm2 = 0.0;
  std::vector<std::pair<std::size_t, double>> merged;
  for (const auto& [index, sign] : hits) {
    if (!merged.empty() && merged.back().first == index) merged.back().second += sign;
    else merged.emplace_back(index, sign);
  }
  for (const auto& [index, value] : merged) norm2 += value * value;
  if (norm2 == 0.0) return out;
  const double scale = 1.0 / std::sqrt(norm2);
  out.reserve(static_cast<Eigen::Index>(merged.size()));
  for (const auto& [index, value] : merged)
    if (value != 0.0) out.insertBack(static_cast<Eigen::Index>(index)) = value * scale;
  return out;
}

Eigen::VectorXd to_dense(const SparseFeatures& features) { return Eigen::VectorXd(features); }

}  // namespace anypredict::predict
