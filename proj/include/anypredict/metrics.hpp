#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "anypredict/error.hpp"

namespace anypredict::predict {

// Rank-based AUROC: (ordered pairs + 0.5 tied pairs) / (positives * negatives).
// Pair counts are accumulated as integers so the only rounding is the final division.
template <typename Scalar>
double auroc(std::span<const Scalar> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::uint64_t positives = 0, negatives = 0, twice_correct = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, q = 0;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) (labels[order[j]] == 1 ? p : q) += 1;
    twice_correct += 2 * p * negatives + p * q;
    positives += p;
    negatives += q;
    i = j;
  }
  if (positives == 0 || negatives == 0) throw UndefinedMetric("AUROC needs both labels");
  return static_cast<double>(twice_correct) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

// Average precision over a descending sort; equal scores keep input order, so a
// positive listed earlier among ties is ranked first.
template <typename Scalar>
double prauc(std::span<const Scalar> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t tp = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (labels[order[i]] != 1) continue;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  if (tp == 0) throw UndefinedMetric("PRAUC needs at least one positive");
  return sum / static_cast<double>(tp);
}

}  // namespace anypredict::predict
