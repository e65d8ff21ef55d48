#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "anypredict/error.hpp"
#include "anypredict/parallel.hpp"

namespace anypredict::valuation {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Points over which neighbour distances are taken: one L2-normalised row per
// sample, its binary target (label or pseudo-label) and its provenance key.
template <typename Scalar>
struct EmbeddedBatch {
  RowMatrix<Scalar> vectors;
  std::vector<int> targets;
  std::vector<std::string> keys;

  std::size_t size() const { return targets.size(); }
  Eigen::Index dim() const { return vectors.cols(); }
};

template <typename Scalar>
struct ValuationResult {
  std::vector<std::string> keys;  // same order as the training batch
  Vector<Scalar> phi;
  int k = 1;
  std::size_t n_validation = 0;
  Scalar value_of_full = 0;  // mean over validation points of V(full train set)

  std::optional<Scalar> score(const std::string& key) const {
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) return std::nullopt;
    return phi[std::distance(keys.begin(), it)];
  }
};

template <typename Scalar>
void check_batch(const EmbeddedBatch<Scalar>& batch, const char* what, Scalar tolerance = Scalar(1e-6)) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (batch.vectors.rows() != n || batch.keys.size() != batch.size())
    throw DimensionError(fmt::format("{} batch: {} rows, {} targets, {} keys", what, batch.vectors.rows(),
                                     batch.targets.size(), batch.keys.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(batch.vectors.row(i).norm() - Scalar(1)) > tolerance)
      throw DataError(fmt::format("{} vector {} is not unit length", what, batch.keys[i]));
    if (batch.targets[i] != 0 && batch.targets[i] != 1)
      throw DataError(fmt::format("{} target for {} must be 0 or 1", what, batch.keys[i]));
  }
}

// Position of each key in ascending key order; the distance tie-break.
inline std::vector<std::uint32_t> key_ranks(const std::vector<std::string>& keys) {
  std::vector<std::uint32_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return keys[a] < keys[b]; });
  std::vector<std::uint32_t> rank(keys.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

// Training indices sorted by ascending cosine distance to `query` (descending dot
// product on unit vectors), ties by ascending provenance key.
template <typename Scalar, typename Derived>
std::vector<std::uint32_t> neighbour_order(const EmbeddedBatch<Scalar>& train,
                                           const Eigen::MatrixBase<Derived>& query,
                                           const std::vector<std::uint32_t>& ranks) {
  const Vector<Scalar> sim = train.vectors * query.transpose().template cast<Scalar>();
  std::vector<std::uint32_t> order(train.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (sim[a] != sim[b]) return sim[a] > sim[b];
    return ranks[a] < ranks[b];
  });
  return order;
}

// V(S) = (1/k) * #{ the min(k, |S|) members of S nearest to the query whose target matches }.
template <typename Scalar, typename Derived>
Scalar knn_utility(const EmbeddedBatch<Scalar>& train, std::span<const std::size_t> selected,
                   const Eigen::MatrixBase<Derived>& query, int query_target, int k) {
  if (k < 1) throw DataError("k must be at least 1");
  if (selected.empty()) return Scalar(0);
  const auto ranks = key_ranks(train.keys);
  std::vector<std::pair<Scalar, std::size_t>> cand;
  for (auto i : selected) cand.emplace_back(train.vectors.row(i).dot(query.template cast<Scalar>()), i);
  std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return ranks[a.second] < ranks[b.second];
  });
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
  Scalar hits = 0;
  for (std::size_t j = 0; j < take; ++j) hits += train.targets[cand[j].second] == query_target;
  return hits / static_cast<Scalar>(k);
}

// Exact Shapley values by subset enumeration, normalised so the values sum to the
// full-set utility (efficiency). The utility is the KNN utility averaged over the
// validation points. Limited to 12 training points.
template <typename Scalar>
ValuationResult<Scalar> exact_shapley(const EmbeddedBatch<Scalar>& train, const EmbeddedBatch<Scalar>& val, int k) {
  const std::size_t n = train.size();
  if (n > 12) throw TooLargeForExact(n);
  if (k < 1) throw DataError("k must be at least 1");
  if (val.size() == 0) throw DataError("validation set is empty");
  if (n > 0 && train.dim() != val.dim())
    throw DimensionError(fmt::format("train dimension {} != validation dimension {}", train.dim(), val.dim()));

  const auto ranks = key_ranks(train.keys);
  std::vector<std::vector<std::uint32_t>> orders;
  for (std::size_t v = 0; v < val.size(); ++v) orders.push_back(neighbour_order(train, val.vectors.row(v), ranks));

  const std::size_t subsets = std::size_t{1} << n;
  std::vector<Scalar> utility(subsets, Scalar(0));
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    Scalar total = 0;
    for (std::size_t v = 0; v < val.size(); ++v) {
      int taken = 0, hits = 0;
      for (auto i : orders[v]) {
        if (!(mask >> i & 1)) continue;
        hits += train.targets[i] == val.targets[v];
        if (++taken == k) break;
      }
      total += static_cast<Scalar>(hits) / static_cast<Scalar>(k);
    }
    utility[mask] = total / static_cast<Scalar>(val.size());
  }

  // binom[m] = C(n-1, m)
  std::vector<Scalar> binom(n == 0 ? 0 : n, Scalar(1));
  for (std::size_t m = 1; m + 1 <= n; ++m) binom[m] = binom[m - 1] * static_cast<Scalar>(n - m) / static_cast<Scalar>(m);

  ValuationResult<Scalar> result;
  result.keys = train.keys;
  result.phi = Vector<Scalar>::Zero(static_cast<Eigen::Index>(n));
  result.k = k;
  result.n_validation = val.size();
  result.value_of_full = utility[subsets - 1];
  for (std::size_t i = 0; i < n; ++i) {
    Scalar sum = 0;
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      if (mask >> i & 1) continue;
      const auto size = static_cast<std::size_t>(std::popcount(mask));
      sum += (utility[mask | (std::size_t{1} << i)] - utility[mask]) / binom[size];
    }
    result.phi[static_cast<Eigen::Index>(i)] = sum / static_cast<Scalar>(n);
  }
  return result;
}

// Closed-form Shapley values of the KNN utility: one sort plus a backward
// recursion per validation point, then the mean over validation points.
// Validation points are reduced in fixed blocks, so results are bit-identical
// for any worker count.
template <typename Scalar>
ValuationResult<Scalar> knn_shapley(const EmbeddedBatch<Scalar>& train, const EmbeddedBatch<Scalar>& val, int k,
                                    std::size_t parallelism = 1) {
  const std::size_t n = train.size();
  if (n == 0) throw DataError("training batch is empty");
  if (val.size() == 0) throw DataError("validation set is empty");
  if (k < 1) throw DataError("k must be at least 1");
  if (train.dim() != val.dim())
    throw DimensionError(fmt::format("train dimension {} != validation dimension {}", train.dim(), val.dim()));
  if (train.vectors.rows() != static_cast<Eigen::Index>(n) || val.vectors.rows() != static_cast<Eigen::Index>(val.size()))
    throw DimensionError("vector rows do not match target count");

  const auto ranks = key_ranks(train.keys);
  constexpr std::size_t kMaxBlocks = 64;
  const std::size_t blocks = std::min(kMaxBlocks, val.size());
  std::vector<Vector<Scalar>> partial(blocks);
  std::vector<Scalar> full_utility(val.size(), Scalar(0));
  const auto kk = static_cast<Scalar>(k);

  parallel_for(blocks, parallelism, [&](std::size_t b) {
    const std::size_t begin = b * val.size() / blocks;
    const std::size_t end = (b + 1) * val.size() / blocks;
    Vector<Scalar> acc = Vector<Scalar>::Zero(static_cast<Eigen::Index>(n));
    Vector<Scalar> s(static_cast<Eigen::Index>(n));
    for (std::size_t v = begin; v < end; ++v) {
      const auto order = neighbour_order(train, val.vectors.row(v), ranks);
      const int y = val.targets[v];
      auto match = [&](std::size_t pos) { return static_cast<Scalar>(train.targets[order[pos]] == y); };
      // pos is 0-based; the recursion index i = pos + 1.
      s[order[n - 1]] = match(n - 1) / std::max(static_cast<Scalar>(n), kk);
      for (std::size_t pos = n - 1; pos-- > 0;) {
        const auto i = static_cast<Scalar>(pos + 1);
        s[order[pos]] = s[order[pos + 1]] + (match(pos) - match(pos + 1)) / kk * std::min(kk, i) / i;
      }
      acc += s;
      Scalar hits = 0;
      for (std::size_t pos = 0; pos < std::min<std::size_t>(n, static_cast<std::size_t>(k)); ++pos) hits += match(pos);
      full_utility[v] = hits / kk;
    }
    partial[b] = std::move(acc);
  });

  ValuationResult<Scalar> result;
  result.keys = train.keys;
  result.phi = Vector<Scalar>::Zero(static_cast<Eigen::Index>(n));
  for (const auto& p : partial) result.phi += p;
  result.phi /= static_cast<Scalar>(val.size());
  result.k = k;
  result.n_validation = val.size();
  Scalar total = 0;
  for (auto u : full_utility) total += u;
  result.value_of_full = total / static_cast<Scalar>(val.size());
  return result;
}

// ---- selection and export (double precision) ----

struct ScoredItem {
  std::string key;
  int label = 0;  // pseudo-label
  double phi = 0.0;
};

struct Selection {
  std::vector<std::size_t> indices;  // into the scored input, class 0 first, each by descending phi
  std::vector<std::size_t> quotas;   // per class
  std::vector<std::string> warnings;
};

// Largest-remainder quotas proportional to the pseudo-label distribution; each
// class keeps its top-phi members (ties by key). Throws when budget > |scored|.
Selection stratified_select(std::span<const ScoredItem> scored, std::size_t budget);

// Largest-remainder apportionment of `budget` over `counts`; ties go to the lower class.
std::vector<std::size_t> largest_remainder(std::span<const std::size_t> counts, std::size_t budget);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
  std::size_t positives = 0;
};

struct ScoreHistogram {
  std::vector<HistogramBin> bins;
  std::size_t total = 0;
  std::size_t positives = 0;
  double positive_ratio() const { return total ? static_cast<double>(positives) / static_cast<double>(total) : 0.0; }
};

// Equal-width bins over [min phi, max phi]; all-equal scores land in the first bin.
ScoreHistogram score_histogram(std::span<const double> phi, std::span<const int> pseudo_labels, std::size_t bins);

// bin_low,bin_high,count,positive_count
void write_histogram_csv(const ScoreHistogram& histogram, const std::filesystem::path& path);
// pseudo_label,count,ratio
void write_label_ratio_csv(const ScoreHistogram& histogram, const std::filesystem::path& path);

struct ScoreRow {
  std::string key;
  int pseudo_label = 0;
  double confidence = 0.0;
  double phi = 0.0;
};
// provenance_key,pseudo_label,confidence,phi
void write_scores_csv(std::span<const ScoreRow> rows, const std::filesystem::path& path);

}  // namespace anypredict::valuation
