#include <gtest/gtest.h>

#include <random>

#include "anypredict/valuation.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace anypredict;
using namespace anypredict::valuation;
using Batch = EmbeddedBatch<double>;

namespace {

Batch random_batch(std::mt19937_64& rng, std::size_t n, Eigen::Index dim, const std::string& prefix) {
  std::normal_distribution<double> gauss;
  Batch b;
  b.vectors.resize(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(dim, [&] { return gauss(rng); });
    b.vectors.row(static_cast<Eigen::Index>(i)) = v.normalized().transpose();
    b.targets.push_back(static_cast<int>(rng() % 2));
    b.keys.push_back(fmt::format("{}{:03}", prefix, i));
  }
  return b;
}

std::vector<double> oracle_shapley(const Batch& train, const Batch& val, int k) {
  std::vector<std::vector<double>> dist(val.size(), std::vector<double>(train.size()));
  for (std::size_t v = 0; v < val.size(); ++v)
    for (std::size_t i = 0; i < train.size(); ++i)
      dist[v][i] = 1.0 - train.vectors.row(static_cast<Eigen::Index>(i)).dot(val.vectors.row(static_cast<Eigen::Index>(v)));
  const auto ranks = key_ranks(train.keys);
  return oracle::permutation_shapley(dist, train.targets, val.targets,
                                     std::vector<std::size_t>(ranks.begin(), ranks.end()), k);
}

std::vector<ScoredItem> scored_pool(std::size_t negatives, std::size_t positives, std::mt19937_64& rng) {
  std::vector<ScoredItem> out;
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t i = 0; i < negatives + positives; ++i)
    out.push_back({fmt::format("s{:04}", i), i < negatives ? 0 : 1, u(rng)});
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

TEST(KnnUtility, Examples) {
  Batch train;
  train.vectors.resize(3, 2);
  train.vectors << 1, 0, 0, 1, -1, 0;
  train.targets = {1, 0, 1};
  train.keys = {"a", "b", "c"};
  const Eigen::RowVector2d q(1, 0);
  const std::vector<std::size_t> all = {0, 1, 2}, none = {}, far = {2};
  EXPECT_EQ(knn_utility(train, std::span<const std::size_t>(none), q, 1, 1), 0.0);
  EXPECT_EQ(knn_utility(train, std::span<const std::size_t>(all), q, 1, 1), 1.0);
  EXPECT_EQ(knn_utility(train, std::span<const std::size_t>(all), q, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(knn_utility(train, std::span<const std::size_t>(all), q, 1, 2), 0.5);
  // fewer members than k still divide by k
  EXPECT_DOUBLE_EQ(knn_utility(train, std::span<const std::size_t>(far), q, 1, 3), 1.0 / 3.0);
  EXPECT_THROW(knn_utility(train, std::span<const std::size_t>(all), q, 1, 0), DataError);
}

TEST(ExactShapley, MatchesPermutationOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const auto n = 1 + rng() % 6;
    const int k = 1 + static_cast<int>(rng() % 3);
    const auto train = random_batch(rng, n, 3, "t");
    const auto val = random_batch(rng, 1 + rng() % 3, 3, "v");
    const auto exact = exact_shapley(train, val, k);
    const auto expected = oracle_shapley(train, val, k);
    for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(exact.phi[static_cast<Eigen::Index>(i)], expected[i], 1e-12);
  }
}

TEST(ExactShapley, RejectsLargeInstances) {
  std::mt19937_64 rng(2);
  EXPECT_THROW(exact_shapley(random_batch(rng, 13, 2, "t"), random_batch(rng, 1, 2, "v"), 1), TooLargeForExact);
}

TEST(KnnShapley, SinglePointGetsFullUtility) {
  std::mt19937_64 rng(3);
  auto train = random_batch(rng, 1, 4, "t");
  auto val = random_batch(rng, 1, 4, "v");
  val.targets[0] = train.targets[0];
  EXPECT_DOUBLE_EQ(knn_shapley(train, val, 3).phi[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(knn_shapley(train, val, 1).phi[0], 1.0);
}

TEST(KnnShapleyProperty, MatchesExactAndSatisfiesAxioms) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 1200; ++trial) {
    const auto n = 1 + rng() % 10;
    const int k = 1 + static_cast<int>(rng() % 3);
    auto train = random_batch(rng, n, 1 + static_cast<Eigen::Index>(rng() % 4), "t");
    const auto val = random_batch(rng, 1 + rng() % 5, train.dim(), "v");
    std::size_t dup_of = n;
    // In one dimension a third point can tie with the pair, and the key tie-break
    // then separates them, so duplicates are only planted in higher dimensions.
    if (n >= 2 && train.dim() > 1 && rng() % 2) {
      dup_of = rng() % (n - 1);
      train.vectors.row(static_cast<Eigen::Index>(n - 1)) = train.vectors.row(static_cast<Eigen::Index>(dup_of));
      train.targets[n - 1] = train.targets[dup_of];
    }
    const auto fast = knn_shapley(train, val, k, 1 + rng() % 3);
    const auto exact = exact_shapley(train, val, k);
    for (std::size_t i = 0; i < n; ++i)
      ASSERT_NEAR(fast.phi[static_cast<Eigen::Index>(i)], exact.phi[static_cast<Eigen::Index>(i)], 1e-9) << trial;
    ASSERT_NEAR(fast.phi.sum(), fast.value_of_full, 1e-9);
    ASSERT_NEAR(exact.phi.sum(), exact.value_of_full, 1e-9);
    ASSERT_NEAR(fast.value_of_full, exact.value_of_full, 1e-12);
    if (dup_of < n) {
      ASSERT_NEAR(fast.phi[static_cast<Eigen::Index>(dup_of)], fast.phi[static_cast<Eigen::Index>(n - 1)], 1e-9);
      ASSERT_NEAR(exact.phi[static_cast<Eigen::Index>(dup_of)], exact.phi[static_cast<Eigen::Index>(n - 1)], 1e-9);
    }
  }
}

TEST(KnnShapley, IdenticalCopiesShareValueEqually) {
  for (std::size_t copies : {1u, 2u, 5u, 9u}) {
    Batch train;
    train.vectors = RowMatrix<double>::Zero(static_cast<Eigen::Index>(copies), 2);
    train.vectors.col(0).setOnes();
    train.targets.assign(copies, 1);
    for (std::size_t i = 0; i < copies; ++i) train.keys.push_back(fmt::format("c{}", i));
    Batch val;
    val.vectors = RowMatrix<double>(1, 2);
    val.vectors << 1, 0;
    val.targets = {1};
    val.keys = {"v"};
    const auto r = knn_shapley(train, val, 1);
    for (Eigen::Index i = 0; i < r.phi.size(); ++i) EXPECT_NEAR(r.phi[i], 1.0 / static_cast<double>(copies), 1e-12);
  }
}

TEST(KnnShapley, WorkerCountDoesNotChangeBits) {
  std::mt19937_64 rng(5);
  const auto train = random_batch(rng, 500, 8, "t");
  const auto val = random_batch(rng, 300, 8, "v");
  const auto one = knn_shapley(train, val, 5, 1);
  for (std::size_t workers : {2u, 3u, 8u}) {
    const auto many = knn_shapley(train, val, 5, workers);
    ASSERT_EQ(one.phi.size(), many.phi.size());
    for (Eigen::Index i = 0; i < one.phi.size(); ++i) ASSERT_EQ(one.phi[i], many.phi[i]);
    EXPECT_EQ(one.value_of_full, many.value_of_full);
  }
}

TEST(KnnShapley, RejectsBadInput) {
  std::mt19937_64 rng(6);
  const auto train = random_batch(rng, 4, 3, "t");
  EXPECT_THROW(knn_shapley(train, random_batch(rng, 2, 4, "v"), 1), DimensionError);
  EXPECT_THROW(knn_shapley(train, Batch{}, 1), DataError);
  EXPECT_THROW(knn_shapley(train, random_batch(rng, 2, 3, "v"), 0), DataError);
  auto bad = train;
  bad.vectors.row(0) *= 2;
  EXPECT_THROW(check_batch(bad, "train"), DataError);
  bad = train;
  bad.targets[1] = 2;
  EXPECT_THROW(check_batch(bad, "train"), DataError);
}

TEST(KnnShapley, RelevantHalfOutscoresNoisyHalf) {
  std::mt19937_64 rng(7);
  // Two well separated clusters; target = cluster. Noise half has random targets.
  auto make = [&](std::size_t n, bool noisy, const std::string& prefix) {
    std::normal_distribution<double> g(0, 0.3);
    Batch b;
    b.vectors.resize(static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i) {
      const int cluster = static_cast<int>(i % 2);
      Eigen::Vector4d v(cluster ? 3.0 : -3.0, g(rng), g(rng), g(rng));
      b.vectors.row(static_cast<Eigen::Index>(i)) = v.normalized().transpose();
      b.targets.push_back(noisy ? static_cast<int>(rng() % 2) : cluster);
      b.keys.push_back(fmt::format("{}{:04}", prefix, i));
    }
    return b;
  };
  const auto relevant = make(200, false, "r"), noise = make(200, true, "z");
  Batch train;
  train.vectors.resize(400, 4);
  train.vectors << relevant.vectors, noise.vectors;
  train.targets = relevant.targets;
  train.targets.insert(train.targets.end(), noise.targets.begin(), noise.targets.end());
  train.keys = relevant.keys;
  train.keys.insert(train.keys.end(), noise.keys.begin(), noise.keys.end());
  const auto r = knn_shapley(train, make(100, false, "v"), 5);
  EXPECT_GT(r.phi.head(200).mean(), r.phi.tail(200).mean());
}

TEST(LargestRemainder, Examples) {
  const std::vector<std::size_t> split = {60, 40};
  EXPECT_EQ(largest_remainder(split, 10), (std::vector<std::size_t>{6, 4}));
  const std::vector<std::size_t> even = {1, 1};
  EXPECT_EQ(largest_remainder(even, 1), (std::vector<std::size_t>{1, 0}));
  const std::vector<std::size_t> thirds = {1, 1, 1};
  EXPECT_EQ(largest_remainder(thirds, 2), (std::vector<std::size_t>{1, 1, 0}));
  const std::vector<std::size_t> skew = {97, 3};
  EXPECT_EQ(largest_remainder(skew, 10), (std::vector<std::size_t>{10, 0}));
}

TEST(StratifiedSelect, SixtyFortyBudgetTen) {
  std::mt19937_64 rng(8);
  const auto pool = scored_pool(60, 40, rng);
  const auto sel = stratified_select(pool, 10);
  ASSERT_EQ(sel.indices.size(), 10u);
  EXPECT_EQ(sel.quotas, (std::vector<std::size_t>{6, 4}));
  std::size_t pos = 0;
  for (auto i : sel.indices) pos += pool[i].label;
  EXPECT_EQ(pos, 4u);
}

TEST(StratifiedSelect, BudgetEqualToPoolTakesAll) {
  std::mt19937_64 rng(9);
  const auto pool = scored_pool(7, 13, rng);
  auto sel = stratified_select(pool, pool.size());
  std::sort(sel.indices.begin(), sel.indices.end());
  for (std::size_t i = 0; i < pool.size(); ++i) EXPECT_EQ(sel.indices[i], i);
  EXPECT_THROW(stratified_select(pool, pool.size() + 1), DataError);
}

TEST(StratifiedSelect, TakesTopScoresWithKeyTieBreak) {
  const std::vector<ScoredItem> pool = {{"d", 0, 0.5}, {"a", 0, 0.5}, {"c", 0, 0.9}, {"b", 0, 0.1},
                                        {"e", 1, 0.2}, {"f", 1, 0.3}};
  const auto sel = stratified_select(pool, 3);
  std::vector<std::string> keys;
  for (auto i : sel.indices) keys.push_back(pool[i].key);
  EXPECT_EQ(keys, (std::vector<std::string>{"c", "a", "f"}));
}

TEST(StratifiedSelectProperty, RatioTopQuotaAndScaleInvariance) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const auto neg = rng() % 50, pos = rng() % 50;
    if (neg + pos == 0) continue;
    auto pool = scored_pool(neg, pos, rng);
    if (trial % 3 == 0)
      for (auto& p : pool) p.phi = std::round(p.phi * 4) / 4;  // plenty of ties
    const auto budget = 1 + rng() % (neg + pos);
    const auto sel = stratified_select(pool, budget);
    ASSERT_EQ(sel.indices.size(), budget);

    std::size_t chosen_pos = 0;
    for (auto i : sel.indices) chosen_pos += pool[i].label;
    const double ideal = static_cast<double>(budget) * static_cast<double>(pos) / static_cast<double>(neg + pos);
    ASSERT_LE(std::abs(static_cast<double>(chosen_pos) - ideal), 1.0);

    // Each class quota equals the head of that class under a full sort.
    for (int c = 0; c < 2; ++c) {
      std::vector<const ScoredItem*> members;
      for (const auto& p : pool)
        if (p.label == c) members.push_back(&p);
      std::sort(members.begin(), members.end(), [](auto a, auto b) {
        return a->phi != b->phi ? a->phi > b->phi : a->key < b->key;
      });
      std::vector<std::string> expect, got;
      for (std::size_t j = 0; j < sel.quotas[static_cast<std::size_t>(c)]; ++j) expect.push_back(members[j]->key);
      for (auto i : sel.indices)
        if (pool[i].label == c) got.push_back(pool[i].key);
      ASSERT_EQ(got, expect);
    }

    auto scaled = pool;
    const double factor = std::exp2(static_cast<double>(rng() % 20) - 10.0);
    for (auto& p : scaled) p.phi *= factor;
    ASSERT_EQ(stratified_select(scaled, budget).indices, sel.indices);
  }
}

TEST(Histogram, Bins) {
  const std::vector<double> same = {0.2, 0.2, 0.2};
  const auto flat = score_histogram(same, std::vector<int>{1, 0, 1}, 4);
  EXPECT_EQ(flat.bins[0].count, 3u);
  EXPECT_EQ(flat.bins[0].positives, 2u);
  EXPECT_NEAR(flat.positive_ratio(), 2.0 / 3.0, 1e-15);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> low(-1, 0.1), high(1, 0.1);
  std::vector<double> phi;
  for (int i = 0; i < 1000; ++i) phi.push_back(i % 2 ? low(rng) : high(rng));
  const auto h = score_histogram(phi, {}, 10);
  std::size_t total = 0;
  for (const auto& b : h.bins) total += b.count;
  EXPECT_EQ(total, 1000u);
  EXPECT_GT(h.bins.front().count + h.bins[1].count, 100u);
  EXPECT_GT(h.bins.back().count + h.bins[8].count, 100u);
  EXPECT_LT(h.bins[4].count + h.bins[5].count, 20u);
  EXPECT_EQ(h.bins.back().high, *std::max_element(phi.begin(), phi.end()));
  EXPECT_THROW(score_histogram(phi, {}, 0), DataError);
}

TEST(Histogram, CsvLayouts) {
  TempDir dir;
  const std::vector<double> phi = {0.0, 1.0, 0.5, 0.25};
  const auto h = score_histogram(phi, std::vector<int>{0, 1, 1, 0}, 2);
  write_histogram_csv(h, dir.path / "h.csv");
  write_label_ratio_csv(h, dir.path / "r.csv");
  EXPECT_EQ(read_file(dir.path / "h.csv"), "bin_low,bin_high,count,positive_count\n0,0.5,2,0\n0.5,1,2,2\n");
  EXPECT_EQ(read_file(dir.path / "r.csv"), "pseudo_label,count,ratio\n0,2,0.500000\n1,2,0.500000\n");
  const std::vector<ScoreRow> rows = {{"ds/3/0", 1, 0.75, -0.125}};
  write_scores_csv(rows, dir.path / "s.csv");
  const auto scores = read_file(dir.path / "s.csv");
  EXPECT_EQ(scores.substr(0, scores.find('\n')), "provenance_key,pseudo_label,confidence,phi");
}
