#pragma once

#include <algorithm>
#include <cstddef>
#include <iterator>
#include <numeric>
#include <ranges>
#include <string_view>
#include <vector>

namespace anypredict {

// Levenshtein distance with unit insert/delete/substitute costs over any pair of
// random-access ranges with comparable elements. Two-row dynamic programme.
template <std::ranges::random_access_range A, std::ranges::random_access_range B>
std::size_t edit_distance(const A& a, const B& b) {
  const auto n = static_cast<std::size_t>(std::ranges::size(a));
  const auto m = static_cast<std::size_t>(std::ranges::size(b));
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  auto ai = std::ranges::begin(a);
  for (std::size_t i = 1; i <= n; ++i, ++ai) {
    cur[0] = i;
    auto bj = std::ranges::begin(b);
    for (std::size_t j = 1; j <= m; ++j, ++bj) {
      const std::size_t subst = prev[j - 1] + (*ai == *bj ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  return edit_distance<std::string_view, std::string_view>(a, b);
}

// 1 - D / max(len a, len b); two empty strings score 1.
template <typename Scalar = double>
Scalar ned(std::string_view a, std::string_view b) {
  const auto longest = std::max(a.size(), b.size());
  if (longest == 0) return Scalar(1);
  return Scalar(1) - static_cast<Scalar>(edit_distance(a, b)) / static_cast<Scalar>(longest);
}

}  // namespace anypredict
