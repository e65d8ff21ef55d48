#include "anypredict/valuation.hpp"

#include <fstream>
#include <limits>

#include "anypredict/csv.hpp"

namespace anypredict::valuation {

std::vector<std::size_t> largest_remainder(std::span<const std::size_t> counts, std::size_t budget) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  std::vector<std::size_t> quota(counts.size(), 0);
  if (total == 0) return quota;
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (numerator remainder, class)
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto num = counts[c] * budget;
    quota[c] = num / total;
    assigned += quota[c];
    remainders.emplace_back(num % total, c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < budget && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];
  return quota;
}

Selection stratified_select(std::span<const ScoredItem> scored, std::size_t budget) {
  if (budget > scored.size())
    throw DataError(fmt::format("budget {} exceeds the {} scored samples", budget, scored.size()));

  std::vector<std::vector<std::size_t>> members(2);
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const int label = scored[i].label;
    if (label != 0 && label != 1) throw DataError("pseudo-labels must be 0 or 1");
    members[static_cast<std::size_t>(label)].push_back(i);
  }
  const std::vector<std::size_t> counts = {members[0].size(), members[1].size()};

  Selection sel;
  sel.quotas = largest_remainder(counts, budget);
  // Clip quotas that exceed their class and hand the surplus to the other classes.
  std::size_t surplus = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (sel.quotas[c] > counts[c]) {
      sel.warnings.push_back(fmt::format("class {} quota {} clipped to its {} members", c, sel.quotas[c], counts[c]));
      surplus += sel.quotas[c] - counts[c];
      sel.quotas[c] = counts[c];
    }
  }
  for (std::size_t c = 0; surplus > 0 && c < counts.size(); ++c) {
    const auto room = std::min(surplus, counts[c] - sel.quotas[c]);
    sel.quotas[c] += room;
    surplus -= room;
  }

  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& m = members[c];
    std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) {
      if (scored[a].phi != scored[b].phi) return scored[a].phi > scored[b].phi;
      return scored[a].key < scored[b].key;
    });
    sel.indices.insert(sel.indices.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(sel.quotas[c]));
  }
  return sel;
}

ScoreHistogram score_histogram(std::span<const double> phi, std::span<const int> pseudo_labels, std::size_t bins) {
  if (bins == 0) throw DataError("histogram needs at least one bin");
  if (!pseudo_labels.empty() && pseudo_labels.size() != phi.size())
    throw DimensionError("pseudo-label count differs from score count");
  ScoreHistogram h;
  h.total = phi.size();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double p : phi) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  if (phi.empty()) lo = hi = 0.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  h.bins.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h.bins[b].low = lo + width * static_cast<double>(b);
    h.bins[b].high = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (std::size_t i = 0; i < phi.size(); ++i) {
    std::size_t b = 0;
    if (width > 0) b = std::min(bins - 1, static_cast<std::size_t>((phi[i] - lo) / width));
    ++h.bins[b].count;
    const bool positive = !pseudo_labels.empty() && pseudo_labels[i] == 1;
    h.bins[b].positives += positive;
    h.positives += positive;
  }
  return h;
}

void write_histogram_csv(const ScoreHistogram& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"bin_low", "bin_high", "count", "positive_count"});
  for (const auto& b : h.bins)
    csv::write_row(out, {fmt::format("{:.17g}", b.low), fmt::format("{:.17g}", b.high), std::to_string(b.count),
                         std::to_string(b.positives)});
}

void write_label_ratio_csv(const ScoreHistogram& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"pseudo_label", "count", "ratio"});
  const auto negatives = h.total - h.positives;
  const double denom = h.total ? static_cast<double>(h.total) : 1.0;
  csv::write_row(out, {"0", std::to_string(negatives), fmt::format("{:.6f}", static_cast<double>(negatives) / denom)});
  csv::write_row(out, {"1", std::to_string(h.positives), fmt::format("{:.6f}", static_cast<double>(h.positives) / denom)});
}

void write_scores_csv(std::span<const ScoreRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"provenance_key", "pseudo_label", "confidence", "phi"});
  for (const auto& r : rows)
    csv::write_row(out, {r.key, std::to_string(r.pseudo_label), fmt::format("{:.17g}", r.confidence),
                         fmt::format("{:.17g}", r.phi)});
}

}  // namespace anypredict::valuation
