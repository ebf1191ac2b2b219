#pragma once

// Class-relevance primitives shared by training (neighbour retrieval for
// distillation) and inference: indicator bitsets with per-level top-m%
// retention, bitwise topic overlap, relevance matching and z-score fusion.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "toter/taxonomy.hpp"

namespace toter {

inline constexpr double kDefaultRetentionPercent = 10.0;

/// Fixed-length bitset over dense class indices.
class IndicatorVector {
 public:
  IndicatorVector() = default;
  explicit IndicatorVector(std::size_t nbits) : nbits_(nbits), words_((nbits + 63) / 64, 0) {}

  std::size_t size() const { return nbits_; }
  std::span<const std::uint64_t> words() const { return words_; }
  std::span<std::uint64_t> words() { return words_; }

  void set(std::size_t j) { words_.at(j / 64) |= std::uint64_t{1} << (j % 64); }
  void reset(std::size_t j) { words_.at(j / 64) &= ~(std::uint64_t{1} << (j % 64)); }
  bool test(std::size_t j) const { return (words_.at(j / 64) >> (j % 64)) & 1U; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  /// Indices of set bits, ascending.
  std::vector<std::size_t> members() const {
    std::vector<std::size_t> out;
    for (std::size_t w = 0; w < words_.size(); ++w) {
      for (std::uint64_t x = words_[w]; x != 0; x &= x - 1) {
        out.push_back(w * 64 + static_cast<std::size_t>(std::countr_zero(x)));
      }
    }
    return out;
  }

  friend bool operator==(const IndicatorVector&, const IndicatorVector&) = default;

 private:
  std::size_t nbits_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Top-down retention: at each level, among classes whose parent is retained,
/// keep the ceil(m/100 * n_level) highest-scoring ones (ties: smaller index).
inline IndicatorVector relevance_indicator(std::span<const double> relevance, const TopicTaxonomy& tax,
                                           double m_percent = kDefaultRetentionPercent) {
  if (relevance.size() != tax.size()) {
    throw InputError("relevance_indicator: " + std::to_string(relevance.size()) + " scores for " +
                     std::to_string(tax.size()) + " classes");
  }
  if (!(m_percent > 0.0 && m_percent <= 100.0)) throw InputError("relevance_indicator: m must lie in (0, 100]");
  IndicatorVector bits(tax.size());
  bits.set(tax.root());
  std::vector<std::size_t> eligible;
  for (int level = 1; level <= tax.depth(); ++level) {
    const auto& members = tax.level_members(level);
    const std::size_t quota = ceil_count(m_percent / 100.0 * static_cast<double>(members.size()));
    eligible.clear();
    for (auto j : members) {
      if (bits.test(tax.at(j).parent)) eligible.push_back(j);
    }
    const std::size_t keep = std::min(quota, eligible.size());
    std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(keep), eligible.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (relevance[a] != relevance[b]) return relevance[a] > relevance[b];
                        return a < b;
                      });
    for (std::size_t i = 0; i < keep; ++i) bits.set(eligible[i]);
  }
  return bits;
}

/// Which taxonomy levels may contribute bits (granularity ablation).
enum class LevelFocus { all, low, high };

inline LevelFocus parse_level_focus(std::string_view s) {
  if (s == "all") return LevelFocus::all;
  if (s == "low") return LevelFocus::low;
  if (s == "high") return LevelFocus::high;
  throw UsageError("unknown level focus '" + std::string(s) + "' (expected all|low|high)");
}

inline std::string_view to_string(LevelFocus f) {
  switch (f) {
    case LevelFocus::low: return "low";
    case LevelFocus::high: return "high";
    default: return "all";
  }
}

/// Clears bits outside the focused levels: `low` keeps the two deepest
/// levels, `high` the top three. The result is no longer hierarchically
/// consistent; it is only fed to overlap and matching.
inline IndicatorVector apply_level_focus(IndicatorVector bits, const TopicTaxonomy& tax, LevelFocus focus) {
  if (focus == LevelFocus::all) return bits;
  for (auto j : bits.members()) {
    const int level = tax.at(j).level;
    const bool keep = focus == LevelFocus::low ? level >= tax.depth() - 1 : level <= 2;
    if (!keep) bits.reset(j);
  }
  return bits;
}

/// popcount(AND(a, b)).
inline std::size_t topic_overlap(const IndicatorVector& a, const IndicatorVector& b) {
  if (a.size() != b.size()) {
    throw InputError("topic_overlap: bitset length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  const auto wa = a.words();
  const auto wb = b.words();
  std::size_t n = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) n += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
  return n;
}

/// Inner product of the masked relevance vectors (yq . bq) and (yd . bd).
inline double crm_score(std::span<const double> yq, const IndicatorVector& bq, std::span<const double> yd,
                        const IndicatorVector& bd) {
  if (yq.size() != bq.size() || yd.size() != bd.size() || yq.size() != yd.size()) {
    throw InputError("crm_score: length mismatch");
  }
  const auto wq = bq.words();
  const auto wd = bd.words();
  double s = 0.0;
  for (std::size_t w = 0; w < wq.size(); ++w) {
    for (std::uint64_t x = wq[w] & wd[w]; x != 0; x &= x - 1) {
      const auto j = w * 64 + static_cast<std::size_t>(std::countr_zero(x));
      s += yq[j] * yd[j];
    }
  }
  return s;
}

/// (v - mean) / population stdev; a constant vector maps to zeros.
inline std::vector<double> zscore(std::span<const double> v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == *hi) return out;
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) / sd;
  return out;
}

/// z(s_de) + weight * z(s_crm) over one candidate set.
inline std::vector<double> combine(std::span<const double> scores_de, std::span<const double> scores_crm,
                                   double crm_weight = 1.0) {
  if (scores_de.size() != scores_crm.size()) throw InputError("combine: length mismatch");
  auto a = zscore(scores_de);
  const auto b = zscore(scores_crm);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += crm_weight * b[i];
  return a;
}

}  // namespace toter
