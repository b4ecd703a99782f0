#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "prequel/error.hpp"
#include "prequel/text.hpp"

namespace prequel::metrics {

// ---------------------------------------------------------------------------
// chrF++
// ---------------------------------------------------------------------------

struct ChrfConfig {
  int char_ngram_max = 6;
  int word_ngram_max = 2;
  double beta = 2.0;

  void validate() const {
    if (char_ngram_max <= 0 || word_ngram_max < 0 || !(beta > 0.0))
      throw PreconditionError("invalid chrF++ configuration");
  }
};

// Matched / hypothesis / reference n-gram totals for one order.
struct NgramStats {
  std::size_t matched = 0;
  std::size_t hyp_total = 0;
  std::size_t ref_total = 0;
};

namespace detail {

template <class Key, class Seq, class MakeKey>
NgramStats count_order(const Seq& hyp, const Seq& ref, std::size_t n, MakeKey make_key) {
  NgramStats st;
  if (ref.size() >= n) st.ref_total = ref.size() - n + 1;
  if (hyp.size() >= n) st.hyp_total = hyp.size() - n + 1;
  if (st.ref_total == 0 || st.hyp_total == 0) return st;
  std::unordered_map<Key, std::size_t> ref_counts;
  for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[make_key(ref, i, n)];
  for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
    auto it = ref_counts.find(make_key(hyp, i, n));
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++st.matched;
    }
  }
  return st;
}

inline std::u32string char_key(const std::u32string& s, std::size_t i, std::size_t n) {
  return s.substr(i, n);
}

inline std::string word_key(const std::vector<std::string>& w, std::size_t i, std::size_t n) {
  std::string key = w[i];
  for (std::size_t k = 1; k < n; ++k) {
    key.push_back('\x1f');
    key += w[i + k];
  }
  return key;
}

}  // namespace detail

// Per-order statistics: character orders 1..char_ngram_max (whitespace
// removed) followed by word orders 1..word_ngram_max.
inline std::vector<NgramStats> chrf_statistics(std::string_view hypothesis, std::string_view reference,
                                               const ChrfConfig& cfg = {}) {
  const auto hyp_words = text::split_words(hypothesis);
  const auto ref_words = text::split_words(reference);
  std::string hyp_joined, ref_joined;
  for (const auto& w : hyp_words) hyp_joined += w;
  for (const auto& w : ref_words) ref_joined += w;
  const auto hyp_chars = text::code_points(hyp_joined);
  const auto ref_chars = text::code_points(ref_joined);

  std::vector<NgramStats> stats;
  stats.reserve(static_cast<std::size_t>(cfg.char_ngram_max + cfg.word_ngram_max));
  for (int n = 1; n <= cfg.char_ngram_max; ++n)
    stats.push_back(detail::count_order<std::u32string>(hyp_chars, ref_chars, static_cast<std::size_t>(n),
                                                        detail::char_key));
  for (int n = 1; n <= cfg.word_ngram_max; ++n)
    stats.push_back(detail::count_order<std::string>(hyp_words, ref_words, static_cast<std::size_t>(n),
                                                     detail::word_key));
  return stats;
}

// Precision and recall are averaged over the orders whose reference n-gram
// set is non-empty, then combined into F_beta.
inline double chrf_from_statistics(std::span<const NgramStats> stats, double beta) {
  double precision = 0.0, recall = 0.0;
  std::size_t orders = 0;
  for (const auto& st : stats) {
    if (st.ref_total == 0) continue;
    ++orders;
    if (st.hyp_total > 0) precision += static_cast<double>(st.matched) / static_cast<double>(st.hyp_total);
    recall += static_cast<double>(st.matched) / static_cast<double>(st.ref_total);
  }
  if (orders == 0) return 0.0;
  precision /= static_cast<double>(orders);
  recall /= static_cast<double>(orders);
  if (precision + recall <= 0.0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * precision * recall / (b2 * precision + recall);
}

// chrF++ on [0, 1]. Two empty strings score 1, exactly one empty string 0.
inline double chrf_pp(std::string_view hypothesis, std::string_view reference, const ChrfConfig& cfg = {}) {
  cfg.validate();
  const bool hyp_empty = text::trim(hypothesis).empty();
  const bool ref_empty = text::trim(reference).empty();
  if (hyp_empty && ref_empty) return 1.0;
  if (hyp_empty || ref_empty) return 0.0;
  const auto stats = chrf_statistics(hypothesis, reference, cfg);
  return chrf_from_statistics(stats, cfg.beta);
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw PreconditionError("pearson: length mismatch (" + std::to_string(xs.size()) + " vs " +
                            std::to_string(ys.size()) + ")");
  if (xs.size() < 2) throw PreconditionError("pearson: need at least two observations");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedStatistic("pearson: constant input vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Two-sided p-value of H0: rho = 0, via Student's t with n - 2 dof.
inline double pearson_p_value(double r, std::size_t n) {
  if (n < 3) throw PreconditionError("pearson_p_value: need at least three observations");
  const double ar = std::abs(r);
  if (ar >= 1.0) return 0.0;
  const double dof = static_cast<double>(n - 2);
  const double t = ar * std::sqrt(dof / (1.0 - ar * ar));
  boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

// ---------------------------------------------------------------------------
// Precision / recall
// ---------------------------------------------------------------------------

struct PRPoint {
  double threshold;  // accept when score >= threshold
  double precision;
  double recall;
};

struct PRCurve {
  std::vector<PRPoint> points;  // thresholds ascending
  double base_rate = 0.0;
  std::size_t positives = 0;
  std::size_t total = 0;
};

inline PRCurve pr_curve(std::span<const double> scores, std::span<const double> gold, double gold_threshold) {
  if (scores.size() != gold.size()) throw PreconditionError("pr_curve: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::size_t positives = 0;
  for (double g : gold) positives += g >= gold_threshold ? 1 : 0;
  if (positives == 0 || positives == gold.size())
    throw PreconditionError("pr_curve: gold labels are all on one side of the threshold");

  PRCurve curve;
  curve.positives = positives;
  curve.total = gold.size();
  curve.base_rate = static_cast<double>(positives) / static_cast<double>(gold.size());
  std::size_t tp = 0, accepted = 0, i = 0;
  std::vector<PRPoint> desc;
  while (i < order.size()) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      tp += gold[order[i]] >= gold_threshold ? 1 : 0;
      ++accepted;
      ++i;
    }
    desc.push_back({t, static_cast<double>(tp) / static_cast<double>(accepted),
                    static_cast<double>(tp) / static_cast<double>(positives)});
  }
  curve.points.assign(desc.rbegin(), desc.rend());
  return curve;
}

// ---------------------------------------------------------------------------
// Multiple comparisons
// ---------------------------------------------------------------------------

inline double bonferroni_threshold(double alpha, std::size_t tests) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw PreconditionError("alpha must be in (0, 1)");
  if (tests == 0) throw PreconditionError("bonferroni: no tests");
  return alpha / static_cast<double>(tests);
}

// Significant iff p < alpha / m.
inline std::map<std::string, bool> bonferroni(const std::map<std::string, double>& pvalues, double alpha) {
  const double threshold = bonferroni_threshold(alpha, pvalues.size());
  std::map<std::string, bool> out;
  for (const auto& [name, p] : pvalues) out[name] = p < threshold;
  return out;
}

}  // namespace prequel::metrics
