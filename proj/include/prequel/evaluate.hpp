#pragma once

// Report computations: correlation against gold, the length baseline, routing
// (precision/recall) reports, cross-system and cross-language comparisons,
// and per-domain evaluation.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prequel/corpus.hpp"
#include "prequel/error.hpp"
#include "prequel/metrics.hpp"
#include "prequel/random.hpp"
#include "prequel/text.hpp"

namespace prequel::evaluate {

using json = nlohmann::json;

// Anything that scores a sentence: a model, an ensemble, a lambda.
template <class P>
concept Predictor = requires(const P& p, std::string_view s) {
  { p(s) } -> std::convertible_to<double>;
};

template <Predictor P>
std::vector<double> predict_all(const P& predictor, std::span<const std::string> texts) {
  std::vector<double> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(static_cast<double>(predictor(t)));
  return out;
}

struct EvalReport {
  std::string dataset;
  std::size_t n = 0;
  double pearson_r = 0.0;
  std::vector<double> per_seed_r;
  std::optional<double> baseline_r;
  std::string notes;

  double mean_seed_r() const {
    if (per_seed_r.empty()) return pearson_r;
    double s = 0.0;
    for (double r : per_seed_r) s += r;
    return s / static_cast<double>(per_seed_r.size());
  }

  // Sample standard deviation across seeds; 0 for fewer than two seeds.
  double std_seed_r() const {
    if (per_seed_r.size() < 2) return 0.0;
    const double m = mean_seed_r();
    double s = 0.0;
    for (double r : per_seed_r) s += (r - m) * (r - m);
    return std::sqrt(s / static_cast<double>(per_seed_r.size() - 1));
  }

  json to_json() const {
    json j{{"dataset", dataset}, {"n", n}, {"pearson_r", pearson_r}, {"per_seed_r", per_seed_r},
           {"mean_r", mean_seed_r()}, {"std_r", std_seed_r()}, {"notes", notes}};
    j["baseline_r"] = baseline_r ? json(*baseline_r) : json(nullptr);
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "dataset   " << dataset << "\n"
       << "n         " << n << "\n"
       << "pearson_r " << pearson_r << "\n";
    if (!per_seed_r.empty()) os << "seeds     " << mean_seed_r() << " +- " << std_seed_r() << " (" << per_seed_r.size() << ")\n";
    if (baseline_r) os << "baseline  " << *baseline_r << "\n";
    return os.str();
  }
};

inline EvalReport evaluate(std::span<const double> preds, std::span<const double> gold, std::string dataset = {}) {
  EvalReport rep;
  rep.dataset = std::move(dataset);
  rep.n = preds.size();
  rep.pearson_r = metrics::pearson(preds, gold);
  return rep;
}

enum class LengthUnit { characters, tokens };

// Negated sentence length: longer sentences are predicted to be harder.
inline std::vector<double> length_baseline(std::span<const std::string> texts, LengthUnit unit = LengthUnit::characters) {
  std::vector<double> out;
  out.reserve(texts.size());
  for (const auto& t : texts)
    out.push_back(-static_cast<double>(unit == LengthUnit::characters ? text::char_count(t) : text::split_words(t).size()));
  return out;
}

// ---------------------------------------------------------------------------
// Cross-system generalization
// ---------------------------------------------------------------------------

struct CrossSystemReport {
  double r_on_system_a = 0.0;
  double r_on_system_b = 0.0;
  double label_correlation_ab = 0.0;

  // The correlation one would expect on system B if the model only tracked
  // what the two systems share.
  double product_bound() const { return label_correlation_ab * r_on_system_a; }
  bool exceeds_bound() const { return r_on_system_b > product_bound(); }

  json to_json() const {
    return {{"r_on_system_a", r_on_system_a}, {"r_on_system_b", r_on_system_b},
            {"label_correlation_ab", label_correlation_ab}, {"product_bound", product_bound()},
            {"exceeds_bound", exceeds_bound()}};
  }
};

// test_a and test_b must contain the same source sentences (any order),
// labelled from two different MT systems.
template <Predictor P>
CrossSystemReport cross_system_report(const P& predictor, const corpus::Dataset& test_a, const corpus::Dataset& test_b,
                                      const std::string& label = "da") {
  if (test_a.size() != test_b.size())
    throw PreconditionError("cross-system test sets differ in size");
  std::unordered_map<std::string, double> b_by_text;
  for (const auto& ex : test_b.examples)
    if (!b_by_text.emplace(ex.source.text, ex.label(label)).second)
      throw PreconditionError("duplicate source in system-B test set: " + ex.source.text);
  std::vector<double> preds, la, lb;
  for (const auto& ex : test_a.examples) {
    auto it = b_by_text.find(ex.source.text);
    if (it == b_by_text.end()) throw PreconditionError("source missing from system-B test set: " + ex.source.text);
    preds.push_back(static_cast<double>(predictor(ex.source.text)));
    la.push_back(ex.label(label));
    lb.push_back(it->second);
  }
  CrossSystemReport rep;
  rep.r_on_system_a = metrics::pearson(preds, la);
  rep.r_on_system_b = metrics::pearson(preds, lb);
  rep.label_correlation_ab = metrics::pearson(la, lb);
  return rep;
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

struct RoutingReport {
  metrics::PRCurve curve;
  double gold_threshold = 0.0;
  double operating_threshold = 0.0;
  std::vector<bool> decisions;  // translate automatically iff pred >= operating_threshold
  double precision = 0.0;
  double recall = 0.0;

  json to_json() const {
    json pts = json::array();
    for (const auto& p : curve.points) pts.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
    std::size_t accepted = static_cast<std::size_t>(std::count(decisions.begin(), decisions.end(), true));
    return {{"gold_threshold", gold_threshold}, {"base_rate", curve.base_rate}, {"operating_threshold", operating_threshold},
            {"precision", precision}, {"recall", recall}, {"accepted", accepted}, {"n", decisions.size()}, {"curve", pts}};
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "threshold,precision,recall\n";
    for (const auto& p : curve.points) os << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
    return os.str();
  }
};

// Curve point with the highest F1; ties go to the higher threshold.
inline double best_f1_threshold(const metrics::PRCurve& curve) {
  double best_f1 = -1.0, best_t = curve.points.front().threshold;
  for (const auto& p : curve.points) {
    const double f1 = p.precision + p.recall > 0.0 ? 2.0 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
    if (f1 >= best_f1) {
      best_f1 = f1;
      best_t = p.threshold;
    }
  }
  return best_t;
}

inline RoutingReport routing_report(std::span<const double> preds, std::span<const double> gold, double da_threshold,
                                    std::optional<double> operating_threshold = std::nullopt) {
  RoutingReport rep;
  rep.curve = metrics::pr_curve(preds, gold, da_threshold);
  rep.gold_threshold = da_threshold;
  rep.operating_threshold = operating_threshold ? *operating_threshold : best_f1_threshold(rep.curve);
  std::size_t tp = 0, accepted = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool accept = preds[i] >= rep.operating_threshold;
    rep.decisions.push_back(accept);
    if (accept) {
      ++accepted;
      tp += gold[i] >= da_threshold ? 1 : 0;
    }
  }
  rep.precision = accepted ? static_cast<double>(tp) / static_cast<double>(accepted) : 0.0;
  rep.recall = static_cast<double>(tp) / static_cast<double>(rep.curve.positives);
  return rep;
}

// Comparison predictor drawing a uniform score in [0, 100] per sentence.
inline std::vector<double> random_scores(std::size_t n, std::uint64_t seed = 0) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = rng.uniform(0.0, 100.0);
  return out;
}

// ---------------------------------------------------------------------------
// Cross-target-language comparison
// ---------------------------------------------------------------------------

struct CrossLanguageReport {
  std::string lang_x, lang_y;
  // r(model_i, gold_j); row = model, column = gold.
  double r[2][2] = {{0, 0}, {0, 0}};
  double model_model_r = 0.0;
  double gold_gold_r = 0.0;

  json to_json() const {
    return {{"languages", {lang_x, lang_y}},
            {"model_vs_gold", {{r[0][0], r[0][1]}, {r[1][0], r[1][1]}}},
            {"model_model_r", model_model_r},
            {"gold_gold_r", gold_gold_r}};
  }

  std::string to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "model \\ gold\t" << lang_x << " DA\t" << lang_y << " DA\n";
    os << "model " << lang_x << "\t" << r[0][0] << "\t" << r[0][1] << "\n";
    os << "model " << lang_y << "\t" << r[1][0] << "\t" << r[1][1] << "\n";
    os << "model-model r\t" << model_model_r << "\n";
    return os.str();
  }
};

inline CrossLanguageReport cross_language_report(std::span<const double> preds_x, std::span<const double> preds_y,
                                                 std::span<const double> gold_x, std::span<const double> gold_y,
                                                 std::string lang_x = "x", std::string lang_y = "y") {
  const std::size_t n = preds_x.size();
  if (preds_y.size() != n || gold_x.size() != n || gold_y.size() != n)
    throw PreconditionError("cross-language inputs must share one source list");
  CrossLanguageReport rep{std::move(lang_x), std::move(lang_y)};
  const std::span<const double> preds[2] = {preds_x, preds_y};
  const std::span<const double> golds[2] = {gold_x, gold_y};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) rep.r[i][j] = metrics::pearson(preds[i], golds[j]);
  rep.model_model_r = metrics::pearson(preds_x, preds_y);
  rep.gold_gold_r = metrics::pearson(gold_x, gold_y);
  return rep;
}

template <Predictor PX, Predictor PY>
CrossLanguageReport cross_language_report(const PX& model_x, const PY& model_y, std::span<const double> gold_x,
                                          std::span<const double> gold_y, std::span<const std::string> shared_sources,
                                          std::string lang_x = "x", std::string lang_y = "y") {
  if (shared_sources.size() != gold_x.size() || shared_sources.size() != gold_y.size())
    throw PreconditionError("cross-language gold lists must align with the shared sources");
  const auto px = predict_all(model_x, shared_sources);
  const auto py = predict_all(model_y, shared_sources);
  return cross_language_report(px, py, gold_x, gold_y, std::move(lang_x), std::move(lang_y));
}

// ---------------------------------------------------------------------------
// Grouped (per-domain) evaluation
// ---------------------------------------------------------------------------

struct GroupResult {
  std::size_t n = 0;
  std::optional<double> r;
  std::string reason;  // why r is undefined
};

inline std::map<std::string, GroupResult> grouped_eval(std::span<const double> preds, std::span<const double> gold,
                                                       std::span<const std::string> tags) {
  if (preds.size() != gold.size() || preds.size() != tags.size())
    throw PreconditionError("grouped_eval: inputs differ in length");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (tags[i].empty()) throw PreconditionError("grouped_eval: example " + std::to_string(i) + " has no tag");
    groups[tags[i]].first.push_back(preds[i]);
    groups[tags[i]].second.push_back(gold[i]);
  }
  std::map<std::string, GroupResult> out;
  for (const auto& [tag, pg] : groups) {
    GroupResult g;
    g.n = pg.first.size();
    if (g.n < 2) {
      g.reason = "fewer than two examples";
    } else {
      try {
        g.r = metrics::pearson(pg.first, pg.second);
      } catch (const UndefinedStatistic& e) {
        g.reason = e.what();
      }
    }
    out[tag] = std::move(g);
  }
  return out;
}

}  // namespace prequel::evaluate
