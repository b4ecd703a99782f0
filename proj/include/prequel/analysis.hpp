#pragma once

// Introspection: which surface features a predictor tracks, how it reacts to
// text perturbations, and how it scores word-order challenge sets.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prequel/error.hpp"
#include "prequel/evaluate.hpp"
#include "prequel/io.hpp"
#include "prequel/metrics.hpp"
#include "prequel/ngram_lm.hpp"
#include "prequel/random.hpp"
#include "prequel/text.hpp"
#include "prequel/transport.hpp"

namespace prequel::analysis {

using json = nlohmann::json;
using evaluate::Predictor;

// Left-aligned plain-text table.
inline std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  auto widen = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], text::char_count(r[i]));
  };
  widen(header);
  for (const auto& r : rows) widen(r);
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      os << r[i];
      if (i + 1 < r.size()) os << std::string(width[i] - text::char_count(r[i]) + 2, ' ');
    }
    os << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  os << std::string(total > 2 ? total - 2 : 0, '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

struct FeatureVector {
  std::map<std::string, double> values;
  std::set<std::string> missing;  // requested but unavailable for this text

  bool has(const std::string& name) const { return values.count(name) > 0; }
  double at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw PreconditionError("feature '" + name + "' is not present");
    return it->second;
  }
  json to_json() const { return {{"features", values}, {"missing", missing}}; }
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
  // Names this extractor produces; marked missing when extraction fails.
  virtual std::vector<std::string> feature_names() const = 0;
  virtual void extract(std::string_view text, FeatureVector& out) const = 0;
};

class LengthExtractor : public FeatureExtractor {
 public:
  std::string name() const override { return "length"; }
  std::string version() const override { return "1"; }
  std::vector<std::string> feature_names() const override { return {"length"}; }
  void extract(std::string_view text, FeatureVector& out) const override {
    out.values["length"] = static_cast<double>(text::char_count(text));
  }
};

class NgramExtractor : public FeatureExtractor {
 public:
  explicit NgramExtractor(std::shared_ptr<const NgramLM> lm) : lm_(std::move(lm)) {
    if (!lm_) throw PreconditionError("n-gram extractor needs a language model");
  }
  std::string name() const override { return "ngram-lm"; }
  std::string version() const override { return "1"; }
  std::vector<std::string> feature_names() const override {
    std::vector<std::string> out;
    for (int n = 1; n <= lm_->max_order(); ++n) out.push_back(NgramLM::feature_name(n));
    return out;
  }
  void extract(std::string_view text, FeatureVector& out) const override {
    for (int n = 1; n <= lm_->max_order(); ++n) out.values[NgramLM::feature_name(n)] = lm_->mean_log_prob(text, n);
  }

 private:
  std::shared_ptr<const NgramLM> lm_;
};

// Parser or neural-LM features served out of process.
// {id, text} -> {id, features: {name: real}}
class ExternalFeatureExtractor : public FeatureExtractor {
 public:
  ExternalFeatureExtractor(std::string endpoint, std::vector<std::string> names, std::string version = "unversioned")
      : client_(std::make_unique<transport::JsonClient>(std::move(endpoint))),
        names_(std::move(names)),
        version_(std::move(version)) {}

  std::string name() const override { return "external:" + client_->endpoint(); }
  std::string version() const override { return version_; }
  std::vector<std::string> feature_names() const override { return names_; }

  void extract(std::string_view text, FeatureVector& out) const override {
    const json resp = client_->call(json{{"id", "feat-" + io::content_hash(text)}, {"text", text}});
    if (resp.contains("error")) throw TransportError("feature client error: " + resp["error"].dump());
    const auto& feats = resp.at("features");
    for (const auto& n : names_) {
      auto it = feats.find(n);
      if (it != feats.end() && it->is_number() && std::isfinite(it->get<double>()))
        out.values[n] = it->get<double>();
      else
        out.missing.insert(n);
    }
  }

 private:
  std::unique_ptr<transport::JsonClient> client_;
  std::vector<std::string> names_;
  std::string version_;
};

// A failing extractor marks its features missing; the others still run.
inline FeatureVector extract_features(std::string_view text, std::span<const FeatureExtractor* const> extractors) {
  FeatureVector fv;
  for (const auto* ex : extractors) {
    FeatureVector part;
    try {
      ex->extract(text, part);
    } catch (const std::exception&) {
      for (const auto& n : ex->feature_names()) fv.missing.insert(n);
      continue;
    }
    for (auto& [k, v] : part.values) {
      if (std::isfinite(v))
        fv.values[k] = v;
      else
        fv.missing.insert(k);
    }
    fv.missing.insert(part.missing.begin(), part.missing.end());
  }
  return fv;
}

struct FeatureRow {
  std::string feature;
  std::size_t n = 0;
  std::optional<double> r_preds, p_preds, r_gold, p_gold;
  bool significant = false;
  bool included = false;
  bool overestimated = false;  // |r_preds| > |r_gold|
  std::string excluded_reason;
};

struct FeatureReport {
  double alpha = 0.05;
  double min_abs_r = 0.2;
  std::size_t tests = 0;
  double p_threshold = 0.0;
  std::vector<FeatureRow> rows;
  json metadata;

  const FeatureRow& row(const std::string& feature) const {
    for (const auto& r : rows)
      if (r.feature == feature) return r;
    throw PreconditionError("feature '" + feature + "' is not in the report");
  }

  json to_json() const {
    json out = json::array();
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    for (const auto& r : rows)
      out.push_back({{"feature", r.feature}, {"n", r.n}, {"r_preds", opt(r.r_preds)}, {"p_preds", opt(r.p_preds)},
                     {"r_gold", opt(r.r_gold)}, {"p_gold", opt(r.p_gold)}, {"significant", r.significant},
                     {"included", r.included}, {"overestimated", r.overestimated},
                     {"excluded_reason", r.excluded_reason}});
    return {{"alpha", alpha}, {"min_abs_r", min_abs_r}, {"tests", tests}, {"p_threshold", p_threshold},
            {"rows", out}, {"metadata", metadata}};
  }

  std::string to_text() const {
    std::vector<std::vector<std::string>> body;
    auto opt = [](const std::optional<double>& v) { return v ? fixed(*v) : std::string("-"); };
    for (const auto& r : rows) {
      if (!r.included) continue;
      body.push_back({r.feature, opt(r.r_preds), opt(r.r_gold), r.overestimated ? "*" : ""});
    }
    std::ostringstream os;
    os << format_table({"feature", "r(preds)", "r(gold)", "over"}, body);
    os << "p < " << p_threshold << " after Bonferroni over " << tests << " tests; |r| >= " << min_abs_r << "\n";
    std::size_t excluded = 0;
    for (const auto& r : rows) excluded += r.included ? 0 : 1;
    os << excluded << " feature(s) excluded\n";
    return os.str();
  }
};

// Every candidate feature counts toward the Bonferroni family, including
// features later excluded as constant or unavailable.
inline FeatureReport feature_correlation_report(std::span<const FeatureVector> features, std::span<const double> preds,
                                                std::span<const double> gold, double alpha = 0.05,
                                                double min_abs_r = 0.2) {
  if (features.size() != preds.size() || features.size() != gold.size())
    throw PreconditionError("feature report inputs differ in length");
  std::set<std::string> names;
  for (const auto& fv : features) {
    for (const auto& [k, v] : fv.values) names.insert(k);
    names.insert(fv.missing.begin(), fv.missing.end());
  }
  FeatureReport rep;
  rep.alpha = alpha;
  rep.min_abs_r = min_abs_r;
  rep.tests = names.size();
  rep.p_threshold = metrics::bonferroni_threshold(alpha, std::max<std::size_t>(rep.tests, 1));
  rep.metadata = {{"ngram_feature", "mean natural-log probability per token"},
                  {"significance", "min(p_preds, p_gold) < alpha / tests"}};

  for (const auto& name : names) {
    FeatureRow row;
    row.feature = name;
    std::vector<double> x, p, g;
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto it = features[i].values.find(name);
      if (it == features[i].values.end()) continue;
      x.push_back(it->second);
      p.push_back(preds[i]);
      g.push_back(gold[i]);
    }
    row.n = x.size();
    if (row.n < 3) {
      row.excluded_reason = "fewer than three observations";
      rep.rows.push_back(std::move(row));
      continue;
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) {
      row.excluded_reason = "constant feature";
      rep.rows.push_back(std::move(row));
      continue;
    }
    auto corr = [&](const std::vector<double>& y, std::optional<double>& r, std::optional<double>& pv) {
      try {
        r = metrics::pearson(x, y);
        pv = metrics::pearson_p_value(*r, x.size());
      } catch (const UndefinedStatistic&) {
      }
    };
    corr(p, row.r_preds, row.p_preds);
    corr(g, row.r_gold, row.p_gold);
    if (!row.r_preds && !row.r_gold) {
      row.excluded_reason = "predictions and gold are both constant";
      rep.rows.push_back(std::move(row));
      continue;
    }
    const double best_p = std::min(row.p_preds.value_or(1.0), row.p_gold.value_or(1.0));
    const double max_r = std::max(std::abs(row.r_preds.value_or(0.0)), std::abs(row.r_gold.value_or(0.0)));
    row.significant = best_p < rep.p_threshold;
    row.included = row.significant && max_r >= min_abs_r;
    if (!row.significant)
      row.excluded_reason = "not significant";
    else if (!row.included)
      row.excluded_reason = "correlation below minimum";
    row.overestimated = row.r_preds && row.r_gold && std::abs(*row.r_preds) > std::abs(*row.r_gold);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Transformations
// ---------------------------------------------------------------------------

class Transformation {
 public:
  virtual ~Transformation() = default;
  virtual std::string name() const = 0;
  virtual std::string apply(std::string_view text, std::uint64_t seed) const = 0;
};

class IdentityTransformation : public Transformation {
 public:
  std::string name() const override { return "identity"; }
  std::string apply(std::string_view text, std::uint64_t) const override { return std::string(text); }
};

// Drops each word independently with probability p; at least one word is
// kept. The draw depends on the seed and the sentence, not on its position.
class RandomDeletion : public Transformation {
 public:
  explicit RandomDeletion(double p = 0.1) : p_(p) {
    if (!(p_ >= 0.0 && p_ <= 1.0)) throw PreconditionError("deletion probability must be in [0, 1]");
  }
  std::string name() const override { return "random-deletion"; }

  std::string apply(std::string_view text, std::uint64_t seed) const override {
    const auto words = text::split_words(text);
    if (words.empty()) return std::string(text);
    Rng rng(derive_seed(seed, fnv1a64(text)));
    std::vector<std::string> kept;
    for (const auto& w : words)
      if (rng.uniform() >= p_) kept.push_back(w);
    if (kept.size() == words.size()) return std::string(text);
    if (kept.empty()) kept.push_back(words[rng.below(words.size())]);
    std::string out;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i) out += ' ';
      out += kept[i];
    }
    return out;
  }

 private:
  double p_;
};

// Removes sentence-final . ! ? if present, otherwise appends a period.
class SentenceFinalPunctuation : public Transformation {
 public:
  std::string name() const override { return "sentence-final-punctuation"; }
  std::string apply(std::string_view text, std::uint64_t) const override {
    std::string s(text::trim(text));
    if (s.empty()) return std::string(text);
    std::size_t end = s.size();
    while (end > 0 && (s[end - 1] == '.' || s[end - 1] == '!' || s[end - 1] == '?')) --end;
    if (end == s.size()) return s + ".";
    if (end == 0) return s;  // punctuation only
    return std::string(text::trim(s.substr(0, end)));
  }
};

// {id, text, seed} -> {id, text}
class ExternalTransformation : public Transformation {
 public:
  ExternalTransformation(std::string name, std::string endpoint)
      : name_(std::move(name)), client_(std::make_unique<transport::JsonClient>(std::move(endpoint))) {}
  std::string name() const override { return name_; }
  std::string apply(std::string_view text, std::uint64_t seed) const override {
    const json resp = client_->call(
        json{{"id", "tr-" + io::content_hash(std::string(text) + "\n" + std::to_string(seed))}, {"text", text}, {"seed", seed}});
    if (resp.contains("error")) throw TransportError("transformation '" + name_ + "' failed: " + resp["error"].dump());
    return resp.at("text").get<std::string>();
  }

 private:
  std::string name_;
  std::unique_ptr<transport::JsonClient> client_;
};

inline std::unique_ptr<Transformation> make_transformation(const std::string& name, double deletion_p = 0.1) {
  if (name == "identity") return std::make_unique<IdentityTransformation>();
  if (name == "random-deletion") return std::make_unique<RandomDeletion>(deletion_p);
  if (name == "sentence-final-punctuation") return std::make_unique<SentenceFinalPunctuation>();
  throw PreconditionError("unknown transformation '" + name + "'");
}

struct TransformationReport {
  std::string transformation;
  std::size_t n_total = 0;
  std::size_t n_changed = 0;
  // Over the changed subset; empty when nothing changed.
  std::optional<double> mean_src, mean_trans, diff;

  json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"transformation", transformation}, {"n_total", n_total}, {"n_changed", n_changed},
            {"mean_src", opt(mean_src)}, {"mean_trans", opt(mean_trans)}, {"diff", opt(diff)}};
  }
};

inline std::string transformation_table(std::span<const TransformationReport> reports) {
  std::vector<std::vector<std::string>> rows;
  auto opt = [](const std::optional<double>& v) { return v ? fixed(*v, 2) : std::string("-"); };
  for (const auto& r : reports)
    rows.push_back({r.transformation, std::to_string(r.n_changed), opt(r.mean_src), opt(r.mean_trans), opt(r.diff)});
  return format_table({"transformation", "changed", "src", "trans", "diff"}, rows);
}

template <Predictor P>
TransformationReport transformation_report(const P& predictor, std::span<const std::string> texts,
                                           const Transformation& t, std::uint64_t seed = 0) {
  TransformationReport rep;
  rep.transformation = t.name();
  rep.n_total = texts.size();
  double sum_src = 0.0, sum_trans = 0.0;
  for (const auto& s : texts) {
    const std::string out = t.apply(s, seed);
    if (text::nfc(out) == text::nfc(s)) continue;
    ++rep.n_changed;
    sum_src += static_cast<double>(predictor(s));
    sum_trans += static_cast<double>(predictor(out));
  }
  if (rep.n_changed > 0) {
    const double n = static_cast<double>(rep.n_changed);
    rep.mean_src = sum_src / n;
    rep.mean_trans = sum_trans / n;
    rep.diff = *rep.mean_trans - *rep.mean_src;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Word-order challenge sets
// ---------------------------------------------------------------------------

// v1 subject-object, v2 object-subject, v3/v4 the same pair with the meaning
// reversed. Pair-only sets leave v3 and v4 empty.
struct ChallengeItem {
  std::string v1, v2;
  std::optional<std::string> v3, v4;

  bool four_versions() const { return v3.has_value() || v4.has_value(); }
};

inline void validate_challenge_item(const ChallengeItem& item, std::size_t row) {
  std::vector<const std::string*> vs{&item.v1, &item.v2};
  if (item.four_versions()) {
    if (!item.v3 || !item.v4) throw SchemaError("challenge row " + std::to_string(row) + ": missing v3 or v4");
    vs.push_back(&*item.v3);
    vs.push_back(&*item.v4);
  }
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (text::trim(*vs[i]).empty())
      throw SchemaError("challenge row " + std::to_string(row) + ": v" + std::to_string(i + 1) + " is empty");
    for (std::size_t j = 0; j < i; ++j)
      if (*vs[i] == *vs[j])
        throw SchemaError("challenge row " + std::to_string(row) + ": v" + std::to_string(j + 1) + " and v" +
                          std::to_string(i + 1) + " are identical");
  }
}

// TSV with header v1, v2, v3, v4; v3/v4 may be absent or blank for pair sets.
inline std::vector<ChallengeItem> load_challenge_tsv(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::vector<std::string> header;
  std::size_t first = 0;
  while (first < lines.size() && text::trim(lines[first]).empty()) ++first;
  if (first == lines.size()) throw SchemaError("challenge file " + path.string() + " is empty");
  auto split_tabs = [](const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      auto tab = line.find('\t', start);
      out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return out;
  };
  header = split_tabs(lines[first]);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(text::trim(header[i]))] = i;
  for (const char* need : {"v1", "v2"})
    if (!col.count(need)) throw SchemaError("challenge file is missing column '" + std::string(need) + "'");

  std::vector<ChallengeItem> items;
  bool any_four = false;
  for (std::size_t li = first + 1; li < lines.size(); ++li) {
    if (text::trim(lines[li]).empty()) continue;
    const auto cells = split_tabs(lines[li]);
    const std::size_t row = items.size() + 1;
    auto cell = [&](const char* name) -> std::optional<std::string> {
      auto it = col.find(name);
      if (it == col.end() || it->second >= cells.size()) return std::nullopt;
      std::string v(text::trim(cells[it->second]));
      if (v.empty()) return std::nullopt;
      return v;
    };
    ChallengeItem item;
    item.v1 = cell("v1").value_or("");
    item.v2 = cell("v2").value_or("");
    item.v3 = cell("v3");
    item.v4 = cell("v4");
    any_four = any_four || item.four_versions();
    validate_challenge_item(item, row);
    items.push_back(std::move(item));
  }
  if (any_four)
    for (std::size_t i = 0; i < items.size(); ++i)
      if (!items[i].four_versions())
        throw SchemaError("challenge row " + std::to_string(i + 1) + ": missing v3 and v4 in a four-version set");
  return items;
}

struct ChallengeReport {
  std::size_t versions = 0;  // 2 or 4
  std::size_t n = 0;
  std::vector<double> means;              // per version
  std::vector<std::vector<double>> corr;  // versions x versions, unit diagonal

  double r(std::size_t i, std::size_t j) const { return corr.at(i - 1).at(j - 1); }

  json to_json() const {
    json pairs = json::object();
    for (std::size_t i = 0; i < versions; ++i)
      for (std::size_t j = i + 1; j < versions; ++j) pairs[std::to_string(i + 1) + "-" + std::to_string(j + 1)] = corr[i][j];
    return {{"versions", versions}, {"n", n}, {"means", means}, {"pairwise_r", pairs}};
  }

  std::string to_text() const {
    std::vector<std::string> header{""};
    for (std::size_t i = 0; i < versions; ++i) header.push_back(std::to_string(i + 1));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < versions; ++i) {
      std::vector<std::string> row{std::to_string(i + 1)};
      for (std::size_t j = 0; j < versions; ++j) row.push_back(j < i ? "" : fixed(corr[i][j], 3));
      rows.push_back(std::move(row));
    }
    std::vector<std::string> mean_row{"mean"};
    for (double m : means) mean_row.push_back(fixed(m, 3));
    rows.push_back(std::move(mean_row));
    return format_table(header, rows);
  }
};

template <Predictor P>
ChallengeReport challenge_report(const P& predictor, std::span<const ChallengeItem> items) {
  if (items.size() < 2) throw PreconditionError("challenge report needs at least two items");
  bool four = false;
  for (const auto& it : items) four = four || it.four_versions();
  ChallengeReport rep;
  rep.versions = four ? 4 : 2;
  rep.n = items.size();
  std::vector<std::vector<double>> scores(rep.versions);
  for (std::size_t row = 0; row < items.size(); ++row) {
    const auto& it = items[row];
    if (four && (!it.v3 || !it.v4))
      throw SchemaError("challenge row " + std::to_string(row + 1) + ": missing version in a four-version set");
    scores[0].push_back(static_cast<double>(predictor(it.v1)));
    scores[1].push_back(static_cast<double>(predictor(it.v2)));
    if (four) {
      scores[2].push_back(static_cast<double>(predictor(*it.v3)));
      scores[3].push_back(static_cast<double>(predictor(*it.v4)));
    }
  }
  for (const auto& s : scores) {
    double m = 0.0;
    for (double v : s) m += v;
    rep.means.push_back(m / static_cast<double>(s.size()));
  }
  rep.corr.assign(rep.versions, std::vector<double>(rep.versions, 1.0));
  for (std::size_t i = 0; i < rep.versions; ++i)
    for (std::size_t j = i + 1; j < rep.versions; ++j) {
      // Identical score vectors correlate perfectly even when constant.
      const double r = scores[i] == scores[j] ? 1.0 : metrics::pearson(scores[i], scores[j]);
      rep.corr[i][j] = rep.corr[j][i] = r;
    }
  return rep;
}

}  // namespace prequel::analysis
