#pragma once

// Metric-labelled training data from a parallel corpus: translate every
// source with an MT client, score each hypothesis against its reference, and
// keep the source sentence with the metric scores as labels.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prequel/corpus.hpp"
#include "prequel/error.hpp"
#include "prequel/io.hpp"
#include "prequel/metrics.hpp"
#include "prequel/transport.hpp"

namespace prequel::augment {

using json = nlohmann::json;
using corpus::Dataset;
using corpus::ParallelCorpus;
using corpus::ParallelPair;

struct TranslationRequest {
  std::string id;
  std::string text;
  std::string source_lang;
  std::string target_lang;
};

struct TranslationResult {
  std::string id;
  std::optional<std::string> text;
  std::string error;  // set when text is empty
};

class MTClient {
 public:
  virtual ~MTClient() = default;
  virtual std::string name() const = 0;
  virtual std::string version() const { return "unversioned"; }
  virtual std::string source_lang() const = 0;
  virtual std::string target_lang() const = 0;
  // One result per request, matched by id. Throws TransportError when the
  // system cannot be reached at all.
  virtual std::vector<TranslationResult> translate(std::span<const TranslationRequest> batch) = 0;
};

// Returns the source text unchanged.
class IdentityMTClient : public MTClient {
 public:
  IdentityMTClient(std::string source_lang, std::string target_lang)
      : source_lang_(std::move(source_lang)), target_lang_(std::move(target_lang)) {}
  std::string name() const override { return "identity"; }
  std::string version() const override { return "1"; }
  std::string source_lang() const override { return source_lang_; }
  std::string target_lang() const override { return target_lang_; }
  std::vector<TranslationResult> translate(std::span<const TranslationRequest> batch) override {
    std::vector<TranslationResult> out;
    for (const auto& r : batch) out.push_back({r.id, r.text, {}});
    return out;
  }

 private:
  std::string source_lang_, target_lang_;
};

// MT system behind the line-JSON transport:
//   {id, text, source_lang, target_lang} -> {id, text} | {id, error}
class TransportMTClient : public MTClient {
 public:
  TransportMTClient(std::string endpoint, std::string source_lang, std::string target_lang,
                    std::string name = "external-mt", std::string version = "unversioned")
      : client_(std::move(endpoint)),
        source_lang_(std::move(source_lang)),
        target_lang_(std::move(target_lang)),
        name_(std::move(name)),
        version_(std::move(version)) {}

  std::string name() const override { return name_; }
  std::string version() const override { return version_; }
  std::string source_lang() const override { return source_lang_; }
  std::string target_lang() const override { return target_lang_; }

  std::vector<TranslationResult> translate(std::span<const TranslationRequest> batch) override {
    std::vector<json> requests;
    for (const auto& r : batch)
      requests.push_back({{"id", r.id}, {"text", r.text}, {"source_lang", r.source_lang}, {"target_lang", r.target_lang}});
    const auto responses = client_.call(requests);
    std::vector<TranslationResult> out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& resp = responses[i];
      TranslationResult res{batch[i].id, std::nullopt, {}};
      if (auto t = resp.find("text"); t != resp.end() && t->is_string()) res.text = t->get<std::string>();
      else if (auto e = resp.find("error"); e != resp.end()) res.error = e->is_string() ? e->get<std::string>() : e->dump();
      else res.error = "response carries neither text nor error";
      out.push_back(std::move(res));
    }
    return out;
  }

 private:
  transport::JsonClient client_;
  std::string source_lang_, target_lang_, name_, version_;
};

struct ScoreRequest {
  std::string id;
  std::string hypothesis;
  std::string reference;
  std::string source;
};

struct ScoreResult {
  std::string id;
  std::optional<double> score;
  std::string error;
};

struct ScoreRange {
  double lo;
  double hi;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

class MetricScorer {
 public:
  virtual ~MetricScorer() = default;
  virtual std::string name() const = 0;
  virtual ScoreRange range() const = 0;
  virtual std::vector<ScoreResult> score(std::span<const ScoreRequest> batch) = 0;
};

class ChrfScorer : public MetricScorer {
 public:
  explicit ChrfScorer(metrics::ChrfConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }
  std::string name() const override { return "chrfpp"; }
  ScoreRange range() const override { return {0.0, 1.0}; }
  std::vector<ScoreResult> score(std::span<const ScoreRequest> batch) override {
    std::vector<ScoreResult> out;
    for (const auto& r : batch) out.push_back({r.id, metrics::chrf_pp(r.hypothesis, r.reference, cfg_), {}});
    return out;
  }

 private:
  metrics::ChrfConfig cfg_;
};

// Learned metric (COMET, BERTScore, ...) behind the transport:
//   {id, hypothesis, reference, source} -> {id, score} | {id, error}
class TransportScorer : public MetricScorer {
 public:
  TransportScorer(std::string name, std::string endpoint, ScoreRange range)
      : name_(std::move(name)), range_(range), client_(std::move(endpoint)) {}
  std::string name() const override { return name_; }
  ScoreRange range() const override { return range_; }
  std::vector<ScoreResult> score(std::span<const ScoreRequest> batch) override {
    std::vector<json> requests;
    for (const auto& r : batch)
      requests.push_back({{"id", r.id}, {"hypothesis", r.hypothesis}, {"reference", r.reference}, {"source", r.source}});
    const auto responses = client_.call(requests);
    std::vector<ScoreResult> out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& resp = responses[i];
      ScoreResult res{batch[i].id, std::nullopt, {}};
      if (auto s = resp.find("score"); s != resp.end() && s->is_number()) res.score = s->get<double>();
      else if (auto e = resp.find("error"); e != resp.end()) res.error = e->is_string() ? e->get<std::string>() : e->dump();
      else res.error = "response carries neither score nor error";
      out.push_back(std::move(res));
    }
    return out;
  }

 private:
  std::string name_;
  ScoreRange range_;
  transport::JsonClient client_;
};

// Default declared ranges of the metrics used for augmentation.
inline ScoreRange default_range(const std::string& scorer_name) {
  if (scorer_name == "chrfpp") return {0.0, 1.0};
  if (scorer_name == "bertscore") return {-1.0, 1.0};
  return {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::max()};
}

struct SkipRecord {
  std::string id;
  std::string stage;  // "translate" or "score:<scorer>"
  std::string reason;
};

struct TranslatedPair {
  ParallelPair pair;
  std::string hypothesis;
};

struct TranslationOutcome {
  std::vector<TranslatedPair> items;  // input order, failures removed
  std::vector<SkipRecord> skipped;
};

inline TranslationOutcome translate_corpus(std::span<const ParallelPair> pairs, MTClient& mt, std::size_t batch_size) {
  if (batch_size == 0) throw PreconditionError("batch_size must be positive");
  for (const auto& p : pairs)
    if (p.source.lang != mt.source_lang())
      throw PreconditionError("pair '" + p.source.id + "' is in " + p.source.lang + ", MT client expects " +
                              mt.source_lang());
  TranslationOutcome out;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t end = std::min(pairs.size(), start + batch_size);
    std::vector<TranslationRequest> batch;
    for (std::size_t i = start; i < end; ++i)
      batch.push_back({pairs[i].source.id, pairs[i].source.text, mt.source_lang(), mt.target_lang()});
    std::vector<TranslationResult> results;
    try {
      results = mt.translate(batch);
    } catch (const TransportError&) {
      throw;
    } catch (const std::exception&) {
      // Isolate the failing sentence(s) by retrying one at a time.
      results.clear();
      for (const auto& req : batch) {
        try {
          auto one = mt.translate(std::span<const TranslationRequest>(&req, 1));
          results.insert(results.end(), one.begin(), one.end());
        } catch (const TransportError&) {
          throw;
        } catch (const std::exception& e) {
          results.push_back({req.id, std::nullopt, e.what()});
        }
      }
    }
    std::map<std::string, const TranslationResult*> by_id;
    for (const auto& r : results) by_id[r.id] = &r;
    for (std::size_t i = start; i < end; ++i) {
      const auto& id = pairs[i].source.id;
      auto it = by_id.find(id);
      if (it == by_id.end()) out.skipped.push_back({id, "translate", "no result returned"});
      else if (!it->second->text) out.skipped.push_back({id, "translate", it->second->error});
      else out.items.push_back({pairs[i], *it->second->text});
    }
  }
  return out;
}

namespace detail {

// Scores a batch; error responses become skips, non-finite or out-of-range
// scores are hard errors.
inline std::vector<std::optional<double>> score_checked(std::span<const ScoreRequest> requests, MetricScorer& scorer,
                                                        std::size_t batch_size, std::vector<SkipRecord>* skips) {
  std::vector<std::optional<double>> out(requests.size());
  const auto range = scorer.range();
  for (std::size_t start = 0; start < requests.size(); start += batch_size) {
    const std::size_t end = std::min(requests.size(), start + batch_size);
    const auto results = scorer.score(requests.subspan(start, end - start));
    std::map<std::string, const ScoreResult*> by_id;
    for (const auto& r : results) by_id[r.id] = &r;
    for (std::size_t i = start; i < end; ++i) {
      const auto& id = requests[i].id;
      auto it = by_id.find(id);
      std::string reason;
      if (it == by_id.end()) reason = "no score returned";
      else if (!it->second->score) reason = it->second->error;
      if (!reason.empty()) {
        if (!skips) throw Error("scorer " + scorer.name() + " failed on item '" + id + "': " + reason);
        skips->push_back({id, "score:" + scorer.name(), reason});
        continue;
      }
      const double v = *it->second->score;
      if (!std::isfinite(v)) throw Error("scorer " + scorer.name() + " returned a non-finite score for item '" + id + "'");
      if (!range.contains(v))
        throw Error("scorer " + scorer.name() + " returned " + std::to_string(v) + " outside its declared range for item '" + id + "'");
      out[i] = v;
    }
  }
  return out;
}

}  // namespace detail

// Scores aligned with input order. Any failure is a hard error naming the item.
inline std::vector<double> score_translations(std::span<const std::pair<std::string, std::string>> items,
                                              MetricScorer& scorer) {
  std::vector<ScoreRequest> requests;
  for (std::size_t i = 0; i < items.size(); ++i)
    requests.push_back({std::to_string(i), items[i].first, items[i].second, {}});
  const auto scores = detail::score_checked(requests, scorer, std::max<std::size_t>(1, requests.size()), nullptr);
  std::vector<double> out;
  for (const auto& s : scores) out.push_back(*s);
  return out;
}

struct AugmentationCounts {
  std::size_t input_pairs = 0;
  std::size_t translated = 0;
  std::size_t translation_failures = 0;
  std::size_t scored = 0;
  std::size_t skipped = 0;  // translated but dropped during scoring
};

struct AugmentationManifest {
  std::string corpus;
  std::string mt_name;
  std::string mt_version;
  std::vector<std::string> scorers;
  AugmentationCounts counts;
  std::vector<SkipRecord> skips;
  std::string created;  // ISO-8601 UTC

  json to_json() const {
    json skips_json = json::array();
    for (const auto& s : skips) skips_json.push_back({{"id", s.id}, {"stage", s.stage}, {"reason", s.reason}});
    return {{"corpus", corpus},
            {"mt", {{"name", mt_name}, {"version", mt_version}}},
            {"scorers", scorers},
            {"counts",
             {{"input_pairs", counts.input_pairs},
              {"translated", counts.translated},
              {"translation_failures", counts.translation_failures},
              {"scored", counts.scored},
              {"skipped", counts.skipped}}},
            {"skips", skips_json},
            {"created", created}};
  }
};

// SOURCE_DATE_EPOCH pins the timestamp for reproducible reruns.
inline std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) t = std::strtoll(epoch, nullptr, 10);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct AugmentOptions {
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  corpus::SplitRatios ratios{0.8, 0.1, 0.1};
};

struct AugmentationResult {
  Dataset dataset;
  AugmentationManifest manifest;
};

inline AugmentationResult build_augmented_dataset(const ParallelCorpus& pc, MTClient& mt,
                                                  std::span<MetricScorer* const> scorers,
                                                  const AugmentOptions& opts = {}) {
  if (scorers.empty()) throw PreconditionError("at least one scorer is required");
  if (corpus::deduplicate(pc).pairs.size() != pc.pairs.size())
    throw PreconditionError("corpus '" + pc.name + "' contains duplicate source sentences; deduplicate first");

  AugmentationManifest manifest;
  manifest.corpus = pc.name;
  manifest.mt_name = mt.name();
  manifest.mt_version = mt.version();
  for (auto* s : scorers) manifest.scorers.push_back(s->name());
  manifest.counts.input_pairs = pc.pairs.size();

  auto translated = translate_corpus(pc.pairs, mt, opts.batch_size);
  manifest.counts.translated = translated.items.size();
  manifest.counts.translation_failures = translated.skipped.size();
  manifest.skips = translated.skipped;

  std::vector<ScoreRequest> requests;
  for (const auto& item : translated.items)
    requests.push_back({item.pair.source.id, item.hypothesis, item.pair.reference.text, item.pair.source.text});

  std::vector<std::vector<std::optional<double>>> per_scorer;
  std::vector<SkipRecord> score_skips;
  for (auto* s : scorers) per_scorer.push_back(detail::score_checked(requests, *s, opts.batch_size, &score_skips));

  Dataset ds;
  ds.name = pc.name;
  ds.source_lang = pc.source_lang;
  ds.target_lang = pc.target_lang;
  for (std::size_t i = 0; i < translated.items.size(); ++i) {
    bool complete = true;
    for (const auto& scores : per_scorer) complete = complete && scores[i].has_value();
    if (!complete) continue;
    const auto& item = translated.items[i];
    corpus::LabeledExample ex;
    ex.source = item.pair.source;
    ex.translation = corpus::SentenceRecord{item.pair.source.id, item.hypothesis, mt.target_lang(), item.pair.source.dataset_tag};
    ex.reference = item.pair.reference;
    for (std::size_t k = 0; k < scorers.size(); ++k) ex.labels[scorers[k]->name()] = *per_scorer[k][i];
    ds.examples.push_back(std::move(ex));
  }
  manifest.counts.scored = ds.examples.size();
  manifest.counts.skipped = manifest.counts.translated - manifest.counts.scored;
  // One skip record per dropped item, keeping the first failing scorer.
  std::map<std::string, bool> recorded;
  for (const auto& s : score_skips)
    if (!recorded[s.id]) {
      recorded[s.id] = true;
      manifest.skips.push_back(s);
    }
  manifest.created = utc_timestamp();

  ds = corpus::split(ds, opts.ratios, opts.seed);
  return {std::move(ds), std::move(manifest)};
}

// Writes <path> and <path>.manifest.json. The dataset is written only after
// the manifest has been serialized, each through an atomic rename.
inline void write_augmentation(const AugmentationResult& result, const std::filesystem::path& path) {
  const std::string data = corpus::to_jsonl(result.dataset);
  const std::string manifest = result.manifest.to_json().dump(2) + "\n";
  auto manifest_path = path;
  manifest_path += ".manifest.json";
  io::write_atomically(path, data);
  io::write_atomically(manifest_path, manifest);
}

}  // namespace prequel::augment
