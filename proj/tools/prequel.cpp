// prequel: command-line front end.
//
//   ingest             DA file or parallel text -> canonical JSONL
//   augment            parallel JSONL -> metric-labelled JSONL (MT + scorers)
//   train              JSONL -> checkpoint directory (one member per seed)
//   predict            checkpoint + sentences -> JSONL scores
//   evaluate           checkpoint + labelled JSONL -> correlation report
//   analyze-features   feature correlation report
//   analyze-transform  transformation sensitivity report
//   challenge          word-order challenge-set report
//   route              precision/recall routing report
//
// Settings come from flags, then the --config JSON file, then defaults.
// Usage errors exit with 2, runtime failures with 1.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prequel/prequel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace prequel;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Args {
  std::string command;
  std::string config_path;
  std::string log_path;
  std::string out;
  std::string input;
  std::string reference;
  std::string data;
  std::string dev;
  std::string model;
  std::string intertrain;
  std::string format = "auto";
  std::string name;
  std::string src_lang = "en";
  std::string tgt_lang = "de";
  std::string label = "da";
  std::string aug_label = "chrfpp";
  std::string ratios = "0.8,0.1,0.1";
  bool keep_duplicates = false;
  std::string seeds = "1,2,3";
  std::string threshold = "70";
  double operating_threshold = 0.0;
  std::string backend = "feature";
  std::string encoder_endpoint;
  std::string mt_endpoint = "identity";
  std::string scorers = "chrfpp";
  std::size_t dim = 256;
  std::string variant = "simple";
  std::string heads;
  std::size_t batch_size = 32;
  std::string split = "auto";
  std::string transforms = "random-deletion,sentence-final-punctuation";
  double deletion_p = 0.1;
  std::string feature_endpoint;
  std::string feature_names = "parse_tree_depth,lm_score,pos_VERB,dep_advcl,dep_case";
  std::string lm_corpus;
  double alpha = 0.05;
  double min_r = 0.2;
  std::string x_key = "score";
  std::string y_key = "gold";
  model::TrainingConfig training;
  json config = json::object();
};

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    const auto t = text::trim(cur);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split_list(s)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.front() == '-') throw UsageError("invalid seed '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("seed list is empty");
  return out;
}

corpus::SplitRatios parse_ratios(const std::string& s) {
  const auto parts = split_list(s);
  if (parts.size() != 3) throw UsageError("--split-ratios needs three comma-separated values");
  corpus::SplitRatios r{};
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      r[i] = std::stod(parts[i]);
    } catch (const std::exception&) {
      throw UsageError("invalid split ratio '" + parts[i] + "'");
    }
  }
  return r;
}

// Flags win over the config file, which wins over defaults.
template <class T>
void layer(const CLI::App* sub, const std::string& flag, T& var, const json& cfg, const char* key) {
  if (sub->get_option_no_throw(flag) && sub->count(flag) > 0) return;
  if (auto it = cfg.find(key); it != cfg.end()) {
    if constexpr (std::is_same_v<T, std::string>) {
      if (it->is_array()) {
        std::string joined;
        for (const auto& v : *it) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
        var = joined;
        return;
      }
      if (it->is_number()) {
        var = it->dump();
        return;
      }
    }
    it->get_to(var);
  }
}

bool is_jsonl(const fs::path& p) { return p.extension() == ".jsonl" || p.extension() == ".json"; }

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

void check_not_input(const fs::path& out, std::initializer_list<std::string> inputs) {
  std::error_code ec;
  for (const auto& in : inputs) {
    if (in.empty()) continue;
    if (fs::exists(out) && fs::equivalent(out, in, ec))
      throw UsageError("output " + out.string() + " would overwrite input " + in);
  }
}

fs::path sidecar(const fs::path& out, const char* suffix) {
  fs::path p = out;
  p += suffix;
  return p;
}

corpus::Dataset load_dataset(const std::string& path, const Args& a) {
  corpus::LoadOptions opts;
  opts.source_lang = a.src_lang;
  opts.target_lang = a.tgt_lang;
  opts.label_name = a.label;
  opts.name = a.name;
  return corpus::load_da_dataset(path, is_jsonl(path) ? corpus::DataFormat::jsonl : corpus::DataFormat::tsv, opts);
}

// "auto" picks test when the data is split and everything otherwise.
corpus::Dataset select_split(const corpus::Dataset& ds, const std::string& which) {
  if (which == "all" || (which == "auto" && !ds.has_splits())) return ds;
  return corpus::select(ds, corpus::split_from_string(which == "auto" ? "test" : which));
}

std::vector<std::string> load_texts(const std::string& path, const Args& a) {
  if (is_jsonl(path)) return select_split(load_dataset(path, a), a.split).texts();
  std::vector<std::string> out;
  for (auto& line : io::read_lines(path))
    if (!text::trim(line).empty()) out.push_back(std::move(line));
  if (out.empty()) throw Error(path + ": no sentences");
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  io::write_atomically(path, out);
}

// ---------------------------------------------------------------------------
// Trained predictors
// ---------------------------------------------------------------------------

struct LoadedModel {
  std::unique_ptr<model::Ensemble> ensemble;
  std::optional<corpus::NormalizationParams> norm;
  json info;

  double raw(std::size_t member, std::string_view t) const { return ensemble->members()[member].predict(t); }
  double denorm(double y) const { return norm ? norm->invert(y) : y; }
  // Ensemble mean on the original label scale.
  double operator()(std::string_view t) const { return denorm(ensemble->predict(t)); }
  std::size_t size() const { return ensemble->members().size(); }
};

std::optional<corpus::NormalizationParams> norm_from_json(const json& j) {
  if (!j.is_object() || !j.contains("min")) return std::nullopt;
  return corpus::NormalizationParams{j.value("label", std::string("da")), j.at("min").get<double>(), j.at("max").get<double>()};
}

LoadedModel load_model(const std::string& dir, const std::string& endpoint) {
  LoadedModel lm;
  std::vector<model::PredictorModel> members;
  std::vector<std::uint64_t> seeds;
  if (fs::exists(fs::path(dir) / "ensemble.json")) {
    lm.info = json::parse(io::read_file(fs::path(dir) / "ensemble.json"));
    for (const auto& m : lm.info.at("members")) members.push_back(model::load_checkpoint(fs::path(dir) / m.get<std::string>(), endpoint));
    lm.info.at("seeds").get_to(seeds);
    lm.norm = norm_from_json(lm.info.value("normalization", json()));
  } else {
    const auto cfg = model::read_checkpoint_config(dir);
    members.push_back(model::load_checkpoint(dir, endpoint));
    lm.info = cfg;
    lm.norm = norm_from_json(cfg.value("metadata", json::object()).value("normalization", json()));
  }
  lm.ensemble = std::make_unique<model::Ensemble>(std::move(members), std::move(seeds));
  return lm;
}

json model_versions(const LoadedModel& lm) {
  json backends = json::array();
  for (const auto& b : lm.ensemble->members().front().backends()) backends.push_back({{"name", b->name()}, {"version", b->version()}});
  return {{"backends", backends}, {"members", lm.size()}};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_ingest(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.input, "--input");
  require(a.out, "--out");
  check_not_input(a.out, {a.input, a.reference});
  man.add_input(a.input);
  corpus::LoadOptions opts;
  opts.name = a.name;
  opts.source_lang = a.src_lang;
  opts.target_lang = a.tgt_lang;
  opts.label_name = a.label;
  const bool parallel = !a.reference.empty() || a.format == "parallel";
  if (parallel) {
    require(a.reference, "--reference");
    man.add_input(a.reference);
    auto pc = corpus::load_parallel_text(a.input, a.reference, opts);
    const std::size_t before = pc.pairs.size();
    if (!a.keep_duplicates) pc = corpus::deduplicate(pc);
    io::write_atomically(a.out, corpus::to_jsonl(pc));
    man.config["counts"] = {{"read", before}, {"written", pc.pairs.size()}};
    log << "parallel pairs: " << before << " read, " << pc.pairs.size() << " written\n";
    std::cout << pc.pairs.size() << " parallel pairs written to " << a.out << "\n";
  } else {
    corpus::DataFormat fmt;
    if (a.format == "auto") fmt = is_jsonl(a.input) ? corpus::DataFormat::jsonl : corpus::DataFormat::tsv;
    else fmt = corpus::format_from_string(a.format);
    auto ds = corpus::load_da_dataset(a.input, fmt, opts);
    const std::size_t before = ds.size();
    if (!a.keep_duplicates) ds = corpus::deduplicate(ds);
    if (!ds.has_splits() && a.ratios != "none") ds = corpus::split(ds, parse_ratios(a.ratios), a.training.seed);
    corpus::save_dataset(ds, a.out, corpus::DataFormat::jsonl);
    json counts{{"read", before}, {"written", ds.size()}};
    if (ds.has_splits())
      for (auto s : {corpus::Split::train, corpus::Split::dev, corpus::Split::test}) counts[corpus::to_string(s)] = ds.count(s);
    man.config["counts"] = counts;
    log << "examples: " << counts.dump() << "\n";
    std::cout << ds.size() << " examples written to " << a.out << "\n";
  }
  man.add_output(a.out);
  man.write(sidecar(a.out, ".manifest.json"));
  return 0;
}

int cmd_augment(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.input, "--input");
  require(a.out, "--out");
  check_not_input(a.out, {a.input});
  man.add_input(a.input);
  corpus::LoadOptions opts;
  opts.name = a.name;
  opts.source_lang = a.src_lang;
  opts.target_lang = a.tgt_lang;
  const auto pc = corpus::load_parallel_jsonl(a.input, opts);

  std::unique_ptr<augment::MTClient> mt;
  if (a.mt_endpoint == "identity") mt = std::make_unique<augment::IdentityMTClient>(pc.source_lang, pc.target_lang);
  else mt = std::make_unique<augment::TransportMTClient>(a.mt_endpoint, pc.source_lang, pc.target_lang);

  std::vector<std::unique_ptr<augment::MetricScorer>> owned;
  for (const auto& item : split_list(a.scorers)) {
    const auto eq = item.find('=');
    const std::string name = item.substr(0, eq);
    if (eq == std::string::npos) {
      if (name != "chrfpp") throw UsageError("scorer '" + name + "' needs an endpoint (NAME=ENDPOINT)");
      owned.push_back(std::make_unique<augment::ChrfScorer>());
    } else {
      owned.push_back(std::make_unique<augment::TransportScorer>(name, item.substr(eq + 1), augment::default_range(name)));
    }
  }
  if (owned.empty()) throw UsageError("--scorer lists no scorers");
  std::vector<augment::MetricScorer*> scorers;
  for (auto& s : owned) scorers.push_back(s.get());

  augment::AugmentOptions aopts;
  aopts.batch_size = a.batch_size;
  aopts.seed = a.training.seed;
  aopts.ratios = parse_ratios(a.ratios);
  const auto result = augment::build_augmented_dataset(pc, *mt, scorers, aopts);
  io::write_atomically(a.out, corpus::to_jsonl(result.dataset));
  const auto& c = result.manifest.counts;
  log << "augmentation counts: " << result.manifest.to_json()["counts"].dump() << "\n";
  for (const auto& s : result.manifest.skips) log << "skipped " << s.id << " (" << s.stage << "): " << s.reason << "\n";
  man.versions["mt"] = {{"name", mt->name()}, {"version", mt->version()}};
  man.add_output(a.out);
  json m = man.to_json();
  m["augmentation"] = result.manifest.to_json();
  io::write_atomically(sidecar(a.out, ".manifest.json"), m.dump(2) + "\n");
  std::cout << c.scored << " of " << c.input_pairs << " pairs labelled (" << c.translation_failures
            << " translation failures, " << c.skipped << " scoring skips) -> " << a.out << "\n";
  return 0;
}

std::shared_ptr<const model::EncoderBackend> make_encoder(const Args& a, const std::string& which) {
  if (which == "feature") return std::make_shared<model::HashedNgramEncoder>(a.dim);
  if (which == "encoder-adapter") {
    if (a.encoder_endpoint.empty()) throw UsageError("--backend encoder-adapter needs --encoder-endpoint");
    return std::make_shared<model::EncoderAdapter>(a.encoder_endpoint, a.dim);
  }
  throw UsageError("unknown backend '" + which + "'");
}

model::PredictorModel make_model(const Args& a) {
  switch (model::variant_from_string(a.variant)) {
    case model::Variant::simple: return model::PredictorModel::simple(make_encoder(a, a.backend));
    case model::Variant::multitask: return model::PredictorModel::multitask(make_encoder(a, a.backend), split_list(a.heads));
    case model::Variant::combined:
      return model::PredictorModel::combined(make_encoder(a, "feature"), make_encoder(a, "encoder-adapter"));
  }
  throw UsageError("unknown variant");
}

// Applies train-fitted parameters to another dataset without clamping.
corpus::Dataset apply_norm(corpus::Dataset ds, const corpus::NormalizationParams& p) {
  for (auto& ex : ds.examples) ex.labels[p.label_name] = p.apply(ex.label(p.label_name));
  return ds;
}

int cmd_train(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.data, "--data");
  require(a.out, "--out");
  check_not_input(a.out, {a.data, a.dev, a.intertrain});
  const auto seeds = parse_seeds(a.seeds);
  man.add_input(a.data);
  const auto full = load_dataset(a.data, a);
  corpus::Dataset train_set = corpus::select(full, corpus::Split::train);
  std::optional<corpus::Dataset> dev_set;
  if (!a.dev.empty()) {
    man.add_input(a.dev);
    dev_set = load_dataset(a.dev, a);
  } else if (full.has_splits() && full.count(corpus::Split::dev) > 0) {
    dev_set = corpus::select(full, corpus::Split::dev);
  }
  auto [train_norm, params] = corpus::normalize_labels(train_set, a.label);
  if (dev_set) dev_set = apply_norm(*dev_set, params);

  std::optional<corpus::Dataset> aug;
  if (!a.intertrain.empty()) {
    man.add_input(a.intertrain);
    aug = corpus::select(load_dataset(a.intertrain, a), corpus::Split::train);
  }

  model::TrainingConfig cfg = a.training;
  cfg.head_labels["da"] = a.label;
  const model::PredictorModel base = make_model(a);
  man.versions["backends"] = base.describe()["backends"];

  fs::create_directories(a.out);
  json ensemble{{"members", json::array()}, {"seeds", seeds}, {"label", a.label},
                {"normalization", {{"label", params.label_name}, {"min", params.min}, {"max", params.max}}}};
  json states = json::object();
  for (auto seed : seeds) {
    cfg.seed = seed;
    model::PredictorModel trained = base;
    json state;
    if (aug) {
      model::TrainingConfig cfg_aug = cfg;
      cfg_aug.head_labels["da"] = a.aug_label;
      model::TrainingConfig cfg_da = cfg;
      auto r = model::intertrain_then_finetune(base, *aug, train_norm, cfg_aug, cfg_da);
      trained = std::move(r.model);
      state = {{"intertraining", r.intertraining.to_json()}, {"finetuning", r.finetuning.to_json()}};
    } else {
      auto r = [&] {
        try {
          return dev_set ? model::train(base, train_norm, *dev_set, cfg) : model::train_with_holdout(base, train_norm, cfg);
        } catch (const model::SeedResetsExhausted& e) {
          if (a.backend == "feature" && cfg.learning_rate < 1e-4)
            throw Error(std::string(e.what()) + "; the feature backend usually needs a larger rate, e.g. --lr 1e-3");
          throw;
        }
      }();
      trained = std::move(r.model);
      state = r.state.to_json();
    }
    const std::string member = "seed-" + std::to_string(seed);
    json meta{{"seed", seed}, {"label", a.label}, {"training", cfg.to_json()},
              {"normalization", ensemble["normalization"]}};
    model::save_checkpoint(trained, fs::path(a.out) / member, meta);
    ensemble["members"].push_back(member);
    states[member] = state;
    const double best = aug ? state["finetuning"]["best_correlation"].get<double>() : state["best_correlation"].get<double>();
    log << member << ": best eval r " << best << "\n";
    std::cout << member << ": best eval r " << analysis::fixed(best, 4) << "\n";
  }
  io::write_atomically(fs::path(a.out) / "ensemble.json", ensemble.dump(2) + "\n");
  io::write_atomically(fs::path(a.out) / "training.json", states.dump(2) + "\n");
  man.config["training"] = cfg.to_json();
  man.write(fs::path(a.out) / "manifest.json");
  return 0;
}

int cmd_predict(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.model, "--model");
  require(a.input, "--input");
  require(a.out, "--out");
  check_not_input(a.out, {a.input});
  man.add_input(a.input);
  const auto lm = load_model(a.model, a.encoder_endpoint);
  man.versions["model"] = model_versions(lm);
  std::vector<json> rows;
  if (is_jsonl(a.input)) {
    const auto ds = select_split(load_dataset(a.input, a), a.split);
    for (const auto& ex : ds.examples) rows.push_back({{"id", ex.id()}, {"source", ex.source.text}, {"score", lm(ex.source.text)}});
  } else {
    const auto texts = load_texts(a.input, a);
    for (std::size_t i = 0; i < texts.size(); ++i)
      rows.push_back({{"id", std::to_string(i)}, {"source", texts[i]}, {"score", lm(texts[i])}});
  }
  write_jsonl(a.out, rows);
  log << rows.size() << " predictions\n";
  man.add_output(a.out);
  man.write(sidecar(a.out, ".manifest.json"));
  std::cout << rows.size() << " predictions written to " << a.out << "\n";
  return 0;
}

struct Scored {
  std::vector<std::string> texts;
  std::vector<double> gold;
  std::vector<double> preds;
  std::vector<std::string> tags;
};

Scored score_dataset(const LoadedModel& lm, const Args& a) {
  const auto ds = select_split(load_dataset(a.data, a), a.split);
  Scored s{ds.texts(), ds.labels(a.label), {}, {}};
  for (const auto& t : s.texts) s.preds.push_back(lm(t));
  for (const auto& ex : ds.examples) s.tags.push_back(ex.source.dataset_tag);
  return s;
}

void emit_report(const Args& a, RunManifest& man, const json& report, const std::string& text) {
  std::cout << text;
  if (a.out.empty()) return;
  io::write_atomically(a.out, report.dump(2) + "\n");
  man.add_output(a.out);
  man.write(sidecar(a.out, ".manifest.json"));
}

int cmd_evaluate(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.model, "--model");
  require(a.data, "--data");
  man.add_input(a.data);
  const auto lm = load_model(a.model, a.encoder_endpoint);
  man.versions["model"] = model_versions(lm);
  const auto s = score_dataset(lm, a);
  auto rep = evaluate::evaluate(s.preds, s.gold, a.data);
  if (lm.size() > 1)
    for (std::size_t m = 0; m < lm.size(); ++m) {
      std::vector<double> p;
      for (const auto& t : s.texts) p.push_back(lm.raw(m, t));
      rep.per_seed_r.push_back(metrics::pearson(p, s.gold));
    }
  const auto base = evaluate::length_baseline(s.texts);
  try {
    rep.baseline_r = metrics::pearson(base, s.gold);
  } catch (const UndefinedStatistic&) {
    rep.notes = "length baseline undefined (constant length)";
  }
  json j = rep.to_json();
  j["split"] = a.split;
  const auto groups = evaluate::grouped_eval(s.preds, s.gold, s.tags.front().empty() ? std::vector<std::string>(s.tags.size(), "all") : s.tags);
  for (const auto& [tag, g] : groups)
    j["groups"][tag] = {{"n", g.n}, {"r", g.r ? json(*g.r) : json(nullptr)}, {"reason", g.reason}};
  log << "pearson_r " << rep.pearson_r << "\n";
  emit_report(a, man, j, rep.to_text());
  return 0;
}

int cmd_analyze_features(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.model, "--model");
  require(a.data, "--data");
  man.add_input(a.data);
  const auto lm_model = load_model(a.model, a.encoder_endpoint);
  man.versions["model"] = model_versions(lm_model);
  const auto s = score_dataset(lm_model, a);

  std::vector<std::string> lm_texts;
  if (!a.lm_corpus.empty()) {
    man.add_input(a.lm_corpus);
    lm_texts = load_texts(a.lm_corpus, a);
  } else {
    lm_texts = corpus::select(load_dataset(a.data, a), corpus::Split::train).texts();
    if (lm_texts.empty()) lm_texts = s.texts;
  }
  auto ngram = std::make_shared<const analysis::NgramLM>(lm_texts, 4, 0.01);
  analysis::LengthExtractor length;
  analysis::NgramExtractor ngram_ex(ngram);
  std::vector<const analysis::FeatureExtractor*> extractors{&length, &ngram_ex};
  std::unique_ptr<analysis::ExternalFeatureExtractor> external;
  if (!a.feature_endpoint.empty()) {
    external = std::make_unique<analysis::ExternalFeatureExtractor>(a.feature_endpoint, split_list(a.feature_names));
    extractors.push_back(external.get());
    man.versions["features"] = {{"endpoint", a.feature_endpoint}, {"version", external->version()}};
  }
  std::vector<analysis::FeatureVector> fvs;
  for (const auto& t : s.texts) fvs.push_back(analysis::extract_features(t, extractors));
  const auto rep = analysis::feature_correlation_report(fvs, s.preds, s.gold, a.alpha, a.min_r);
  log << rep.tests << " features tested\n";
  emit_report(a, man, rep.to_json(), rep.to_text());
  return 0;
}

int cmd_analyze_transform(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.model, "--model");
  const std::string src = a.data.empty() ? a.input : a.data;
  if (src.empty()) throw UsageError("--data or --input is required");
  man.add_input(src);
  const auto lm = load_model(a.model, a.encoder_endpoint);
  man.versions["model"] = model_versions(lm);
  const auto texts = load_texts(src, a);
  std::vector<analysis::TransformationReport> reports;
  for (const auto& item : split_list(a.transforms)) {
    const auto eq = item.find('=');
    std::unique_ptr<analysis::Transformation> t;
    if (eq == std::string::npos) {
      try {
        t = analysis::make_transformation(item, a.deletion_p);
      } catch (const PreconditionError& e) {
        throw UsageError(e.what());
      }
    } else {
      t = std::make_unique<analysis::ExternalTransformation>(item.substr(0, eq), item.substr(eq + 1));
    }
    reports.push_back(analysis::transformation_report(lm, texts, *t, a.training.seed));
    log << reports.back().to_json().dump() << "\n";
  }
  json j = json::array();
  for (const auto& r : reports) j.push_back(r.to_json());
  emit_report(a, man, json{{"transformations", j}, {"n", texts.size()}}, analysis::transformation_table(reports));
  return 0;
}

int cmd_challenge(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.model, "--model");
  require(a.input, "--input");
  man.add_input(a.input);
  const auto lm = load_model(a.model, a.encoder_endpoint);
  man.versions["model"] = model_versions(lm);
  const auto items = analysis::load_challenge_tsv(a.input);
  const auto rep = analysis::challenge_report(lm, items);
  log << rep.n << " challenge items\n";
  emit_report(a, man, rep.to_json(), rep.to_text());
  return 0;
}

int cmd_route(const Args& a, RunManifest& man, std::ostream& log, const CLI::App* sub) {
  require(a.model, "--model");
  require(a.data, "--data");
  man.add_input(a.data);
  const auto lm = load_model(a.model, a.encoder_endpoint);
  man.versions["model"] = model_versions(lm);
  const auto s = score_dataset(lm, a);
  const double threshold = std::stod(a.threshold);
  std::optional<double> op;
  if (sub->count("--operating-threshold") > 0 || a.config.contains("operating_threshold")) op = a.operating_threshold;
  const auto rep = evaluate::routing_report(s.preds, s.gold, threshold, op);
  const auto rnd = evaluate::routing_report(evaluate::random_scores(s.preds.size(), 0), s.gold, threshold);
  json j = rep.to_json();
  j["random_baseline"] = {{"seed", 0}, {"operating_threshold", rnd.operating_threshold},
                          {"precision", rnd.precision}, {"recall", rnd.recall}};
  std::ostringstream text;
  text << "gold threshold " << threshold << ", base rate " << analysis::fixed(rep.curve.base_rate, 3) << "\n"
       << "operating threshold " << analysis::fixed(rep.operating_threshold, 3) << ": precision "
       << analysis::fixed(rep.precision, 3) << ", recall " << analysis::fixed(rep.recall, 3) << "\n"
       << "random baseline: precision " << analysis::fixed(rnd.precision, 3) << ", recall "
       << analysis::fixed(rnd.recall, 3) << "\n";
  if (!a.out.empty()) {
    const auto csv = sidecar(a.out, ".pr.csv");
    io::write_atomically(csv, rep.to_csv());
    man.add_output(csv);
  }
  log << "base rate " << rep.curve.base_rate << "\n";
  emit_report(a, man, j, text.str());
  return 0;
}

// {id, hypothesis, reference} per line -> {id, score}
int cmd_score(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.input, "--input");
  man.add_input(a.input);
  std::vector<json> rows;
  std::size_t line_no = 0;
  for (const auto& line : io::read_lines(a.input)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(a.input + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("hypothesis") || !j.contains("reference"))
      throw SchemaError(a.input + " line " + std::to_string(line_no) + ": needs hypothesis and reference");
    json row{{"id", j.value("id", json(std::to_string(line_no)))},
             {"score", metrics::chrf_pp(j["hypothesis"].get<std::string>(), j["reference"].get<std::string>())}};
    rows.push_back(std::move(row));
  }
  log << rows.size() << " pairs scored\n";
  if (a.out.empty()) {
    for (const auto& r : rows) std::cout << r.dump() << "\n";
    return 0;
  }
  write_jsonl(a.out, rows);
  man.add_output(a.out);
  man.write(sidecar(a.out, ".manifest.json"));
  return 0;
}

// Pearson r (and p) between two numeric keys of a JSONL file.
int cmd_correlate(const Args& a, RunManifest& man, std::ostream& log) {
  require(a.input, "--input");
  man.add_input(a.input);
  std::vector<double> xs, ys;
  std::size_t line_no = 0;
  for (const auto& line : io::read_lines(a.input)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const json j = json::parse(line);
    auto num = [&](const std::string& key) {
      auto it = j.find(key);
      if (it == j.end() || !it->is_number())
        throw SchemaError(a.input + " line " + std::to_string(line_no) + ": '" + key + "' is missing or not a number");
      return it->get<double>();
    };
    xs.push_back(num(a.x_key));
    ys.push_back(num(a.y_key));
  }
  const double r = metrics::pearson(xs, ys);
  const json rep{{"x", a.x_key}, {"y", a.y_key}, {"n", xs.size()}, {"r", r}, {"p", metrics::pearson_p_value(r, xs.size())}};
  log << "r " << r << "\n";
  emit_report(a, man, rep, rep.dump() + "\n");
  return 0;
}

fs::path log_location(const Args& a) {
  if (!a.log_path.empty()) return a.log_path;
  if (a.out.empty()) return "prequel.log";
  if (a.command == "train") return fs::path(a.out) / "prequel.log";
  return sidecar(a.out, ".log");
}

void write_log(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream(path) << content;
}

}  // namespace

int main(int argc, char** argv) {
  Args a;
  CLI::App app{"prequel: source-only translation quality prediction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config_path, "JSON config file; flags take precedence")->check(CLI::ExistingFile);
    sub->add_option("--log", a.log_path, "log file (default: beside the output)");
    sub->add_option("--out", a.out, "output path");
    sub->add_option("--seed", a.seeds, "seed, or comma-separated seeds for an ensemble");
  };
  auto data_opts = [&](CLI::App* sub) {
    sub->add_option("--data", a.data, "labelled JSONL (or DA TSV)");
    sub->add_option("--split", a.split, "split to use: train, dev, test, all, auto")
        ->check(CLI::IsMember({"train", "dev", "test", "heldout-eval", "all", "auto"}));
    sub->add_option("--label", a.label, "gold label name");
    sub->add_option("--model", a.model, "checkpoint or ensemble directory");
    sub->add_option("--encoder-endpoint", a.encoder_endpoint, "override the stored encoder endpoint");
  };

  auto* ingest = app.add_subcommand("ingest", "load a DA file or parallel text and write canonical JSONL");
  common(ingest);
  ingest->add_option("--input", a.input, "DA TSV/JSONL, or source-side text file")->check(CLI::ExistingFile);
  ingest->add_option("--reference", a.reference, "reference-side text file (parallel input)")->check(CLI::ExistingFile);
  ingest->add_option("--format", a.format, "input format")->check(CLI::IsMember({"auto", "tsv", "jsonl", "parallel"}));
  ingest->add_option("--name", a.name, "dataset name");
  ingest->add_option("--src-lang", a.src_lang, "source language");
  ingest->add_option("--tgt-lang", a.tgt_lang, "target language");
  ingest->add_option("--label", a.label, "label name for the DA mean column");
  ingest->add_option("--split-ratios", a.ratios, "train,dev,test ratios, or none");
  ingest->add_flag("--keep-duplicates", a.keep_duplicates, "skip source deduplication");

  auto* aug = app.add_subcommand("augment", "translate a parallel corpus and label it with metric scores");
  common(aug);
  aug->add_option("--input", a.input, "parallel JSONL from ingest")->check(CLI::ExistingFile);
  aug->add_option("--mt-endpoint", a.mt_endpoint, "identity, exec:CMD or unix:PATH");
  aug->add_option("--scorer", a.scorers, "NAME[=ENDPOINT],...; chrfpp is built in");
  aug->add_option("--batch-size", a.batch_size, "requests per client call")->check(CLI::PositiveNumber);
  aug->add_option("--split-ratios", a.ratios, "train,dev,test ratios");

  auto* train = app.add_subcommand("train", "train one checkpoint per seed");
  common(train);
  data_opts(train);
  train->add_option("--dev", a.dev, "separate evaluation set (default: dev split, else a 10% holdout)");
  train->add_option("--intertrain", a.intertrain, "augmented JSONL to train on before the DA data");
  train->add_option("--aug-label", a.aug_label, "label used during intertraining");
  train->add_option("--backend", a.backend, "encoder backend")->check(CLI::IsMember({"feature", "encoder-adapter"}));
  train->add_option("--dim", a.dim, "encoder width")->check(CLI::PositiveNumber);
  train->add_option("--variant", a.variant, "model variant")->check(CLI::IsMember({"simple", "multitask", "combined"}));
  train->add_option("--heads", a.heads, "auxiliary heads for the multitask variant (label names)");
  train->add_option("--lr", a.training.learning_rate, "peak learning rate");
  train->add_option("--warmup", a.training.warmup_fraction, "warm-up fraction of all steps");
  train->add_option("--batch-size", a.training.batch_size, "examples per step");
  train->add_option("--epochs", a.training.max_epochs, "maximum epochs");
  train->add_option("--min-epochs", a.training.min_epochs, "early stops before this epoch trigger a seed reset");
  train->add_option("--eval-every", a.training.eval_every, "steps between evaluations (0: automatic)");
  train->add_option("--patience", a.training.patience, "non-improving evaluations before stopping");
  train->add_option("--reset-floor", a.training.reset_corr_floor, "final r below this triggers a seed reset");
  train->add_option("--max-resets", a.training.max_seed_resets, "seed resets before giving up");

  auto* predict = app.add_subcommand("predict", "score sentences");
  common(predict);
  data_opts(predict);
  predict->add_option("--input", a.input, "JSONL dataset or one sentence per line")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("evaluate", "correlation of predictions with gold labels");
  common(eval);
  data_opts(eval);

  auto* feats = app.add_subcommand("analyze-features", "correlate surface features with predictions and gold");
  common(feats);
  data_opts(feats);
  feats->add_option("--lm-corpus", a.lm_corpus, "n-gram LM training text (default: train split)");
  feats->add_option("--feature-endpoint", a.feature_endpoint, "external parser/LM feature service");
  feats->add_option("--feature-names", a.feature_names, "features requested from the external service");
  feats->add_option("--alpha", a.alpha, "family-wise significance level");
  feats->add_option("--min-r", a.min_r, "minimum |r| for inclusion");

  auto* trans = app.add_subcommand("analyze-transform", "score changes under text transformations");
  common(trans);
  data_opts(trans);
  trans->add_option("--input", a.input, "one sentence per line")->check(CLI::ExistingFile);
  trans->add_option("--transform", a.transforms, "built-in names or NAME=ENDPOINT, comma-separated");
  trans->add_option("--deletion-p", a.deletion_p, "word drop probability for random-deletion");

  auto* chal = app.add_subcommand("challenge", "word-order challenge-set correlations");
  common(chal);
  data_opts(chal);
  chal->add_option("--input", a.input, "challenge TSV (v1..v4)")->check(CLI::ExistingFile);

  auto* route = app.add_subcommand("route", "precision/recall of routing by predicted score");
  common(route);
  data_opts(route);
  route->add_option("--threshold", a.threshold, "gold score counted as good enough")->check(CLI::IsMember({"70", "90"}));
  route->add_option("--operating-threshold", a.operating_threshold, "accept when the prediction reaches this (default: best F1)");

  auto* score = app.add_subcommand("score", "chrF++ of hypothesis/reference pairs in JSONL");
  common(score);
  score->add_option("--input", a.input, "JSONL with hypothesis and reference")->check(CLI::ExistingFile);

  auto* corr = app.add_subcommand("correlate", "Pearson correlation between two keys of a JSONL file");
  common(corr);
  corr->add_option("--input", a.input, "JSONL file")->check(CLI::ExistingFile);
  corr->add_option("--x", a.x_key, "first key");
  corr->add_option("--y", a.y_key, "second key");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  a.command = sub->get_name();
  RunManifest man;
  man.command = a.command;
  std::ostringstream log;
  log << "command:";
  for (int i = 0; i < argc; ++i) log << ' ' << argv[i];
  log << '\n';

  int rc = 0;
  try {
    if (!a.config_path.empty()) {
      try {
        a.config = json::parse(io::read_file(a.config_path));
      } catch (const json::exception& e) {
        throw UsageError("config " + a.config_path + ": " + e.what());
      }
      if (!a.config.is_object()) throw UsageError("config " + a.config_path + " must be a JSON object");
      man.add_input(a.config_path);
    }
    const json& c = a.config;
    // Training fields first from the file, then flags on top.
    {
      model::TrainingConfig from_file;
      from_file.merge_json(c);
      auto keep = [&](const char* flag, auto& field, const auto& file_value) {
        if (!(sub->get_option_no_throw(flag) && sub->count(flag) > 0)) field = file_value;
      };
      keep("--lr", a.training.learning_rate, from_file.learning_rate);
      keep("--warmup", a.training.warmup_fraction, from_file.warmup_fraction);
      keep("--batch-size", a.training.batch_size, from_file.batch_size);
      keep("--epochs", a.training.max_epochs, from_file.max_epochs);
      keep("--min-epochs", a.training.min_epochs, from_file.min_epochs);
      keep("--eval-every", a.training.eval_every, from_file.eval_every);
      keep("--patience", a.training.patience, from_file.patience);
      keep("--reset-floor", a.training.reset_corr_floor, from_file.reset_corr_floor);
      keep("--max-resets", a.training.max_seed_resets, from_file.max_seed_resets);
      a.training.head_loss_weights = from_file.head_loss_weights;
      a.training.head_labels = from_file.head_labels;
      a.training.holdout_fraction = from_file.holdout_fraction;
    }
    layer(sub, "--seed", a.seeds, c, "seeds");
    if (!c.contains("seeds")) layer(sub, "--seed", a.seeds, c, "seed");
    layer(sub, "--out", a.out, c, "out");
    layer(sub, "--input", a.input, c, "input");
    layer(sub, "--reference", a.reference, c, "reference");
    layer(sub, "--data", a.data, c, "data");
    layer(sub, "--dev", a.dev, c, "dev");
    layer(sub, "--model", a.model, c, "model");
    layer(sub, "--intertrain", a.intertrain, c, "intertrain");
    layer(sub, "--format", a.format, c, "format");
    layer(sub, "--name", a.name, c, "name");
    layer(sub, "--src-lang", a.src_lang, c, "source_lang");
    layer(sub, "--tgt-lang", a.tgt_lang, c, "target_lang");
    layer(sub, "--label", a.label, c, "label");
    layer(sub, "--aug-label", a.aug_label, c, "aug_label");
    layer(sub, "--split-ratios", a.ratios, c, "split_ratios");
    layer(sub, "--threshold", a.threshold, c, "threshold");
    layer(sub, "--operating-threshold", a.operating_threshold, c, "operating_threshold");
    layer(sub, "--backend", a.backend, c, "backend");
    layer(sub, "--encoder-endpoint", a.encoder_endpoint, c, "encoder_endpoint");
    layer(sub, "--mt-endpoint", a.mt_endpoint, c, "mt_endpoint");
    layer(sub, "--scorer", a.scorers, c, "scorers");
    layer(sub, "--dim", a.dim, c, "dim");
    layer(sub, "--variant", a.variant, c, "variant");
    layer(sub, "--heads", a.heads, c, "heads");
    layer(sub, "--split", a.split, c, "split");
    layer(sub, "--transform", a.transforms, c, "transforms");
    layer(sub, "--deletion-p", a.deletion_p, c, "deletion_p");
    layer(sub, "--feature-endpoint", a.feature_endpoint, c, "feature_endpoint");
    layer(sub, "--feature-names", a.feature_names, c, "feature_names");
    layer(sub, "--lm-corpus", a.lm_corpus, c, "lm_corpus");
    layer(sub, "--alpha", a.alpha, c, "alpha");
    layer(sub, "--min-r", a.min_r, c, "min_r");
    layer(sub, "--x", a.x_key, c, "x");
    layer(sub, "--y", a.y_key, c, "y");
    if (a.command == "augment") layer(sub, "--batch-size", a.batch_size, c, "batch_size");
    if (a.threshold != "70" && a.threshold != "90") throw UsageError("--threshold must be 70 or 90");

    a.training.seed = parse_seeds(a.seeds).front();
    a.training.validate();

    man.config = {{"seeds", parse_seeds(a.seeds)}, {"label", a.label}, {"split", a.split}};
    if (a.command == "ingest")
      man.config.update({{"format", a.format}, {"name", a.name}, {"source_lang", a.src_lang}, {"target_lang", a.tgt_lang},
                         {"split_ratios", a.ratios}, {"deduplicate", !a.keep_duplicates}});
    if (a.command == "augment")
      man.config.update({{"mt_endpoint", a.mt_endpoint}, {"scorers", a.scorers}, {"batch_size", a.batch_size},
                         {"split_ratios", a.ratios}});
    if (a.command == "train")
      man.config.update({{"backend", a.backend}, {"dim", a.dim}, {"variant", a.variant}, {"heads", a.heads},
                         {"aug_label", a.aug_label}, {"encoder_endpoint", a.encoder_endpoint}});
    if (a.command == "route") man.config["threshold"] = a.threshold;
    if (a.command == "analyze-transform") man.config.update({{"transforms", a.transforms}, {"deletion_p", a.deletion_p}});
    if (a.command == "analyze-features")
      man.config.update({{"alpha", a.alpha}, {"min_r", a.min_r}, {"feature_endpoint", a.feature_endpoint},
                         {"feature_names", a.feature_names}});
    log << "config: " << man.config.dump() << '\n';

    if (a.command == "ingest") rc = cmd_ingest(a, man, log);
    else if (a.command == "augment") rc = cmd_augment(a, man, log);
    else if (a.command == "train") rc = cmd_train(a, man, log);
    else if (a.command == "predict") rc = cmd_predict(a, man, log);
    else if (a.command == "evaluate") rc = cmd_evaluate(a, man, log);
    else if (a.command == "analyze-features") rc = cmd_analyze_features(a, man, log);
    else if (a.command == "analyze-transform") rc = cmd_analyze_transform(a, man, log);
    else if (a.command == "challenge") rc = cmd_challenge(a, man, log);
    else if (a.command == "route") rc = cmd_route(a, man, log, sub);
    else if (a.command == "score") rc = cmd_score(a, man, log);
    else if (a.command == "correlate") rc = cmd_correlate(a, man, log);
  } catch (const UsageError& e) {
    std::cerr << "prequel " << a.command << ": " << e.what() << "\n"
              << "Run with --help for more information.\n";
    return 2;
  } catch (const std::exception& e) {
    const auto path = log_location(a);
    log << "error: " << e.what() << '\n';
    write_log(path, log.str());
    std::string cause = e.what();
    if (auto nl = cause.find('\n'); nl != std::string::npos) cause.resize(nl);
    std::cerr << "prequel " << a.command << ": error: " << cause << " (log: " << path.string() << ")\n";
    return 1;
  }
  write_log(log_location(a), log.str());
  return rc;
}
