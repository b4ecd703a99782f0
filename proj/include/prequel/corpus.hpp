#pragma once

// Corpus ingestion: DA-labelled QE data and parallel corpora, label
// normalization, deduplication and reproducible splits.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prequel/error.hpp"
#include "prequel/io.hpp"
#include "prequel/random.hpp"
#include "prequel/text.hpp"

namespace prequel::corpus {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Split { train, dev, test, heldout_eval };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    case Split::heldout_eval: return "heldout-eval";
  }
  return "?";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  if (s == "heldout-eval") return Split::heldout_eval;
  throw SchemaError("unknown split '" + std::string(s) + "'");
}

struct SentenceRecord {
  std::string id;
  std::string text;
  std::string lang;
  std::string dataset_tag;

  void validate() const {
    if (text::trim(text).empty()) throw PreconditionError("sentence '" + id + "' has empty text");
    if (lang.empty()) throw PreconditionError("sentence '" + id + "' has no language");
  }
};

struct ParallelPair {
  SentenceRecord source;
  SentenceRecord reference;

  void validate() const {
    source.validate();
    reference.validate();
    if (source.lang == reference.lang)
      throw PreconditionError("pair '" + source.id + "': source and reference share language " +
                              source.lang);
  }
};

struct LabeledExample {
  SentenceRecord source;
  std::optional<SentenceRecord> translation;
  std::optional<SentenceRecord> reference;
  std::map<std::string, double> labels;

  const std::string& id() const { return source.id; }

  double label(const std::string& name) const {
    auto it = labels.find(name);
    if (it == labels.end()) throw PreconditionError("example '" + id() + "' lacks label '" + name + "'");
    return it->second;
  }

  void validate() const {
    source.validate();
    if (labels.empty()) throw PreconditionError("example '" + id() + "' has no labels");
    for (const auto& [name, v] : labels)
      if (!std::isfinite(v))
        throw PreconditionError("example '" + id() + "' label '" + name + "' is not finite");
  }
};

struct NormalizationParams {
  std::string label_name;
  double min = 0.0;
  double max = 1.0;

  double apply(double x) const { return (x - min) / (max - min); }
  double invert(double y) const { return y * (max - min) + min; }
};

struct Dataset {
  std::string name;
  std::string source_lang;
  std::string target_lang;
  std::vector<LabeledExample> examples;
  // Empty when the dataset has not been split.
  std::map<std::string, Split> splits;
  std::vector<NormalizationParams> norm;

  std::size_t size() const { return examples.size(); }
  bool has_splits() const { return !splits.empty(); }

  Split split_of(const LabeledExample& ex) const {
    auto it = splits.find(ex.id());
    if (it == splits.end()) throw PreconditionError("example '" + ex.id() + "' has no split");
    return it->second;
  }

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(splits.begin(), splits.end(),
                                                  [s](const auto& kv) { return kv.second == s; }));
  }

  const NormalizationParams* normalization(const std::string& label) const {
    for (const auto& p : norm)
      if (p.label_name == label) return &p;
    return nullptr;
  }

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(ex.source.text);
    return out;
  }

  std::vector<double> labels(const std::string& name) const {
    std::vector<double> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(ex.label(name));
    return out;
  }
};

// Returns the examples of one split, in dataset order. An unsplit dataset is
// treated as all-train.
inline Dataset select(const Dataset& ds, Split s) {
  Dataset out{ds.name, ds.source_lang, ds.target_lang, {}, {}, ds.norm};
  for (const auto& ex : ds.examples) {
    const Split which = ds.has_splits() ? ds.split_of(ex) : Split::train;
    if (which == s) {
      out.examples.push_back(ex);
      out.splits[ex.id()] = s;
    }
  }
  return out;
}

struct ParallelCorpus {
  std::string name;
  std::string source_lang;
  std::string target_lang;
  std::vector<ParallelPair> pairs;
};

enum class DataFormat { tsv, jsonl };

inline DataFormat format_from_string(std::string_view s) {
  if (s == "tsv") return DataFormat::tsv;
  if (s == "jsonl") return DataFormat::jsonl;
  throw PreconditionError("unknown data format '" + std::string(s) + "'");
}

struct LoadOptions {
  std::string name;  // defaults to the file stem
  std::string source_lang = "en";
  std::string target_lang = "de";
  std::string dataset_tag;  // defaults to name
  std::string label_name = "da";
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    std::size_t end = line.find('\t', start);
    if (end == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, end - start));
    start = end + 1;
  }
  return cols;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = text::trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline const json& require(const json& obj, const char* key, std::size_t row) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw SchemaError("row " + std::to_string(row) + ": missing key '" + key + "'");
  return *it;
}

inline std::optional<std::string> nullable_string(const json& obj, const char* key, std::size_t row) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string())
    throw SchemaError("row " + std::to_string(row) + ": key '" + key + "' must be a string");
  return it->get<std::string>();
}

inline std::string resolve_name(const LoadOptions& opts, const fs::path& path) {
  return opts.name.empty() ? path.stem().string() : opts.name;
}

}  // namespace detail

inline Dataset load_da_tsv(const fs::path& path, const LoadOptions& opts = {}) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || text::trim(lines[0]).empty()) throw SchemaError(path.string() + ": empty file");

  const auto header = detail::split_tabs(lines[0]);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (text::trim(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto col_text = column("original");
  const auto col_mean = column("mean");
  if (!col_text) throw SchemaError(path.string() + ": missing required column 'original'");
  if (!col_mean) throw SchemaError(path.string() + ": missing required column 'mean'");
  const auto col_index = column("index");
  const auto col_translation = column("translation");

  Dataset ds;
  ds.name = detail::resolve_name(opts, path);
  ds.source_lang = opts.source_lang;
  ds.target_lang = opts.target_lang;
  const std::string tag = opts.dataset_tag.empty() ? ds.name : opts.dataset_tag;

  std::set<std::string> seen;
  std::size_t row = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto cols = detail::split_tabs(lines[li]);
    ++row;
    if (cols.size() != header.size())
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": expected " +
                        std::to_string(header.size()) + " columns, found " +
                        std::to_string(cols.size()));
    const auto score = detail::parse_double(cols[*col_mean]);
    if (!score || !std::isfinite(*score))
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": bad mean '" +
                        cols[*col_mean] + "'");
    LabeledExample ex;
    ex.source.id = col_index ? std::string(text::trim(cols[*col_index]))
                             : ds.name + ":" + std::to_string(row - 1);
    if (ex.source.id.empty()) ex.source.id = ds.name + ":" + std::to_string(row - 1);
    if (!seen.insert(ex.source.id).second)
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": duplicate id '" +
                        ex.source.id + "'");
    ex.source.text = cols[*col_text];
    ex.source.lang = opts.source_lang;
    ex.source.dataset_tag = tag;
    if (text::trim(ex.source.text).empty())
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": empty source text");
    if (col_translation && !text::trim(cols[*col_translation]).empty())
      ex.translation = SentenceRecord{ex.source.id, cols[*col_translation], opts.target_lang, tag};
    ex.labels[opts.label_name] = *score;
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw SchemaError(path.string() + ": no data rows");
  return ds;
}

inline json example_to_json(const Dataset& ds, const LabeledExample& ex) {
  json j;
  j["id"] = ex.id();
  j["source"] = ex.source.text;
  j["source_lang"] = ex.source.lang;
  j["target_lang"] = ex.translation ? ex.translation->lang : ds.target_lang;
  j["translation"] = ex.translation ? json(ex.translation->text) : json(nullptr);
  if (ex.reference) {
    j["reference"] = ex.reference->text;
    j["reference_lang"] = ex.reference->lang;
  }
  j["labels"] = ex.labels;
  j["dataset_tag"] = ex.source.dataset_tag;
  auto it = ds.splits.find(ex.id());
  j["split"] = it == ds.splits.end() ? json(nullptr) : json(to_string(it->second));
  return j;
}

inline LabeledExample example_from_json(const json& j, std::size_t row, std::optional<Split>* split) {
  if (!j.is_object()) throw SchemaError("row " + std::to_string(row) + ": not a JSON object");
  LabeledExample ex;
  try {
    ex.source.id = detail::require(j, "id", row).get<std::string>();
    ex.source.text = detail::require(j, "source", row).get<std::string>();
    ex.source.lang = detail::require(j, "source_lang", row).get<std::string>();
    const auto target_lang = detail::require(j, "target_lang", row).get<std::string>();
    ex.source.dataset_tag = j.value("dataset_tag", std::string());
    if (auto t = detail::nullable_string(j, "translation", row))
      ex.translation = SentenceRecord{ex.source.id, *t, target_lang, ex.source.dataset_tag};
    if (auto r = detail::nullable_string(j, "reference", row)) {
      const auto ref_lang = j.value("reference_lang", target_lang);
      ex.reference = SentenceRecord{ex.source.id, *r, ref_lang, ex.source.dataset_tag};
    }
    const auto& labels = detail::require(j, "labels", row);
    if (!labels.is_object()) throw SchemaError("row " + std::to_string(row) + ": labels must be an object");
    for (const auto& [k, v] : labels.items()) {
      if (!v.is_number()) throw SchemaError("row " + std::to_string(row) + ": label '" + k + "' is not a number");
      ex.labels[k] = v.get<double>();
    }
    if (auto s = detail::nullable_string(j, "split", row)) *split = split_from_string(*s);
    else *split = std::nullopt;
  } catch (const json::exception& e) {
    throw SchemaError("row " + std::to_string(row) + ": " + e.what());
  }
  try {
    ex.validate();
  } catch (const PreconditionError& e) {
    throw SchemaError("row " + std::to_string(row) + ": " + e.what());
  }
  return ex;
}

inline Dataset load_jsonl(const fs::path& path, const LoadOptions& opts = {}) {
  const auto lines = io::read_lines(path);
  Dataset ds;
  ds.name = detail::resolve_name(opts, path);
  std::set<std::string> seen;
  std::size_t row = 0;
  std::size_t with_split = 0;
  for (const auto& line : lines) {
    if (text::trim(line).empty()) continue;
    ++row;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": " + e.what());
    }
    std::optional<Split> split;
    LabeledExample ex;
    try {
      ex = example_from_json(j, row, &split);
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ": " + e.what());
    }
    if (!seen.insert(ex.id()).second)
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": duplicate id '" + ex.id() + "'");
    if (ds.examples.empty()) {
      ds.source_lang = ex.source.lang;
      ds.target_lang = j["target_lang"].get<std::string>();
    }
    if (split) {
      ds.splits[ex.id()] = *split;
      ++with_split;
    }
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw SchemaError(path.string() + ": empty file");
  if (with_split != 0 && with_split != ds.examples.size())
    throw SchemaError(path.string() + ": split assigned to only " + std::to_string(with_split) +
                      " of " + std::to_string(ds.examples.size()) + " rows");
  return ds;
}

inline Dataset load_da_dataset(const fs::path& path, DataFormat format, const LoadOptions& opts = {}) {
  return format == DataFormat::tsv ? load_da_tsv(path, opts) : load_jsonl(path, opts);
}

inline std::string to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& ex : ds.examples) {
    out += example_to_json(ds, ex).dump();
    out += '\n';
  }
  return out;
}

inline std::string to_tsv(const Dataset& ds, const std::string& label_name = "da") {
  std::string out = "index\toriginal\ttranslation\tmean\n";
  auto check = [](const std::string& s) {
    if (s.find_first_of("\t\n") != std::string::npos)
      throw PreconditionError("text with tab or newline cannot be written as TSV");
    return s;
  };
  for (const auto& ex : ds.examples) {
    out += check(ex.id()) + '\t' + check(ex.source.text) + '\t' +
           (ex.translation ? check(ex.translation->text) : std::string()) + '\t' +
           detail::format_double(ex.label(label_name)) + '\n';
  }
  return out;
}

inline void save_dataset(const Dataset& ds, const fs::path& path, DataFormat format) {
  io::write_atomically(path, format == DataFormat::tsv ? to_tsv(ds) : to_jsonl(ds));
}

// Fits min-max parameters on the train split (the whole dataset when
// unsplit) and applies them to every split without clamping.
inline std::pair<Dataset, NormalizationParams> normalize_labels(const Dataset& ds,
                                                               const std::string& label_name) {
  double lo = INFINITY, hi = -INFINITY;
  std::size_t n = 0;
  for (const auto& ex : ds.examples) {
    if (ds.has_splits() && ds.split_of(ex) != Split::train) continue;
    const double v = ex.label(label_name);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    ++n;
  }
  if (n == 0) throw PreconditionError("normalize_labels: train split is empty");
  if (!(hi > lo))
    throw PreconditionError("normalize_labels: label '" + label_name +
                            "' is constant on the train split (min == max)");
  NormalizationParams params{label_name, lo, hi};
  Dataset out = ds;
  for (auto& ex : out.examples) ex.labels[label_name] = params.apply(ex.label(label_name));
  std::erase_if(out.norm, [&](const auto& p) { return p.label_name == label_name; });
  out.norm.push_back(params);
  return {std::move(out), params};
}

inline Dataset denormalize_labels(const Dataset& ds, const std::string& label_name) {
  const auto* params = ds.normalization(label_name);
  if (!params) throw PreconditionError("no normalization stored for label '" + label_name + "'");
  const NormalizationParams p = *params;
  Dataset out = ds;
  for (auto& ex : out.examples) ex.labels[label_name] = p.invert(ex.label(label_name));
  std::erase_if(out.norm, [&](const auto& q) { return q.label_name == label_name; });
  return out;
}

// Keeps the first occurrence of each source text (NFC, trimmed).
inline Dataset deduplicate(const Dataset& ds) {
  Dataset out{ds.name, ds.source_lang, ds.target_lang, {}, {}, ds.norm};
  std::unordered_set<std::string> seen;
  for (const auto& ex : ds.examples) {
    if (!seen.insert(text::comparison_key(ex.source.text)).second) continue;
    if (auto it = ds.splits.find(ex.id()); it != ds.splits.end()) out.splits[ex.id()] = it->second;
    out.examples.push_back(ex);
  }
  return out;
}

inline ParallelCorpus deduplicate(const ParallelCorpus& pc) {
  ParallelCorpus out{pc.name, pc.source_lang, pc.target_lang, {}};
  std::unordered_set<std::string> seen;
  for (const auto& p : pc.pairs)
    if (seen.insert(text::comparison_key(p.source.text)).second) out.pairs.push_back(p);
  return out;
}

using SplitRatios = std::array<double, 3>;

// Split sizes by largest remainder; every split with a positive ratio gets at
// least one example.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw PreconditionError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw PreconditionError("split ratios must sum to 1");
  const auto wanted = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(),
                                                             [](double r) { return r > 0.0; }));
  if (n < wanted)
    throw PreconditionError("cannot split " + std::to_string(n) + " examples into " +
                            std::to_string(wanted) + " non-empty splits");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - std::floor(exact);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i) {
    if (ratios[i] > 0.0 && sizes[i] == 0) {
      int donor = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      --sizes[donor];
      ++sizes[i];
    }
  }
  return sizes;
}

// Seeded shuffle, then contiguous train/dev/test slices. Example order in the
// dataset is preserved; only the split map changes.
inline Dataset split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  const auto sizes = split_sizes(ds.size(), ratios);
  const auto order = shuffled_indices(ds.size(), seed);
  Dataset out = ds;
  out.splits.clear();
  std::size_t pos = 0;
  const Split kinds[3] = {Split::train, Split::dev, Split::test};
  for (int s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < sizes[s]; ++k, ++pos) out.splits[ds.examples[order[pos]].id()] = kinds[s];
  return out;
}

namespace detail {

inline std::vector<bool> pick_mask(std::size_t n, std::size_t k, std::uint64_t seed) {
  const auto order = shuffled_indices(n, seed);
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = true;
  return mask;
}

}  // namespace detail

// Moves round(fraction * n) examples into a held-out evaluation set. The
// input is treated as a train split regardless of its split map.
inline std::pair<Dataset, Dataset> holdout_eval(const Dataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw PreconditionError("holdout fraction must be in [0, 1)");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
  if (k > 0 && k >= train.size())
    throw PreconditionError("holdout would leave no training examples");
  const auto mask = detail::pick_mask(train.size(), k, seed);
  Dataset kept{train.name, train.source_lang, train.target_lang, {}, {}, train.norm};
  Dataset held{train.name, train.source_lang, train.target_lang, {}, {}, train.norm};
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& ex = train.examples[i];
    if (mask[i]) {
      held.examples.push_back(ex);
      held.splits[ex.id()] = Split::heldout_eval;
    } else {
      kept.examples.push_back(ex);
      kept.splits[ex.id()] = Split::train;
    }
  }
  return {std::move(kept), std::move(held)};
}

inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size())
    throw PreconditionError("subsample: requested " + std::to_string(n) + " of " +
                            std::to_string(ds.size()) + " examples");
  const auto mask = detail::pick_mask(ds.size(), n, seed);
  Dataset out{ds.name, ds.source_lang, ds.target_lang, {}, {}, ds.norm};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!mask[i]) continue;
    const auto& ex = ds.examples[i];
    if (auto it = ds.splits.find(ex.id()); it != ds.splits.end()) out.splits[ex.id()] = it->second;
    out.examples.push_back(ex);
  }
  return out;
}

// Makes the reference side the model input. Applying it twice restores the
// original dataset.
inline Dataset swap_input_to_reference(const Dataset& ds) {
  Dataset out = ds;
  std::swap(out.source_lang, out.target_lang);
  for (auto& ex : out.examples) {
    if (!ex.reference) throw PreconditionError("example '" + ex.id() + "' has no reference");
    SentenceRecord ref = *ex.reference;
    ref.id = ex.source.id;
    ex.reference = ex.source;
    ex.source = std::move(ref);
  }
  return out;
}

// --- parallel corpora ------------------------------------------------------

inline ParallelCorpus load_parallel_text(const fs::path& source_path, const fs::path& reference_path,
                                         const LoadOptions& opts) {
  const auto src = io::read_lines(source_path);
  const auto ref = io::read_lines(reference_path);
  if (src.size() != ref.size())
    throw SchemaError("parallel files differ in length: " + std::to_string(src.size()) + " vs " +
                      std::to_string(ref.size()));
  ParallelCorpus pc;
  pc.name = detail::resolve_name(opts, source_path);
  pc.source_lang = opts.source_lang;
  pc.target_lang = opts.target_lang;
  const std::string tag = opts.dataset_tag.empty() ? pc.name : opts.dataset_tag;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (text::trim(src[i]).empty() || text::trim(ref[i]).empty()) continue;
    const std::string id = pc.name + ":" + std::to_string(i);
    ParallelPair p{{id, src[i], opts.source_lang, tag}, {id, ref[i], opts.target_lang, tag}};
    p.validate();
    pc.pairs.push_back(std::move(p));
  }
  if (pc.pairs.empty()) throw SchemaError(source_path.string() + ": no sentence pairs");
  return pc;
}

inline std::string to_jsonl(const ParallelCorpus& pc) {
  std::string out;
  for (const auto& p : pc.pairs) {
    json j;
    j["id"] = p.source.id;
    j["source"] = p.source.text;
    j["source_lang"] = p.source.lang;
    j["reference"] = p.reference.text;
    j["target_lang"] = p.reference.lang;
    j["dataset_tag"] = p.source.dataset_tag;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline ParallelCorpus load_parallel_jsonl(const fs::path& path, const LoadOptions& opts = {}) {
  ParallelCorpus pc;
  pc.name = detail::resolve_name(opts, path);
  std::size_t row = 0;
  for (const auto& line : io::read_lines(path)) {
    if (text::trim(line).empty()) continue;
    ++row;
    try {
      const json j = json::parse(line);
      ParallelPair p;
      p.source.id = detail::require(j, "id", row).get<std::string>();
      p.source.text = detail::require(j, "source", row).get<std::string>();
      p.source.lang = detail::require(j, "source_lang", row).get<std::string>();
      p.source.dataset_tag = j.value("dataset_tag", pc.name);
      p.reference = {p.source.id, detail::require(j, "reference", row).get<std::string>(),
                     detail::require(j, "target_lang", row).get<std::string>(), p.source.dataset_tag};
      p.validate();
      if (pc.pairs.empty()) {
        pc.source_lang = p.source.lang;
        pc.target_lang = p.reference.lang;
      }
      pc.pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": " + e.what());
    } catch (const PreconditionError& e) {
      throw SchemaError(path.string() + ": row " + std::to_string(row) + ": " + e.what());
    }
  }
  if (pc.pairs.empty()) throw SchemaError(path.string() + ": empty file");
  return pc;
}

}  // namespace prequel::corpus
