#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "prequel/corpus.hpp"
#include "prequel/io.hpp"
#include "prequel/random.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::string templ = (fs::temp_directory_path() / ("prequel-" + tag + "-XXXXXX")).string();
    if (!::mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string mock(const std::string& args) { return std::string("exec:") + PREQUEL_MOCK_SERVER + " " + args; }

inline const std::vector<std::string>& lexicon() {
  static const std::vector<std::string> words{
      "the",    "a",      "house",  "river",   "green",  "quickly", "runs",    "old",    "market", "table",
      "under",  "over",   "bright", "window",  "letter", "small",   "garden",  "opens",  "city",   "winter",
      "stone",  "bridge", "reads",  "careful", "music",  "train",   "station", "yellow", "paper",  "cold",
      "summer", "writes", "near",   "forest",  "quiet",  "street",  "carries", "heavy",  "light",  "door"};
  return words;
}

// Sentence of n words drawn from a small lexicon, ending in a period.
inline std::string sentence(prequel::Rng& rng, std::size_t n) {
  const auto& w = lexicon();
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += w[rng.below(w.size())];
  }
  return s + ".";
}

// Synthetic DA-style data: label = 100 - length-driven penalty + noise.
inline prequel::corpus::Dataset length_dataset(std::size_t n, std::uint64_t seed, double noise = 2.0,
                                               std::size_t min_words = 3, std::size_t max_words = 30) {
  prequel::Rng rng(seed);
  prequel::corpus::Dataset ds;
  ds.name = "synthetic";
  ds.source_lang = "en";
  ds.target_lang = "de";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t words = min_words + rng.below(max_words - min_words + 1);
    prequel::corpus::LabeledExample ex;
    ex.source = {"syn-" + std::to_string(i), sentence(rng, words) , "en", "synthetic"};
    // Unique by construction: the index is part of the text.
    ex.source.text = "item " + std::to_string(i) + " " + ex.source.text;
    const double len = static_cast<double>(ex.source.text.size());
    ex.labels["da"] = 100.0 - 0.5 * len + noise * rng.normal();
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// DA TSV in the ingest input format (index, original, mean).
inline void write_da_tsv(const prequel::corpus::Dataset& ds, const fs::path& path, const std::string& label = "da") {
  std::ofstream out(path);
  out << "index\toriginal\tmean\n";
  for (const auto& ex : ds.examples) out << ex.id() << '\t' << ex.source.text << '\t' << ex.label(label) << '\n';
}

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

#ifdef PREQUEL_CLI
// Runs the CLI through the shell with the given argument string.
inline RunResult run_cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(PREQUEL_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, {}, {}};
  r.out = prequel::io::read_file(out);
  r.err = prequel::io::read_file(err);
  return r;
}
#endif

}  // namespace testing_support
