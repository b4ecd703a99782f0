#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "prequel/io.hpp"
#include "prequel/manifest.hpp"
#include "prequel/random.hpp"
#include "prequel/text.hpp"
#include "support.hpp"

using namespace prequel;

TEST(Text, TrimAndWords) {
  EXPECT_EQ(text::trim("  a b \t\n"), "a b");
  EXPECT_EQ(text::trim(" \t "), "");
  EXPECT_EQ(text::split_words("  one\ttwo  three\n"), (std::vector<std::string>{"one", "two", "three"}));
  EXPECT_TRUE(text::split_words("   ").empty());
  EXPECT_EQ(text::canonical_whitespace(" a \t b\n\nc "), "a b c");
}

TEST(Text, CodePointsCountCharactersNotBytes) {
  EXPECT_EQ(text::char_count("abc"), 3u);
  EXPECT_EQ(text::char_count("Grüße"), 5u);
  EXPECT_EQ(text::char_count("日本語"), 3u);
  // A lone continuation byte decodes to one replacement character.
  EXPECT_EQ(text::code_points("a\x80" "b"), (std::u32string{U'a', U'�', U'b'}));
}

TEST(Text, NfcComposes) {
  const std::string decomposed = "Cafe\xCC\x81";  // e + combining acute
  const std::string composed = "Caf\xC3\xA9";
  EXPECT_NE(decomposed, composed);
  EXPECT_EQ(text::nfc(decomposed), composed);
  EXPECT_EQ(text::comparison_key("  " + decomposed + " "), composed);
}

TEST(Random, DeterministicAndSeedSensitive) {
  Rng a(7), b(7), c(8);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
}

TEST(Random, RangesAndShuffle) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(rng.below(7), 7u);
  }
  auto idx = shuffled_indices(50, 11);
  EXPECT_EQ(idx, shuffled_indices(50, 11));
  EXPECT_NE(idx, shuffled_indices(50, 12));
  std::sort(idx.begin(), idx.end());
  std::vector<std::size_t> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(idx, expect);
}

TEST(Random, NormalMoments) {
  Rng rng(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.05);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Io, LinesAndAtomicWrite) {
  testing_support::TempDir dir;
  EXPECT_EQ(io::split_lines("a\r\nb\nc"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(io::split_lines("a\n"), (std::vector<std::string>{"a"}));
  const auto p = dir / "nested/deeper/file.txt";
  io::write_atomically(p, "hello\n");
  EXPECT_EQ(io::read_file(p), "hello\n");
  io::write_atomically(p, "bye\n");
  EXPECT_EQ(io::read_lines(p), (std::vector<std::string>{"bye"}));
  EXPECT_EQ(io::file_hash(p), io::content_hash("bye\n"));
  EXPECT_NE(io::content_hash("a"), io::content_hash("b"));
  EXPECT_THROW(io::read_file(dir / "missing"), Error);
}

TEST(Manifest, HashesInputsAndHasNoTimestamp) {
  testing_support::TempDir dir;
  io::write_atomically(dir / "in.txt", "data\n");
  RunManifest m;
  m.command = "ingest";
  m.config = {{"seed", 1}};
  m.add_input(dir / "in.txt");
  const auto j = m.to_json();
  EXPECT_EQ(j["inputs"][0]["hash"], io::content_hash("data\n"));
  EXPECT_EQ(j["config_hash"], io::content_hash(m.config.dump()));
  EXPECT_EQ(j["versions"]["prequel"], kVersion);
  EXPECT_FALSE(j.contains("created"));
  EXPECT_EQ(m.to_json(), j);
}
