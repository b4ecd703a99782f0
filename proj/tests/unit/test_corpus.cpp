#include <gtest/gtest.h>

#include <set>

#include "prequel/corpus.hpp"
#include "support.hpp"

using namespace prequel;
using namespace prequel::corpus;
using testing_support::TempDir;

namespace {

Dataset make(std::vector<std::pair<std::string, double>> rows) {
  Dataset ds{"d", "en", "de", {}, {}, {}};
  std::size_t i = 0;
  for (auto& [text, v] : rows) {
    LabeledExample ex;
    ex.source = {"d:" + std::to_string(i++), text, "en", "d"};
    ex.labels["da"] = v;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

Dataset numbered(std::size_t n) {
  std::vector<std::pair<std::string, double>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.emplace_back("sentence " + std::to_string(i), static_cast<double>(i));
  return make(rows);
}

}  // namespace

TEST(CorpusLoad, ThreeRowTsv) {
  TempDir dir;
  io::write_atomically(dir / "x.tsv", "index\toriginal\ttranslation\tmean\n0\tHello.\tHallo.\t50\n1\tYes.\tJa.\t75\n2\tNo.\t\t100\n");
  const auto ds = load_da_tsv(dir / "x.tsv");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.labels("da"), (std::vector<double>{50, 75, 100}));
  EXPECT_EQ(ds.examples[0].source.text, "Hello.");
  ASSERT_TRUE(ds.examples[0].translation);
  EXPECT_EQ(ds.examples[0].translation->text, "Hallo.");
  EXPECT_FALSE(ds.examples[2].translation);
  EXPECT_EQ(ds.name, "x");
  EXPECT_FALSE(ds.has_splits());
}

TEST(CorpusLoad, DefaultIdsAndOptionalTranslation) {
  TempDir dir;
  io::write_atomically(dir / "y.tsv", "original\tmean\nA.\t1\nB.\t2\n");
  const auto ds = load_da_tsv(dir / "y.tsv");
  EXPECT_EQ(ds.examples[0].id(), "y:0");
  EXPECT_EQ(ds.examples[1].id(), "y:1");
}

TEST(CorpusLoad, Errors) {
  TempDir dir;
  io::write_atomically(dir / "empty.tsv", "");
  EXPECT_THROW(load_da_tsv(dir / "empty.tsv"), SchemaError);
  io::write_atomically(dir / "header.tsv", "index\toriginal\ttranslation\tmean\n");
  EXPECT_THROW(load_da_tsv(dir / "header.tsv"), SchemaError);
  io::write_atomically(dir / "nomean.tsv", "index\toriginal\n0\tA\n");
  try {
    load_da_tsv(dir / "nomean.tsv");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("mean"), std::string::npos);
  }
  io::write_atomically(dir / "bad.tsv", "index\toriginal\tmean\n0\tA\t1\n1\tB\tzz\n");
  try {
    load_da_tsv(dir / "bad.tsv");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
  io::write_atomically(dir / "cols.tsv", "index\toriginal\tmean\n0\tA\n");
  EXPECT_THROW(load_da_tsv(dir / "cols.tsv"), SchemaError);
  io::write_atomically(dir / "empty.jsonl", "\n");
  EXPECT_THROW(load_jsonl(dir / "empty.jsonl"), SchemaError);
  io::write_atomically(dir / "bad.jsonl", "{\"id\":\"a\"}\n");
  try {
    load_jsonl(dir / "bad.jsonl");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(CorpusLoad, SaveLoadRoundTripBothFormats) {
  TempDir dir;
  auto ds = split(make({{"Grüße aus Köln.", 12.5}, {"Second  sentence", -3.25}, {"Third", 1e-7}}), {0.34, 0.33, 0.33}, 3);
  ds.examples[0].translation = SentenceRecord{ds.examples[0].id(), "Greetings.", "de", "d"};
  save_dataset(ds, dir / "d.jsonl", DataFormat::jsonl);
  const auto back = load_jsonl(dir / "d.jsonl");
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.examples[i].source.text, ds.examples[i].source.text);
    EXPECT_NEAR(back.examples[i].label("da"), ds.examples[i].label("da"), 1e-9);
    EXPECT_EQ(back.split_of(back.examples[i]), ds.split_of(ds.examples[i]));
  }
  EXPECT_EQ(back.examples[0].translation->text, "Greetings.");
  EXPECT_EQ(to_jsonl(back), to_jsonl(ds));

  save_dataset(ds, dir / "d.tsv", DataFormat::tsv);
  LoadOptions named;
  named.name = "d";
  const auto tsv = load_da_tsv(dir / "d.tsv", named);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(tsv.examples[i].id(), ds.examples[i].id());
    EXPECT_EQ(tsv.examples[i].source.text, ds.examples[i].source.text);
    EXPECT_NEAR(tsv.examples[i].label("da"), ds.examples[i].label("da"), 1e-9);
  }
}

TEST(CorpusLoad, PartialSplitColumnRejected) {
  TempDir dir;
  io::write_atomically(dir / "p.jsonl",
                       "{\"id\":\"a\",\"source\":\"A\",\"source_lang\":\"en\",\"target_lang\":\"de\",\"translation\":null,"
                       "\"labels\":{\"da\":1},\"dataset_tag\":\"t\",\"split\":\"train\"}\n"
                       "{\"id\":\"b\",\"source\":\"B\",\"source_lang\":\"en\",\"target_lang\":\"de\",\"translation\":null,"
                       "\"labels\":{\"da\":2},\"dataset_tag\":\"t\",\"split\":null}\n");
  EXPECT_THROW(load_jsonl(dir / "p.jsonl"), SchemaError);
}

TEST(Normalize, MinMaxOnTrain) {
  auto [n, p] = normalize_labels(make({{"a", 50}, {"b", 75}, {"c", 100}}), "da");
  EXPECT_EQ(n.labels("da"), (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(p.min, 50);
  EXPECT_EQ(p.max, 100);
  ASSERT_NE(n.normalization("da"), nullptr);
}

TEST(Normalize, DevUnclampedAndFitIgnoresDev) {
  auto ds = make({{"a", 50}, {"b", 100}, {"c", 110}, {"d", 75}});
  ds.splits = {{"d:0", Split::train}, {"d:1", Split::train}, {"d:2", Split::dev}, {"d:3", Split::test}};
  auto [n, p] = normalize_labels(ds, "da");
  EXPECT_DOUBLE_EQ(n.examples[2].label("da"), 1.2);
  EXPECT_DOUBLE_EQ(n.examples[3].label("da"), 0.5);
  ds.examples[2].labels["da"] = -400;
  ds.examples[3].labels["da"] = 9999;
  auto [n2, p2] = normalize_labels(ds, "da");
  EXPECT_EQ(p2.min, p.min);
  EXPECT_EQ(p2.max, p.max);
}

TEST(Normalize, RoundTripAndConstantError) {
  Rng rng(1);
  std::vector<std::pair<std::string, double>> rows;
  for (int i = 0; i < 100; ++i) rows.emplace_back("s" + std::to_string(i), rng.uniform(-50, 150));
  const auto ds = make(rows);
  const auto [n, p] = normalize_labels(ds, "da");
  const auto back = denormalize_labels(n, "da");
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_LT(std::abs(back.examples[i].label("da") - ds.examples[i].label("da")), 1e-12);
  EXPECT_EQ(back.normalization("da"), nullptr);
  EXPECT_THROW(normalize_labels(make({{"a", 3}, {"b", 3}}), "da"), PreconditionError);
}

TEST(Dedup, KeepsFirstOccurrenceStable) {
  const auto ds = deduplicate(make({{"a", 1}, {"b", 2}, {" a ", 3}}));
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.examples[0].source.text, "a");
  EXPECT_EQ(ds.examples[1].source.text, "b");
  const auto distinct = numbered(5);
  EXPECT_EQ(to_jsonl(deduplicate(distinct)), to_jsonl(distinct));
}

TEST(Dedup, NfcEquivalentTextsAreDuplicates) {
  const auto ds = deduplicate(make({{"Cafe\xCC\x81", 1}, {"Caf\xC3\xA9", 2}}));
  EXPECT_EQ(ds.size(), 1u);
}

TEST(Dedup, PlantedDuplicatesAndIdempotence) {
  Rng rng(9);
  std::vector<std::pair<std::string, double>> rows;
  for (int i = 0; i < 800; ++i) rows.emplace_back("unique " + std::to_string(i), i);
  for (int i = 0; i < 200; ++i) rows.emplace_back("unique " + std::to_string(rng.below(800)), -i);
  const auto once = deduplicate(make(rows));
  std::set<std::string> expected;
  for (auto& r : rows) expected.insert(r.first);
  EXPECT_EQ(once.size(), expected.size());
  EXPECT_EQ(once.size(), 800u);
  EXPECT_EQ(to_jsonl(deduplicate(once)), to_jsonl(once));
}

TEST(Split, SizesAndDeterminism) {
  EXPECT_EQ(split_sizes(10, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{8, 1, 1}));
  EXPECT_EQ(split_sizes(3, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{1, 1, 1}));
  EXPECT_THROW(split_sizes(2, {0.8, 0.1, 0.1}), PreconditionError);
  EXPECT_THROW(split_sizes(10, {0.5, 0.1, 0.1}), PreconditionError);

  const auto ds = numbered(10);
  const auto a = split(ds, {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(a.count(Split::train), 8u);
  EXPECT_EQ(a.count(Split::dev), 1u);
  EXPECT_EQ(a.count(Split::test), 1u);
  EXPECT_EQ(a.splits, split(ds, {0.8, 0.1, 0.1}, 5).splits);
}

TEST(Split, PartitionAndRatioProperty) {
  for (std::size_t n : {7u, 13u, 100u, 1001u}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto ds = split(numbered(n), {0.8, 0.1, 0.1}, seed);
      EXPECT_EQ(ds.splits.size(), n);
      for (const auto& ex : ds.examples) EXPECT_TRUE(ds.splits.count(ex.id()));
      EXPECT_LE(std::abs(static_cast<double>(ds.count(Split::train)) - 0.8 * n), 1.0);
      EXPECT_LE(std::abs(static_cast<double>(ds.count(Split::dev)) - 0.1 * n), 1.0);
      EXPECT_LE(std::abs(static_cast<double>(ds.count(Split::test)) - 0.1 * n), 1.0);
    }
  }
}

TEST(Split, SeedsDiffer) {
  const auto ds = numbered(1000);
  const auto a = split(ds, {0.8, 0.1, 0.1}, 1), b = split(ds, {0.8, 0.1, 0.1}, 2);
  std::size_t hamming = 0;
  for (const auto& [id, s] : a.splits) hamming += b.splits.at(id) != s ? 1 : 0;
  EXPECT_GT(hamming, 0u);
}

TEST(Holdout, SizesAndDeterminism) {
  const auto ds = numbered(7000);
  const auto [kept, held] = holdout_eval(ds, 0.10, 3);
  EXPECT_EQ(kept.size(), 6300u);
  EXPECT_EQ(held.size(), 700u);
  for (const auto& ex : held.examples) EXPECT_EQ(held.split_of(ex), Split::heldout_eval);
  const auto [kept2, held2] = holdout_eval(ds, 0.10, 3);
  EXPECT_EQ(to_jsonl(held2), to_jsonl(held));
  const auto [all, none] = holdout_eval(ds, 0.0, 3);
  EXPECT_EQ(all.size(), 7000u);
  EXPECT_EQ(none.size(), 0u);
  EXPECT_THROW(holdout_eval(ds, 1.0, 3), PreconditionError);
}

TEST(Subsample, Basics) {
  const auto ds = numbered(50);
  const auto same = subsample(ds, 50, 1);
  EXPECT_EQ(to_jsonl(same), to_jsonl(ds));
  EXPECT_EQ(subsample(ds, 0, 1).size(), 0u);
  const auto s = subsample(ds, 20, 4);
  EXPECT_EQ(s.size(), 20u);
  EXPECT_EQ(to_jsonl(s), to_jsonl(subsample(ds, 20, 4)));
  EXPECT_THROW(subsample(ds, 51, 1), PreconditionError);
}

TEST(Swap, ReferenceBecomesInputAndRoundTrips) {
  Dataset ds{"p", "de", "en", {}, {}, {}};
  LabeledExample ex;
  ex.source = {"p:0", "Hallo", "de", "p"};
  ex.reference = SentenceRecord{"p:0", "Hello", "en", "p"};
  ex.labels["chrfpp"] = 0.123456789012345;
  ds.examples.push_back(ex);
  const auto swapped = swap_input_to_reference(ds);
  EXPECT_EQ(swapped.examples[0].source.text, "Hello");
  EXPECT_EQ(swapped.examples[0].source.lang, "en");
  EXPECT_EQ(swapped.source_lang, "en");
  EXPECT_EQ(swapped.examples[0].label("chrfpp"), ex.labels["chrfpp"]);
  EXPECT_EQ(to_jsonl(swap_input_to_reference(swapped)), to_jsonl(ds));
  ds.examples[0].reference.reset();
  EXPECT_THROW(swap_input_to_reference(ds), PreconditionError);
}

TEST(Parallel, TextAndJsonl) {
  TempDir dir;
  io::write_atomically(dir / "src.txt", "Hello.\nGood morning.\n\nBye.\n");
  io::write_atomically(dir / "ref.txt", "Hallo.\nGuten Morgen.\n\nTschüss.\n");
  LoadOptions opts;
  opts.name = "toy";
  const auto pc = load_parallel_text(dir / "src.txt", dir / "ref.txt", opts);
  ASSERT_EQ(pc.pairs.size(), 3u);
  EXPECT_EQ(pc.pairs[2].reference.text, "Tschüss.");
  io::write_atomically(dir / "p.jsonl", to_jsonl(pc));
  const auto back = load_parallel_jsonl(dir / "p.jsonl", opts);
  EXPECT_EQ(to_jsonl(back), to_jsonl(pc));
  io::write_atomically(dir / "short.txt", "one\n");
  EXPECT_THROW(load_parallel_text(dir / "src.txt", dir / "short.txt", opts), SchemaError);
  opts.target_lang = "en";
  EXPECT_THROW(load_parallel_text(dir / "src.txt", dir / "ref.txt", opts), PreconditionError);
}
