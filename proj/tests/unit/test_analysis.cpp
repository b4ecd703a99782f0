#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "oracles/oracles.hpp"
#include "prequel/analysis.hpp"
#include "support.hpp"

using namespace prequel;
using namespace prequel::analysis;
using testing_support::mock;
using testing_support::TempDir;

namespace {

std::vector<std::string> sample_texts(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing_support::sentence(rng, 2 + rng.below(20)));
  return out;
}

double length_of(std::string_view s) { return static_cast<double>(text::char_count(s)); }

class BrokenExtractor : public FeatureExtractor {
 public:
  std::string name() const override { return "broken"; }
  std::string version() const override { return "0"; }
  std::vector<std::string> feature_names() const override { return {"broken_a", "broken_b"}; }
  void extract(std::string_view, FeatureVector&) const override { throw std::runtime_error("parser unavailable"); }
};

}  // namespace

TEST(Features, ExtractorsAndMissingValues) {
  const std::vector<std::string> corpus{"the old house", "the river"};
  auto lm = std::make_shared<NgramLM>(corpus);
  LengthExtractor len;
  NgramExtractor ngram(lm);
  ExternalFeatureExtractor ext(mock("features"), {"parse_tree_depth", "dep_case", "not_provided"});
  BrokenExtractor broken;
  const FeatureExtractor* all[] = {&len, &ngram, &ext, &broken};
  const auto fv = extract_features("the old river runs", all);
  EXPECT_EQ(fv.at("length"), 18.0);
  EXPECT_NEAR(fv.at("bigram"), lm->mean_log_prob("the old river runs", 2), 1e-15);
  EXPECT_TRUE(fv.has("unigram") && fv.has("3gram") && fv.has("4gram"));
  EXPECT_NEAR(fv.at("parse_tree_depth"), 1.0 + 4.0 / 3.0, 1e-12);
  EXPECT_EQ(fv.at("dep_case"), 1.0);
  EXPECT_EQ(fv.missing, (std::set<std::string>{"broken_a", "broken_b", "not_provided"}));
  EXPECT_THROW(fv.at("broken_a"), Error);
}

TEST(FeatureReport, NegatedLengthPredictor) {
  const auto texts = sample_texts(200, 3);
  Rng rng(8);
  std::vector<FeatureVector> fvs;
  std::vector<double> preds, gold;
  for (const auto& t : texts) {
    FeatureVector fv;
    fv.values["length"] = length_of(t);
    fv.values["noise"] = rng.normal();
    fv.values["constant"] = 1.0;
    fvs.push_back(fv);
    preds.push_back(-length_of(t));
    gold.push_back(-0.3 * length_of(t) + 5.0 * rng.normal());
  }
  fvs[0].values.erase("noise");
  fvs[0].missing.insert("noise");
  fvs[0].missing.insert("never_available");
  const auto rep = feature_correlation_report(fvs, preds, gold);
  EXPECT_EQ(rep.tests, 4u);
  EXPECT_EQ(rep.p_threshold, 0.05 / 4);
  const auto& length = rep.row("length");
  EXPECT_NEAR(*length.r_preds, -1.0, 1e-12);
  EXPECT_TRUE(length.significant);
  EXPECT_TRUE(length.included);
  EXPECT_TRUE(length.overestimated);
  EXPECT_EQ(rep.row("noise").n, 199u);
  EXPECT_FALSE(rep.row("noise").included);
  EXPECT_EQ(rep.row("constant").excluded_reason, "constant feature");
  EXPECT_EQ(rep.row("never_available").excluded_reason, "fewer than three observations");
  const auto j = rep.to_json();
  EXPECT_EQ(j["metadata"]["ngram_feature"], "mean natural-log probability per token");
  EXPECT_NE(rep.to_text().find("length"), std::string::npos);
}

TEST(FeatureReport, BonferroniFamilyOf83) {
  EXPECT_NEAR(metrics::bonferroni_threshold(0.05, 83), 6.024e-4, 1e-6);
  std::vector<FeatureVector> fvs(10);
  std::vector<double> preds, gold;
  for (int i = 0; i < 10; ++i) {
    for (int f = 0; f < 83; ++f) fvs[i].values["f" + std::to_string(f)] = std::sin(i * (f + 1.0));
    preds.push_back(i);
    gold.push_back(i % 3);
  }
  const auto rep = feature_correlation_report(fvs, preds, gold);
  EXPECT_EQ(rep.tests, 83u);
  EXPECT_NEAR(rep.p_threshold, 0.05 / 83, 1e-18);
}

TEST(Transformations, Builtins) {
  IdentityTransformation id;
  EXPECT_EQ(id.apply("a b c", 1), "a b c");
  SentenceFinalPunctuation punct;
  EXPECT_EQ(punct.apply("The door opens.", 0), "The door opens");
  EXPECT_EQ(punct.apply("The door opens", 0), "The door opens.");
  EXPECT_EQ(punct.apply("Really?!", 0), "Really");
  RandomDeletion del(0.5);
  const std::string s = "one two three four five six seven eight nine ten";
  EXPECT_EQ(del.apply(s, 4), del.apply(s, 4));
  const auto words = text::split_words(del.apply(s, 4));
  EXPECT_GE(words.size(), 1u);
  EXPECT_LE(words.size(), 10u);
  RandomDeletion all(1.0);
  EXPECT_EQ(text::split_words(all.apply(s, 1)).size(), 1u);
  RandomDeletion none(0.0);
  EXPECT_EQ(none.apply(s, 1), s);
  ExternalTransformation ext("move-last", mock("transform"));
  EXPECT_EQ(ext.apply("a b c", 0), "c a b");
  EXPECT_EQ(make_transformation("random-deletion")->name(), "random-deletion");
  EXPECT_THROW(make_transformation("nope"), PreconditionError);
}

TEST(TransformationReport, Properties) {
  const auto texts = sample_texts(50, 9);
  IdentityTransformation id;
  const auto r0 = transformation_report(length_of, texts, id);
  EXPECT_EQ(r0.n_changed, 0u);
  EXPECT_FALSE(r0.diff);

  RandomDeletion del(0.3);
  auto constant = [](std::string_view) { return 42.0; };
  const auto r1 = transformation_report(constant, texts, del);
  EXPECT_GT(r1.n_changed, 0u);
  EXPECT_EQ(*r1.diff, 0.0);

  // Appending sentences the transformation leaves alone changes nothing.
  const auto r2 = transformation_report(length_of, texts, del);
  auto padded = texts;
  for (const std::string extra : {"x", "y"}) padded.push_back(extra);  // single words survive deletion
  const auto r3 = transformation_report(length_of, padded, del);
  EXPECT_EQ(r3.n_changed, r2.n_changed);
  EXPECT_EQ(*r3.diff, *r2.diff);
  EXPECT_EQ(*r3.mean_src, *r2.mean_src);
  EXPECT_EQ(r3.n_total, r2.n_total + 2);
  EXPECT_LT(*r2.diff, 0.0);
  const TransformationReport reps[] = {r0, r2};
  EXPECT_NE(transformation_table(reps).find("random-deletion"), std::string::npos);
}

TEST(Challenge, MeaningOnlyPredictor) {
  std::vector<ChallengeItem> items;
  std::map<std::string, double> score;
  for (int i = 0; i < 12; ++i) {
    const std::string a = "noun" + std::to_string(i), b = "thing" + std::to_string(i);
    ChallengeItem it{a + " sees " + b, b + " " + a + " sees", "the " + b + " sees " + a, a + " the " + b + " sees"};
    // Version pairs (v1, v2) and (v3, v4) share a meaning.
    score[it.v1] = score[it.v2] = std::sin(i * 1.7);
    score[*it.v3] = score[*it.v4] = std::cos(i * 0.9);
    items.push_back(it);
  }
  auto predictor = [&](std::string_view s) { return score.at(std::string(s)); };
  const auto rep = challenge_report(predictor, items);
  EXPECT_EQ(rep.versions, 4u);
  EXPECT_EQ(rep.r(1, 2), 1.0);
  EXPECT_EQ(rep.r(3, 4), 1.0);
  for (auto [i, j] : {std::pair{1, 3}, {1, 4}, {2, 3}, {2, 4}}) {
    EXPECT_LT(rep.r(i, j), 1.0);
    std::vector<double> x, y;
    for (const auto& it : items) {
      const std::string* v[] = {&it.v1, &it.v2, &*it.v3, &*it.v4};
      x.push_back(predictor(*v[i - 1]));
      y.push_back(predictor(*v[j - 1]));
    }
    EXPECT_NEAR(rep.r(i, j), oracle::pearson(x, y), 1e-12);
  }
  EXPECT_TRUE(rep.to_json()["pairwise_r"].contains("3-4"));
  for (std::size_t i = 1; i <= 4; ++i)
    for (std::size_t j = 1; j <= 4; ++j) EXPECT_EQ(rep.r(i, j), rep.r(j, i));

  std::vector<ChallengeItem> same;
  for (const auto& it : items) same.push_back({it.v1, it.v1, it.v1, it.v1});
  const auto flat = challenge_report(predictor, same);
  for (std::size_t j = 2; j <= 4; ++j) {
    EXPECT_EQ(flat.r(1, j), 1.0);
    EXPECT_EQ(flat.means[j - 1], flat.means[0]);
  }
}

TEST(Challenge, LoaderValidation) {
  TempDir dir;
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return dir / name;
  };
  const auto pairs = load_challenge_tsv(write("pairs.tsv", "v1\tv2\ndog bites man\tman bites dog\na b\tb a\n"));
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_FALSE(pairs[0].four_versions());
  const auto rep = challenge_report([](std::string_view s) { return length_of(s); }, pairs);
  EXPECT_EQ(rep.versions, 2u);

  try {
    load_challenge_tsv(write("mixed.tsv", "v1\tv2\tv3\tv4\na\tb\tc\td\ne\tf\t\t\n"));
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
  EXPECT_THROW(load_challenge_tsv(write("dup.tsv", "v1\tv2\nsame\tsame\n")), SchemaError);
  EXPECT_THROW(load_challenge_tsv(write("nohdr.tsv", "a\tb\n")), SchemaError);
  const std::vector<ChallengeItem> one{{"a", "b", {}, {}}};
  EXPECT_THROW(challenge_report([](std::string_view) { return 1.0; }, one), PreconditionError);
}
