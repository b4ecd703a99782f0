#include <gtest/gtest.h>

#include <cmath>

#include "prequel/model.hpp"
#include "support.hpp"

using namespace prequel;
using namespace prequel::model;
using testing_support::mock;
using testing_support::TempDir;

TEST(Encoder, DeterministicFixedWidthWithLengthChannels) {
  HashedNgramEncoder enc(32);
  const auto a = enc.encode("the small garden opens");
  EXPECT_EQ(a.size(), 32u);
  EXPECT_EQ(a, enc.encode("the small garden opens"));
  EXPECT_NE(a, enc.encode("the small garden closes"));
  EXPECT_DOUBLE_EQ(a[30], 22.0 / 100.0);
  EXPECT_DOUBLE_EQ(a[31], 4.0 / 20.0);
  double norm = 0.0;
  for (std::size_t i = 0; i < 30; ++i) norm += a[i] * a[i];
  EXPECT_NEAR(norm, 1.0, 1e-12);
  EXPECT_THROW(enc.encode("   "), PreconditionError);
  EXPECT_THROW(HashedNgramEncoder(2), PreconditionError);
}

TEST(Encoder, OneCharacterEditsRarelyCollide) {
  HashedNgramEncoder enc;
  prequel::Rng rng(5);
  const std::string letters = "abcdefghijklmnopqrstuvwxyz";
  int collisions = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string a = testing_support::sentence(rng, 2 + rng.below(12));
    std::string b = a;
    std::size_t pos;
    do pos = rng.below(b.size());
    while (b[pos] == ' ' || b[pos] == '.');
    do b[pos] = letters[rng.below(letters.size())];
    while (b[pos] == a[pos]);
    collisions += enc.encode(a) == enc.encode(b);
  }
  EXPECT_LT(collisions, 10);
}

TEST(Encoder, AdapterReadsVectorsFromService) {
  EncoderAdapter adapter(mock("encoder --dim 12"), 12, "mock-1");
  HashedNgramEncoder local(12);
  EXPECT_EQ(adapter.encode("a quiet street"), local.encode("a quiet street"));
  EncoderAdapter wrong_width(mock("encoder --dim 12"), 16);
  EXPECT_THROW(wrong_width.encode("a quiet street"), TransportError);
  const auto rebuilt = make_backend(adapter.describe());
  EXPECT_EQ(rebuilt->dim(), 12u);
  EXPECT_EQ(rebuilt->version(), "mock-1");
}

TEST(Head, BackwardMatchesFiniteDifferences) {
  RegressionHead h(5, 4);
  Rng rng(3);
  h.initialize(rng);
  const std::vector<double> x{0.3, -0.2, 0.9, 0.1, -0.7};
  std::vector<double> hidden;
  h.forward(x, &hidden);
  std::vector<double> grad(h.parameter_count(), 0.0);
  h.backward(x, hidden, 1.0, grad);
  const double eps = 1e-6;
  for (std::size_t k = 0; k < h.parameter_count(); ++k) {
    RegressionHead plus = h, minus = h;
    plus.parameters()[k] += eps;
    minus.parameters()[k] -= eps;
    const double fd = (plus.forward(x) - minus.forward(x)) / (2 * eps);
    EXPECT_NEAR(grad[k], fd, 1e-8) << "parameter " << k;
  }
}

TEST(Head, RejectsWrongInputWidth) {
  RegressionHead h(3, 3);
  const std::vector<double> x{1.0, 2.0};
  EXPECT_THROW(h.forward(x), PreconditionError);
}

TEST(Model, VariantsHaveExpectedShapes) {
  auto a = std::make_shared<HashedNgramEncoder>(16);
  auto b = std::make_shared<HashedNgramEncoder>(8, 2, 3);
  const auto s = PredictorModel::simple(a);
  EXPECT_EQ(s.head_names(), std::vector<std::string>{"da"});
  EXPECT_EQ(s.head("da").input_dim(), 16u);
  EXPECT_EQ(s.head("da").hidden_dim(), 16u);
  const auto m = PredictorModel::multitask(a, {"chrfpp", "bertscore"});
  EXPECT_EQ(m.head_names(), (std::vector<std::string>{"bertscore", "chrfpp", "da"}));
  const auto c = PredictorModel::combined(a, b);
  EXPECT_EQ(c.input_dim(), 24u);
  EXPECT_EQ(c.encode("old stone bridge").size(), 24u);
  EXPECT_EQ(variant_from_string("combined"), Variant::combined);
  EXPECT_THROW(variant_from_string("other"), PreconditionError);
}

TEST(Model, HeadInitIndependentOfOtherHeads) {
  auto enc = std::make_shared<HashedNgramEncoder>(8);
  auto one = PredictorModel::multitask(enc, {"chrfpp"});
  auto two = PredictorModel::multitask(enc, {"chrfpp", "comet"});
  one.initialize(9);
  two.initialize(9);
  EXPECT_EQ(one.head("da"), two.head("da"));
  EXPECT_EQ(one.head("chrfpp"), two.head("chrfpp"));
}

TEST(Checkpoint, RoundTripAndByteDeterminism) {
  TempDir dir;
  auto enc = std::make_shared<HashedNgramEncoder>(16);
  auto m = PredictorModel::multitask(enc, {"chrfpp"});
  m.initialize(5);
  save_checkpoint(m, dir / "a", {{"note", "x"}});
  save_checkpoint(m, dir / "b", {{"note", "x"}});
  for (const char* f : {"config.json", "head-da.bin", "head-chrfpp.bin"})
    EXPECT_EQ(io::read_file(dir / "a" / f), io::read_file(dir / "b" / f)) << f;
  const auto blob = io::read_file(dir / "a" / "head-da.bin");
  EXPECT_EQ(blob.substr(0, 4), "PQHD");
  EXPECT_EQ(blob.size(), 16u + 8u * (16 * 16 + 2 * 16 + 1));
  const auto back = load_checkpoint(dir.path() / "a");
  EXPECT_TRUE(back.same_weights(m));
  EXPECT_EQ(back.variant(), Variant::multitask);
  EXPECT_EQ(back.predict("a green door"), m.predict("a green door"));
  EXPECT_EQ(read_checkpoint_config(dir.path() / "a")["metadata"]["note"], "x");
}

TEST(Checkpoint, CombinedRoundTrip) {
  TempDir dir;
  auto m = PredictorModel::combined(std::make_shared<HashedNgramEncoder>(8), std::make_shared<HashedNgramEncoder>(6, 2, 4));
  m.initialize(2);
  save_checkpoint(m, dir / "c");
  const auto back = load_checkpoint(dir.path() / "c");
  EXPECT_EQ(back.input_dim(), 14u);
  EXPECT_EQ(back.predict("winter music"), m.predict("winter music"));
}

TEST(Checkpoint, CorruptBlobsRejected) {
  RegressionHead h(2, 2);
  auto blob = encode_head(h);
  EXPECT_EQ(decode_head(blob), h);
  EXPECT_THROW(decode_head(blob.substr(0, blob.size() - 1)), Error);
  EXPECT_THROW(decode_head(blob + "x"), Error);
  blob[0] = 'X';
  EXPECT_THROW(decode_head(blob), Error);
}
