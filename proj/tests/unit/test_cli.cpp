#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "prequel/prequel.hpp"
#include "support.hpp"

using namespace prequel;
using testing_support::run_cli;
using testing_support::TempDir;
using json = nlohmann::json;

namespace {

const std::string kTrainFlags = "--dim 32 --epochs 3 --lr 1e-2 --batch-size 8";

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(run_cli("", dir.path()).code, 2);
  EXPECT_EQ(run_cli("no-such-command", dir.path()).code, 2);
  const auto r = run_cli("train --out " + (dir / "m").string(), dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--data is required"), std::string::npos);
  EXPECT_EQ(run_cli("route --threshold 80", dir.path()).code, 2);
  EXPECT_EQ(run_cli("--help", dir.path()).code, 0);
}

TEST(Cli, RuntimeErrorsExitOneAndNameTheLog) {
  TempDir dir;
  std::ofstream(dir / "bad.tsv") << "original\tmean\nfine\t50\nbroken\tnot-a-number\n";
  const auto r = run_cli("ingest --input " + (dir / "bad.tsv").string() + " --out " + (dir / "o.jsonl").string(), dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("row 2"), std::string::npos);
  EXPECT_NE(r.err.find("(log: " + (dir / "o.jsonl.log").string() + ")"), std::string::npos);
  EXPECT_NE(io::read_file(dir / "o.jsonl.log").find("error:"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "o.jsonl"));
}

TEST(Cli, IngestWritesDataAndManifest) {
  TempDir dir;
  auto ds = testing_support::length_dataset(50, 1);
  ds.examples.push_back(ds.examples.front());
  ds.examples.back().source.id = "dup";
  testing_support::write_da_tsv(ds, dir / "da.tsv");
  const auto out = dir / "da.jsonl";
  const auto r = run_cli("ingest --input " + (dir / "da.tsv").string() + " --out " + out.string() + " --seed 3", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto loaded = corpus::load_jsonl(out);
  EXPECT_EQ(loaded.size(), 50u);
  EXPECT_EQ(loaded.count(corpus::Split::train), 40u);
  const auto man = json::parse(io::read_file(dir / "da.jsonl.manifest.json"));
  EXPECT_EQ(man["command"], "ingest");
  EXPECT_EQ(man["inputs"][0]["hash"], io::file_hash(dir / "da.tsv"));
  EXPECT_EQ(man["outputs"][0]["hash"], io::file_hash(out));
  EXPECT_EQ(man["config"]["counts"]["read"], 51);
  EXPECT_EQ(man["config"]["seeds"], json::array({3}));
  EXPECT_FALSE(man.contains("created"));
  // Refuses to overwrite its input.
  EXPECT_EQ(run_cli("ingest --input " + out.string() + " --out " + out.string(), dir.path()).code, 2);
}

TEST(Cli, TrainPredictEvaluateRoundTrip) {
  TempDir dir;
  testing_support::write_da_tsv(testing_support::length_dataset(200, 2), dir / "da.tsv");
  const auto data = dir / "da.jsonl";
  ASSERT_EQ(run_cli("ingest --input " + (dir / "da.tsv").string() + " --out " + data.string(), dir.path()).code, 0);

  const auto m1 = dir / "m1", m2 = dir / "m2";
  auto r = run_cli("train --data " + data.string() + " --out " + m1.string() + " " + kTrainFlags, dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli("train --data " + data.string() + " --out " + m2.string() + " " + kTrainFlags, dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"ensemble.json", "training.json", "manifest.json", "seed-1/head-da.bin", "seed-2/head-da.bin",
                        "seed-3/head-da.bin", "seed-3/config.json"})
    EXPECT_EQ(io::read_file(m1 / f), io::read_file(m2 / f)) << f;

  const auto ens = json::parse(io::read_file(m1 / "ensemble.json"));
  EXPECT_EQ(ens["members"], json::array({"seed-1", "seed-2", "seed-3"}));
  const double lo = ens["normalization"]["min"], hi = ens["normalization"]["max"];

  const auto preds = dir / "preds.jsonl";
  r = run_cli("predict --model " + m1.string() + " --input " + data.string() + " --split all --out " + preds.string(), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<model::PredictorModel> members;
  for (const char* m : {"seed-1", "seed-2", "seed-3"}) members.push_back(model::load_checkpoint(m1 / m));
  const auto lines = io::read_lines(preds);
  ASSERT_EQ(lines.size(), 200u);
  for (std::size_t i = 0; i < lines.size(); i += 37) {
    const auto row = json::parse(lines[i]);
    const std::string src = row["source"];
    double mean = 0.0;
    for (const auto& m : members) mean += m.predict(src);
    mean /= 3.0;
    EXPECT_NEAR(row["score"].get<double>(), mean * (hi - lo) + lo, 1e-9);
  }

  const auto report = dir / "eval.json";
  r = run_cli("evaluate --model " + m1.string() + " --data " + data.string() + " --out " + report.string(), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = json::parse(io::read_file(report));
  EXPECT_EQ(ev["per_seed_r"].size(), 3u);
  EXPECT_EQ(ev["n"], 20);
  EXPECT_FALSE(ev["baseline_r"].is_null());
  EXPECT_TRUE(std::filesystem::exists(dir / "eval.json.manifest.json"));

  r = run_cli("route --model " + m1.string() + " --data " + data.string() + " --split all --threshold 70 --out " +
                  (dir / "route.json").string(),
              dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_lines(dir / "route.json.pr.csv").front(), "threshold,precision,recall");
  EXPECT_EQ(json::parse(io::read_file(dir / "route.json"))["random_baseline"]["seed"], 0);
}

TEST(Cli, ConfigFileLayersUnderFlags) {
  TempDir dir;
  testing_support::write_da_tsv(testing_support::length_dataset(80, 4), dir / "da.tsv");
  const auto data = dir / "da.jsonl";
  ASSERT_EQ(run_cli("ingest --input " + (dir / "da.tsv").string() + " --out " + data.string(), dir.path()).code, 0);
  std::ofstream(dir / "cfg.json") << R"({"seeds": [5, 6], "dim": 16, "max_epochs": 4, "learning_rate": 0.01, "reset_corr_floor": -1})";
  const auto out = dir / "m";
  auto r = run_cli("train --config " + (dir / "cfg.json").string() + " --data " + data.string() + " --out " + out.string() +
                       " --seed 9 --batch-size 8",
                   dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ens = json::parse(io::read_file(out / "ensemble.json"));
  EXPECT_EQ(ens["seeds"], json::array({9}));
  const auto cfg = model::read_checkpoint_config(out / "seed-9");
  EXPECT_EQ(cfg["backends"][0]["dim"], 16);
  EXPECT_EQ(cfg["metadata"]["training"]["learning_rate"], 0.01);
  EXPECT_EQ(cfg["metadata"]["training"]["max_epochs"], 4);
  EXPECT_EQ(cfg["metadata"]["training"]["reset_corr_floor"], -1);
  EXPECT_EQ(cfg["metadata"]["training"]["batch_size"], 8);
  EXPECT_TRUE(std::filesystem::exists(out / "prequel.log"));
}

TEST(Cli, ScoreAndCorrelate) {
  TempDir dir;
  std::ofstream(dir / "pairs.jsonl") << R"({"id": "a", "hypothesis": "the cat sat", "reference": "the cat sat"})" << "\n"
                                     << R"({"id": "b", "hypothesis": "xxxx", "reference": "yyyy"})" << "\n";
  auto r = run_cli("score --input " + (dir / "pairs.jsonl").string() + " --out " + (dir / "scores.jsonl").string(), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = io::read_lines(dir / "scores.jsonl");
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(json::parse(lines[0])["score"], 1.0);
  EXPECT_EQ(json::parse(lines[1])["score"], 0.0);

  std::ofstream(dir / "xy.jsonl") << R"({"score": 1, "gold": 2})" << "\n" << R"({"score": 2, "gold": 4.5})" << "\n"
                                  << R"({"score": 3, "gold": 5})" << "\n";
  r = run_cli("correlate --input " + (dir / "xy.jsonl").string() + " --out " + (dir / "r.json").string(), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = json::parse(io::read_file(dir / "r.json"));
  const std::vector<double> x{1, 2, 3}, y{2, 4.5, 5};
  EXPECT_NEAR(rep["r"].get<double>(), metrics::pearson(x, y), 1e-15);
  std::ofstream(dir / "const.jsonl") << R"({"score": 1, "gold": 2})" << "\n" << R"({"score": 1, "gold": 3})" << "\n";
  r = run_cli("correlate --input " + (dir / "const.jsonl").string() + " --log " + (dir / "c.log").string(), dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(io::read_file(dir / "c.log").find("constant"), std::string::npos);
}
