#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "dog/cli.hpp"
#include "oracles.hpp"

using namespace dog;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  const fs::path p = fs::path(DOG_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << body;
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

std::string without_first_line(const std::string& s) { return s.substr(s.find('\n') + 1); }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const char* kTinyTrain = R"({
  "schema_version": 1,
  "dataset": {"samples_per_condition": 64},
  "training": {"epochs": 2, "hidden_width": 16, "hidden_layers": 1, "agreement_pairs": 50}
})";

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  const auto dir = tmp("usage");
  const auto cfg = write_config(dir, R"({"schema_version": 1})");
  EXPECT_EQ(run({"ablate", cfg.string(), "--axis", "sideways", "--output-dir", dir.string()}).code, 2);
  EXPECT_EQ(run({"sample", cfg.string(), "--strategy", "pag", "--output-dir", dir.string()}).code, 2);
  EXPECT_EQ(run({"sample", (dir / "missing.json").string()}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, TrainWithoutDatasetNamesField) {
  const auto dir = tmp("nodata");
  const auto r = run({"train", write_config(dir, R"({"schema_version": 1})").string(), "--output-dir", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dataset"), std::string::npos);
}

TEST(Cli, BadFieldNamedInMessage) {
  const auto dir = tmp("badfield");
  const auto r = run({"sample", write_config(dir, R"({"schema_version": 1, "guidance": {"gz": 3}})").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("guidance.gz"), std::string::npos);
}

TEST(Cli, TrainTwiceGivesIdenticalCheckpoint) {
  const auto dir = tmp("train");
  const auto cfg = write_config(dir, kTinyTrain);
  ASSERT_EQ(run({"train", cfg.string(), "--output-dir", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"train", cfg.string(), "--output-dir", (dir / "b").string()}).code, 0);
  for (const char* f : {"model.ckpt", "train_loss.csv", "train_summary.csv", "manifest.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_EQ(lines(slurp(dir / "a" / "train_loss.csv")).size(), 2u + 2u);
}

TEST(Cli, DogAtZeroMatchesNoneSamples) {
  const auto dir = tmp("identity");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "sampling": {"seeds": 4, "record": "final"}})");
  ASSERT_EQ(run({"sample", cfg.string(), "--strategy", "dog", "--gs", "0", "--output-dir", (dir / "dog").string()}).code, 0);
  ASSERT_EQ(run({"sample", cfg.string(), "--strategy", "none", "--output-dir", (dir / "none").string()}).code, 0);
  const auto a = slurp(dir / "dog" / "samples.csv"), b = slurp(dir / "none" / "samples.csv");
  // The first line is the digest comment, which differs because the configs differ.
  EXPECT_EQ(without_first_line(a), without_first_line(b));
  EXPECT_NE(a, b);
}

TEST(Cli, SixteenSeedsSixteenRecords) {
  const auto dir = tmp("sixteen");
  const auto cfg = write_config(dir, R"({"schema_version": 1})");
  ASSERT_EQ(run({"sample", cfg.string(), "--seeds", "16", "--output-dir", dir.string()}).code, 0);
  const auto rows = lines(slurp(dir / "samples.csv"));
  ASSERT_EQ(rows.size(), 2u + 16u);
  std::set<std::string> seeds;
  for (std::size_t i = 2; i < rows.size(); ++i) seeds.insert(rows[i].substr(0, rows[i].find(',')));
  EXPECT_EQ(seeds.size(), 16u);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "trajectories")) ++files;
  EXPECT_EQ(files, 16u);
}

TEST(Cli, SixteenSeedsSixteenDistinctSamplesUnguided) {
  // Under DOG several seeds can land on bit-identical points (the guided map
  // contracts each basin to one trajectory), so distinctness is checked unguided.
  const auto dir = tmp("sixteen_none");
  const auto cfg = write_config(dir, R"({"schema_version": 1})");
  ASSERT_EQ(run({"sample", cfg.string(), "--strategy", "none", "--seeds", "16", "--output-dir", dir.string()}).code, 0);
  const auto rows = lines(slurp(dir / "samples.csv"));
  ASSERT_EQ(rows.size(), 2u + 16u);
  std::set<std::string> coords;
  for (std::size_t i = 2; i < rows.size(); ++i) coords.insert(rows[i].substr(rows[i].find(',') + 1));
  EXPECT_EQ(coords.size(), 16u);
}

TEST(Cli, EveryOutputCarriesTheDigest) {
  const auto dir = tmp("digest");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "sampling": {"seeds": 2}})");
  ASSERT_EQ(run({"sample", cfg.string(), "--output-dir", dir.string()}).code, 0);
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  const std::string digest = manifest["config_digest"];
  ASSERT_EQ(digest.size(), 64u);
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "config.json") continue;
    EXPECT_NE(slurp(e.path()).find(digest), std::string::npos) << e.path();
  }
}

TEST(Cli, NoneFidelityPassesEvalThreshold) {
  const auto dir = tmp("fidelity");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "sampling": {"seeds": 256, "record": "final"}, "eval": {"target_samples": 256}})");
  ASSERT_EQ(run({"sample", cfg.string(), "--strategy", "none", "--output-dir", dir.string()}).code, 0);
  const auto row = lines(slurp(dir / "summary.csv")).at(2);
  const double w2 = std::stod(row.substr(row.find(',', row.find(',') + 1) + 1));
  // Reference: W2 between two independent 256-sample target draws.
  const auto gmm = build_toy_gmm(3, 3, 4, 11);
  const double ref = wasserstein2(sample_data(gmm, 0, 1, 256, 1234), sample_data(gmm, 0, 1, 256, 5678));
  EXPECT_LT(w2, 1.5 * ref);
}

TEST(Cli, CompareSingleRowAndDeterministic) {
  const auto dir = tmp("compare");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "sampling": {"seeds": 4}})");
  const std::vector<std::string> args{"compare", cfg.string(), "--strategies", "cfg", "--gs-list", "3"};
  auto a = args, b = args;
  a.insert(a.end(), {"--output-dir", (dir / "a").string()});
  b.insert(b.end(), {"--output-dir", (dir / "b").string()});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  const auto csv = slurp(dir / "a" / "compare.csv");
  const auto rows = lines(csv);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], "strategy,gs,fidelity_w2,diversity,blowup_rate,n_samples");
  EXPECT_EQ(rows[2].rfind("cfg,3,", 0), 0u);
  EXPECT_EQ(csv, slurp(dir / "b" / "compare.csv"));
  EXPECT_EQ(slurp(dir / "a" / "compare.svg"), slurp(dir / "b" / "compare.svg"));
  EXPECT_NE(slurp(dir / "a" / "compare.svg").find("<svg"), std::string::npos);
}

TEST(Cli, AblatePeakDefaultsAndProjectionAtZero) {
  const auto dir = tmp("ablate");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "sampling": {"seeds": 4}, "schedule": {"sampling_steps": 100}})");
  ASSERT_EQ(run({"ablate", cfg.string(), "--axis", "peak", "--gs-list", "10", "--output-dir", dir.string()}).code, 0);
  const auto peak = lines(slurp(dir / "ablate_peak.csv"));
  ASSERT_EQ(peak.size(), 5u);
  EXPECT_EQ(peak[1], "axis,arm,gs,fidelity_w2,diversity,blowup_rate,n_samples");
  EXPECT_EQ(peak[2].rfind("peak,u_T=200,", 0), 0u);
  EXPECT_EQ(peak[3].rfind("peak,u_T=500,", 0), 0u);
  EXPECT_EQ(peak[4].rfind("peak,u_T=700,", 0), 0u);

  ASSERT_EQ(run({"ablate", cfg.string(), "--axis", "projection", "--gs-list", "0", "--output-dir", dir.string()}).code, 0);
  const auto proj = lines(slurp(dir / "ablate_projection.csv"));
  ASSERT_EQ(proj.size(), 4u);
  EXPECT_EQ(proj[2].substr(proj[2].find(",0,")), proj[3].substr(proj[3].find(",0,")));

  ASSERT_EQ(run({"ablate", cfg.string(), "--axis", "target", "--gs-list", "5", "--output-dir", dir.string()}).code, 0);
  EXPECT_EQ(lines(slurp(dir / "ablate_target.csv")).size(), 6u);
}

TEST(Cli, AblateScheduleBlowupOrdering) {
  const auto dir = tmp("ablate_schedule");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "sampling": {"seeds": 8}})");
  ASSERT_EQ(run({"ablate", cfg.string(), "--axis", "schedule", "--gs-list", "30", "--output-dir", dir.string()}).code, 0);
  const auto rows = lines(slurp(dir / "ablate_schedule.csv"));
  ASSERT_EQ(rows.size(), 4u);
  auto blowup = [](const std::string& row) {
    std::vector<std::string> cells;
    std::istringstream in(row);
    for (std::string c; std::getline(in, c, ',');) cells.push_back(c);
    return std::stod(cells.at(5));
  };
  EXPECT_EQ(rows[2].rfind("schedule,triangular,", 0), 0u);
  EXPECT_GE(blowup(rows[3]), blowup(rows[2]));
}

TEST(Cli, OutputDirFromEnvironment) {
  const auto dir = tmp("env");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "sampling": {"seeds": 2, "record": "final"}})");
  ::setenv(cli::kOutputDirEnv, (dir / "from_env").string().c_str(), 1);
  const auto r = run({"sample", cfg.string()});
  ::unsetenv(cli::kOutputDirEnv);
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(dir / "from_env" / "samples.csv"));
}

TEST(Cli, TrainedModelWithoutNullBranchRejectsCfg) {
  const auto dir = tmp("nonull");
  const auto train_cfg = write_config(dir, R"({
    "schema_version": 1, "dataset": {"samples_per_condition": 32},
    "training": {"epochs": 1, "hidden_width": 8, "hidden_layers": 1, "cond_dropout": 0, "agreement_pairs": 10}})");
  ASSERT_EQ(run({"train", train_cfg.string(), "--output-dir", dir.string()}).code, 0);
  std::ofstream(dir / "sample.json") << R"({"schema_version": 1, "denoiser": {"kind": "trained", "checkpoint": ")" +
                                            (dir / "model.ckpt").string() + R"("}, "sampling": {"seeds": 2}})";
  const auto r = run({"sample", (dir / "sample.json").string(), "--strategy", "cfg", "--output-dir", (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "o" / "samples.csv"));
  EXPECT_EQ(run({"sample", (dir / "sample.json").string(), "--strategy", "dog", "--output-dir", (dir / "o").string()}).code, 0);
}

TEST(Cli, NonFiniteModelExitsThree) {
  const auto dir = tmp("nan");
  Rng rng(1);
  MlpDenoiser m(MlpShape{2, 8, 8, 4, 4, 1, 1000}, rng);
  m.biases().back()[0] = std::numeric_limits<double>::quiet_NaN();
  {
    std::ofstream out(dir / "nan.ckpt");
    save_checkpoint(out, m);
  }
  std::ofstream(dir / "c.json") << R"({"schema_version": 1, "denoiser": {"kind": "trained", "checkpoint": ")" +
                                       (dir / "nan.ckpt").string() + R"("}, "sampling": {"seeds": 1}})";
  const auto r = run({"sample", (dir / "c.json").string(), "--strategy", "none", "--output-dir", (dir / "o").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("non-finite"), std::string::npos);
}
