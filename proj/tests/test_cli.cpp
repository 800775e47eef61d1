#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <nlohmann/json.hpp>

#include "silt/synth.hpp"
#include "test_util.hpp"

namespace silt {
namespace {

using testing::read_text;
using testing::TempDir;

struct Result {
  int code = -1;
  std::string output;
};

Result silt_cli(const std::string& args, const TempDir& dir, const std::string& env = "") {
  const auto log = dir / "cli.log";
  const std::string cmd = env + " " + SILT_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = read_text(log);
  return r;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::size_t n = 0, pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    if (text.compare(pos, prefix.size(), prefix) == 0) ++n;
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return n;
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    ASSERT_EQ(silt_cli("synth --out " + data().string(), *dir_).code, 0);
    const auto r = silt_cli("--config " + (data() / "train.ini").string() + " train " + common() + " --out " +
                                (*dir_ / "run").string(),
                            *dir_);
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::filesystem::path data() { return *dir_ / "data"; }
  static std::string common() {
    return "--store " + (data() / "store").string() + " --corpus " + (data() / "corpus.jsonl").string();
  }
  static TempDir* dir_;
};

TempDir* CliRun::dir_ = nullptr;

TEST_F(CliRun, TrainConvergesOnSyntheticFixture) {
  const auto run = nlohmann::json::parse(read_text(*dir_ / "run" / "run.json"));
  ASSERT_FALSE(run["history"].empty());
  EXPECT_EQ(run["history"].back()["train_accuracy"], 1.0);
  EXPECT_LE(run["state"]["step"].get<int>(), 500);
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "run" / "run_manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "run" / "best" / "params.bin"));
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "run" / "adam.bin"));
}

TEST_F(CliRun, RepeatedTrainingGivesIdenticalHistory) {
  TempDir d;
  const auto r = silt_cli("--config " + (data() / "train.ini").string() + " train " + common() + " --out " +
                              (d / "again").string(),
                          d);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto a = nlohmann::json::parse(read_text(*dir_ / "run" / "run.json"));
  const auto b = nlohmann::json::parse(read_text(d / "again" / "run.json"));
  EXPECT_EQ(a["history"], b["history"]);
  EXPECT_EQ(read_text(*dir_ / "run" / "best" / "params.bin"), read_text(d / "again" / "best" / "params.bin"));
}

TEST_F(CliRun, ManifestRecordsConfigAndHashes) {
  const auto m = nlohmann::json::parse(read_text(*dir_ / "run" / "run_manifest.json"));
  for (const char* key : {"command", "head", "optimizer", "run", "seed", "corpus", "store", "hashes", "created_utc"})
    EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_EQ(m["head"]["D"], 8);
  EXPECT_EQ(m["optimizer"]["step_size"], 100);
  EXPECT_EQ(m["hashes"]["corpus_crc32"].get<std::string>().size(), 8u);
}

TEST_F(CliRun, RefusesToOverwriteARun) {
  const auto r = silt_cli("train " + common() + " --out " + (*dir_ / "run").string(), *dir_);
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST_F(CliRun, EvalWritesRequestedGroupsOnly) {
  TempDir d;
  const auto r = silt_cli("eval --checkpoint " + (*dir_ / "run").string() + " " + common() +
                              " --split train --group-by label,language --out " + (d / "ev").string(),
                          d);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(read_text(d / "ev" / "report.json"));
  ASSERT_EQ(j["groups"].size(), 2u);
  EXPECT_TRUE(j["groups"].contains("label"));
  EXPECT_TRUE(j["groups"].contains("language_pair"));
  EXPECT_EQ(j["overall"]["accuracy"], 1.0);
  EXPECT_TRUE(std::filesystem::exists(d / "ev" / "report.md"));
}

TEST_F(CliRun, EvalIsBitwiseDeterministic) {
  TempDir d;
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(silt_cli("eval --checkpoint " + (*dir_ / "run").string() + " " + common() + " --split valid --threads 3 --out " +
                           (d / out).string(),
                       d)
                  .code,
              0);
  }
  EXPECT_EQ(read_text(d / "a" / "preds.jsonl"), read_text(d / "b" / "preds.jsonl"));
  EXPECT_FALSE(read_text(d / "a" / "preds.jsonl").empty());
}

TEST_F(CliRun, ReportReaggregatesPreds) {
  TempDir d;
  ASSERT_EQ(silt_cli("eval --checkpoint " + (*dir_ / "run").string() + " " + common() + " --split train --group-by length --out " +
                         (d / "ev").string(),
                     d)
                .code,
            0);
  const auto r = silt_cli("report --preds " + (d / "ev" / "preds.jsonl").string() + " --group-by length --out " +
                              (d / "re").string(),
                          d);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_text(d / "ev" / "report.json"), read_text(d / "re" / "report.json"));
}

TEST_F(CliRun, MissingMetadataForGroupingFails) {
  TempDir d;
  const auto r = silt_cli("eval --checkpoint " + (*dir_ / "run").string() + " " + common() +
                              " --split train --group-by relatedness --out " + (d / "ev").string(),
                          d);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("syn-"), std::string::npos);
}

TEST_F(CliRun, BaselineDispatch) {
  TempDir d;
  auto r = silt_cli("eval --baseline --checkpoint " + (*dir_ / "run").string() + " " + common() + " --out " +
                        (d / "x").string() + " --split train",
                    d);
  EXPECT_EQ(r.code, 2) << r.output;
  r = silt_cli("train --model baseline --epochs 20 --batch-size 8 --lcap 4 " + common() + " --out " + (d / "b").string(), d);
  ASSERT_EQ(r.code, 0) << r.output;
  r = silt_cli("eval --baseline --checkpoint " + (d / "b").string() + " " + common() + " --split train --out " +
                   (d / "ev").string(),
               d);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto first = read_text(d / "ev" / "preds.jsonl");
  EXPECT_NE(first.find("\"pair_id\""), std::string::npos);
  r = silt_cli("eval --checkpoint " + (d / "b").string() + " " + common() + " --split train --out " + (d / "e2").string(), d);
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliRun, StoreCheckpointMismatchIsConfigError) {
  TempDir d;
  ASSERT_EQ(silt_cli("synth --D 6 --out " + (d / "other").string(), d).code, 0);
  const auto r = silt_cli("eval --checkpoint " + (*dir_ / "run").string() + " --store " + (d / "other" / "store").string() +
                              " --corpus " + (d / "other" / "corpus.jsonl").string() + " --split train --out " +
                              (d / "ev").string(),
                          d);
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST_F(CliRun, PredictPrintsJson) {
  TempDir d;
  const auto r = silt_cli("predict --checkpoint " + (*dir_ / "run").string() + " --store " + (data() / "store").string() +
                              " --premise syn-3:A:en --hypothesis syn-3:B:en",
                          d);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(r.output);
  EXPECT_EQ(j["logits"].size(), 3u);
  double total = 0;
  for (const auto& p : j["probabilities"]) total += p.get<double>();
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_EQ(silt_cli("predict --checkpoint " + (*dir_ / "run").string() + " --store " + (data() / "store").string() +
                         " --premise nope --hypothesis syn-3:B:en",
                     d)
                .code,
            1);
}

TEST(Cli, MissingStoreIsUsageError) {
  TempDir d;
  const auto r = silt_cli("train --corpus c.jsonl --out o", d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--store"), std::string::npos);
}

TEST(Cli, UnknownGroupingIsUsageError) {
  TempDir d;
  EXPECT_EQ(silt_cli("report --preds p.jsonl --out o --group-by colour", d).code, 2);
}

TEST(Cli, MissingConfigFileIsUsageError) {
  TempDir d;
  EXPECT_EQ(silt_cli("--config " + (d / "none.ini").string() + " gradcheck", d).code, 2);
}

TEST(Cli, BadSeedEnvIsUsageError) {
  TempDir d;
  EXPECT_EQ(silt_cli("gradcheck", d, "SILT_SEED=abc").code, 2);
}

TEST(Cli, GradcheckPassesByDefault) {
  TempDir d;
  const auto r = silt_cli("gradcheck", d);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
}

TEST(Cli, GradcheckCorruptedGradientFails) {
  TempDir d;
  const auto r = silt_cli("gradcheck --corrupt-gradient", d);
  EXPECT_EQ(r.code, 1) << r.output;
  EXPECT_NE(r.output.find("FAIL"), std::string::npos);
}

TEST(Cli, GradcheckTrials) {
  TempDir d;
  const auto r = silt_cli("gradcheck --seed 7 --trials 5", d);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_lines_starting(r.output, "trial "), 5u);
  EXPECT_NE(r.output.find("seed 11"), std::string::npos);
}

TEST(Cli, SeedEnvIsTheDefault) {
  TempDir d;
  const auto r = silt_cli("gradcheck", d, "SILT_SEED=4");
  EXPECT_NE(r.output.find("seed 4"), std::string::npos) << r.output;
}

TEST(Cli, CountParamsPrintsBreakdown) {
  TempDir d;
  const auto r = silt_cli("count-params", d);
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("13575171"), std::string::npos);
  EXPECT_NE(r.output.find("proj"), std::string::npos);
}

TEST(Cli, CorpusSummaryMatchesAndMismatches) {
  TempDir d;
  write_sick_fixture(d / "en.txt", d / "es.txt", {{{641, 1274, 2524}, {71, 143, 281}, {712, 1404, 2790}}});
  auto r = silt_cli("corpus-summary --sick-en " + (d / "en.txt").string() + " --sick-es " + (d / "es.txt").string() +
                        " --write-corpus " + (d / "corpus.jsonl").string(),
                    d);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("match"), std::string::npos);
  EXPECT_NE(read_text(d / "corpus.jsonl").find(R"("premise_lang":"es")"), std::string::npos);

  write_sick_fixture(d / "en2.txt", d / "es2.txt", {{{641, 1274, 2523}, {71, 143, 281}, {712, 1404, 2790}}});
  r = silt_cli("corpus-summary --sick-en " + (d / "en2.txt").string() + " --sick-es " + (d / "es2.txt").string(), d);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("train En-En neutral: got 2523, expected 2524"), std::string::npos) << r.output;
}

}  // namespace
}  // namespace silt
