#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = DCPG_CLI_PATH;
const std::string kData = " --classes 4 --regions 2 --tokens 3 --region_dim 6 --vocab 8 --train_per_class 2"
                          " --val_per_class 3 --test_per_class 3";
const std::string kModel = " --word_dim 4 --hidden 4 --embed 6 --decoder_width 4 --decoder_hidden 6 --actions 10"
                           " --batch 4 --epochs 2";

struct Result {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("dcpg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  Result run(const std::string& args, const std::string& env = "") const {
    const fs::path log = root_ / "out.txt";
    const std::string cmd = env + " " + kCli + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream buf;
    buf << in.rdbuf();
    r.out = buf.str();
    return r;
  }

  std::string path(const std::string& name) const { return (root_ / name).string(); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }

  static json read_json(const fs::path& p) {
    std::ifstream in(p);
    json j;
    in >> j;
    return j;
  }

  fs::path root_;
};

}  // namespace

TEST_F(Cli, GenWritesDataset) {
  const Result r = run("gen --out " + path("data") + kData);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(path("data") + "/manifest.json"));
  EXPECT_TRUE(fs::exists(path("data") + "/train.regions.bin"));
  EXPECT_EQ(read_json(path("data") + "/manifest.json")["classes"], 4);
}

TEST_F(Cli, RegenerationIsByteIdentical) {
  ASSERT_EQ(run("gen --out " + path("a") + kData + " --seed 11").code, 0);
  ASSERT_EQ(run("gen --out " + path("b") + kData + " --seed 11").code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(path("a"))) {
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(path("b")) / e.path().filename())) << e.path().filename();
    ++files;
  }
  EXPECT_EQ(files, 11u);
  ASSERT_EQ(run("gen --out " + path("c") + kData + " --seed 12").code, 0);
  EXPECT_NE(slurp(path("a") + "/train.regions.bin"), slurp(path("c") + "/train.regions.bin"));
}

TEST_F(Cli, SingleClassIsAUserError) {
  const Result r = run("gen --out " + path("data") + " --classes 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("classes"), std::string::npos) << r.out;
}

TEST_F(Cli, RefusesToOverwriteWithoutForce) {
  ASSERT_EQ(run("gen --out " + path("data") + kData).code, 0);
  const Result again = run("gen --out " + path("data") + kData);
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.out.find("--force"), std::string::npos);
  EXPECT_EQ(run("gen --force --out " + path("data") + kData).code, 0);
}

TEST_F(Cli, DataDirectoryFromEnvironment) {
  ASSERT_EQ(run("gen" + kData, "DCPG_DATA_DIR=" + path("envdata")).code, 0);
  EXPECT_TRUE(fs::exists(path("envdata") + "/manifest.json"));
  const Result missing = run("train --out " + path("run") + kModel, "DCPG_DATA_DIR=");
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.out.find("DCPG_DATA_DIR"), std::string::npos);
}

TEST_F(Cli, TrainThenEvalAgree) {
  ASSERT_EQ(run("gen --out " + path("data") + kData).code, 0);
  const Result t = run("train --quiet --data " + path("data") + " --out " + path("run") + kModel);
  ASSERT_EQ(t.code, 0) << t.out;
  for (const char* f : {"metrics.jsonl", "best.ckpt", "final.ckpt", "manifest.json", "config.cfg"}) {
    EXPECT_TRUE(fs::exists(fs::path(path("run")) / f)) << f;
  }
  std::ifstream log(path("run") + "/metrics.jsonl");
  std::string line;
  json last;
  std::size_t evals = 0, steps = 0;
  while (std::getline(log, line)) {
    last = json::parse(line);
    evals += last["kind"] == "eval";
    steps += last["kind"] == "step";
  }
  EXPECT_EQ(evals, 3u);
  EXPECT_GT(steps, 0u);
  ASSERT_EQ(last["split"], "test");

  const Result e = run("eval --json --checkpoint " + path("run") + "/best.ckpt --data " + path("data"));
  ASSERT_EQ(e.code, 0) << e.out;
  const json rec = json::parse(e.out);
  for (const char* k : {"i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10"}) EXPECT_EQ(rec[k], last[k]) << k;

  const json manifest = read_json(path("run") + "/manifest.json");
  EXPECT_EQ(manifest["dataset"]["fingerprint"], read_json(path("data") + "/manifest.json")["fingerprint"]);
  EXPECT_TRUE(manifest.contains("completed"));
}

TEST_F(Cli, EvalWithoutCheckpointFails) {
  ASSERT_EQ(run("gen --out " + path("data") + kData).code, 0);
  const Result r = run("eval --checkpoint " + path("nope.ckpt") + " --data " + path("data"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("nope.ckpt"), std::string::npos);
  EXPECT_NE(run("eval --data " + path("data")).code, 0);
}

TEST_F(Cli, VerifyExitCodes) {
  const Result ok = run("verify baseline metrics");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("0 failed"), std::string::npos);
  const Result bad = run("verify telepathy");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("gradcheck"), std::string::npos);
}

TEST_F(Cli, ManifestsDifferOnlyInTheChangedKey) {
  ASSERT_EQ(run("gen --out " + path("data") + kData).code, 0);
  ASSERT_EQ(run("train --quiet --pg off --data " + path("data") + " --out " + path("off") + kModel).code, 0);
  ASSERT_EQ(run("train --quiet --pg compound --data " + path("data") + " --out " + path("on") + kModel).code, 0);
  const json a = read_json(path("off") + "/manifest.json")["config"];
  const json b = read_json(path("on") + "/manifest.json")["config"];
  std::vector<std::string> differing;
  for (const auto& [k, v] : a.items()) {
    if (b.at(k) != v) differing.push_back(k);
  }
  EXPECT_EQ(differing, std::vector<std::string>{"pg"});
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
  ASSERT_EQ(run("gen --out " + path("data") + kData).code, 0);
  {
    std::ofstream cfg(path("run.cfg"));
    cfg << "epochs = 1\nlambda = 12\n";
  }
  ASSERT_EQ(run("train --quiet --config " + path("run.cfg") + " --data " + path("data") + " --out " + path("run") + kModel +
                " --lambda 15")
                .code,
            0);
  const json c = read_json(path("run") + "/manifest.json")["config"];
  EXPECT_EQ(c["epochs"], "2");
  EXPECT_EQ(c["lambda"], "15");
}

TEST_F(Cli, UnknownFlagIsAUserError) {
  EXPECT_EQ(run("train --learning_rate 3").code, 1);
  EXPECT_EQ(run("").code, 1);
}
