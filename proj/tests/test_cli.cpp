#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>

#include "centrifuge/evalsuite.hpp"
#include "test_util.hpp"

using namespace centrifuge;
using centrifuge::testing::TempDir;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(CENTRIFUGE_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kCorpus = R"({"num_clips": 10, "frames": 12, "height": 37, "width": 37})";
const char* kRun = R"({"model": {"base_channels": 4, "n_layers": 2, "encoder_depth": "shallow"},
  "train": {"total_steps": 4, "batch_size": 2, "milestones": [], "val_samples": 4, "val_every": 0,
            "stream": {"frames": 8, "height": 32, "width": 32}}})";

// One corpus and one short training run shared by the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>("cli");
    write_text(*dir_ / "corpus.json", kCorpus);
    write_text(*dir_ / "run.json", kRun);
    gen_ = run_cli("gen-data --config " + q(*dir_ / "corpus.json") + " --out " + q(*dir_ / "data") + " --seed 4");
    train_ = run_cli("train --config " + q(*dir_ / "run.json") + " --data " + q(*dir_ / "data") + " --out " +
                     q(*dir_ / "run"));
  }
  static void TearDownTestSuite() { dir_.reset(); }
  static fs::path path(const std::string& name) { return *dir_ / name; }

  static inline std::unique_ptr<TempDir> dir_;
  static inline CliResult gen_, train_;
};

}  // namespace

TEST_F(Cli, GenDataWritesManifestWithConfiguredCount) {
  ASSERT_EQ(gen_.code, 0) << gen_.out;
  const auto entries = read_corpus_manifest(path("data") / "manifest.json");
  EXPECT_EQ(entries.size(), 10u);
  // Spot check: an entry loads and validates.
  const auto clip = load_clip(path("data") / entries[7].clip_path);
  EXPECT_EQ(clip.frames, 12);
  EXPECT_EQ(clip.height, 37);
  EXPECT_TRUE(validate_clip(clip).empty());
  EXPECT_TRUE(fs::exists(path("data") / "run_manifest.json"));
}

TEST_F(Cli, GenDataIsByteIdenticalForSameSeed) {
  const auto r = run_cli("gen-data --config " + q(path("corpus.json")) + " --out " + q(path("data2")) + " --seed 4");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const auto& e : read_corpus_manifest(path("data") / "manifest.json"))
    EXPECT_EQ(slurp(path("data") / e.clip_path), slurp(path("data2") / e.clip_path)) << e.clip_path;
  EXPECT_EQ(slurp(path("data") / "manifest.json"), slurp(path("data2") / "manifest.json"));
}

TEST_F(Cli, TrainWritesRunAndReportsFinalLoss) {
  ASSERT_EQ(train_.code, 0) << train_.out;
  EXPECT_NE(train_.out.find("final validation loss"), std::string::npos);
  for (const char* f : {"checkpoint.bin", "train_log.csv", "config.json", "run_manifest.json"})
    EXPECT_TRUE(fs::exists(path("run") / f)) << f;
  std::ifstream in(path("run") / "run_manifest.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["config"]["train"]["total_steps"], 4);
  EXPECT_EQ(m["inputs"].size(), 2u);  // run config and corpus manifest
}

TEST_F(Cli, TrainResumeMatchesUnbrokenRun) {
  ASSERT_EQ(train_.code, 0);
  const auto cfg = q(path("run.json")), data = q(path("data"));
  ASSERT_EQ(run_cli("train --config " + cfg + " --data " + data + " --out " + q(path("half")) + " --steps 2").code, 0);
  const auto r = run_cli("train --config " + cfg + " --data " + data + " --out " + q(path("resumed")) + " --resume " +
                         q(path("half") / "checkpoint.bin"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto a = read_checkpoint(path("run") / "checkpoint.bin");
  const auto b = read_checkpoint(path("resumed") / "checkpoint.bin");
  EXPECT_EQ(a.step, b.step);
  for (const auto& [name, t] : a.tensors) EXPECT_EQ(t.values(), b.tensors.at(name).values()) << name;
}

TEST_F(Cli, TrainMissingCorpusIsUserError) {
  const auto r = run_cli("train --data " + q(path("nowhere")) + " --out " + q(path("x")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("gen-data"), std::string::npos);
}

TEST_F(Cli, TrainGeometryMismatchIsUserError) {
  write_text(path("long.json"), R"({"train": {"stream": {"frames": 32, "height": 32, "width": 32}}})");
  const auto r = run_cli("train --config " + q(path("long.json")) + " --data " + q(path("data")) + " --out " +
                         q(path("y")));
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST_F(Cli, BadArgumentsExitTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("train --out x").code, 2);
  write_text(path("broken.json"), "{not json");
  EXPECT_EQ(run_cli("train --config " + q(path("broken.json")) + " --data " + q(path("data")) + " --out z").code, 2);
}

TEST_F(Cli, SeparateWritesLayersPlusSelectedPair) {
  ASSERT_EQ(train_.code, 0);
  const auto input = path("data") / "clips" / "clip_00001.rawvid";
  const auto r = run_cli("separate --checkpoint " + q(path("run") / "checkpoint.bin") + " --input " + q(input) +
                         " --out " + q(path("sep")));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("separation time"), std::string::npos);
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(path("sep"))) dirs += e.is_directory();
  EXPECT_EQ(dirs, 2 + 2);  // n layers plus the selected pair
  const auto layer = load_clip(path("sep") / "layer_0");
  const auto src = load_clip(input);
  EXPECT_EQ(layer.frames, src.frames);
  EXPECT_EQ(layer.height, src.height);
  for (float v : layer.data) ASSERT_TRUE(v >= 0 && v <= 1);
}

TEST_F(Cli, SeparateIdentityStubEchoesInput) {
  const auto input = path("data") / "clips" / "clip_00002.rawvid";
  const auto r = run_cli("separate --identity --input " + q(input) + " --out " + q(path("echo")));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto layer = load_clip(path("echo") / "layer_0");
  const auto src = load_clip(input);
  // u8 source and PNG output share the quantization grid.
  EXPECT_LE(max_abs_diff(layer, src), 1e-6);
}

TEST_F(Cli, SeparateRejectsTinyInput) {
  ASSERT_EQ(train_.code, 0);
  VideoClip tiny(1, 2, 2, 3);
  save_clip(tiny, path("tiny.rawvid"), VideoFormat::rawvid);
  const auto r = run_cli("separate --checkpoint " + q(path("run") / "checkpoint.bin") + " --input " +
                         q(path("tiny.rawvid")) + " --out " + q(path("t")));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("minimum"), std::string::npos);
}

TEST_F(Cli, SeparatedBlendIsScorable) {
  // A blend of two held-out clips: the selected pair is scored against both sources.
  ASSERT_EQ(train_.code, 0);
  const auto entries = read_corpus_manifest(path("data") / "manifest.json");
  const auto v1 = augment(load_clip(path("data") / entries[8].clip_path), 8, 32, 32, 1);
  const auto v2 = augment(load_clip(path("data") / entries[9].clip_path), 8, 32, 32, 2);
  save_clip(blend(v1, v2, 0.5), path("blend.rawvid"), VideoFormat::rawvid);
  ASSERT_EQ(run_cli("separate --checkpoint " + q(path("run") / "checkpoint.bin") + " --input " +
                    q(path("blend.rawvid")) + " --out " + q(path("bsep")))
                .code,
            0);
  const auto sel = stack_layers(std::vector<VideoClip>{load_clip(path("bsep") / "selected_1"),
                                                       load_clip(path("bsep") / "selected_2")});
  const auto blended = load_clip(path("blend.rawvid"));
  const double model_loss = pit_loss(v1, v2, sel).total;
  const double identity = pit_loss(v1, v2, stack_layers(std::vector<VideoClip>{blended, blended})).total;
  EXPECT_TRUE(std::isfinite(model_loss));
  // A four-step model is not expected to win; only the plumbing is verified here.
  EXPECT_GT(identity, 0);
}

TEST_F(Cli, ExperimentsIdentityBaselineNeedsNoCheckpoint) {
  const auto r = run_cli("experiments --which identity-baseline --config " + q(path("run.json")) + " --samples 4 --out " +
                         q(path("ex")));
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(path("ex") / "index.json");
  const auto index = nlohmann::json::parse(in);
  ASSERT_EQ(index.size(), 1u);
  EXPECT_EQ(index[0]["experiment"], "identity_baseline");
  EXPECT_TRUE(fs::exists(path("ex") / "identity_baseline.json"));
  EXPECT_TRUE(fs::exists(path("ex") / "identity_baseline.csv"));
  const auto rep = run_cli("report " + q(path("ex") / "identity_baseline.json"));
  EXPECT_EQ(rep.code, 0);
  EXPECT_NE(rep.out.find("loss"), std::string::npos);
}

TEST_F(Cli, ExperimentsFrozenWithoutCheckpointIsActionable) {
  const auto r = run_cli("experiments --which frozen --checkpoint " + q(path("run") / "checkpoint.bin") + " --out " +
                         q(path("ex2")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--frozen-checkpoint"), std::string::npos);
  EXPECT_EQ(run_cli("experiments --which all --out " + q(path("ex3"))).code, 2);
  EXPECT_EQ(run_cli("experiments --which nonsense --out " + q(path("ex4"))).code, 2);
}

TEST_F(Cli, ExperimentsAllProducesOneReportPerExperiment) {
  ASSERT_EQ(train_.code, 0);
  const auto ck = q(path("run") / "checkpoint.bin");
  const auto r = run_cli("experiments --which all --checkpoint " + ck + " --frozen-checkpoint " + ck + " --config " +
                         q(path("run.json")) + " --samples 3 --correlation-samples 4 --classifier-steps 2 --steps 1" +
                         " --seeds 1 --out " + q(path("all")));
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(path("all") / "index.json");
  const auto index = nlohmann::json::parse(in);
  EXPECT_EQ(index.size(), 9u);
  for (const auto& e : index)
    for (const auto& f : e["files"]) EXPECT_TRUE(fs::exists(path("all") / f.get<std::string>())) << f;
  EXPECT_TRUE(fs::exists(path("all") / "color.png"));
  EXPECT_TRUE(fs::exists(path("all") / "frozen_loss.png"));
}
