#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(COLSEG_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream is(p);
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(json::parse(l));
  return out;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Tiny encoders and a small soundboard: every command finishes in seconds.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fixtures::temp_dir(std::string("cli-") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    json cfg = {
        {"model",
         {{"image_size", 64},
          {"patch", 16},
          {"pixel_pool", 8},
          {"colour_centres", 16},
          {"embed_dim", 16},
          {"text_width", 16},
          {"audio_width", 16},
          {"n_mels", 16}}},
        {"train", {{"steps", 6}, {"batch_size", 4}, {"learning_rate", 1e-2}, {"audio_seconds", 0.5}, {"seed", 2}}},
        {"eval", {{"min_audio_seconds", 0.5}}},
        {"soundboard", {{"train_scenes", 8}, {"test_scenes", 6}}},
        {"curation",
         {{"classes_file", (fixtures::source_dir() / "config" / "collision_classes.json").string()}}}};
    config = dir / "config.json";
    std::ofstream(config) << cfg.dump(2);
  }
  std::string base() const { return "-c " + q(config) + " "; }
  fs::path dir, config;
};

}  // namespace

TEST_F(Cli, VersionAndUsage) {
  const auto v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("colseg"), std::string::npos);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, MissingRequiredOptionIsUsageError) {
  const auto r = run(base() + "infer --checkpoint x.json --image y.png");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--audio"), std::string::npos) << r.out;
}

TEST_F(Cli, UnknownConfigKeyIsRejected) {
  const auto r = run(base() + "--set train.stepz=3 stats --manifest " + q(config));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("unknown config key 'train.stepz'"), std::string::npos) << r.out;
  const auto bad_type = run(base() + "--set train.steps=fast stats --manifest " + q(config));
  EXPECT_EQ(bad_type.code, 2) << bad_type.out;
  const auto invalid = run(base() + "--set train.batch_size=1 stats --manifest " + q(config));
  EXPECT_EQ(invalid.code, 2) << invalid.out;
}

TEST_F(Cli, MissingInputFilesAreConfigErrors) {
  const auto r = run(base() + "curate --events " + q(dir / "none.jsonl") + " --media " + q(dir) + " --labels " +
                     q(dir / "none.json") + " -o " + q(dir / "out"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("not found"), std::string::npos) << r.out;
}

TEST_F(Cli, CurateEmptyEventsGivesEmptyManifest) {
  std::ofstream(dir / "events.jsonl").flush();
  std::ofstream(dir / "labels.json") << "{}";
  fs::create_directories(dir / "media");
  const auto r = run(base() + "curate --events " + q(dir / "events.jsonl") + " --media " + q(dir / "media") +
                     " --labels " + q(dir / "labels.json") + " -o " + q(dir / "out"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto lines = jsonl(dir / "out" / "manifest.jsonl");
  ASSERT_EQ(lines.size(), 1u);  // provenance header only
  const auto stats = run(base() + "stats --manifest " + q(dir / "out" / "manifest.jsonl") + " -o " + q(dir / "st"));
  EXPECT_EQ(stats.code, 0) << stats.out;
}

TEST_F(Cli, CurateFixtureMatchesGolden) {
  const auto data = fixtures::data_dir() / "curation";
  const auto r = run(base() + "curate --events " + q(data / "events.jsonl") + " --media " + q(data / "media") +
                     " --labels " + q(data / "labels.json") + " -o " + q(dir / "out"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto got = jsonl(dir / "out" / "manifest.jsonl"), want = jsonl(data / "golden_manifest.jsonl");
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 1; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
}

TEST_F(Cli, SoundboardExportThenStats) {
  const auto r = run(base() + "soundboard -o " + q(dir / "sb"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = jsonl(dir / "sb" / "manifest.jsonl");
  ASSERT_EQ(m.size(), 1u + 8 + 6);
  EXPECT_TRUE(fs::exists(dir / "sb" / "media" / "test_0.png"));
  EXPECT_TRUE(fs::exists(dir / "sb" / "media" / "test_0.wav"));
  const auto s = run(base() + "stats --manifest " + q(dir / "sb" / "manifest.jsonl") + " -o " + q(dir / "st"));
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_TRUE(fs::exists(dir / "st" / "stats.csv"));
}

TEST_F(Cli, TrainSmokeAndResumeDeterminism) {
  const auto straight = run(base() + "train --soundboard -q -o " + q(dir / "a"));
  ASSERT_EQ(straight.code, 0) << straight.out;
  const auto log_a = jsonl(dir / "a" / "train_log.jsonl");
  ASSERT_EQ(log_a.size(), 6u);
  for (const auto& l : log_a) EXPECT_TRUE(std::isfinite(l["total"].get<double>()));

  ASSERT_EQ(run(base() + "train --soundboard -q --steps 3 -o " + q(dir / "b")).code, 0);
  const auto resumed =
      run(base() + "train --soundboard -q --resume " + q(dir / "b" / "checkpoint.json") + " -o " + q(dir / "b"));
  ASSERT_EQ(resumed.code, 0) << resumed.out;
  const auto log_b = jsonl(dir / "b" / "train_log.jsonl");
  ASSERT_EQ(log_b.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(log_b[i]["step"], log_a[i]["step"]);
    EXPECT_EQ(log_b[i]["total"], log_a[i]["total"]) << "step " << i + 1;
  }
  const auto ca = load(dir / "a" / "checkpoint.json"), cb = load(dir / "b" / "checkpoint.json");
  EXPECT_EQ(ca["audio_weights"], cb["audio_weights"]);
  EXPECT_EQ(ca["step"], 6);
}

TEST_F(Cli, FrozenEncoderMismatchIsRefused) {
  ASSERT_EQ(run(base() + "train --soundboard -q --steps 2 -o " + q(dir / "t")).code, 0);
  const auto ck = q(dir / "t" / "checkpoint.json");
  const auto resume = run(base() + "--set model.frozen_seed=99 train --soundboard -q --resume " + ck + " -o " +
                          q(dir / "u"));
  EXPECT_EQ(resume.code, 1);
  EXPECT_NE(resume.out.find("frozen-encoder hash mismatch"), std::string::npos) << resume.out;
  const auto eval = run(base() + "--set model.frozen_seed=99 eval --method model --soundboard --force --checkpoint " +
                        ck + " -o " + q(dir / "e"));
  EXPECT_EQ(eval.code, 1);
  EXPECT_NE(eval.out.find("frozen-encoder hash mismatch"), std::string::npos) << eval.out;
}

TEST_F(Cli, EvalOracleScoresHundred) {
  const auto r = run(base() + "eval --method oracle --soundboard -o " + q(dir / "e"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto s = load(dir / "e" / "summary.json");
  EXPECT_DOUBLE_EQ(s["miou"].get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(s["auc"].get<double>(), 100.0);
  EXPECT_EQ(s["samples"], 6);
}

TEST_F(Cli, EvalCentreIsReproducibleAcrossWorkers) {
  ASSERT_EQ(run(base() + "eval --method centre --soundboard -o " + q(dir / "a")).code, 0);
  ASSERT_EQ(run(base() + "--workers 3 eval --method centre --soundboard -o " + q(dir / "b")).code, 0);
  const auto a = load(dir / "a" / "summary.json"), b = load(dir / "b" / "summary.json");
  EXPECT_TRUE(std::isfinite(a["miou"].get<double>()));
  EXPECT_EQ(a["miou"], b["miou"]);
  EXPECT_EQ(a["strata"], b["strata"]);
  EXPECT_EQ(slurp(dir / "a" / "per_sample.csv"), slurp(dir / "b" / "per_sample.csv"));
}

TEST_F(Cli, EvalAblationWritesEveryVariant) {
  ASSERT_EQ(run(base() + "train --soundboard -q -o " + q(dir / "t")).code, 0);
  const auto r = run(base() + "eval --method model --ablation --soundboard --checkpoint " +
                     q(dir / "t" / "checkpoint.json") + " -o " + q(dir / "e"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto ab = load(dir / "e" / "ablation.json");
  for (const char* v : {"full", "no-segmenter", "no-crop", "no-hoi"}) {
    EXPECT_TRUE(fs::exists(dir / "e" / v / "summary.json")) << v;
    EXPECT_TRUE(fs::exists(dir / "e" / v / "per_sample.csv")) << v;
    EXPECT_TRUE(ab["variants"].contains(v)) << v;
  }
  EXPECT_EQ(run(base() + "eval --method centre --ablation --soundboard -o " + q(dir / "x")).code, 2);
}

TEST_F(Cli, EvalRefusesMixedConfigHashes) {
  ASSERT_EQ(run(base() + "train --soundboard -q -o " + q(dir / "t")).code, 0);
  const auto ck = q(dir / "t" / "checkpoint.json");
  // A different verification beta changes the run hash but not the frozen encoders.
  const auto mixed = run(base() + "--set verify.beta=20 eval --method model --soundboard --checkpoint " + ck +
                         " -o " + q(dir / "e"));
  EXPECT_EQ(mixed.code, 2);
  EXPECT_NE(mixed.out.find("different config hashes"), std::string::npos) << mixed.out;
  const auto forced = run(base() + "--set verify.beta=20 eval --method model --soundboard --force --checkpoint " +
                          ck + " -o " + q(dir / "e"));
  EXPECT_EQ(forced.code, 0) << forced.out;
  // The worker count is not part of the hash.
  EXPECT_EQ(run(base() + "--workers 2 eval --method model --soundboard --checkpoint " + ck + " -o " + q(dir / "w")).code,
            0);
}

TEST_F(Cli, EvalRandomIsSeeded) {
  ASSERT_EQ(run(base() + "eval --method random --soundboard -o " + q(dir / "a")).code, 0);
  ASSERT_EQ(run(base() + "eval --method random --soundboard -o " + q(dir / "b")).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "per_sample.csv"), slurp(dir / "b" / "per_sample.csv"));
  EXPECT_EQ(load(dir / "a" / "summary.json")["variant"], "no-hoi");
}

TEST_F(Cli, InferWritesMasksAndOverlay) {
  ASSERT_EQ(run(base() + "soundboard --no-train -o " + q(dir / "sb")).code, 0);
  ASSERT_EQ(run(base() + "train --soundboard -q --steps 2 -o " + q(dir / "t")).code, 0);
  const auto media = dir / "sb" / "media";
  const auto r = run(base() + "infer --checkpoint " + q(dir / "t" / "checkpoint.json") + " --image " +
                     q(media / "test_0.png") + " --audio " + q(media / "test_0.wav") + " --manifest " +
                     q(dir / "sb" / "manifest.jsonl") + " --sample test_0 -o " + q(dir / "i"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto p = load(dir / "i" / "prediction.json");
  EXPECT_TRUE(fs::exists(dir / "i" / "overlay.png"));
  EXPECT_TRUE(fs::exists(dir / "i" / "mask_0.png"));
  EXPECT_FALSE(p.empty());
  const auto av = run(base() + "infer --no-hoi --checkpoint " + q(dir / "t" / "checkpoint.json") + " --image " +
                      q(media / "test_0.png") + " --audio " + q(media / "test_0.wav") + " -o " + q(dir / "j"));
  EXPECT_EQ(av.code, 0) << av.out;
  const auto missing = run(base() + "infer --checkpoint " + q(dir / "t" / "checkpoint.json") + " --image " +
                           q(media / "test_0.png") + " --audio " + q(dir / "nope.wav") + " -o " + q(dir / "k"));
  EXPECT_EQ(missing.code, 2) << missing.out;
}
