#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fsvos/checkpoint.hpp"
#include "fsvos/errors.hpp"
#include "fsvos/relearn.hpp"
#include "fsvos/run_config.hpp"

using namespace fsvos;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("fsvos_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(Sha256, KnownDigest) {
  EXPECT_EQ(sha256_hex(std::string("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, RoundTripIsBitExactForEveryModule) {
  ModelConfig cfg;
  cfg.backbone.frozen_stages = {0};
  ModelState m = initialize_model(cfg, 3);
  attach_temporal_unit(m, 4);
  m.set_frozen("head.", true);
  // Values that a lossy text format would mangle.
  m.parameters()[0].value.mutable_data()[0] = 0.1 + 0.2;
  m.parameters()[1].value.mutable_data()[0] = -0.0;
  m.parameters()[2].value.mutable_data()[0] = 5e-324;
  m.metadata["phase"] = "relearned";

  const fs::path dir = fresh_dir("ckpt_roundtrip");
  const std::string hash = save_checkpoint(m, dir);
  EXPECT_EQ(hash, checkpoint_hash(dir));
  const ModelState back = load_checkpoint(dir);

  EXPECT_EQ(back.parameter_bytes(), m.parameter_bytes());
  for (const char* prefix : {"backbone.", "fusion.", "neck.", "head.", "temporal."}) {
    EXPECT_EQ(back.parameter_bytes(prefix), m.parameter_bytes(prefix)) << prefix;
    EXPECT_FALSE(m.parameter_bytes(prefix).empty()) << prefix;
  }
  ASSERT_EQ(back.parameters().size(), m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    EXPECT_EQ(back.parameters()[i].name, m.parameters()[i].name);
    EXPECT_EQ(back.parameters()[i].frozen, m.parameters()[i].frozen);
    EXPECT_EQ(back.parameters()[i].value.shape(), m.parameters()[i].value.shape());
    EXPECT_EQ(back.parameters()[i].value.requires_grad(), !m.parameters()[i].frozen);
  }
  EXPECT_TRUE(back.config.temporal_unit);
  EXPECT_EQ(back.config.backbone.frozen_stages, std::vector<int>{0});
  EXPECT_EQ(back.metadata.at("phase"), "relearned");
  // Saving the loaded model reproduces identical files.
  const fs::path again = fresh_dir("ckpt_roundtrip2");
  save_checkpoint(back, again);
  std::ifstream a(dir / "weights.bin", std::ios::binary), b(again / "weights.bin", std::ios::binary);
  EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(a), {}, std::istreambuf_iterator<char>(b)));
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST(Checkpoint, CorruptedWeightsDetected) {
  const fs::path dir = fresh_dir("ckpt_corrupt");
  save_checkpoint(initialize_model(ModelConfig{}, 1), dir);
  {
    std::fstream f(dir / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(17);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(dir), ValidationError);
  fs::remove_all(dir);
}

TEST(Checkpoint, MissingDirectoryIsIoError) {
  EXPECT_THROW(load_checkpoint(fresh_dir("ckpt_missing")), IoError);
}

TEST(RunConfig, DefaultsMatchTrainingProtocol) {
  const RunConfig c = parse_run_config(nlohmann::json::object());
  EXPECT_EQ(c.phase1.batch_size, 8);
  EXPECT_EQ(c.phase1.adam_lr, 1e-4);
  EXPECT_EQ(c.phase1.sgd_lr, 1e-5);
  EXPECT_EQ(c.phase2.lr, 1e-5);
  EXPECT_EQ(c.phase2.batch_size, 4);
  EXPECT_EQ(c.phase2.epochs, 20);
  EXPECT_EQ(c.phase2.weights.temporal, 1.0);
  EXPECT_EQ(c.eval_window, 4);
  EXPECT_NE(c.synth.seed, c.phase1.seed);
}

TEST(RunConfig, ParsesAndRoundTrips) {
  const auto j = nlohmann::json::parse(R"({
    "seed": 5, "output_dir": "x",
    "data": {"novel_classes": ["ring"], "frames_per_clip": 10},
    "model": {"neck": "identity", "backbone": {"widths": [8, 8, 16, 16]}},
    "phase1": {"adam_iterations": 10, "adam_lr": 0.001},
    "phase2": {"lambda": [1, 0.5, 0], "feature_tap": "fusion"},
    "ablation": {"seeds": [1], "clips_per_seed": 2}
  })");
  const RunConfig c = parse_run_config(j);
  EXPECT_EQ(c.synth.novel_classes, std::vector<std::string>{"ring"});
  EXPECT_EQ(c.model.neck, NeckVariant::kIdentity);
  EXPECT_EQ(c.phase2.weights.prediction, 0.0);
  EXPECT_EQ(c.phase2.feature_tap, FeatureTap::kFusion);
  const RunConfig again = parse_run_config(run_config_to_json(c));
  EXPECT_EQ(run_config_to_json(again), run_config_to_json(c));
}

TEST(RunConfig, RejectsInvalidInput) {
  using nlohmann::json;
  EXPECT_THROW(parse_run_config(json::parse(R"({"bogus": 1})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"phase1": {"adam_lr": -1}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"phase2": {"lambda": [1, -1, 1]}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"phase2": {"lambda": [1, 1]}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"data": {"height": "big"}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"data": {"base_classes": ["ring"], "novel_classes": ["ring"]}})")),
               ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"model": {"neck": "heavy"}})")), ConfigError);
  EXPECT_NO_THROW(parse_run_config(json::parse(R"({"phase1": {"adam_lr": 0}})")));
}

TEST(RunConfig, OutputRootFromEnvironment) {
  RunConfig c = parse_run_config(nlohmann::json::object());
  c.output_dir = "rel";
  setenv(kOutputRootEnv, "/tmp/root", 1);
  EXPECT_EQ(c.output_path(), fs::path("/tmp/root/rel"));
  c.output_dir = "/abs";
  EXPECT_EQ(c.output_path(), fs::path("/abs"));
  unsetenv(kOutputRootEnv);
}
