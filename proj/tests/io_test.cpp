#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cast/binio.hpp"
#include "cast/checkpoint.hpp"
#include "cast/config.hpp"
#include "support.hpp"

using namespace cast;

TEST(Checkpoint, RoundTripsBitExactly) {
  ModelConfig cfg;
  cfg.block.fusion = Fusion::CA_TV;
  const CastModel model(cfg, 4);
  const std::string bytes = serialize_checkpoint(make_checkpoint(model, "1,2,3", 42));
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.config, cfg);
  EXPECT_EQ(back.provenance, "1,2,3");
  EXPECT_EQ(back.seed, 42u);
  const CastModel restored = model_from_checkpoint(back);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(restored.params()[i].name, model.params()[i].name);
    EXPECT_EQ(restored.params()[i].value, model.params()[i].value);
    EXPECT_EQ(restored.params()[i].frozen, model.params()[i].frozen);
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "cast_io_test.ckpt";
  const CastModel model(cast::testing::tiny_config(), 1);
  save_checkpoint(make_checkpoint(model, "base", 7), path.string());
  const Checkpoint back = load_checkpoint(path.string());
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(make_checkpoint(model, "base", 7)));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), std::runtime_error);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const std::string bytes = serialize_checkpoint(make_checkpoint(CastModel(cast::testing::tiny_config(), 1), "1", 1));
  std::string bad = bytes;
  bad[3] = '?';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = bytes;
  bad[8] = 9;  // version
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes + std::string(1, '\0')), FormatError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig cfg;
  cfg.pipeline.seed = 9;
  cfg.pipeline.model.block.fusion = Fusion::SACA;
  cfg.pipeline.stages = {Stage::Base};
  cfg.corpus.n_speakers = 7;
  cfg.eval.synth.w = 2.5;
  const RunConfig back = run_config_from_json(run_config_to_json(cfg));
  EXPECT_EQ(run_config_to_json(back).dump(), run_config_to_json(cfg).dump());
  EXPECT_EQ(back.pipeline.model, cfg.pipeline.model);
  EXPECT_EQ(back.seed(), 9u);
}

TEST(Config, MissingKeysKeepDefaults) {
  const RunConfig cfg = run_config_from_json(nlohmann::json::parse(R"({"seed": 3, "model": {"fusion": "SA"}})"));
  EXPECT_EQ(cfg.seed(), 3u);
  EXPECT_EQ(cfg.pipeline.model.block.fusion, Fusion::SA);
  EXPECT_EQ(cfg.pipeline.model.block.d_model, 64);
  EXPECT_EQ(cfg.corpus.n_speakers, 20);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"sed": 3})")), std::invalid_argument);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"model": {"dmodel": 3}})")), std::invalid_argument);
}

TEST(Config, ValidationListsEveryViolation) {
  RunConfig cfg;
  cfg.pipeline.model.block.d_model = 30;
  cfg.corpus.n_speakers = 0;
  cfg.eval.synth.num_steps = 0;
  try {
    cfg.validate();
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("d_model"), std::string::npos) << msg;
    EXPECT_NE(msg.find("n_speakers"), std::string::npos) << msg;
    EXPECT_NE(msg.find("ode_steps"), std::string::npos) << msg;
  }
}

TEST(Config, MismatchedMelWidthIsRejected) {
  RunConfig cfg;
  cfg.corpus.data.n_mels = 20;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Config, DerivedSeedsDiffer) {
  RunConfig cfg;
  EXPECT_NE(corpus_seed(cfg), eval_seed(cfg));
  RunConfig other;
  other.pipeline.seed = 43;
  EXPECT_NE(corpus_seed(cfg), corpus_seed(other));
}

TEST(Config, LoadsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "cast_io_test.json";
  {
    std::ofstream(path) << R"({"seed": 11, "pipeline": {"scale_factor": 0.001}})";
  }
  const RunConfig cfg = load_run_config(path.string());
  EXPECT_EQ(cfg.seed(), 11u);
  EXPECT_DOUBLE_EQ(cfg.pipeline.scale_factor, 0.001);
  {
    std::ofstream(path) << "{not json";
  }
  EXPECT_THROW(load_run_config(path.string()), std::invalid_argument);
  std::filesystem::remove(path);
}
