#include <doctest.h>

#include "imagine/config.hpp"

using namespace imagine;

TEST_CASE("defaults validate and match the shipped config file") {
  const RunConfig defaults;
  CHECK_NOTHROW(defaults.validate());
  CHECK(defaults.scene_source() == SceneSource::generated);
  const RunConfig shipped = load_config(IMAGINE_SOURCE_DIR "/configs/default.cfg");
  CHECK(shipped.to_text() == defaults.to_text());
  CHECK(shipped.diffusion.lr == 1e-3);
  CHECK(shipped.ddpo.lr == 1e-4);
  CHECK(shipped.translator.lr == 3e-4);
}

TEST_CASE("parse_config") {
  const RunConfig c = parse_config(
      "# comment\n"
      "seed = 7\n"
      "lexicon = soft   ; trailing comment\n"
      "\n"
      "[translator]\n"
      "lr = 0.01\n"
      "joint_loss = false\n"
      "[data]\n"
      "train_size=12\n");
  CHECK(c.seed == 7);
  CHECK(c.lexicon == "soft");
  CHECK(c.translator.lr == 0.01);
  CHECK_FALSE(c.translator.joint_loss);
  CHECK(c.data.train_size == 12);

  CHECK_THROWS_AS(parse_config("[translator]\nlearning_rate = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[optimizer]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ddpo]\nlr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ddpo]\nrl_steps = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ablation]\nuse_diffusion = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ddpo]\nrl_steps\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ddpo\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/imagine.cfg"), ConfigError);
}

TEST_CASE("overrides") {
  RunConfig c;
  apply_overrides(c, {"translator.lr=0.5", "seed=9", "ablation.use_diffusion = false"});
  CHECK(c.translator.lr == 0.5);
  CHECK(c.seed == 9);
  CHECK_FALSE(c.ablation.use_diffusion);
  CHECK_THROWS_AS(apply_overrides(c, {"translator.momentum=0.9"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"translator.lr"}), ConfigError);
}

TEST_CASE("canonical text round trip and hash") {
  RunConfig c;
  apply_overrides(c, {"diffusion.beta_end=0.125", "ddpo.lr=3.0000000000000004e-05", "data.train_size=17"});
  const RunConfig back = parse_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.ddpo.lr == c.ddpo.lr);
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);

  RunConfig moved = c;
  moved.output_root = "/somewhere/else";
  CHECK(moved.hash() == c.hash());
  RunConfig changed = c;
  changed.translator.lr *= 2.0;
  CHECK(changed.hash() != c.hash());
}

TEST_CASE("validation rules") {
  RunConfig c;
  c.ablation.use_real_scenes = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.ablation.use_diffusion = false;
  CHECK_NOTHROW(c.validate());
  CHECK(c.scene_source() == SceneSource::oracle);
  c.ablation.use_real_scenes = false;
  CHECK(c.scene_source() == SceneSource::none);

  RunConfig bad;
  bad.data.ambiguous_fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.translator.heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.diffusion.beta_end = 1e-5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.lexicon = "/no/such/table.txt";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config_diff") {
  RunConfig a, b;
  CHECK(config_diff(a, b).empty());
  b.ablation.use_scene_encoder = false;
  b.seed = 5;
  CHECK(config_diff(a, b) == std::vector<std::string>{"seed", "ablation.use_scene_encoder"});
}
