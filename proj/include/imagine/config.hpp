#pragma once

// Run configuration: flat key=value text with optional section headers.
//
//   seed = 1234
//   [translator]
//   lr = 3e-4
//
// Keys outside a section are global. Overrides use "section.key=value"
// ("key=value" for globals). Unknown keys and malformed values are rejected
// with ConfigError before any work starts.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "imagine/scene_graph.hpp"

namespace imagine {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 400;
  double ambiguous_fraction = 0.5;
  double test_ambiguous_fraction = 0.5;
};

struct DiffusionStageConfig {
  std::size_t steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.1;
  std::size_t hidden = 128;
  std::size_t context_dim = 32;
  std::size_t time_dim = 16;
  std::size_t max_epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t patience = 3;
  double min_improvement = 0.01;
};

struct DdpoStageConfig {
  std::size_t rl_steps = 200;
  std::size_t contexts_per_step = 8;
  std::size_t samples_per_context = 4;
  double lr = 1e-4;
  double clip_norm = 1.0;
  double baseline_decay = 0.9;
  double noise_scale = 1.0;
  std::size_t holdout_size = 64;
};

struct TranslatorStageConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t layers = 2;
  std::size_t visual_tokens = 4;
  std::size_t encoder_hidden = 64;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  double clip_norm = 1.0;
  std::size_t checkpoints = 10;
  std::size_t capture_batches = 50;
  bool joint_loss = true;
  bool freeze_denoiser = false;
  double denoiser_lr = 1e-4;
  std::size_t max_decode = 16;
};

struct AblationConfig {
  bool use_diffusion = true;
  bool use_real_scenes = false;
  bool use_scene_encoder = true;
};

enum class SceneSource { generated, oracle, none };

struct RunConfig {
  std::uint64_t seed = 1234;
  std::string lexicon = "strict";
  std::string output_root = "runs";
  DataConfig data;
  DiffusionStageConfig diffusion;
  DdpoStageConfig ddpo;
  TranslatorStageConfig translator;
  AblationConfig ablation;

  /// Checks ranges and cross-field rules; throws ConfigError.
  void validate() const;
  SceneSource scene_source() const;
  SymbolLexicon symbol_lexicon() const;

  /// Sets one key ("section.key" or a global name) from text.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  /// Every settable key in canonical order.
  static const std::vector<std::string>& keys();

  /// Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;
  /// fnv1a64 of to_text() with output_root blanked, as 16 hex digits.
  std::string hash() const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// "key=value" override list, applied in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);
/// Keys whose values differ.
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);

std::string_view name(SceneSource s);

}  // namespace imagine
