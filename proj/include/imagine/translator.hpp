#pragma once

// Decoder-only translator with an optional visual prefix.
//
// Sequence layout: [IMG x L]? [source] [SEP] [target...]. The IMG positions
// carry projected scene embeddings instead of token embeddings. Only the
// positions from SEP onward are scored, each predicting the next target token
// (the last one predicts EOS).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imagine/autodiff.hpp"
#include "imagine/rng.hpp"
#include "imagine/world.hpp"

namespace imagine {

class Vocabulary {
 public:
  static constexpr std::int64_t kBos = 0, kEos = 1, kPad = 2, kSep = 3, kImg = 4;

  /// Specials followed by the source and target languages.
  static Vocabulary standard();
  static Vocabulary load(const std::filesystem::path& path);
  explicit Vocabulary(std::vector<std::string> tokens);

  void save(const std::filesystem::path& path) const;
  std::size_t size() const { return tokens_.size(); }
  std::int64_t id(std::string_view token) const;
  const std::string& token(std::int64_t id) const;
  std::vector<std::int64_t> ids(std::span<const std::string> tokens) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
};

struct TranslatorConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t layers = 2;
  std::size_t max_len = 48;
  std::size_t visual_tokens = 4;
  std::size_t encoder_hidden = 64;
};

enum class SceneEncoder { learned, frozen_random };

class Translator {
 public:
  Translator(TranslatorConfig config, Vocabulary vocab, RngStream& init, SceneEncoder encoder = SceneEncoder::learned);

  const TranslatorConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  SceneEncoder encoder() const { return encoder_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  /// Fixed map standing in for the scene encoder when it is frozen.
  const Tensor& frozen_encoder() const { return frozen_; }
  void set_frozen_encoder(Tensor t);

 private:
  TranslatorConfig config_;
  Vocabulary vocab_;
  SceneEncoder encoder_;
  ad::ParameterSet params_;
  Tensor frozen_;
};

/// L x d_model visual embeddings of a scene vector.
ad::Var project_visual(ad::Tape& tape, const Translator& model, const SceneVector& x0);

/// Prefix ids: [IMG x L]? source [SEP].
std::vector<std::int64_t> prefix_ids(const Translator& model, std::span<const std::string> source, bool with_visual);

/// Per-position logits [n, V]. `visuals` must be given exactly when the
/// sequence starts with the IMG block.
ad::Var lm_logits(ad::Tape& tape, const Translator& model, std::span<const std::int64_t> ids,
                  std::optional<ad::Var> visuals);

/// Logits of several sequences evaluated independently (in parallel).
std::vector<Tensor> lm_logits_batch(const Translator& model, std::span<const std::vector<std::int64_t>> sequences,
                                    std::span<const SceneVector> scenes);

/// Mean NLL over the scored positions (targets of -1 are skipped).
ad::Var masked_nll(ad::Var logits, std::vector<std::int64_t> targets);

/// Input ids and per-position targets for teacher forcing.
struct TeacherSequence {
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> targets;
  std::size_t scored = 0;
};
TeacherSequence teacher_sequence(const Translator& model, std::span<const std::string> source,
                                 std::span<const std::string> target, bool with_visual);

/// Token-level mean NLL of the targets (plus EOS) over the whole batch.
/// `scenes` is empty (no visual prefix) or holds one scene per example.
ad::Var mllm_loss(ad::Tape& tape, const Translator& model, std::span<const TranslationExample> batch,
                  std::span<const SceneVector> scenes);

struct LossAndGrad {
  double loss = 0.0;
  ad::GradientBuffer grads;
};

/// Same value as mllm_loss, computed with one tape per example in parallel.
/// Per-example gradients are summed in ascending `keys` order (batch order
/// when keys is empty), so the result does not depend on presentation order.
LossAndGrad mllm_loss_and_grad(const Translator& model, std::span<const TranslationExample> batch,
                               std::span<const SceneVector> scenes, std::span<const std::uint64_t> keys = {});

/// Argmax decoding from SEP over EOS and the target words, until EOS or max_len tokens.
Tokens greedy_decode(const Translator& model, std::span<const std::string> source, const SceneVector* scene,
                     std::size_t max_len = 16);

/// log p(target, EOS | source, scene) under teacher forcing.
double sequence_log_prob(const Translator& model, std::span<const std::string> source,
                         std::span<const std::string> target, const SceneVector* scene);

void save_translator(const Translator& model, const std::filesystem::path& path);
void load_translator(Translator& model, const std::filesystem::path& path);

}  // namespace imagine
