#pragma once

// Staged training: DDPM pretraining, DDPO fine-tuning, then translator
// training under the constant-normalized joint loss
//
//   L = L_mllm / C_mllm + L_imagine / C_imagine
//
// where L_imagine = 1 - mean rollout reward and its gradient with respect to
// the denoiser is the REINFORCE estimate.
//
// Everything a stage writes goes below the run directory
// <output_root>/<config hash>/.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "imagine/config.hpp"
#include "imagine/ddpo.hpp"
#include "imagine/diffusion.hpp"
#include "imagine/translator.hpp"
#include "imagine/world.hpp"

namespace imagine {

/// A required input of a stage is absent.
struct MissingArtifact : std::runtime_error {
  explicit MissingArtifact(const std::filesystem::path& p)
      : std::runtime_error("missing checkpoint: " + p.string()), artifact(p) {}
  std::filesystem::path artifact;
};

/// A stage produced a non-finite loss.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Layout of a run directory. Data and the stage 1/2 outputs live under
/// `shared`, which is the root itself except for ablation rows.
struct RunPaths {
  explicit RunPaths(std::filesystem::path root, std::filesystem::path shared = {});
  /// <output_root>/<hash>.
  static RunPaths for_config(const RunConfig& config);

  std::filesystem::path root;
  std::filesystem::path shared;
  std::filesystem::path data() const { return shared / "data"; }
  std::filesystem::path diffusion() const { return shared / "diffusion"; }
  std::filesystem::path ddpo() const { return shared / "ddpo"; }
  std::filesystem::path translator() const { return root / "translator"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path manifest() const { return root / "manifest.txt"; }

  std::filesystem::path pretrained_denoiser() const { return diffusion() / "denoiser.bin"; }
  std::filesystem::path tuned_denoiser() const { return ddpo() / "denoiser.bin"; }
  std::filesystem::path baseline() const { return ddpo() / "baseline.txt"; }
  std::filesystem::path final_translator() const { return translator() / "translator.bin"; }
  std::filesystem::path final_denoiser() const { return translator() / "denoiser.bin"; }
};

/// Named child stream of the config seed: data, diffusion, ddpo, translator, eval.
RngStream stage_stream(const RunConfig& config, std::string_view stage);

/// key=value text file; later writes replace earlier values of the same key.
class RunManifest {
 public:
  static RunManifest load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  std::optional<std::string> get(const std::string& key) const;
  void save(const std::filesystem::path& path) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// fnv1a64 of a file's bytes as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

struct Datasets {
  std::vector<TranslationExample> train, dev, test;
};

/// Writes train/dev/test JSONL under paths.data().
Datasets generate_data(const RunConfig& config, const RunPaths& paths);
Datasets load_data(const RunPaths& paths);

NoiseSchedule make_schedule(const RunConfig& config);
Denoiser make_denoiser(const RunConfig& config);
Translator make_translator(const RunConfig& config);
std::vector<DdpmExample> ddpm_examples(std::span<const TranslationExample> examples);

// ---- stage 1 ----

struct PretrainOptions {
  std::size_t max_epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t patience = 3;
  double min_improvement = 0.01;
};

struct PretrainHistory {
  /// Index 0 is the untrained network; entry e is after epoch e.
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t epochs() const { return val_loss.size() - 1; }
};

/// Minibatch Adam on ddpm_loss. Validation uses the same t and noise draws
/// every epoch. Stops when val loss improved by less than min_improvement
/// (relative) over the last `patience` epochs. `on_epoch` runs for the initial
/// state and after each finite epoch; a non-finite loss throws
/// TrainingDiverged before it is called, so the last state it saw is the last
/// good one.
PretrainHistory pretrain_denoiser(Denoiser& denoiser, const NoiseSchedule& sched, std::span<const DdpmExample> train,
                                  std::span<const DdpmExample> val, const PretrainOptions& options, RngStream& rng,
                                  const std::function<void(const PretrainHistory&)>& on_epoch = {});

/// Stage 1 on the run's data: writes diffusion/denoiser.bin and loss_curve.csv.
PretrainHistory pretrain_diffusion(const RunConfig& config, const RunPaths& paths);

// ---- stage 2 ----

struct DdpoLogRow {
  std::size_t step = 0;
  DdpoDiagnostics diag;
  double holdout_loss = 0.0;
};

/// Stage 2: rl_steps DDPO updates starting from the pretrained denoiser.
/// Writes ddpo/denoiser.bin, baseline.txt and reward_curve.csv.
std::vector<DdpoLogRow> finetune_ddpo(const RunConfig& config, const RunPaths& paths);

void save_baseline(const BaselineState& baseline, const std::filesystem::path& path);
BaselineState load_baseline(const std::filesystem::path& path, double decay);

// ---- stage 3 ----

/// Loss normalizers, each the mean over the capture batches.
class JointLossState {
 public:
  /// Throws if already captured, if a sample is empty or a mean is not > 0.
  void capture(std::span<const double> mllm_losses, std::span<const double> imagine_losses);
  void restore(double mllm_constant, double imagine_constant);
  bool captured() const { return captured_; }
  double mllm_constant() const;
  double imagine_constant() const;
  /// L_mllm / C_mllm + L_imagine / C_imagine; throws std::logic_error before capture.
  double normalized(double mllm_loss, double imagine_loss) const;

 private:
  bool captured_ = false;
  double mllm_ = 0.0, imagine_ = 0.0;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double mllm_loss = 0.0;
  double imagine_loss = 0.0;  // NaN when no scenes are imagined
  double joint_loss = 0.0;    // the objective actually minimized
  double mean_reward = 0.0;
};

/// Stage 3 state machine. Batches are drawn from a per-epoch shuffle; scenes
/// come from the run's scene source and are sampled afresh for every batch.
class TranslatorTrainer {
 public:
  /// `denoiser` is required for the generated scene source and ignored otherwise.
  TranslatorTrainer(const RunConfig& config, std::vector<TranslationExample> train, Translator model,
                    std::optional<Denoiser> denoiser, BaselineState baseline);
  TranslatorTrainer(const TranslatorTrainer&) = delete;
  TranslatorTrainer& operator=(const TranslatorTrainer&) = delete;

  bool joint() const { return joint_; }
  std::size_t batches_per_epoch() const;
  std::size_t total_steps() const { return batches_per_epoch() * config_.translator.epochs; }
  std::size_t steps_taken() const { return step_; }
  /// Training-set indices of the batch used by update number `step` (0-based).
  std::vector<std::size_t> batch_indices(std::size_t step) const;

  /// Measures both loss terms on the first capture_batches batches without
  /// updating anything, and fixes the normalizers.
  void capture_constants();
  JointLossState& constants() { return constants_; }
  const JointLossState& constants() const { return constants_; }

  /// One update. Throws std::logic_error if the joint term is active and the
  /// constants have not been captured.
  StepRecord step();

  const Translator& model() const { return model_; }
  Translator& model() { return model_; }
  const std::optional<Denoiser>& denoiser() const { return denoiser_; }
  const BaselineState& baseline() const { return baseline_; }

 private:
  struct BatchLosses;
  BatchLosses evaluate_batch(std::size_t epoch, std::size_t index, bool for_update);
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  RunConfig config_;
  std::vector<TranslationExample> train_;
  Translator model_;
  std::optional<Denoiser> denoiser_;
  BaselineState baseline_;
  NoiseSchedule sched_;
  SceneSource source_;
  bool joint_ = false;
  RewardFn reward_fn_;
  JointLossState constants_;
  ad::Adam translator_opt_;
  std::optional<ad::Adam> denoiser_opt_;
  RngStream rng_;
  std::size_t step_ = 0;
};

struct CheckpointRef {
  std::size_t step = 0;
  std::filesystem::path translator;
  std::filesystem::path denoiser;  // empty when no denoiser is used
};

struct TranslatorRun {
  std::vector<StepRecord> log;
  std::vector<CheckpointRef> checkpoints;
  std::optional<JointLossState> constants;
};

/// Stage 3: writes translator/ckpt_<k>.bin (plus denoiser_<k>.bin when the
/// denoiser is in use), the final translator.bin / denoiser.bin, train_log.csv
/// and checkpoints.csv, and records constants and checksums in the manifest.
/// Without stage-2 output the generated scene source is refused.
TranslatorRun train_translator(const RunConfig& config, const RunPaths& paths);

/// Checkpoints listed by a finished stage 3.
std::vector<CheckpointRef> list_checkpoints(const RunPaths& paths);

/// Loads a translator checkpoint into a model built from the config.
Translator load_translator_checkpoint(const RunConfig& config, const std::filesystem::path& path);
Denoiser load_denoiser_checkpoint(const RunConfig& config, const std::filesystem::path& path);

}  // namespace imagine
