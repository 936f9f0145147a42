#pragma once

// Policy-gradient fine-tuning of the reverse diffusion chain.
//
// Each rollout is a full sampled trajectory whose terminal state is decoded
// into a scene and scored against the conditioning sentence. The update is
// plain REINFORCE with a per-bucket moving baseline and batch-std
// normalization; one rollout batch feeds exactly one update.

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imagine/autodiff.hpp"
#include "imagine/diffusion.hpp"
#include "imagine/scene_graph.hpp"

namespace imagine {

using RewardFn = std::function<double(const Tokens& context, const Scene& scene)>;

/// reward(parse_lsg(context), extract_vsg(scene), lex).
RewardFn scene_graph_reward(SymbolLexicon lex);

inline constexpr std::size_t kRewardBuckets = 3;
/// Baseline bucket of a sentence: LSG triple count 1, 2, 3+.
std::size_t reward_bucket(const Tokens& context);

struct Rollout {
  Trajectory traj;
  Scene scene;
  double reward = 0.0;
  std::size_t bucket = 0;
};

struct RolloutBatch {
  std::vector<Rollout> rollouts;
  double mean_reward = 0.0;  // Monte-Carlo estimate of the expected reward
  double std_reward = 0.0;   // 1/(n-1) estimator, floored at kStdFloor
  double decodable_fraction = 0.0;

  static constexpr double kStdFloor = 1e-6;
  std::size_t size() const { return rollouts.size(); }
  /// Recomputes the summary statistics from the rollouts.
  void summarize();
};

class BaselineState {
 public:
  explicit BaselineState(double decay = 0.9) : decay_(decay) {}

  std::optional<double> value(std::size_t bucket) const { return values_.at(bucket); }
  void set(std::size_t bucket, double v);
  /// Folds each bucket's batch mean into its running value.
  void update(const RolloutBatch& batch);
  void update(std::span<const double> rewards, std::span<const std::size_t> buckets);
  double decay() const { return decay_; }

 private:
  double decay_;
  std::array<std::optional<double>, kRewardBuckets> values_{};
};

/// Samples n_per_context trajectories per context (context-major order),
/// decodes and scores them. Trajectory k draws from rng-derived stream k.
RolloutBatch collect_rollouts(std::span<const Tokens> contexts, const Denoiser& denoiser, const NoiseSchedule& sched,
                              const RewardFn& reward_fn, RngStream& rng, std::size_t n_per_context,
                              double noise_scale = 1.0);

/// A = (r - b) / s. b is the bucket's baseline, or the batch's bucket mean
/// when the bucket has no value yet; s is the batch std (floored) for n >= 2
/// and 1 for a single rollout.
std::vector<double> compute_advantages(std::span<const double> rewards, std::span<const std::size_t> buckets,
                                       const BaselineState& baseline);

/// (1/n) sum_rows A[owner[row]] * log_probs[row]; its gradient is the
/// REINFORCE ascent direction.
ad::Var reinforce_surrogate(ad::Tape& tape, ad::Var log_probs, std::span<const std::size_t> owner,
                            std::span<const double> advantages, std::size_t n_trajectories);

/// Batch-mean of sum_t grad log p(x_{t-1} | x_t, c) * A over stochastic steps.
ad::GradientBuffer reinforce_gradient(const RolloutBatch& batch, const Denoiser& denoiser, const NoiseSchedule& sched,
                                      const BaselineState& baseline);

struct DdpoDiagnostics {
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double grad_norm = 0.0;     // before clipping
  double applied_norm = 0.0;  // after clipping; 0 when nothing was applied
  double decodable_fraction = 0.0;
  bool skipped = false;
};

/// One clipped ascent step on the expected reward, then a baseline update.
/// The gradient is multiplied by `weight` before clipping.
DdpoDiagnostics ddpo_step(const RolloutBatch& batch, Denoiser& denoiser, const NoiseSchedule& sched, ad::Adam& optimizer,
                          BaselineState& baseline, double clip_norm, double weight = 1.0);

}  // namespace imagine
