#pragma once

// Conditional DDPM over scene vectors.
//
// Forward process: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
// The denoiser is trained on ||mu_tilde(x0, x_t, t) - mu_theta(x_t, c, t)||^2
// where mu_tilde is the forward-process posterior mean. Internally the
// network emits an estimate of x0 and mu_theta is that estimate pushed
// through the same posterior-mean map, so the loss is still taken on means.
//
// Reverse transitions are Normal(mu_theta, sigma_t^2 I) with
// sigma_t^2 = beta_t * noise_scale^2; the last step (t = 1) returns its mean.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "imagine/autodiff.hpp"
#include "imagine/rng.hpp"
#include "imagine/world.hpp"

namespace imagine {

struct NoiseSchedule {
  std::size_t steps = 0;  // T
  std::vector<double> beta;       // beta[t-1] for t = 1..T
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running products

  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  /// abar_t for t = 0..T with abar_0 = 1.
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
  /// Identifies the schedule a trajectory was sampled under.
  std::uint64_t fingerprint() const;
};

NoiseSchedule build_schedule(std::size_t steps, double beta_start, double beta_end);

struct PosteriorCoefficients {
  double x0 = 0.0;
  double xt = 0.0;
};

/// mu_tilde = coef.x0 * x0 + coef.xt * x_t.
PosteriorCoefficients posterior_coefficients(std::size_t t, const NoiseSchedule& sched);
SceneVector posterior_mean(std::span<const double> x0, std::span<const double> xt, std::size_t t,
                           const NoiseSchedule& sched);

struct ForwardSample {
  SceneVector xt{};
  SceneVector eps{};
};

ForwardSample forward_sample(std::span<const double> x0, std::size_t t, const NoiseSchedule& sched, RngStream& rng);
/// Deterministic variant with caller-supplied noise.
SceneVector forward_with_noise(std::span<const double> x0, std::span<const double> eps, std::size_t t,
                               const NoiseSchedule& sched);

/// Source-token ids as understood by the denoiser's context embedding.
std::vector<std::int64_t> context_ids(std::span<const std::string> tokens);

/// 16-dim sinusoidal timestep embedding.
std::vector<double> timestep_embedding(std::size_t t, std::size_t dim);

struct DenoiserConfig {
  std::size_t hidden = 128;
  std::size_t context_dim = 32;
  std::size_t time_dim = 16;
};

class Denoiser {
 public:
  Denoiser(DenoiserConfig config, RngStream& init);

  /// mu_theta for a batch. Row i of `xt` is conditioned on contexts[i] at steps[i].
  ad::Var mean(ad::Tape& tape, const Tensor& xt, std::span<const std::vector<std::int64_t>* const> contexts,
               std::span<const std::size_t> steps, const NoiseSchedule& sched) const;

  /// Non-recording convenience wrapper.
  Tensor mean_values(const Tensor& xt, std::span<const std::vector<std::int64_t>* const> contexts,
                     std::span<const std::size_t> steps, const NoiseSchedule& sched) const;

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const DenoiserConfig& config() const { return config_; }

 private:
  DenoiserConfig config_;
  ad::ParameterSet params_;
};

struct DdpmExample {
  SceneVector x0{};
  std::vector<std::int64_t> context;
};

/// Batch-mean squared posterior-mean error (sum over the 27 coordinates).
/// Draws t ~ U{1..T} and eps per example from `rng`.
ad::Var ddpm_loss(ad::Tape& tape, std::span<const DdpmExample> batch, const Denoiser& denoiser,
                  const NoiseSchedule& sched, RngStream& rng);

struct Trajectory {
  /// states[t] = x_t for t = 0..T (states[T] is the initial noise).
  std::vector<SceneVector> states;
  /// Per transition x_t -> x_{t-1}, indexed by t - 1.
  std::vector<SceneVector> means;
  std::vector<double> sigmas;     // 0 for deterministic transitions
  std::vector<double> log_probs;  // 0 for deterministic transitions
  std::vector<std::int64_t> context;
  Tokens context_tokens;
  std::uint64_t schedule_fingerprint = 0;

  std::size_t steps() const { return log_probs.size(); }
  const SceneVector& x0() const { return states.front(); }
  bool stochastic(std::size_t t) const { return sigmas.at(t - 1) > 0.0; }
};

/// Gaussian log-density of x under Normal(mean, sigma^2 I).
double gaussian_log_density(std::span<const double> x, std::span<const double> mean, double sigma);

Trajectory sample_trajectory(std::span<const std::string> context, const Denoiser& denoiser,
                             const NoiseSchedule& sched, RngStream& rng, double noise_scale);

/// Samples one trajectory per context, stacking rows per reverse step.
/// Trajectory i draws all of its noise from rngs[i].
std::vector<Trajectory> sample_trajectories(std::span<const Tokens> contexts, const Denoiser& denoiser,
                                            const NoiseSchedule& sched, std::span<RngStream> rngs,
                                            double noise_scale);

/// Sampler with a caller-chosen starting point x_T.
Trajectory sample_from(const SceneVector& x_T, std::span<const std::string> context, const Denoiser& denoiser,
                       const NoiseSchedule& sched, RngStream& rng, double noise_scale);

/// Differentiable log p_theta(x_{t-1} | x_t, c) under the current parameters.
ad::Var transition_log_prob(ad::Tape& tape, const Trajectory& traj, const Denoiser& denoiser,
                            const NoiseSchedule& sched, std::size_t t);

/// One row per stochastic transition of every trajectory: log-densities [rows]
/// plus the trajectory index of each row.
struct StackedLogProbs {
  ad::Var log_probs;
  std::vector<std::size_t> owner;
};
StackedLogProbs stacked_log_probs(ad::Tape& tape, std::span<const Trajectory> trajs, const Denoiser& denoiser,
                                  const NoiseSchedule& sched);

/// JSONL debug dump, states rounded to 4 decimals.
std::string trajectory_to_json(const Trajectory& traj);

}  // namespace imagine
