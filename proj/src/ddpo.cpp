#include "imagine/ddpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace imagine {

RewardFn scene_graph_reward(SymbolLexicon lex) {
  return [lex = std::move(lex)](const Tokens& context, const Scene& scene) {
    return reward(parse_lsg(context), extract_vsg(scene), lex);
  };
}

std::size_t reward_bucket(const Tokens& context) {
  const std::size_t n = parse_lsg(context).size();
  return std::min<std::size_t>(std::max<std::size_t>(n, 1), kRewardBuckets) - 1;
}

namespace {

// Mean taken relative to the first element: exact when all values are equal.
double shifted_mean(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x - xs.front();
  return xs.front() + acc / static_cast<double>(xs.size());
}

std::array<std::vector<double>, kRewardBuckets> by_bucket(std::span<const double> rewards,
                                                          std::span<const std::size_t> buckets) {
  std::array<std::vector<double>, kRewardBuckets> out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out.at(buckets[i]).push_back(rewards[i]);
  return out;
}

}  // namespace

void RolloutBatch::summarize() {
  const std::size_t n = rollouts.size();
  if (n == 0) throw std::invalid_argument("empty rollout batch");
  std::vector<double> rewards;
  std::size_t decodable = 0;
  for (const auto& r : rollouts) {
    rewards.push_back(r.reward);
    decodable += r.scene.objects.empty() ? 0 : 1;
  }
  mean_reward = shifted_mean(rewards);
  double sq = 0.0;
  for (const auto& r : rollouts) sq += (r.reward - mean_reward) * (r.reward - mean_reward);
  std_reward = n > 1 ? std::max(std::sqrt(sq / static_cast<double>(n - 1)), kStdFloor) : kStdFloor;
  decodable_fraction = static_cast<double>(decodable) / static_cast<double>(n);
}

void BaselineState::set(std::size_t bucket, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("baseline value outside [0, 1]");
  values_.at(bucket) = v;
}

void BaselineState::update(const RolloutBatch& batch) {
  std::vector<double> rewards;
  std::vector<std::size_t> buckets;
  for (const auto& r : batch.rollouts) {
    rewards.push_back(r.reward);
    buckets.push_back(r.bucket);
  }
  update(rewards, buckets);
}

void BaselineState::update(std::span<const double> rewards, std::span<const std::size_t> buckets) {
  const auto groups = by_bucket(rewards, buckets);
  for (std::size_t b = 0; b < kRewardBuckets; ++b) {
    if (groups[b].empty()) continue;
    const double m = shifted_mean(groups[b]);
    values_[b] = values_[b] ? decay_ * *values_[b] + (1.0 - decay_) * m : m;
  }
}

RolloutBatch collect_rollouts(std::span<const Tokens> contexts, const Denoiser& denoiser, const NoiseSchedule& sched,
                              const RewardFn& reward_fn, RngStream& rng, std::size_t n_per_context,
                              double noise_scale) {
  if (contexts.empty()) throw std::invalid_argument("collect_rollouts: no contexts");
  if (n_per_context == 0) throw std::invalid_argument("collect_rollouts: n_per_context must be >= 1");
  const RngStream base(rng.engine()());
  std::vector<Tokens> flat;
  std::vector<RngStream> streams;
  for (const auto& c : contexts)
    for (std::size_t k = 0; k < n_per_context; ++k) {
      streams.push_back(base.derive(static_cast<std::uint64_t>(flat.size())));
      flat.push_back(c);
    }
  auto trajs = sample_trajectories(flat, denoiser, sched, streams, noise_scale);
  RolloutBatch batch;
  batch.rollouts.resize(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto& r = batch.rollouts[i];
    r.scene = decode_scene(trajs[i].x0());
    r.reward = reward_fn(flat[i], r.scene);
    if (!(r.reward >= 0.0 && r.reward <= 1.0))
      throw std::logic_error("reward " + std::to_string(r.reward) + " outside [0, 1]");
    r.bucket = reward_bucket(flat[i]);
    r.traj = std::move(trajs[i]);
  }
  batch.summarize();
  return batch;
}

std::vector<double> compute_advantages(std::span<const double> rewards, std::span<const std::size_t> buckets,
                                       const BaselineState& baseline) {
  const std::size_t n = rewards.size();
  if (n == 0 || buckets.size() != n) throw std::invalid_argument("compute_advantages: bad batch");
  const auto groups = by_bucket(rewards, buckets);
  double scale = 1.0;
  if (n > 1) {
    const double mean = shifted_mean(rewards);
    double sq = 0.0;
    for (double r : rewards) sq += (r - mean) * (r - mean);
    scale = std::max(std::sqrt(sq / static_cast<double>(n - 1)), RolloutBatch::kStdFloor);
  }
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto stored = baseline.value(buckets[i]);
    const double b = stored ? *stored : shifted_mean(groups[buckets[i]]);
    adv[i] = (rewards[i] - b) / scale;
  }
  return adv;
}

ad::Var reinforce_surrogate(ad::Tape& tape, ad::Var log_probs, std::span<const std::size_t> owner,
                            std::span<const double> advantages, std::size_t n_trajectories) {
  const std::size_t rows = owner.size();
  if (log_probs.value().size() != rows) throw ShapeError("reinforce_surrogate: one owner per log-prob row");
  std::vector<double> w(rows);
  for (std::size_t i = 0; i < rows; ++i) w[i] = advantages[owner[i]] / static_cast<double>(n_trajectories);
  return ad::sum(ad::mul(log_probs, tape.constant(Tensor(log_probs.value().shape(), std::move(w)))));
}

ad::GradientBuffer reinforce_gradient(const RolloutBatch& batch, const Denoiser& denoiser, const NoiseSchedule& sched,
                                      const BaselineState& baseline) {
  if (batch.rollouts.empty()) throw std::invalid_argument("reinforce_gradient: empty batch");
  const std::uint64_t fp = sched.fingerprint();
  std::vector<double> rewards;
  std::vector<std::size_t> buckets;
  for (const auto& r : batch.rollouts) {
    if (r.traj.schedule_fingerprint != fp)
      throw std::invalid_argument("trajectory was sampled under a different noise schedule");
    rewards.push_back(r.reward);
    buckets.push_back(r.bucket);
  }
  const auto adv = compute_advantages(rewards, buckets, baseline);
  ad::GradientBuffer grads(denoiser.params());
  if (std::all_of(adv.begin(), adv.end(), [](double a) { return a == 0.0; })) return grads;

  ad::Tape tape;
  std::vector<Trajectory> active;
  std::vector<double> active_adv;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (adv[i] == 0.0) continue;
    active.push_back(batch.rollouts[i].traj);
    active_adv.push_back(adv[i]);
  }
  const auto stacked = stacked_log_probs(tape, active, denoiser, sched);
  const ad::Var objective = reinforce_surrogate(tape, stacked.log_probs, stacked.owner, active_adv, batch.size());
  grads.accumulate(denoiser.params(), tape.backward(objective));
  return grads;
}

DdpoDiagnostics ddpo_step(const RolloutBatch& batch, Denoiser& denoiser, const NoiseSchedule& sched, ad::Adam& optimizer,
                          BaselineState& baseline, double clip_norm, double weight) {
  DdpoDiagnostics d;
  d.mean_reward = batch.mean_reward;
  d.std_reward = batch.std_reward;
  d.decodable_fraction = batch.decodable_fraction;
  ad::GradientBuffer g = reinforce_gradient(batch, denoiser, sched, baseline);
  if (!g.all_finite()) {
    std::cerr << "ddpo: non-finite gradient, step skipped\n";
    d.skipped = true;
    d.grad_norm = std::numeric_limits<double>::quiet_NaN();
  } else if (g.all_zero()) {
    d.skipped = true;
  } else {
    g.scale(weight);
    d.grad_norm = ad::clip_global_norm(g, clip_norm);
    d.applied_norm = g.norm();
    g.scale(-1.0);
    optimizer.step(g);
  }
  baseline.update(batch);
  return d;
}

}  // namespace imagine
