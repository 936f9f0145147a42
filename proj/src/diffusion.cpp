#include "imagine/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace imagine {

namespace {

constexpr std::size_t kDim = kSceneDim;

void check_step(std::size_t t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps)
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(sched.steps));
}

Tensor init_matrix(std::size_t rows, std::size_t cols, double stddev, RngStream& rng) {
  Tensor w({rows, cols});
  for (double& v : w.data()) v = stddev * rng.normal();
  return w;
}

Tensor to_row(const SceneVector& v) { return Tensor({1, kDim}, std::vector<double>(v.begin(), v.end())); }

}  // namespace

std::uint64_t NoiseSchedule::fingerprint() const {
  std::uint64_t h = fnv1a64(std::to_string(steps));
  for (double b : beta) {
    char bytes[sizeof(double)];
    std::memcpy(bytes, &b, sizeof b);
    h = fnv1a64(std::string_view(bytes, sizeof bytes), h);
  }
  return h;
}

NoiseSchedule build_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 2) throw std::invalid_argument("noise schedule needs at least 2 steps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("noise schedule requires 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.steps = steps;
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double b = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bar.push_back(running);
  }
  return s;
}

PosteriorCoefficients posterior_coefficients(std::size_t t, const NoiseSchedule& sched) {
  check_step(t, sched);
  const double ab = sched.alpha_bar_at(t), ab_prev = sched.alpha_bar_at(t - 1);
  return {std::sqrt(ab_prev) * sched.beta_at(t) / (1.0 - ab),
          std::sqrt(sched.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab)};
}

SceneVector posterior_mean(std::span<const double> x0, std::span<const double> xt, std::size_t t,
                           const NoiseSchedule& sched) {
  const auto c = posterior_coefficients(t, sched);
  SceneVector out{};
  for (std::size_t i = 0; i < kDim; ++i) out[i] = c.x0 * x0[i] + c.xt * xt[i];
  return out;
}

SceneVector forward_with_noise(std::span<const double> x0, std::span<const double> eps, std::size_t t,
                               const NoiseSchedule& sched) {
  check_step(t, sched);
  const double a = std::sqrt(sched.alpha_bar_at(t)), s = std::sqrt(1.0 - sched.alpha_bar_at(t));
  SceneVector out{};
  for (std::size_t i = 0; i < kDim; ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

ForwardSample forward_sample(std::span<const double> x0, std::size_t t, const NoiseSchedule& sched, RngStream& rng) {
  check_step(t, sched);
  ForwardSample out;
  for (double& e : out.eps) e = rng.normal();
  out.xt = forward_with_noise(x0, out.eps, t, sched);
  return out;
}

std::vector<std::int64_t> context_ids(std::span<const std::string> tokens) {
  const auto& words = source_words();
  std::vector<std::int64_t> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) {
    const auto it = std::find(words.begin(), words.end(), tok);
    if (it == words.end()) throw std::invalid_argument("unknown context token '" + tok + "'");
    ids.push_back(it - words.begin());
  }
  return ids;
}

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(static_cast<double>(t) * freq);
    out[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

Denoiser::Denoiser(DenoiserConfig config, RngStream& init) : config_(config) {
  const std::size_t in = kDim + config.context_dim + config.time_dim;
  const std::size_t h = config.hidden;
  params_.add("denoiser.embed", init_matrix(source_words().size(), config.context_dim, 0.5, init));
  params_.add("denoiser.w1", init_matrix(in, h, 1.0 / std::sqrt(static_cast<double>(in)), init));
  params_.add("denoiser.b1", Tensor({1, h}));
  params_.add("denoiser.w2", init_matrix(h, h, 1.0 / std::sqrt(static_cast<double>(h)), init));
  params_.add("denoiser.b2", Tensor({1, h}));
  params_.add("denoiser.w3", init_matrix(h, kDim, 1.0 / std::sqrt(static_cast<double>(h)), init));
  params_.add("denoiser.b3", Tensor({1, kDim}));
}

ad::Var Denoiser::mean(ad::Tape& tape, const Tensor& xt, std::span<const std::vector<std::int64_t>* const> contexts,
                       std::span<const std::size_t> steps, const NoiseSchedule& sched) const {
  const std::size_t n = xt.rows();
  if (xt.cols() != kDim || contexts.size() != n || steps.size() != n)
    throw ShapeError("denoiser batch mismatch: x_t " + to_string(xt.shape()) + ", " +
                     std::to_string(contexts.size()) + " contexts, " + std::to_string(steps.size()) + " steps");
  const std::size_t vocab = source_words().size();
  // Mean of token embeddings as (bag-of-words / length) x table.
  Tensor bag({n, vocab});
  Tensor temb({n, config_.time_dim});
  Tensor coef_x0({n, kDim}), xt_term({n, kDim});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ids = *contexts[i];
    for (auto id : ids) bag.at(i, static_cast<std::size_t>(id)) += 1.0 / static_cast<double>(ids.size());
    const auto e = timestep_embedding(steps[i], config_.time_dim);
    std::copy(e.begin(), e.end(), temb.row(i).begin());
    const auto c = posterior_coefficients(steps[i], sched);
    for (std::size_t j = 0; j < kDim; ++j) {
      coef_x0.at(i, j) = c.x0;
      xt_term.at(i, j) = c.xt * xt.at(i, j);
    }
  }
  const ad::Var ctx = ad::matmul(tape.constant(std::move(bag)), tape.parameter(params_.get("denoiser.embed")));
  const ad::Var parts[] = {tape.constant(xt), ctx, tape.constant(std::move(temb))};
  ad::Var h = ad::concat(parts, 1);
  h = ad::tanh(ad::add(ad::matmul(h, tape.parameter(params_.get("denoiser.w1"))),
                       tape.parameter(params_.get("denoiser.b1"))));
  h = ad::tanh(ad::add(ad::matmul(h, tape.parameter(params_.get("denoiser.w2"))),
                       tape.parameter(params_.get("denoiser.b2"))));
  const ad::Var x0_hat =
      ad::add(ad::matmul(h, tape.parameter(params_.get("denoiser.w3"))), tape.parameter(params_.get("denoiser.b3")));
  return ad::add(ad::mul(x0_hat, tape.constant(std::move(coef_x0))), tape.constant(std::move(xt_term)));
}

Tensor Denoiser::mean_values(const Tensor& xt, std::span<const std::vector<std::int64_t>* const> contexts,
                             std::span<const std::size_t> steps, const NoiseSchedule& sched) const {
  ad::Tape tape(false);
  return mean(tape, xt, contexts, steps, sched).value();
}

ad::Var ddpm_loss(ad::Tape& tape, std::span<const DdpmExample> batch, const Denoiser& denoiser,
                  const NoiseSchedule& sched, RngStream& rng) {
  if (batch.empty()) throw std::invalid_argument("ddpm_loss: empty batch");
  const std::size_t n = batch.size();
  Tensor xt({n, kDim}), target({n, kDim});
  std::vector<std::size_t> steps(n);
  std::vector<const std::vector<std::int64_t>*> contexts(n);
  for (std::size_t i = 0; i < n; ++i) {
    steps[i] = 1 + rng.below(sched.steps);
    const auto fs = forward_sample(batch[i].x0, steps[i], sched, rng);
    const auto mu = posterior_mean(batch[i].x0, fs.xt, steps[i], sched);
    std::copy(fs.xt.begin(), fs.xt.end(), xt.row(i).begin());
    std::copy(mu.begin(), mu.end(), target.row(i).begin());
    contexts[i] = &batch[i].context;
  }
  const ad::Var mu = denoiser.mean(tape, xt, contexts, steps, sched);
  const ad::Var diff = ad::sub(tape.constant(std::move(target)), mu);
  return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(n));
}

double gaussian_log_density(std::span<const double> x, std::span<const double> mean, double sigma) {
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - mean[i]) * (x[i] - mean[i]);
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma) - sq / (2.0 * sigma * sigma);
}

namespace {

std::vector<Trajectory> run_sampler(std::vector<SceneVector> starts, std::span<const Tokens> contexts,
                                    const Denoiser& denoiser, const NoiseSchedule& sched, std::span<RngStream> rngs,
                                    double noise_scale) {
  if (!(noise_scale >= 0.0 && noise_scale <= 1.0)) throw std::invalid_argument("noise_scale must lie in [0, 1]");
  const std::size_t n = contexts.size();
  const std::size_t T = sched.steps;
  std::vector<Trajectory> trajs(n);
  std::vector<const std::vector<std::int64_t>*> ctx_ptrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& tr = trajs[i];
    tr.context_tokens = contexts[i];
    tr.context = context_ids(contexts[i]);
    tr.schedule_fingerprint = sched.fingerprint();
    tr.states.assign(T + 1, SceneVector{});
    tr.means.assign(T, SceneVector{});
    tr.sigmas.assign(T, 0.0);
    tr.log_probs.assign(T, 0.0);
    tr.states[T] = starts[i];
  }
  for (std::size_t i = 0; i < n; ++i) ctx_ptrs[i] = &trajs[i].context;
  Tensor xt({n, kDim});
  for (std::size_t t = T; t >= 1; --t) {
    for (std::size_t i = 0; i < n; ++i) std::copy(trajs[i].states[t].begin(), trajs[i].states[t].end(), xt.row(i).begin());
    const std::vector<std::size_t> steps(n, t);
    const Tensor mu = denoiser.mean_values(xt, ctx_ptrs, steps, sched);
    const double sigma = t > 1 ? std::sqrt(sched.beta_at(t)) * noise_scale : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto& tr = trajs[i];
      auto& mean = tr.means[t - 1];
      std::copy(mu.row(i).begin(), mu.row(i).end(), mean.begin());
      auto& next = tr.states[t - 1];
      if (sigma > 0.0) {
        for (std::size_t j = 0; j < kDim; ++j) next[j] = mean[j] + sigma * rngs[i].normal();
        tr.sigmas[t - 1] = sigma;
        tr.log_probs[t - 1] = gaussian_log_density(next, mean, sigma);
      } else {
        next = mean;
      }
    }
  }
  for (const auto& tr : trajs)
    for (const auto& s : tr.states)
      for (double v : s)
        if (!std::isfinite(v)) throw std::runtime_error("sampler produced a non-finite state");
  return trajs;
}

}  // namespace

std::vector<Trajectory> sample_trajectories(std::span<const Tokens> contexts, const Denoiser& denoiser,
                                            const NoiseSchedule& sched, std::span<RngStream> rngs,
                                            double noise_scale) {
  if (rngs.size() != contexts.size()) throw std::invalid_argument("sample_trajectories: one rng per context");
  std::vector<SceneVector> starts(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i)
    for (double& v : starts[i]) v = rngs[i].normal();
  return run_sampler(std::move(starts), contexts, denoiser, sched, rngs, noise_scale);
}

Trajectory sample_trajectory(std::span<const std::string> context, const Denoiser& denoiser,
                             const NoiseSchedule& sched, RngStream& rng, double noise_scale) {
  const Tokens ctx(context.begin(), context.end());
  return sample_trajectories(std::span<const Tokens>(&ctx, 1), denoiser, sched, std::span<RngStream>(&rng, 1),
                             noise_scale)
      .front();
}

Trajectory sample_from(const SceneVector& x_T, std::span<const std::string> context, const Denoiser& denoiser,
                       const NoiseSchedule& sched, RngStream& rng, double noise_scale) {
  const Tokens ctx(context.begin(), context.end());
  return run_sampler({x_T}, std::span<const Tokens>(&ctx, 1), denoiser, sched, std::span<RngStream>(&rng, 1),
                     noise_scale)
      .front();
}

ad::Var transition_log_prob(ad::Tape& tape, const Trajectory& traj, const Denoiser& denoiser,
                            const NoiseSchedule& sched, std::size_t t) {
  if (t < 1 || t > traj.steps()) throw std::out_of_range("transition step outside trajectory");
  if (traj.schedule_fingerprint != sched.fingerprint())
    throw std::invalid_argument("trajectory was sampled under a different noise schedule");
  const double sigma = traj.sigmas[t - 1];
  if (!(sigma > 0.0)) throw std::invalid_argument("transition " + std::to_string(t) + " has zero variance");
  const std::vector<const std::vector<std::int64_t>*> ctx{&traj.context};
  const std::vector<std::size_t> steps{t};
  const ad::Var mu = denoiser.mean(tape, to_row(traj.states[t]), ctx, steps, sched);
  const ad::Var diff = ad::sub(tape.constant(to_row(traj.states[t - 1])), mu);
  const double d = static_cast<double>(kDim);
  return ad::add(ad::scale(ad::sum(ad::mul(diff, diff)), -1.0 / (2.0 * sigma * sigma)),
                 tape.constant(Tensor::scalar(-0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma))));
}

StackedLogProbs stacked_log_probs(ad::Tape& tape, std::span<const Trajectory> trajs, const Denoiser& denoiser,
                                  const NoiseSchedule& sched) {
  StackedLogProbs out;
  std::vector<const std::vector<std::int64_t>*> contexts;
  std::vector<std::size_t> steps;
  std::vector<double> xt_rows, prev_rows, inv_two_var, norm;
  const std::uint64_t fp = sched.fingerprint();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    if (tr.schedule_fingerprint != fp)
      throw std::invalid_argument("trajectory was sampled under a different noise schedule");
    for (std::size_t t = tr.steps(); t >= 1; --t) {
      const double sigma = tr.sigmas[t - 1];
      if (!(sigma > 0.0)) continue;
      contexts.push_back(&tr.context);
      steps.push_back(t);
      xt_rows.insert(xt_rows.end(), tr.states[t].begin(), tr.states[t].end());
      prev_rows.insert(prev_rows.end(), tr.states[t - 1].begin(), tr.states[t - 1].end());
      inv_two_var.push_back(-1.0 / (2.0 * sigma * sigma));
      norm.push_back(-0.5 * static_cast<double>(kDim) * std::log(2.0 * std::numbers::pi * sigma * sigma));
      out.owner.push_back(i);
    }
  }
  const std::size_t rows = steps.size();
  if (rows == 0) throw std::invalid_argument("no stochastic transitions to score");
  const ad::Var mu = denoiser.mean(tape, Tensor({rows, kDim}, std::move(xt_rows)), contexts, steps, sched);
  const ad::Var diff = ad::sub(tape.constant(Tensor({rows, kDim}, std::move(prev_rows))), mu);
  out.log_probs = ad::add(ad::mul(ad::row_sums(ad::mul(diff, diff)), tape.constant(Tensor({rows}, std::move(inv_two_var)))),
                          tape.constant(Tensor({rows}, std::move(norm))));
  return out;
}

std::string trajectory_to_json(const Trajectory& traj) {
  auto round4 = [](double v) { return std::round(v * 1e4) / 1e4; };
  nlohmann::ordered_json j;
  j["context"] = join(traj.context_tokens);
  nlohmann::ordered_json states = nlohmann::ordered_json::array();
  for (std::size_t t = traj.states.size(); t-- > 0;) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (double v : traj.states[t]) row.push_back(round4(v));
    states.push_back(std::move(row));
  }
  j["states"] = std::move(states);
  nlohmann::ordered_json lp = nlohmann::ordered_json::array();
  for (std::size_t t = traj.log_probs.size(); t-- > 0;) lp.push_back(round4(traj.log_probs[t]));
  j["log_probs"] = std::move(lp);
  return j.dump();
}

}  // namespace imagine
