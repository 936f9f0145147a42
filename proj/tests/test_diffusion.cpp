#include <doctest.h>

#include <cmath>
#include <numbers>

#include "imagine/diffusion.hpp"

using namespace imagine;

namespace {

const NoiseSchedule kSched = build_schedule(50, 1e-4, 0.1);

SceneVector random_vector(RngStream& r) {
  SceneVector v{};
  for (double& x : v) x = r.uniform(-1.0, 1.0);
  return v;
}

Denoiser small_denoiser(std::uint64_t seed) {
  RngStream init(seed);
  return Denoiser(DenoiserConfig{8, 4, 16}, init);
}

// Independent log-pdf: sum of univariate normal log-densities.
double univariate_sum(const SceneVector& x, const SceneVector& mu, double sigma) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mu[i]) / sigma;
    total += -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return total;
}

const Tokens kContext = split_words("a red circle left-of a blue square");

}  // namespace

TEST_CASE("build_schedule") {
  CHECK(kSched.alpha_bar_at(1) == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(kSched.alpha_bar_at(0) == 1.0);
  CHECK(std::abs(kSched.alpha_bar_at(2) - (1.0 - kSched.beta[0]) * (1.0 - kSched.beta[1])) < 1e-15);
  CHECK(kSched.alpha_bar_at(50) < kSched.alpha_bar_at(1));
  CHECK(kSched.alpha_bar_at(50) < 0.08);
  CHECK(kSched.beta_at(50) == doctest::Approx(0.1).epsilon(1e-15));
  double product = 1.0;
  for (std::size_t t = 1; t <= kSched.steps; ++t) {
    product *= kSched.alpha_at(t);
    CHECK(kSched.alpha_bar_at(t) == product);
    CHECK(kSched.beta_at(t) > 0.0);
    CHECK(kSched.beta_at(t) < 1.0);
    CHECK(kSched.alpha_bar_at(t) < kSched.alpha_bar_at(t - 1));
  }
  CHECK_THROWS(build_schedule(1, 1e-4, 0.1));
  CHECK_THROWS(build_schedule(10, 0.0, 0.1));
  CHECK_THROWS(build_schedule(10, 0.2, 0.1));
  CHECK_THROWS(build_schedule(10, 0.1, 1.0));
  CHECK(build_schedule(50, 1e-4, 0.1).fingerprint() == kSched.fingerprint());
  CHECK(build_schedule(50, 1e-4, 0.2).fingerprint() != kSched.fingerprint());
}

TEST_CASE("forward_sample marginal statistics") {
  RngStream r(3);
  const SceneVector x0 = random_vector(r);
  const SceneVector zero{};
  const std::size_t t = 20;
  const double a = std::sqrt(kSched.alpha_bar_at(t)), var = 1.0 - kSched.alpha_bar_at(t);
  const SceneVector noiseless = forward_with_noise(x0, zero, t, kSched);
  for (std::size_t i = 0; i < kSceneDim; ++i) CHECK(noiseless[i] == a * x0[i]);

  const int n = 10000;
  SceneVector sum{}, sumsq{};
  for (int k = 0; k < n; ++k) {
    const auto fs = forward_sample(x0, t, kSched, r);
    for (std::size_t i = 0; i < kSceneDim; ++i) {
      CHECK(fs.xt[i] == doctest::Approx(a * x0[i] + std::sqrt(var) * fs.eps[i]).epsilon(1e-12));
      sum[i] += fs.xt[i];
      sumsq[i] += fs.xt[i] * fs.xt[i];
    }
  }
  for (std::size_t i = 0; i < kSceneDim; ++i) {
    const double mean = sum[i] / n;
    const double sample_var = (sumsq[i] - n * mean * mean) / (n - 1);
    CHECK(std::abs(mean - a * x0[i]) < 4.0 * std::sqrt(var / n));
    // Var of the sample variance of a Gaussian: 2 sigma^4 / (n - 1).
    CHECK(std::abs(sample_var - var) < 4.0 * std::sqrt(2.0 * var * var / (n - 1)));
  }
  CHECK_THROWS(forward_sample(x0, 0, kSched, r));
  CHECK_THROWS(forward_sample(x0, 51, kSched, r));
}

TEST_CASE("posterior_mean") {
  RngStream r(4);
  for (std::size_t t = 1; t <= kSched.steps; ++t) {
    const auto c = posterior_coefficients(t, kSched);
    // Exact algebra: sqrt(ab_{t-1}) beta_t + sqrt(a_t)(1 - ab_{t-1}) vs (1 - ab_t), both over (1 - ab_t).
    const double ab = kSched.alpha_bar_at(t), abp = kSched.alpha_bar_at(t - 1);
    const double expected = (std::sqrt(abp) * kSched.beta_at(t) + std::sqrt(kSched.alpha_at(t)) * (1.0 - abp)) / (1.0 - ab);
    CHECK(std::abs(c.x0 + c.xt - expected) < 1e-12);
    const SceneVector v = random_vector(r);
    const SceneVector mu = posterior_mean(v, v, t, kSched);
    for (std::size_t i = 0; i < kSceneDim; ++i) CHECK(std::abs(mu[i] - expected * v[i]) < 1e-12);

    const SceneVector x0 = random_vector(r), xt = random_vector(r);
    SceneVector x0d, xtd;
    for (std::size_t i = 0; i < kSceneDim; ++i) {
      x0d[i] = 2 * x0[i];
      xtd[i] = 2 * xt[i];
    }
    const auto m1 = posterior_mean(x0, xt, t, kSched), m2 = posterior_mean(x0d, xtd, t, kSched);
    for (std::size_t i = 0; i < kSceneDim; ++i) CHECK(m2[i] == doctest::Approx(2 * m1[i]).epsilon(1e-14));
  }
  const SceneVector x0 = random_vector(r), xt = random_vector(r);
  const auto first = posterior_coefficients(1, kSched);
  CHECK(first.x0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(first.xt == 0.0);
  const SceneVector mu = posterior_mean(x0, xt, 1, kSched);
  for (std::size_t i = 0; i < kSceneDim; ++i) CHECK(std::abs(mu[i] - x0[i]) < 1e-12);
}

TEST_CASE("posterior mean of a consistent pair tracks x0 and x_t") {
  // With x_t = sqrt(ab_t) x0 (no noise) the posterior mean is sqrt(ab_{t-1}) x0.
  RngStream r(6);
  const SceneVector x0 = random_vector(r);
  const SceneVector zero{};
  for (std::size_t t = 1; t <= kSched.steps; ++t) {
    const SceneVector xt = forward_with_noise(x0, zero, t, kSched);
    const SceneVector mu = posterior_mean(x0, xt, t, kSched);
    for (std::size_t i = 0; i < kSceneDim; ++i)
      CHECK(std::abs(mu[i] - std::sqrt(kSched.alpha_bar_at(t - 1)) * x0[i]) < 1e-12);
  }
}

TEST_CASE("ddpm_loss") {
  RngStream r(8);
  const SceneVector target = encode_scene(sample_scene(r));
  std::vector<DdpmExample> batch(6, DdpmExample{target, context_ids(kContext)});

  // A network whose x0 estimate is exactly the data point reproduces mu_tilde.
  Denoiser perfect = small_denoiser(1);
  perfect.params().get("denoiser.w3").value.fill(0.0);
  perfect.params().get("denoiser.b3").value = Tensor({1, kSceneDim}, std::vector<double>(target.begin(), target.end()));
  {
    ad::Tape tape;
    RngStream lr(2);
    CHECK(ddpm_loss(tape, batch, perfect, kSched, lr).value().item() < 1e-28);
  }

  Denoiser net = small_denoiser(2);
  for (int k = 0; k < 20; ++k) {
    ad::Tape tape;
    RngStream lr(k);
    CHECK(ddpm_loss(tape, batch, net, kSched, lr).value().item() >= 0.0);
  }

  std::vector<DdpmExample> mixed;
  for (int i = 0; i < 4; ++i) {
    const Scene s = sample_scene(r);
    mixed.push_back({encode_scene(s), context_ids(render_pair(s, Split::normal).source)});
  }
  const double err = ad::grad_check(
      [&](ad::Tape& tape) {
        RngStream lr(11);
        return ddpm_loss(tape, mixed, net, kSched, lr);
      },
      net.params(), 1e-6, 12, 5);
  CHECK(err < 1e-4);

  std::vector<DdpmExample> empty;
  ad::Tape tape;
  CHECK_THROWS(ddpm_loss(tape, empty, net, kSched, r));
}

TEST_CASE("context_ids") {
  CHECK(context_ids(split_words("a red circle")) == std::vector<std::int64_t>{0, 4, 1});
  CHECK_THROWS_AS(context_ids(split_words("a mauve circle")), std::invalid_argument);
}

TEST_CASE("sample_trajectory structure and log-densities") {
  const Denoiser net = small_denoiser(3);
  RngStream r(9);
  const Trajectory tr = sample_trajectory(kContext, net, kSched, r, 1.0);
  REQUIRE(tr.states.size() == 51);
  REQUIRE(tr.log_probs.size() == 50);
  CHECK(tr.context_tokens == kContext);
  for (const auto& s : tr.states)
    for (double v : s) CHECK(std::isfinite(v));
  CHECK_FALSE(tr.stochastic(1));
  CHECK(tr.x0() == tr.means[0]);
  for (std::size_t t = 2; t <= 50; ++t) {
    REQUIRE(tr.stochastic(t));
    CHECK(tr.sigmas[t - 1] == doctest::Approx(std::sqrt(kSched.beta_at(t))).epsilon(1e-15));
    CHECK(std::abs(tr.log_probs[t - 1] - univariate_sum(tr.states[t - 1], tr.means[t - 1], tr.sigmas[t - 1])) < 1e-10);
    CHECK(std::isfinite(tr.log_probs[t - 1]));
  }

  // Recomputing under unchanged parameters reproduces the stored values.
  for (std::size_t t = 2; t <= 50; ++t) {
    ad::Tape tape;
    CHECK(std::abs(transition_log_prob(tape, tr, net, kSched, t).value().item() - tr.log_probs[t - 1]) < 1e-10);
  }

  // Half-scale noise.
  RngStream r2(9);
  const Trajectory half = sample_trajectory(kContext, net, kSched, r2, 0.5);
  CHECK(half.sigmas[49] == doctest::Approx(0.5 * std::sqrt(0.1)).epsilon(1e-15));
  CHECK_THROWS(sample_trajectory(kContext, net, kSched, r2, 1.5));
}

TEST_CASE("transition_log_prob at the mode and its gradient") {
  Denoiser net = small_denoiser(4);
  RngStream r(10);
  Trajectory tr = sample_trajectory(kContext, net, kSched, r, 1.0);
  const std::size_t t = 17;
  tr.states[t - 1] = tr.means[t - 1];
  const double sigma = tr.sigmas[t - 1];
  ad::Tape tape;
  const double lp = transition_log_prob(tape, tr, net, kSched, t).value().item();
  CHECK(std::abs(lp - (-13.5 * std::log(2.0 * std::numbers::pi * sigma * sigma))) < 1e-10);

  const Trajectory fresh = sample_trajectory(kContext, net, kSched, r, 1.0);
  const double err = ad::grad_check(
      [&](ad::Tape& tp) { return transition_log_prob(tp, fresh, net, kSched, 30); }, net.params(), 1e-6, 12, 3);
  CHECK(err < 1e-4);

  ad::Tape t2;
  CHECK_THROWS_AS(transition_log_prob(t2, fresh, net, kSched, 1), std::invalid_argument);
  CHECK_THROWS_AS(transition_log_prob(t2, fresh, net, kSched, 51), std::out_of_range);
  const NoiseSchedule other = build_schedule(50, 1e-4, 0.2);
  CHECK_THROWS_AS(transition_log_prob(t2, fresh, net, other, 5), std::invalid_argument);
}

TEST_CASE("noise_scale zero is deterministic given x_T") {
  const Denoiser net = small_denoiser(5);
  RngStream r(12);
  const SceneVector start = [&] {
    SceneVector v{};
    for (double& x : v) x = r.normal();
    return v;
  }();
  RngStream a(1), b(2);
  const Trajectory t1 = sample_from(start, kContext, net, kSched, a, 0.0);
  const Trajectory t2 = sample_from(start, kContext, net, kSched, b, 0.0);
  CHECK(t1.states == t2.states);
  for (std::size_t t = 1; t <= 50; ++t) {
    CHECK_FALSE(t1.stochastic(t));
    CHECK(t1.log_probs[t - 1] == 0.0);
  }
  ad::Tape tape;
  CHECK_THROWS_AS(transition_log_prob(tape, t1, net, kSched, 10), std::invalid_argument);
}

TEST_CASE("batched sampling matches one-at-a-time sampling") {
  const Denoiser net = small_denoiser(6);
  const std::vector<Tokens> contexts = {kContext, split_words("a green triangle"),
                                        split_words("a circle above a blue square")};
  std::vector<RngStream> rngs = {RngStream(1), RngStream(2), RngStream(3)};
  const auto batch = sample_trajectories(contexts, net, kSched, rngs, 1.0);
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    RngStream r(i + 1);
    const Trajectory single = sample_trajectory(contexts[i], net, kSched, r, 1.0);
    CHECK(single.states == batch[i].states);
    CHECK(single.log_probs == batch[i].log_probs);
  }

  ad::Tape tape;
  const auto stacked = stacked_log_probs(tape, batch, net, kSched);
  REQUIRE(stacked.owner.size() == 3 * 49);
  const auto& values = stacked.log_probs.value();
  std::size_t row = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t t = 50; t >= 2; --t, ++row) {
      CHECK(stacked.owner[row] == i);
      CHECK(std::abs(values[row] - batch[i].log_probs[t - 1]) < 1e-10);
    }
}

TEST_CASE("trajectory JSON dump") {
  const Denoiser net = small_denoiser(7);
  RngStream r(13);
  const Trajectory tr = sample_trajectory(kContext, net, kSched, r, 1.0);
  const std::string line = trajectory_to_json(tr);
  CHECK(line.find("\"context\":\"a red circle left-of a blue square\"") != std::string::npos);
  CHECK(line.find('\n') == std::string::npos);
  // No value carries more than four decimals.
  std::size_t pos = 0;
  while ((pos = line.find('.', pos)) != std::string::npos) {
    std::size_t digits = 0;
    while (pos + 1 + digits < line.size() && std::isdigit(static_cast<unsigned char>(line[pos + 1 + digits]))) ++digits;
    CHECK(digits <= 4);
    ++pos;
  }
}
