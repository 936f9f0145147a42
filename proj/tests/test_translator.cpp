#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "imagine/translator.hpp"

using namespace imagine;

namespace {

Translator make_model(std::uint64_t seed, SceneEncoder enc = SceneEncoder::learned) {
  RngStream init(seed);
  return Translator(TranslatorConfig{}, Vocabulary::standard(), init, enc);
}

// Narrow model for finite-difference checks.
Translator tiny_model(std::uint64_t seed) {
  RngStream init(seed);
  TranslatorConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.ff = 16;
  cfg.encoder_hidden = 8;
  return Translator(cfg, Vocabulary::standard(), init);
}

std::vector<TranslationExample> examples(std::size_t n, std::uint64_t seed) {
  RngStream r(seed);
  std::vector<TranslationExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene s = sample_scene(r);
    const auto p = render_pair(s, Split::normal);
    out.push_back({p.source, p.target, s, Split::normal});
  }
  return out;
}

std::vector<SceneVector> scenes_of(std::span<const TranslationExample> ex) {
  std::vector<SceneVector> out;
  for (const auto& e : ex) out.push_back(encode_scene(e.scene));
  return out;
}

double max_abs_diff(const ad::GradientBuffer& a, const ad::GradientBuffer& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

}  // namespace

TEST_CASE("vocabulary") {
  const auto v = Vocabulary::standard();
  CHECK(v.size() == 22);
  CHECK(v.id("<bos>") == Vocabulary::kBos);
  CHECK(v.id("<eos>") == Vocabulary::kEos);
  CHECK(v.id("<pad>") == Vocabulary::kPad);
  CHECK(v.id("<sep>") == Vocabulary::kSep);
  CHECK(v.id("<img>") == Vocabulary::kImg);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(static_cast<std::int64_t>(i))) == static_cast<std::int64_t>(i));
  CHECK_THROWS_AS(v.id("hexagon"), std::invalid_argument);

  const auto path = std::filesystem::temp_directory_path() / "imagine_vocab.txt";
  v.save(path);
  CHECK(Vocabulary::load(path).tokens() == v.tokens());
  std::filesystem::remove(path);
  CHECK_THROWS(Vocabulary({"a", "b"}));
}

TEST_CASE("project_visual") {
  const Translator m = make_model(1);
  RngStream r(2);
  const SceneVector x = encode_scene(sample_scene(r));
  ad::Tape t1(false), t2(false);
  const Tensor a = project_visual(t1, m, x).value();
  CHECK(a.shape() == Shape{4, 64});
  CHECK(a == project_visual(t2, m, x).value());

  // At the origin the output is the bias response of the network.
  const SceneVector zero{};
  ad::Tape t3(false);
  const Tensor origin = project_visual(t3, m, zero).value();
  const auto& p = m.params();
  std::vector<double> h1(64), h2(64);
  for (std::size_t j = 0; j < 64; ++j) h1[j] = std::tanh(p.get("projector.enc1.b").value[j]);
  for (std::size_t j = 0; j < 64; ++j) {
    double acc = p.get("projector.enc2.b").value[j];
    for (std::size_t i = 0; i < 64; ++i) acc += h1[i] * p.get("projector.enc2.w").value.at(i, j);
    h2[j] = std::tanh(acc);
  }
  double norm = 0.0;
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t d = 0; d < 64; ++d) {
      double acc = p.get("projector.proj.b").value[k * 64 + d];
      for (std::size_t i = 0; i < 64; ++i) acc += h2[i] * p.get("projector.proj.w").value.at(i, k * 64 + d);
      CHECK(origin.at(k, d) == doctest::Approx(acc).epsilon(1e-12));
      norm += acc * acc;
    }
  CHECK(norm > 0.0);

  // Frozen-encoder variant keeps the shape and has no encoder parameters.
  const Translator frozen = make_model(1, SceneEncoder::frozen_random);
  CHECK_FALSE(frozen.params().contains("projector.enc1.w"));
  ad::Tape t4(false);
  CHECK(project_visual(t4, frozen, x).value().shape() == Shape{4, 64});
}

TEST_CASE("project_visual gradient") {
  Translator m = tiny_model(3);
  RngStream r(4);
  for (int trial = 0; trial < 5; ++trial) {
    const SceneVector x = encode_scene(sample_scene(r));
    Tensor w({4, 8});
    for (double& v : w.data()) v = r.normal();
    const double err = ad::grad_check(
        [&](ad::Tape& tape) { return ad::sum(ad::mul(project_visual(tape, m, x), tape.constant(w))); }, m.params(),
        1e-6, 6, static_cast<std::uint64_t>(trial));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("lm_logits causal and batching properties") {
  const Translator m = make_model(5);
  RngStream r(6);
  const auto exs = examples(8, 7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::int64_t> ids;
    const std::size_t n = 2 + r.below(30);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(5 + static_cast<std::int64_t>(r.below(17)));
    ad::Tape t1(false);
    const Tensor base = lm_logits(t1, m, ids, std::nullopt).value();
    CHECK(base.shape() == Shape{n, 22});
    ids.push_back(5 + static_cast<std::int64_t>(r.below(17)));
    ad::Tape t2(false);
    const Tensor longer = lm_logits(t2, m, ids, std::nullopt).value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 22; ++j) CHECK(std::abs(longer.at(i, j) - base.at(i, j)) < 1e-12);
  }

  std::vector<std::vector<std::int64_t>> seqs;
  for (const auto& e : exs) seqs.push_back(teacher_sequence(m, e.source, e.target, true).ids);
  const auto scenes = scenes_of(exs);
  const auto batch = lm_logits_batch(m, seqs, scenes);
  for (std::size_t i = 0; i < exs.size(); ++i) {
    const auto one = lm_logits_batch(m, std::span(seqs).subspan(i, 1), std::span(scenes).subspan(i, 1));
    CHECK(one[0] == batch[i]);
  }

  ad::Tape t3(false);
  std::vector<std::int64_t> overlong(49, 5);
  CHECK_THROWS_AS(lm_logits(t3, m, overlong, std::nullopt), std::invalid_argument);
  const auto with_img = teacher_sequence(m, exs[0].source, exs[0].target, true).ids;
  CHECK_THROWS_AS(lm_logits(t3, m, with_img, std::nullopt), std::invalid_argument);
}

TEST_CASE("teacher_sequence layout") {
  const Translator m = make_model(1);
  const Tokens src = split_words("a red circle");
  const Tokens tgt = split_words("sirkolo roja");
  const auto s = teacher_sequence(m, src, tgt, true);
  const auto& v = m.vocab();
  const std::vector<std::int64_t> ids = {4, 4, 4, 4, v.id("a"), v.id("red"), v.id("circle"), 3, v.id("sirkolo"), v.id("roja")};
  CHECK(s.ids == ids);
  const std::vector<std::int64_t> targets = {-1, -1, -1, -1, -1, -1, -1, v.id("sirkolo"), v.id("roja"), 1};
  CHECK(s.targets == targets);
  CHECK(s.scored == 3);
}

TEST_CASE("mllm_loss values") {
  const auto exs = examples(6, 8);
  const auto scenes = scenes_of(exs);

  Translator uniform = make_model(2);
  uniform.params().get("decoder.tok").value.fill(0.0);
  ad::Tape t1;
  CHECK(mllm_loss(t1, uniform, exs, scenes).value().item() == doctest::Approx(std::log(22.0)).epsilon(1e-12));

  // Saturated logits. With 22 classes a +20 margin leaves ln(1 + 21 e^-20)
  // per position; a +25 margin is below 1e-8.
  const std::vector<std::int64_t> targets = {-1, 3, 7, 1};
  auto saturated = [&](double margin) {
    Tensor logits({4, 22});
    for (std::size_t i = 0; i < 4; ++i)
      if (targets[i] >= 0) logits.at(i, static_cast<std::size_t>(targets[i])) = margin;
    ad::Tape t2;
    return masked_nll(t2.constant(logits), targets).value().item();
  };
  CHECK(saturated(20.0) == doctest::Approx(std::log1p(21.0 * std::exp(-20.0))).epsilon(1e-12));
  CHECK(saturated(25.0) < 1e-8);

  // The loss is the mean of per-position NLL recomputed from raw probabilities.
  const Translator m = make_model(3);
  ad::Tape t3;
  const double loss = mllm_loss(t3, m, exs, scenes).value().item();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < exs.size(); ++i) {
    const auto seq = teacher_sequence(m, exs[i].source, exs[i].target, true);
    ad::Tape tape(false);
    const Tensor lg = lm_logits(tape, m, seq.ids, project_visual(tape, m, scenes[i])).value();
    for (std::size_t pos = 0; pos < seq.ids.size(); ++pos) {
      if (seq.targets[pos] < 0) continue;
      double z = 0.0;
      for (std::size_t j = 0; j < 22; ++j) z += std::exp(lg.at(pos, j));
      total += -std::log(std::exp(lg.at(pos, static_cast<std::size_t>(seq.targets[pos]))) / z);
      ++count;
    }
  }
  CHECK(std::abs(loss - total / static_cast<double>(count)) < 1e-10);

  const auto lg = mllm_loss_and_grad(m, exs, scenes);
  CHECK(std::abs(lg.loss - loss) < 1e-12);
  ad::Tape t4;
  const ad::Var l4 = mllm_loss(t4, m, exs, scenes);
  ad::GradientBuffer ref(m.params());
  ref.accumulate(m.params(), t4.backward(l4));
  CHECK(max_abs_diff(ref, lg.grads) < 1e-12);

  ad::Tape t5;
  CHECK_THROWS(mllm_loss(t5, m, std::span<const TranslationExample>(), {}));
  CHECK_THROWS(mllm_loss(t5, m, exs, std::span(scenes).subspan(0, 2)));
}

TEST_CASE("mllm_loss gradient through attention and projector") {
  Translator m = tiny_model(9);
  const auto exs = examples(2, 10);
  const auto scenes = scenes_of(exs);
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    const double err =
        ad::grad_check([&](ad::Tape& tape) { return mllm_loss(tape, m, exs, scenes); }, m.params(), 1e-6, 4, trial);
    CHECK(err < 1e-4);
  }
  const double text_only =
      ad::grad_check([&](ad::Tape& tape) { return mllm_loss(tape, m, exs, {}); }, m.params(), 1e-6, 4, 7);
  CHECK(text_only < 1e-4);
}

TEST_CASE("reduction order is fixed by example keys") {
  const Translator m = make_model(11);
  auto exs = examples(8, 12);
  auto scenes = scenes_of(exs);
  std::vector<std::uint64_t> keys(8);
  std::iota(keys.begin(), keys.end(), 100);
  const auto a = mllm_loss_and_grad(m, exs, scenes, keys);

  std::vector<std::size_t> perm = {3, 7, 0, 5, 1, 6, 2, 4};
  std::vector<TranslationExample> pe;
  std::vector<SceneVector> ps;
  std::vector<std::uint64_t> pk;
  for (auto i : perm) {
    pe.push_back(exs[i]);
    ps.push_back(scenes[i]);
    pk.push_back(keys[i]);
  }
  const auto b = mllm_loss_and_grad(m, pe, ps, pk);
  CHECK(a.loss == b.loss);
  CHECK(max_abs_diff(a.grads, b.grads) == 0.0);
}

TEST_CASE("overfitting a small set, decoding, and factorization") {
  Translator m = make_model(13);
  const auto exs = examples(50, 14);
  const auto scenes = scenes_of(exs);
  ad::Adam opt(m.params(), {3e-3});
  double loss = 0.0;
  for (int step = 0; step < 400; ++step) {
    auto lg = mllm_loss_and_grad(m, exs, scenes);
    loss = lg.loss;
    ad::clip_global_norm(lg.grads, 1.0);
    opt.step(lg.grads);
    if (loss < 1e-3) break;
  }
  MESSAGE("final overfit loss " << loss);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < exs.size(); ++i) exact += greedy_decode(m, exs[i].source, &scenes[i]) == exs[i].target;
  CHECK(exact == exs.size());
  CHECK(greedy_decode(m, exs[0].source, &scenes[0]) == greedy_decode(m, exs[0].source, &scenes[0]));

  // Product of stepwise probabilities equals exp(-sequence NLL).
  for (std::size_t i = 0; i < 5; ++i) {
    const Tokens out = greedy_decode(m, exs[i].source, &scenes[i]);
    auto ids = prefix_ids(m, exs[i].source, true);
    double product = 1.0;
    for (std::size_t k = 0; k <= out.size(); ++k) {
      ad::Tape tape(false);
      const Tensor lg = lm_logits(tape, m, ids, project_visual(tape, m, scenes[i])).value();
      const auto last = lg.row(lg.rows() - 1);
      double z = 0.0;
      for (double v : last) z += std::exp(v);
      const std::int64_t next = k < out.size() ? m.vocab().id(out[k]) : Vocabulary::kEos;
      product *= std::exp(last[static_cast<std::size_t>(next)]) / z;
      ids.push_back(next);
    }
    CHECK(std::abs(product - std::exp(sequence_log_prob(m, exs[i].source, out, &scenes[i]))) < 1e-8);
  }

  // Checkpoint round trip.
  const auto path = std::filesystem::temp_directory_path() / "imagine_translator.ckpt";
  save_translator(m, path);
  Translator fresh = make_model(99);
  load_translator(fresh, path);
  CHECK(fresh.params().values_equal(m.params()));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".manifest");
}
