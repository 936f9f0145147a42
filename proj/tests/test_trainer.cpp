#include <doctest.h>

#include <cmath>

#include "imagine/checkpoint.hpp"
#include "imagine/trainer.hpp"
#include "test_support.hpp"

using namespace imagine;
using imagine::testing::line_count;
using imagine::testing::slurp;
using imagine::testing::TempDir;
using imagine::testing::tiny_config;

namespace fs = std::filesystem;

TEST_CASE("stage streams are named and independent") {
  RunConfig c;
  RngStream a = stage_stream(c, "ddpo"), b = stage_stream(c, "ddpo"), d = stage_stream(c, "data");
  const double x = a.uniform();
  CHECK(x == b.uniform());
  CHECK(x != d.uniform());
  CHECK_THROWS(stage_stream(c, "optimizer"));
  RunConfig other;
  other.seed = 99;
  CHECK(stage_stream(other, "ddpo").uniform() != x);
}

TEST_CASE("run manifest") {
  TempDir tmp("manifest");
  RunManifest m;
  m.set("b", "2");
  m.set("a", "1");
  m.set("b", "3");
  m.save(tmp.path / "m.txt");
  CHECK(slurp(tmp.path / "m.txt") == "a=1\nb=3\n");
  const auto back = RunManifest::load(tmp.path / "m.txt");
  CHECK(back.get("b") == "3");
  CHECK_FALSE(back.get("c").has_value());
  CHECK(RunManifest::load(tmp.path / "absent.txt").entries().empty());
}

TEST_CASE("generated data is deterministic") {
  TempDir t1("data1"), t2("data2");
  const RunConfig c1 = tiny_config(t1.path), c2 = tiny_config(t2.path);
  const RunPaths p1 = RunPaths::for_config(c1), p2 = RunPaths::for_config(c2);
  CHECK(p1.root.filename() == c1.hash());
  const Datasets d = generate_data(c1, p1);
  generate_data(c2, p2);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl"}) CHECK(slurp(p1.data() / f) == slurp(p2.data() / f));
  CHECK(d.train.size() == 60);
  CHECK(line_count(p1.data() / "test.jsonl") == 20);
  const Datasets back = load_data(p1);
  CHECK(back.train.size() == 60);
  CHECK(back.test[3].target == d.test[3].target);
  CHECK_THROWS_AS(load_data(RunPaths(t1.path / "nothing")), MissingArtifact);
}

TEST_CASE("pretraining") {
  SUBCASE("a single example is memorized") {
    const NoiseSchedule sched = build_schedule(50, 1e-4, 0.1);
    RngStream init(3);
    Denoiser d(DenoiserConfig{16, 8, 8}, init);
    std::vector<TranslationExample> one;
    one.push_back({split_words("a red circle"), split_words("sirkolo roja"), Scene{{{ShapeKind::circle, Color::red, 1, 2}}}});
    const auto data = ddpm_examples(one);
    RngStream rng(4);
    PretrainOptions o;
    o.max_epochs = 3000;
    o.patience = 10000;
    const auto coarse = pretrain_denoiser(d, sched, data, data, o, rng);
    // Adam's step size sets a noise floor; a smaller rate settles below it.
    o.lr = 1e-4;
    const auto fine = pretrain_denoiser(d, sched, data, data, o, rng);
    MESSAGE("initial " << coarse.val_loss.front() << " -> " << coarse.val_loss.back() << " -> " << fine.val_loss.back());
    CHECK(fine.epochs() == 3000);
    CHECK(fine.val_loss.back() < 0.02 * coarse.val_loss.front());
    CHECK(fine.val_loss.back() < fine.val_loss.front());
  }

  SUBCASE("non-finite loss aborts before touching the weights") {
    const NoiseSchedule sched = build_schedule(50, 1e-4, 0.1);
    RngStream init(3);
    Denoiser d(DenoiserConfig{16, 8, 8}, init);
    const auto before = d.params().clone();
    std::vector<DdpmExample> bad(4);
    for (auto& e : bad) {
      e.context = {0};
      e.x0.fill(std::nan(""));
    }
    std::vector<DdpmExample> good(4);
    for (auto& e : good) e.context = {0};
    RngStream rng(5);
    std::size_t calls = 0;
    CHECK_THROWS_AS(pretrain_denoiser(d, sched, bad, good, PretrainOptions{}, rng, [&](const PretrainHistory&) { ++calls; }),
                    TrainingDiverged);
    CHECK(calls == 1);
    CHECK(d.params().values_equal(before));
  }

  SUBCASE("stage 1 output is bit-identical across runs and stops early") {
    TempDir t1("pre1"), t2("pre2");
    RunConfig c1 = tiny_config(t1.path), c2 = tiny_config(t2.path);
    const RunPaths p1 = RunPaths::for_config(c1), p2 = RunPaths::for_config(c2);
    generate_data(c1, p1);
    generate_data(c2, p2);
    CHECK_THROWS_AS(finetune_ddpo(c1, p1), MissingArtifact);
    const auto h = pretrain_diffusion(c1, p1);
    pretrain_diffusion(c2, p2);
    CHECK(slurp(p1.pretrained_denoiser()) == slurp(p2.pretrained_denoiser()));
    CHECK(line_count(p1.diffusion() / "loss_curve.csv") == h.epochs() + 2);
    CHECK(RunManifest::load(p1.manifest()).get("diffusion_checksum") == file_checksum(p1.pretrained_denoiser()));

    // A generous threshold stops after exactly `patience` epochs.
    TempDir t3("pre3");
    RunConfig c3 = tiny_config(t3.path);
    c3.diffusion.max_epochs = 10;
    c3.diffusion.min_improvement = 0.99;
    const RunPaths p3 = RunPaths::for_config(c3);
    generate_data(c3, p3);
    CHECK(pretrain_diffusion(c3, p3).epochs() == c3.diffusion.patience);
  }
}

TEST_CASE("reference pretraining reduces the validation loss fivefold") {
  TempDir tmp("pre_ref");
  RunConfig c;
  c.output_root = tmp.path.string();
  const RunPaths p = RunPaths::for_config(c);
  generate_data(c, p);
  const auto h = pretrain_diffusion(c, p);
  MESSAGE("epochs " << h.epochs() << " val " << h.val_loss.front() << " -> " << h.val_loss.back());
  CHECK(h.val_loss.back() < h.val_loss.front() / 5.0);
}

TEST_CASE("ddpo stage") {
  TempDir tmp("ddpo");
  RunConfig c = tiny_config(tmp.path);
  const RunPaths p = RunPaths::for_config(c);
  generate_data(c, p);
  pretrain_diffusion(c, p);

  SUBCASE("log has exactly rl_steps rows") {
    const auto log = finetune_ddpo(c, p);
    CHECK(log.size() == 3);
    CHECK(line_count(p.ddpo() / "reward_curve.csv") == 4);
    CHECK(slurp(p.ddpo() / "reward_curve.csv").rfind(
              "step,mean_reward,std_reward,grad_norm,decodable_fraction,ddpm_holdout_loss\n", 0) == 0);
    for (const auto& r : log) {
      CHECK(r.diag.mean_reward >= 0.0);
      CHECK(r.diag.mean_reward <= 1.0);
      CHECK(std::isfinite(r.holdout_loss));
    }
    CHECK(slurp(p.tuned_denoiser()) != slurp(p.pretrained_denoiser()));
    const auto b = load_baseline(p.baseline(), c.ddpo.baseline_decay);
    bool any = false;
    for (std::size_t i = 0; i < kRewardBuckets; ++i) any = any || b.value(i).has_value();
    CHECK(any);
  }

  SUBCASE("zero steps leave the checkpoint unchanged") {
    c.ddpo.rl_steps = 0;
    const RunPaths p0(p.root / "zero", p.root);
    fs::remove_all(p.ddpo());
    CHECK(finetune_ddpo(c, p0).empty());
    CHECK(slurp(p0.tuned_denoiser()) == slurp(p0.pretrained_denoiser()));
    CHECK(line_count(p0.ddpo() / "reward_curve.csv") == 1);
  }
}

TEST_CASE("joint loss normalization") {
  JointLossState s;
  CHECK_FALSE(s.captured());
  CHECK_THROWS_AS(s.normalized(1.0, 1.0), std::logic_error);
  const std::vector<double> m = {2.1, 1.7, 2.5}, r = {0.3, 0.45, 0.2};
  s.capture(m, r);
  CHECK(s.mllm_constant() == doctest::Approx(6.3 / 3.0).epsilon(1e-15));
  CHECK(s.normalized(s.mllm_constant(), s.imagine_constant()) == 2.0);
  CHECK_THROWS_AS(s.capture(m, r), std::logic_error);

  // Scaling both constants by 10 scales the loss by 1/10, keeping the ratio of terms.
  JointLossState scaled;
  scaled.restore(10.0 * s.mllm_constant(), 10.0 * s.imagine_constant());
  const double lm = 1.3, li = 0.4;
  CHECK(scaled.normalized(lm, li) == doctest::Approx(s.normalized(lm, li) / 10.0).epsilon(1e-14));
  CHECK((lm / scaled.mllm_constant()) / (li / scaled.imagine_constant()) ==
        doctest::Approx((lm / s.mllm_constant()) / (li / s.imagine_constant())).epsilon(1e-14));

  JointLossState bad;
  CHECK_THROWS(bad.capture(std::vector<double>{1.0}, std::vector<double>{0.0}));
  CHECK_THROWS(bad.capture(std::vector<double>{}, std::vector<double>{}));
}

TEST_CASE("translator trainer") {
  TempDir tmp("trainer");
  RunConfig c = tiny_config(tmp.path);
  const RunPaths p = RunPaths::for_config(c);
  const Datasets data = generate_data(c, p);

  SUBCASE("joint term requires captured constants") {
    // Random weights scaled up so the imagined scenes, and their rewards, vary.
    RngStream init(1);
    Denoiser d(DenoiserConfig{16, 8, 8}, init);
    for (double& w : d.params().get("denoiser.w3").value.data()) w *= 20.0;
    for (std::size_t slot = 0; slot < kMaxObjects; ++slot) d.params().get("denoiser.b3").value[slot * kSlotDim + 8] = 1.0;
    TranslatorTrainer t(c, data.train, make_translator(c), std::move(d), BaselineState{});
    CHECK(t.joint());
    CHECK_THROWS_AS(t.step(), std::logic_error);
    t.capture_constants();
    // At the capture point each term is divided by itself.
    CHECK(t.constants().normalized(t.constants().mllm_constant(), t.constants().imagine_constant()) == 2.0);
    const auto before = t.denoiser()->params().clone();
    const StepRecord r = t.step();
    CHECK(r.step == 1);
    CHECK(std::isfinite(r.imagine_loss));
    CHECK(r.joint_loss == doctest::Approx(t.constants().normalized(r.mllm_loss, r.imagine_loss)).epsilon(1e-15));
    CHECK_FALSE(t.denoiser()->params().values_equal(before));
    CHECK_THROWS_AS(t.capture_constants(), std::logic_error);
  }

  SUBCASE("freezing keeps the denoiser fixed") {
    c.translator.freeze_denoiser = true;
    RngStream init(1);
    Denoiser d(DenoiserConfig{16, 8, 8}, init);
    TranslatorTrainer t(c, data.train, make_translator(c), std::move(d), BaselineState{});
    t.capture_constants();
    const auto before = t.denoiser()->params().clone();
    t.step();
    t.step();
    CHECK(t.denoiser()->params().values_equal(before));
  }

  SUBCASE("without diffusion the update is plain text-only training") {
    c.ablation.use_diffusion = false;
    TranslatorTrainer t(c, data.train, make_translator(c), std::nullopt, BaselineState{});
    CHECK_FALSE(t.joint());
    CHECK_THROWS_AS(t.capture_constants(), std::logic_error);

    Translator manual = make_translator(c);
    ad::Adam opt(manual.params(), {c.translator.lr});
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<TranslationExample> batch;
      std::vector<std::uint64_t> keys;
      for (std::size_t i : t.batch_indices(s)) {
        batch.push_back(data.train[i]);
        keys.push_back(i);
      }
      LossAndGrad lg = mllm_loss_and_grad(manual, batch, {}, keys);
      ad::clip_global_norm(lg.grads, c.translator.clip_norm);
      opt.step(lg.grads);
      const StepRecord r = t.step();
      CHECK(r.mllm_loss == lg.loss);
      CHECK(r.joint_loss == r.mllm_loss);
      CHECK(std::isnan(r.imagine_loss));
    }
    CHECK(t.model().params().values_equal(manual.params()));
  }
}

TEST_CASE("train_translator stage") {
  TempDir tmp("stage3");
  RunConfig c = tiny_config(tmp.path);
  const RunPaths p = RunPaths::for_config(c);
  generate_data(c, p);

  // Stage ordering: imagined scenes need the stage-2 denoiser.
  CHECK_THROWS_AS(train_translator(c, p), MissingArtifact);

  SUBCASE("full pipeline") {
    pretrain_diffusion(c, p);
    finetune_ddpo(c, p);
    const auto run = train_translator(c, p);
    CHECK(run.log.size() == 2 * 8);
    CHECK(run.checkpoints.size() >= 8);
    CHECK(run.checkpoints.back().step == run.log.size());
    REQUIRE(run.constants.has_value());
    const auto m = RunManifest::load(p.manifest());
    CHECK(std::stod(*m.get("mllm_constant")) == run.constants->mllm_constant());
    CHECK(std::stod(*m.get("imagine_constant")) == run.constants->imagine_constant());
    CHECK(m.get("translator_checksum") == file_checksum(p.final_translator()));
    CHECK(m.get("config_hash") == c.hash());
    const auto listed = list_checkpoints(p);
    REQUIRE(listed.size() == run.checkpoints.size());
    CHECK(fs::exists(listed.front().denoiser));
    CHECK(slurp(listed.back().translator) == slurp(p.final_translator()));
    CHECK(line_count(p.translator() / "train_log.csv") == run.log.size() + 1);
  }

  SUBCASE("text-only rows skip the imagination stages") {
    c.ablation.use_diffusion = false;
    const RunPaths q = RunPaths(tmp.path / "text_only", p.root);
    const auto run = train_translator(c, q);
    CHECK_FALSE(run.constants.has_value());
    CHECK(list_checkpoints(q).front().denoiser.empty());
    CHECK_FALSE(RunManifest::load(q.manifest()).get("mllm_constant").has_value());
  }
}
