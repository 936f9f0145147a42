#include "imagine/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "imagine/checkpoint.hpp"

namespace imagine {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact(p);
}

// Writes to a sibling temporary and renames, so a crash never leaves a
// truncated artifact behind.
template <typename Writer>
void write_atomically(const fs::path& path, Writer&& writer) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  writer(tmp);
  fs::rename(tmp, path);
  const fs::path side = tmp.string() + ".manifest";
  if (fs::exists(side)) fs::rename(side, path.string() + ".manifest");
}

void write_text(const fs::path& path, const std::string& text) {
  write_atomically(path, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  });
}

void write_examples(const fs::path& path, std::span<const TranslationExample> examples) {
  std::string text;
  for (const auto& e : examples) text += to_jsonl(e) + "\n";
  write_text(path, text);
}

std::vector<std::size_t> shuffled(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Loss over a whole set in fixed-size chunks, weighted by chunk size.
double dataset_ddpm_loss(const Denoiser& denoiser, const NoiseSchedule& sched, std::span<const DdpmExample> data,
                         std::size_t batch_size, RngStream rng) {
  double total = 0.0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const auto chunk = data.subspan(b, std::min(batch_size, data.size() - b));
    ad::Tape tape(false);
    total += ddpm_loss(tape, chunk, denoiser, sched, rng).value().item() * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(data.size());
}

void update_manifest(const RunPaths& paths, const RunConfig& config,
                     std::initializer_list<std::pair<std::string, std::string>> entries) {
  RunManifest m = RunManifest::load(paths.manifest());
  m.set("config_hash", config.hash());
  m.set("seed", std::to_string(config.seed));
  for (const auto& [k, v] : entries) m.set(k, v);
  m.save(paths.manifest());
}

}  // namespace

RunPaths::RunPaths(fs::path r, fs::path s) : root(std::move(r)), shared(s.empty() ? root : std::move(s)) {}

RunPaths RunPaths::for_config(const RunConfig& config) { return RunPaths(fs::path(config.output_root) / config.hash()); }

RngStream stage_stream(const RunConfig& config, std::string_view stage) {
  static const char* const names[] = {"data", "diffusion", "ddpo", "translator", "eval"};
  if (std::find(std::begin(names), std::end(names), stage) == std::end(names))
    throw std::invalid_argument("unknown stage stream " + std::string(stage));
  return RngStream(config.seed).derive(stage);
}

RunManifest RunManifest::load(const fs::path& path) {
  RunManifest m;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    m.entries_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

std::optional<std::string> RunManifest::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void RunManifest::save(const fs::path& path) const {
  std::string text;
  for (const auto& [k, v] : entries_) text += k + "=" + v + "\n";
  write_text(path, text);
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  std::stringstream buf;
  buf << in.rdbuf();
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(fnv1a64(buf.str())));
  return out;
}

Datasets generate_data(const RunConfig& config, const RunPaths& paths) {
  const RngStream data = stage_stream(config, "data");
  RngStream train_rng = data.derive("train"), dev_rng = data.derive("dev"), test_rng = data.derive("test");
  Datasets d;
  d.train = make_examples(train_rng, config.data.train_size, config.data.ambiguous_fraction);
  d.dev = make_examples(dev_rng, config.data.dev_size, config.data.test_ambiguous_fraction);
  d.test = make_examples(test_rng, config.data.test_size, config.data.test_ambiguous_fraction);
  write_examples(paths.data() / "train.jsonl", d.train);
  write_examples(paths.data() / "dev.jsonl", d.dev);
  write_examples(paths.data() / "test.jsonl", d.test);
  return d;
}

Datasets load_data(const RunPaths& paths) {
  Datasets d;
  for (auto [name, dst] : {std::pair{"train.jsonl", &d.train}, {"dev.jsonl", &d.dev}, {"test.jsonl", &d.test}}) {
    const fs::path p = paths.data() / name;
    require_file(p);
    *dst = load_dataset(p);
  }
  return d;
}

NoiseSchedule make_schedule(const RunConfig& config) {
  return build_schedule(config.diffusion.steps, config.diffusion.beta_start, config.diffusion.beta_end);
}

Denoiser make_denoiser(const RunConfig& config) {
  RngStream init = stage_stream(config, "diffusion").derive("init");
  return Denoiser(DenoiserConfig{config.diffusion.hidden, config.diffusion.context_dim, config.diffusion.time_dim}, init);
}

Translator make_translator(const RunConfig& config) {
  RngStream init = stage_stream(config, "translator").derive("init");
  const auto& t = config.translator;
  TranslatorConfig tc{t.d_model, t.heads, t.ff, t.layers, 48, t.visual_tokens, t.encoder_hidden};
  return Translator(tc, Vocabulary::standard(), init,
                    config.ablation.use_scene_encoder ? SceneEncoder::learned : SceneEncoder::frozen_random);
}

std::vector<DdpmExample> ddpm_examples(std::span<const TranslationExample> examples) {
  std::vector<DdpmExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back({encode_scene(e.scene), context_ids(e.source)});
  return out;
}

Translator load_translator_checkpoint(const RunConfig& config, const fs::path& path) {
  require_file(path);
  Translator model = make_translator(config);
  load_translator(model, path);
  return model;
}

Denoiser load_denoiser_checkpoint(const RunConfig& config, const fs::path& path) {
  require_file(path);
  Denoiser d = make_denoiser(config);
  load_checkpoint(path, d.params());
  return d;
}

// ---- stage 1 ----

PretrainHistory pretrain_denoiser(Denoiser& denoiser, const NoiseSchedule& sched, std::span<const DdpmExample> train,
                                  std::span<const DdpmExample> val, const PretrainOptions& options, RngStream& rng,
                                  const std::function<void(const PretrainHistory&)>& on_epoch) {
  if (train.empty() || val.empty()) throw std::invalid_argument("pretraining needs train and validation examples");
  const RngStream val_draws = rng.derive("validation");
  const RngStream train_draws = rng.derive("train-eval");
  PretrainHistory h;
  h.train_loss.push_back(dataset_ddpm_loss(denoiser, sched, train, options.batch_size, train_draws));
  h.val_loss.push_back(dataset_ddpm_loss(denoiser, sched, val, options.batch_size, val_draws));
  if (on_epoch) on_epoch(h);

  ad::Adam opt(denoiser.params(), {options.lr});
  std::vector<DdpmExample> batch;
  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    const auto order = shuffled(train.size(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += options.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + options.batch_size); ++i) batch.push_back(train[order[i]]);
      ad::Tape tape;
      const ad::Var loss = ddpm_loss(tape, batch, denoiser, sched, rng);
      const double v = loss.value().item();
      if (!std::isfinite(v)) throw TrainingDiverged("diffusion loss became non-finite in epoch " + std::to_string(epoch));
      total += v * static_cast<double>(batch.size());
      ad::GradientBuffer g(denoiser.params());
      g.accumulate(denoiser.params(), tape.backward(loss));
      opt.step(g);
    }
    const double val_loss = dataset_ddpm_loss(denoiser, sched, val, options.batch_size, val_draws);
    if (!std::isfinite(val_loss)) throw TrainingDiverged("validation loss became non-finite in epoch " + std::to_string(epoch));
    h.train_loss.push_back(total / static_cast<double>(train.size()));
    h.val_loss.push_back(val_loss);
    if (on_epoch) on_epoch(h);
    if (epoch >= options.patience) {
      const double before = h.val_loss[epoch - options.patience];
      if ((before - val_loss) / before < options.min_improvement) break;
    }
  }
  return h;
}

PretrainHistory pretrain_diffusion(const RunConfig& config, const RunPaths& paths) {
  const Datasets data = load_data(paths);
  const auto train = ddpm_examples(data.train);
  const auto val = ddpm_examples(data.dev);
  const NoiseSchedule sched = make_schedule(config);
  Denoiser denoiser = make_denoiser(config);
  RngStream rng = stage_stream(config, "diffusion").derive("train");
  const auto& c = config.diffusion;
  const PretrainOptions options{c.max_epochs, c.batch_size, c.lr, c.patience, c.min_improvement};

  const fs::path ckpt = paths.pretrained_denoiser();
  const fs::path curve = paths.diffusion() / "loss_curve.csv";
  auto save = [&](const PretrainHistory& h) {
    write_atomically(ckpt, [&](const fs::path& tmp) { save_checkpoint(tmp, denoiser.params()); });
    std::string csv = "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < h.val_loss.size(); ++e)
      csv += std::to_string(e) + "," + fmt(h.train_loss[e]) + "," + fmt(h.val_loss[e]) + "\n";
    write_text(curve, csv);
  };
  PretrainHistory h;
  try {
    h = pretrain_denoiser(denoiser, sched, train, val, options, rng, save);
  } catch (const TrainingDiverged&) {
    std::cerr << "diffusion pretraining diverged; keeping " << ckpt.string() << "\n";
    throw;
  }
  update_manifest(paths, config,
                  {{"diffusion_checksum", file_checksum(ckpt)}, {"diffusion_epochs", std::to_string(h.epochs())}});
  return h;
}

// ---- stage 2 ----

void save_baseline(const BaselineState& baseline, const fs::path& path) {
  std::string text;
  for (std::size_t b = 0; b < kRewardBuckets; ++b) {
    const auto v = baseline.value(b);
    text += v ? exact(*v) : std::string("none");
    text += "\n";
  }
  write_text(path, text);
}

BaselineState load_baseline(const fs::path& path, double decay) {
  require_file(path);
  BaselineState b(decay);
  std::ifstream in(path);
  std::string line;
  for (std::size_t i = 0; i < kRewardBuckets && std::getline(in, line); ++i)
    if (line != "none") b.set(i, std::stod(line));
  return b;
}

std::vector<DdpoLogRow> finetune_ddpo(const RunConfig& config, const RunPaths& paths) {
  const Datasets data = load_data(paths);
  Denoiser denoiser = load_denoiser_checkpoint(config, paths.pretrained_denoiser());
  const NoiseSchedule sched = make_schedule(config);
  const auto& c = config.ddpo;
  const RewardFn reward_fn = scene_graph_reward(config.symbol_lexicon());
  BaselineState baseline(c.baseline_decay);
  ad::Adam opt(denoiser.params(), {c.lr});

  const RngStream stream = stage_stream(config, "ddpo");
  RngStream rng = stream.derive("rollouts");
  const RngStream holdout_draws = stream.derive("holdout");
  const auto dev = ddpm_examples(data.dev);
  const auto holdout = std::span<const DdpmExample>(dev).first(std::min(c.holdout_size, dev.size()));

  std::vector<DdpoLogRow> log;
  std::vector<Tokens> contexts(c.contexts_per_step);
  for (std::size_t step = 1; step <= c.rl_steps; ++step) {
    for (auto& ctx : contexts) ctx = data.train[rng.below(data.train.size())].source;
    const RolloutBatch batch = collect_rollouts(contexts, denoiser, sched, reward_fn, rng, c.samples_per_context,
                                                c.noise_scale);
    DdpoLogRow row;
    row.step = step;
    row.diag = ddpo_step(batch, denoiser, sched, opt, baseline, c.clip_norm);
    row.holdout_loss = dataset_ddpm_loss(denoiser, sched, holdout, holdout.size(), holdout_draws);
    log.push_back(row);
  }

  std::string csv = "step,mean_reward,std_reward,grad_norm,decodable_fraction,ddpm_holdout_loss\n";
  for (const auto& r : log)
    csv += std::to_string(r.step) + "," + fmt(r.diag.mean_reward) + "," + fmt(r.diag.std_reward) + "," +
           fmt(r.diag.grad_norm) + "," + fmt(r.diag.decodable_fraction) + "," + fmt(r.holdout_loss) + "\n";
  write_text(paths.ddpo() / "reward_curve.csv", csv);
  write_atomically(paths.tuned_denoiser(), [&](const fs::path& tmp) { save_checkpoint(tmp, denoiser.params()); });
  save_baseline(baseline, paths.baseline());
  update_manifest(paths, config,
                  {{"ddpo_checksum", file_checksum(paths.tuned_denoiser())}, {"ddpo_steps", std::to_string(c.rl_steps)}});
  return log;
}

// ---- stage 3 ----

void JointLossState::capture(std::span<const double> mllm_losses, std::span<const double> imagine_losses) {
  if (captured_) throw std::logic_error("joint loss constants are already captured");
  if (mllm_losses.empty() || imagine_losses.empty()) throw std::invalid_argument("no capture batches");
  auto mean = [](std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  };
  restore(mean(mllm_losses), mean(imagine_losses));
}

void JointLossState::restore(double mllm_constant, double imagine_constant) {
  if (!(mllm_constant > 0.0) || !(imagine_constant > 0.0) || !std::isfinite(mllm_constant) ||
      !std::isfinite(imagine_constant))
    throw std::invalid_argument("joint loss constants must be finite and strictly positive");
  mllm_ = mllm_constant;
  imagine_ = imagine_constant;
  captured_ = true;
}

double JointLossState::mllm_constant() const {
  if (!captured_) throw std::logic_error("joint loss constants not captured");
  return mllm_;
}

double JointLossState::imagine_constant() const {
  if (!captured_) throw std::logic_error("joint loss constants not captured");
  return imagine_;
}

double JointLossState::normalized(double mllm_loss, double imagine_loss) const {
  return mllm_loss / mllm_constant() + imagine_loss / imagine_constant();
}

struct TranslatorTrainer::BatchLosses {
  LossAndGrad mllm;
  std::optional<RolloutBatch> rollouts;
  double imagine_loss = std::numeric_limits<double>::quiet_NaN();
  double mean_reward = std::numeric_limits<double>::quiet_NaN();
};

TranslatorTrainer::TranslatorTrainer(const RunConfig& config, std::vector<TranslationExample> train, Translator model,
                                     std::optional<Denoiser> denoiser, BaselineState baseline)
    : config_(config),
      train_(std::move(train)),
      model_(std::move(model)),
      denoiser_(std::move(denoiser)),
      baseline_(baseline),
      sched_(make_schedule(config)),
      source_(config.scene_source()),
      translator_opt_(model_.params(), {config.translator.lr}),
      rng_(stage_stream(config, "translator").derive("train")) {
  if (train_.empty()) throw std::invalid_argument("no training examples");
  if (source_ == SceneSource::generated) {
    if (!denoiser_) throw std::invalid_argument("generated scenes need a denoiser");
    joint_ = config.translator.joint_loss;
    reward_fn_ = scene_graph_reward(config.symbol_lexicon());
    if (joint_ && !config.translator.freeze_denoiser) denoiser_opt_.emplace(denoiser_->params(), ad::AdamConfig{config.translator.denoiser_lr});
  } else {
    denoiser_.reset();
  }
}

std::size_t TranslatorTrainer::batches_per_epoch() const {
  const std::size_t bs = config_.translator.batch_size;
  return (train_.size() + bs - 1) / bs;
}

std::vector<std::size_t> TranslatorTrainer::epoch_order(std::size_t epoch) const {
  RngStream r = rng_.derive("order").derive(epoch);
  return shuffled(train_.size(), r);
}

std::vector<std::size_t> TranslatorTrainer::batch_indices(std::size_t step) const {
  const std::size_t bs = config_.translator.batch_size;
  const std::size_t index = step % batches_per_epoch();
  const auto order = epoch_order(step / batches_per_epoch());
  return {order.begin() + static_cast<long>(index * bs),
          order.begin() + static_cast<long>(std::min(order.size(), (index + 1) * bs))};
}

TranslatorTrainer::BatchLosses TranslatorTrainer::evaluate_batch(std::size_t epoch, std::size_t index,
                                                                 bool for_update) {
  std::vector<TranslationExample> batch;
  std::vector<std::uint64_t> keys;
  for (std::size_t i : batch_indices(epoch * batches_per_epoch() + index)) {
    batch.push_back(train_[i]);
    keys.push_back(i);
  }

  BatchLosses out;
  std::vector<SceneVector> scenes;
  if (source_ == SceneSource::generated) {
    // Capture passes imagine from their own stream so the training batches
    // later see fresh samples.
    RngStream r = rng_.derive(for_update ? "scenes" : "capture").derive(epoch * batches_per_epoch() + index);
    std::vector<Tokens> contexts;
    for (const auto& e : batch) contexts.push_back(e.source);
    out.rollouts = collect_rollouts(contexts, *denoiser_, sched_, reward_fn_, r, 1, config_.ddpo.noise_scale);
    for (const auto& ro : out.rollouts->rollouts) scenes.push_back(ro.traj.x0());
    out.mean_reward = out.rollouts->mean_reward;
    out.imagine_loss = 1.0 - out.rollouts->mean_reward;
  } else if (source_ == SceneSource::oracle) {
    for (const auto& e : batch) scenes.push_back(encode_scene(e.scene));
  }
  if (for_update) {
    out.mllm = mllm_loss_and_grad(model_, batch, scenes, keys);
  } else {
    ad::Tape tape(false);
    out.mllm.loss = mllm_loss(tape, model_, batch, scenes).value().item();
  }
  return out;
}

void TranslatorTrainer::capture_constants() {
  if (!joint_) throw std::logic_error("the joint term is not active; nothing to capture");
  if (step_ != 0) throw std::logic_error("constants must be captured before any update");
  std::vector<double> mllm, imagine;
  const std::size_t bpe = batches_per_epoch();
  for (std::size_t i = 0; i < config_.translator.capture_batches; ++i) {
    const auto l = evaluate_batch(i / bpe, i % bpe, false);
    mllm.push_back(l.mllm.loss);
    imagine.push_back(l.imagine_loss);
  }
  constants_.capture(mllm, imagine);
}

StepRecord TranslatorTrainer::step() {
  if (joint_ && !constants_.captured()) throw std::logic_error("joint loss constants not captured");
  const std::size_t bpe = batches_per_epoch();
  StepRecord rec;
  rec.epoch = step_ / bpe;
  auto l = evaluate_batch(rec.epoch, step_ % bpe, true);
  if (!std::isfinite(l.mllm.loss)) throw TrainingDiverged("translator loss became non-finite");
  rec.mllm_loss = l.mllm.loss;
  rec.imagine_loss = l.imagine_loss;
  rec.mean_reward = l.mean_reward;
  rec.joint_loss = joint_ ? constants_.normalized(l.mllm.loss, l.imagine_loss) : l.mllm.loss;

  ad::GradientBuffer& g = l.mllm.grads;
  if (joint_) g.scale(1.0 / constants_.mllm_constant());
  ad::clip_global_norm(g, config_.translator.clip_norm);
  translator_opt_.step(g);
  if (joint_ && denoiser_opt_)
    ddpo_step(*l.rollouts, *denoiser_, sched_, *denoiser_opt_, baseline_, config_.translator.clip_norm,
              1.0 / constants_.imagine_constant());
  rec.step = ++step_;
  return rec;
}

TranslatorRun train_translator(const RunConfig& config, const RunPaths& paths) {
  config.validate();
  const Datasets data = load_data(paths);
  std::optional<Denoiser> denoiser;
  BaselineState baseline(config.ddpo.baseline_decay);
  if (config.scene_source() == SceneSource::generated) {
    denoiser = load_denoiser_checkpoint(config, paths.tuned_denoiser());
    baseline = load_baseline(paths.baseline(), config.ddpo.baseline_decay);
  }
  TranslatorTrainer trainer(config, data.train, make_translator(config), std::move(denoiser), baseline);

  TranslatorRun run;
  fs::create_directories(paths.translator());
  if (trainer.joint()) {
    trainer.capture_constants();
    run.constants = trainer.constants();
    update_manifest(paths, config,
                    {{"mllm_constant", exact(trainer.constants().mllm_constant())},
                     {"imagine_constant", exact(trainer.constants().imagine_constant())},
                     {"capture_batches", std::to_string(config.translator.capture_batches)}});
  }

  const std::size_t total = trainer.total_steps();
  const std::size_t k = config.translator.checkpoints;
  std::vector<std::size_t> marks;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::size_t s = (total * i + k - 1) / k;
    if (s > 0 && (marks.empty() || marks.back() != s)) marks.push_back(s);
  }

  std::string ckpt_csv = "index,step,translator,denoiser\n";
  std::size_t next = 0;
  while (trainer.steps_taken() < total) {
    run.log.push_back(trainer.step());
    if (next < marks.size() && trainer.steps_taken() == marks[next]) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%02zu.bin", next + 1);
      CheckpointRef ref{trainer.steps_taken(), paths.translator() / name, {}};
      write_atomically(ref.translator, [&](const fs::path& tmp) { save_translator(trainer.model(), tmp); });
      if (trainer.denoiser()) {
        std::snprintf(name, sizeof name, "denoiser_%02zu.bin", next + 1);
        ref.denoiser = paths.translator() / name;
        write_atomically(ref.denoiser, [&](const fs::path& tmp) { save_checkpoint(tmp, trainer.denoiser()->params()); });
      }
      ckpt_csv += std::to_string(next + 1) + "," + std::to_string(ref.step) + "," +
                  ref.translator.filename().string() + "," +
                  (ref.denoiser.empty() ? std::string() : ref.denoiser.filename().string()) + "\n";
      run.checkpoints.push_back(ref);
      ++next;
    }
  }

  std::string log_csv = "step,epoch,mllm_loss,imagine_loss,joint_loss,mean_reward\n";
  for (const auto& r : run.log)
    log_csv += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + fmt(r.mllm_loss) + "," +
               fmt(r.imagine_loss) + "," + fmt(r.joint_loss) + "," + fmt(r.mean_reward) + "\n";
  write_text(paths.translator() / "train_log.csv", log_csv);
  write_text(paths.translator() / "checkpoints.csv", ckpt_csv);
  write_atomically(paths.final_translator(), [&](const fs::path& tmp) { save_translator(trainer.model(), tmp); });
  if (trainer.denoiser())
    write_atomically(paths.final_denoiser(), [&](const fs::path& tmp) { save_checkpoint(tmp, trainer.denoiser()->params()); });
  update_manifest(paths, config,
                  {{"translator_checksum", file_checksum(paths.final_translator())},
                   {"translator_steps", std::to_string(total)},
                   {"scene_source", std::string(name(config.scene_source()))}});
  return run;
}

std::vector<CheckpointRef> list_checkpoints(const RunPaths& paths) {
  const fs::path csv = paths.translator() / "checkpoints.csv";
  require_file(csv);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<CheckpointRef> out;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) continue;
    CheckpointRef ref{std::stoul(cells[1]), paths.translator() / cells[2], {}};
    if (cells.size() > 3 && !cells[3].empty()) ref.denoiser = paths.translator() / cells[3];
    out.push_back(ref);
  }
  return out;
}

}  // namespace imagine
