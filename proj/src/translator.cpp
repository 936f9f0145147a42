#include "imagine/translator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "imagine/checkpoint.hpp"

namespace imagine {

namespace {

const std::vector<std::string> kSpecials = {"<bos>", "<eos>", "<pad>", "<sep>", "<img>"};

Tensor normal_init(Shape shape, double stddev, RngStream& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

ad::Var dense(ad::Tape& tape, const ad::ParameterSet& p, const std::string& name, ad::Var x) {
  return ad::add(ad::matmul(x, tape.parameter(p.get(name + ".w"))), tape.parameter(p.get(name + ".b")));
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), tokens_.begin()))
    throw std::invalid_argument("vocabulary must start with the reserved specials");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    for (std::size_t j = i + 1; j < tokens_.size(); ++j)
      if (tokens_[i] == tokens_[j]) throw std::invalid_argument("duplicate vocabulary token " + tokens_[i]);
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> t = kSpecials;
  t.insert(t.end(), source_words().begin(), source_words().end());
  t.insert(t.end(), target_words().begin(), target_words().end());
  return Vocabulary(std::move(t));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::int64_t Vocabulary::id(std::string_view token) const {
  const auto it = std::find(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end()) throw std::invalid_argument("token '" + std::string(token) + "' not in vocabulary");
  return it - tokens_.begin();
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw std::out_of_range("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Vocabulary::ids(std::span<const std::string> tokens) const {
  std::vector<std::int64_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Translator::Translator(TranslatorConfig config, Vocabulary vocab, RngStream& init, SceneEncoder encoder)
    : config_(config), vocab_(std::move(vocab)), encoder_(encoder) {
  if (config.d_model % config.heads != 0) throw std::invalid_argument("d_model must be divisible by heads");
  const std::size_t d = config.d_model;
  params_.add("decoder.tok", normal_init({vocab_.size(), d}, 0.1, init));
  params_.add("decoder.pos", normal_init({config.max_len, d}, 0.1, init));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string b = "decoder.block" + std::to_string(l);
    for (const char* m : {".wq", ".wk", ".wv", ".wo"}) params_.add(b + m, normal_init({d, d}, inv_sqrt(d), init));
    params_.add(b + ".ff1.w", normal_init({d, config.ff}, inv_sqrt(d), init));
    params_.add(b + ".ff1.b", Tensor({1, config.ff}));
    params_.add(b + ".ff2.w", normal_init({config.ff, d}, inv_sqrt(config.ff), init));
    params_.add(b + ".ff2.b", Tensor({1, d}));
  }
  const std::size_t h = config.encoder_hidden;
  if (encoder == SceneEncoder::learned) {
    params_.add("projector.enc1.w", normal_init({kSceneDim, h}, inv_sqrt(kSceneDim), init));
    params_.add("projector.enc1.b", normal_init({1, h}, 0.02, init));
    params_.add("projector.enc2.w", normal_init({h, h}, inv_sqrt(h), init));
    params_.add("projector.enc2.b", normal_init({1, h}, 0.02, init));
  } else {
    frozen_ = normal_init({kSceneDim, h}, inv_sqrt(kSceneDim), init);
  }
  params_.add("projector.proj.w", normal_init({h, config.visual_tokens * d}, inv_sqrt(h), init));
  params_.add("projector.proj.b", normal_init({1, config.visual_tokens * d}, 0.02, init));
}

void Translator::set_frozen_encoder(Tensor t) {
  if (encoder_ != SceneEncoder::frozen_random || t.shape() != frozen_.shape())
    throw std::invalid_argument("frozen encoder shape mismatch");
  frozen_ = std::move(t);
}

namespace {

std::vector<ad::Var> row_blocks(ad::Var x, std::span<const std::size_t> offsets) {
  std::vector<ad::Var> out;
  if (offsets.size() == 2) {
    out.push_back(x);
    return out;
  }
  for (std::size_t e = 0; e + 1 < offsets.size(); ++e) out.push_back(ad::slice(x, 0, offsets[e], offsets[e + 1]));
  return out;
}

ad::Var join_rows(std::vector<ad::Var> blocks) { return blocks.size() == 1 ? blocks[0] : ad::concat(blocks, 0); }

// Causal self-attention over stacked sequences; rows [offsets[e], offsets[e+1]) form sequence e.
ad::Var attention(ad::Tape& tape, const Translator& model, const std::string& prefix, ad::Var x,
                  std::span<const std::size_t> offsets) {
  const auto& p = model.params();
  const auto& cfg = model.config();
  const std::size_t dh = cfg.d_model / cfg.heads;
  const ad::Var q = ad::matmul(x, tape.parameter(p.get(prefix + ".wq")));
  const ad::Var k = ad::matmul(x, tape.parameter(p.get(prefix + ".wk")));
  const ad::Var v = ad::matmul(x, tape.parameter(p.get(prefix + ".wv")));
  std::vector<ad::Var> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const auto qs = row_blocks(ad::slice(q, 1, h * dh, (h + 1) * dh), offsets);
    const auto ks = row_blocks(ad::slice(k, 1, h * dh, (h + 1) * dh), offsets);
    const auto vs = row_blocks(ad::slice(v, 1, h * dh, (h + 1) * dh), offsets);
    std::vector<ad::Var> out;
    for (std::size_t e = 0; e < qs.size(); ++e) {
      const ad::Var scores = ad::scale(ad::matmul(qs[e], ad::transpose(ks[e])), inv_sqrt(dh));
      out.push_back(ad::matmul(ad::causal_softmax(scores), vs[e]));
    }
    heads.push_back(join_rows(std::move(out)));
  }
  return ad::matmul(ad::concat(heads, 1), tape.parameter(p.get(prefix + ".wo")));
}

// Visual embeddings of B scenes stacked as [L*B, d]; row k*B + b is embedding k of scene b.
ad::Var project_visual_stack(ad::Tape& tape, const Translator& model, std::span<const SceneVector> scenes) {
  const auto& p = model.params();
  const auto& cfg = model.config();
  const std::size_t B = scenes.size();
  Tensor xs({B, kSceneDim});
  for (std::size_t b = 0; b < B; ++b) std::copy(scenes[b].begin(), scenes[b].end(), xs.row(b).begin());
  const ad::Var x = tape.constant(std::move(xs));
  ad::Var feat;
  if (model.encoder() == SceneEncoder::learned) {
    feat = ad::tanh(dense(tape, p, "projector.enc1", x));
    feat = ad::tanh(dense(tape, p, "projector.enc2", feat));
  } else {
    feat = ad::matmul(x, tape.constant(model.frozen_encoder()));
  }
  const ad::Var flat = dense(tape, p, "projector.proj", feat);
  std::vector<ad::Var> rows;
  for (std::size_t k = 0; k < cfg.visual_tokens; ++k)
    rows.push_back(ad::slice(flat, 1, k * cfg.d_model, (k + 1) * cfg.d_model));
  return rows.size() == 1 ? rows[0] : ad::concat(rows, 0);
}

// Logits for stacked sequences. `visuals` is the [L*B, d] stack, present
// exactly when every sequence starts with the IMG block.
ad::Var stacked_logits(ad::Tape& tape, const Translator& model, std::span<const std::vector<std::int64_t>> seqs,
                       std::optional<ad::Var> visuals) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const std::size_t L = cfg.visual_tokens;
  const std::size_t B = seqs.size();
  if (B == 0) throw std::invalid_argument("no sequences");
  if (visuals && visuals->value().rows() != L * B) throw ShapeError("visual stack does not match the batch");
  const std::int64_t table_offset = visuals ? static_cast<std::int64_t>(L * B) : 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::int64_t> rows, positions;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& ids = seqs[b];
    const std::size_t n = ids.size();
    if (n == 0) throw std::invalid_argument("lm_logits: empty sequence");
    if (n > cfg.max_len)
      throw std::invalid_argument("sequence length " + std::to_string(n) + " exceeds " + std::to_string(cfg.max_len));
    const bool prefixed = n >= L && std::all_of(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(L),
                                                [](std::int64_t id) { return id == Vocabulary::kImg; });
    if (visuals.has_value() != prefixed)
      throw std::invalid_argument(visuals ? "visual embeddings given but the sequence has no IMG block"
                                          : "IMG block present but no visual embeddings given");
    for (std::size_t i = 0; i < n; ++i) {
      if (prefixed && i < L) {
        rows.push_back(static_cast<std::int64_t>(i * B + b));
      } else {
        if (ids[i] == Vocabulary::kImg) throw std::invalid_argument("IMG token outside the visual prefix");
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= model.vocab().size())
          throw std::invalid_argument("token id out of range");
        rows.push_back(table_offset + ids[i]);
      }
      positions.push_back(static_cast<std::int64_t>(i));
    }
    offsets.push_back(rows.size());
  }

  const ad::Var table = tape.parameter(p.get("decoder.tok"));
  ad::Var source = table;
  if (visuals) {
    const ad::Var parts[] = {*visuals, table};
    source = ad::concat(parts, 0);
  }
  ad::Var h = ad::add(ad::gather_rows(source, std::move(rows)),
                      ad::gather_rows(tape.parameter(p.get("decoder.pos")), std::move(positions)));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = "decoder.block" + std::to_string(l);
    h = ad::add(h, attention(tape, model, b, ad::layer_norm(h), offsets));
    const ad::Var ff = dense(tape, p, b + ".ff2", ad::relu(dense(tape, p, b + ".ff1", ad::layer_norm(h))));
    h = ad::add(h, ff);
  }
  return ad::matmul(ad::layer_norm(h), ad::transpose(table));
}

}  // namespace

ad::Var project_visual(ad::Tape& tape, const Translator& model, const SceneVector& x0) {
  return project_visual_stack(tape, model, std::span<const SceneVector>(&x0, 1));
}

std::vector<std::int64_t> prefix_ids(const Translator& model, std::span<const std::string> source, bool with_visual) {
  std::vector<std::int64_t> ids;
  if (with_visual) ids.assign(model.config().visual_tokens, Vocabulary::kImg);
  const auto src = model.vocab().ids(source);
  ids.insert(ids.end(), src.begin(), src.end());
  ids.push_back(Vocabulary::kSep);
  return ids;
}

ad::Var lm_logits(ad::Tape& tape, const Translator& model, std::span<const std::int64_t> ids,
                  std::optional<ad::Var> visuals) {
  const std::vector<std::int64_t> seq(ids.begin(), ids.end());
  return stacked_logits(tape, model, std::span(&seq, 1), visuals);
}

ad::Var masked_nll(ad::Var logits, std::vector<std::int64_t> targets) {
  return ad::softmax_cross_entropy(logits, std::move(targets));
}

TeacherSequence teacher_sequence(const Translator& model, std::span<const std::string> source,
                                 std::span<const std::string> target, bool with_visual) {
  TeacherSequence s;
  s.ids = prefix_ids(model, source, with_visual);
  const std::size_t sep = s.ids.size() - 1;
  const auto tgt = model.vocab().ids(target);
  s.ids.insert(s.ids.end(), tgt.begin(), tgt.end());
  s.targets.assign(s.ids.size(), -1);
  for (std::size_t i = 0; i < tgt.size(); ++i) s.targets[sep + i] = tgt[i];
  s.targets.back() = Vocabulary::kEos;
  s.scored = tgt.size() + 1;
  return s;
}

ad::Var mllm_loss(ad::Tape& tape, const Translator& model, std::span<const TranslationExample> batch,
                  std::span<const SceneVector> scenes) {
  if (batch.empty()) throw std::invalid_argument("mllm_loss: empty batch");
  if (!scenes.empty() && scenes.size() != batch.size())
    throw std::invalid_argument("mllm_loss: need one scene per example or none");
  std::vector<std::vector<std::int64_t>> seqs;
  std::vector<std::int64_t> targets;
  for (const auto& ex : batch) {
    auto s = teacher_sequence(model, ex.source, ex.target, !scenes.empty());
    targets.insert(targets.end(), s.targets.begin(), s.targets.end());
    seqs.push_back(std::move(s.ids));
  }
  std::optional<ad::Var> visuals;
  if (!scenes.empty()) visuals = project_visual_stack(tape, model, scenes);
  return masked_nll(stacked_logits(tape, model, seqs, visuals), std::move(targets));
}

LossAndGrad mllm_loss_and_grad(const Translator& model, std::span<const TranslationExample> batch,
                               std::span<const SceneVector> scenes, std::span<const std::uint64_t> keys) {
  if (!keys.empty() && keys.size() != batch.size()) throw std::invalid_argument("one reduction key per example");
  if (!scenes.empty() && scenes.size() != batch.size())
    throw std::invalid_argument("mllm_loss: need one scene per example or none");
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  if (!keys.empty())
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  std::vector<TranslationExample> sorted;
  std::vector<SceneVector> sorted_scenes;
  for (std::size_t i : order) {
    sorted.push_back(batch[i]);
    if (!scenes.empty()) sorted_scenes.push_back(scenes[i]);
  }
  ad::Tape tape;
  const ad::Var loss = mllm_loss(tape, model, sorted, sorted_scenes);
  LossAndGrad out{loss.value().item(), ad::GradientBuffer(model.params())};
  out.grads.accumulate(model.params(), tape.backward(loss));
  return out;
}

std::vector<Tensor> lm_logits_batch(const Translator& model, std::span<const std::vector<std::int64_t>> sequences,
                                    std::span<const SceneVector> scenes) {
  if (!scenes.empty() && scenes.size() != sequences.size())
    throw std::invalid_argument("lm_logits_batch: need one scene per sequence or none");
  ad::Tape tape(false);
  std::optional<ad::Var> visuals;
  if (!scenes.empty()) visuals = project_visual_stack(tape, model, scenes);
  const Tensor& all = stacked_logits(tape, model, sequences, visuals).value();
  std::vector<Tensor> out;
  std::size_t row = 0;
  for (const auto& seq : sequences) {
    const auto first = all.storage().begin() + static_cast<std::ptrdiff_t>(row * all.cols());
    out.emplace_back(Shape{seq.size(), all.cols()},
                     std::vector<double>(first, first + static_cast<std::ptrdiff_t>(seq.size() * all.cols())));
    row += seq.size();
  }
  return out;
}

Tokens greedy_decode(const Translator& model, std::span<const std::string> source, const SceneVector* scene,
                     std::size_t max_len) {
  auto ids = prefix_ids(model, source, scene != nullptr);
  std::vector<std::int64_t> allowed{Vocabulary::kEos};
  for (const auto& w : target_words()) allowed.push_back(model.vocab().id(w));
  Tokens out;
  while (out.size() < max_len && ids.size() < model.config().max_len) {
    ad::Tape tape(false);
    std::optional<ad::Var> visuals;
    if (scene) visuals = project_visual(tape, model, *scene);
    const Tensor& logits = lm_logits(tape, model, ids, visuals).value();
    const auto last = logits.row(logits.rows() - 1);
    const auto best = *std::max_element(allowed.begin(), allowed.end(), [&](std::int64_t a, std::int64_t b) {
      return last[static_cast<std::size_t>(a)] < last[static_cast<std::size_t>(b)];
    });
    if (best == Vocabulary::kEos) break;
    out.push_back(model.vocab().token(best));
    ids.push_back(best);
  }
  return out;
}

double sequence_log_prob(const Translator& model, std::span<const std::string> source,
                         std::span<const std::string> target, const SceneVector* scene) {
  ad::Tape tape(false);
  const auto seq = teacher_sequence(model, source, target, scene != nullptr);
  std::optional<ad::Var> visuals;
  if (scene) visuals = project_visual(tape, model, *scene);
  const double mean_nll = masked_nll(lm_logits(tape, model, seq.ids, visuals), seq.targets).value().item();
  return -mean_nll * static_cast<double>(seq.scored);
}

void save_translator(const Translator& model, const std::filesystem::path& path) {
  NamedTensors tensors;
  for (std::size_t i = 0; i < model.params().size(); ++i)
    tensors.emplace_back(model.params()[i].name(), model.params()[i].value);
  if (model.encoder() == SceneEncoder::frozen_random) tensors.emplace_back("projector.frozen", model.frozen_encoder());
  write_tensors(path, tensors);
}

void load_translator(Translator& model, const std::filesystem::path& path) {
  const NamedTensors tensors = read_tensors(path);
  const std::size_t expected = model.params().size() + (model.encoder() == SceneEncoder::frozen_random ? 1 : 0);
  if (tensors.size() != expected) throw std::runtime_error("translator checkpoint " + path.string() + " does not match the model");
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& p = model.params()[i];
    if (tensors[i].first != p.name() || tensors[i].second.shape() != p.value.shape())
      throw std::runtime_error("translator checkpoint mismatch at " + tensors[i].first);
    p.value = tensors[i].second;
  }
  if (model.encoder() == SceneEncoder::frozen_random) {
    if (tensors.back().first != "projector.frozen") throw std::runtime_error("translator checkpoint lacks projector.frozen");
    model.set_frozen_encoder(tensors.back().second);
  }
}

}  // namespace imagine
