#include "imagine/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace imagine {

namespace fs = std::filesystem;

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<long>(i), t.begin() + static_cast<long>(i + n))];
  return out;
}

std::string metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void add_symbols(std::map<std::string, double>& bag, const SceneGraph& g) {
  for (const auto& t : g) {
    bag[std::string(strip_instance(t.head))] += 1.0;
    bag[std::string(strip_instance(t.relation))] += 1.0;
    bag[std::string(strip_instance(t.tail))] += 1.0;
  }
}

struct Accumulator {
  std::vector<Tokens> hyps, refs;
  TokenCounts tokens;
  double reward = 0.0, clip = 0.0;

  SplitMetrics finish() const {
    SplitMetrics m;
    m.examples = hyps.size();
    if (m.examples == 0) return m;
    m.bleu = corpus_bleu(hyps, refs);
    m.tokens = tokens;
    m.token_accuracy = tokens.accuracy();
    m.mean_reward = reward / static_cast<double>(m.examples);
    m.clip_analog = clip / static_cast<double>(m.examples);
    return m;
  }
};

}  // namespace

BleuCounts bleu_counts(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                                std::to_string(references.size()) + " references");
  if (references.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  BleuCounts c;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const Tokens& h = hypotheses[s];
    const Tokens& r = references[s];
    c.hyp_len += h.size();
    c.ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts hc = ngrams(h, n), rc = ngrams(r, n);
      for (const auto& [g, k] : hc) {
        c.totals[n - 1] += k;
        const auto it = rc.find(g);
        if (it != rc.end()) c.matches[n - 1] += std::min(k, it->second);
      }
    }
  }
  return c;
}

double bleu_from_counts(const BleuCounts& c) {
  double log_p = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (c.matches[n] == 0) return 0.0;
    log_p += std::log(static_cast<double>(c.matches[n]) / static_cast<double>(c.totals[n])) / 4.0;
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.hyp_len)));
  return 100.0 * bp * std::exp(log_p);
}

double corpus_bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
  return bleu_from_counts(bleu_counts(hypotheses, references));
}

TokenCounts token_counts(const Tokens& hypothesis, const Tokens& reference) {
  TokenCounts c;
  c.total = reference.size();
  for (std::size_t i = 0; i < std::min(hypothesis.size(), reference.size()); ++i)
    c.correct += hypothesis[i] == reference[i] ? 1 : 0;
  return c;
}

double clip_score_analog(std::span<const std::string> source, const Scene& scene, const SymbolLexicon&) {
  std::map<std::string, double> c, v;
  add_symbols(c, parse_lsg(source));
  add_symbols(v, extract_vsg(scene));
  double dot = 0.0, nc = 0.0, nv = 0.0;
  for (const auto& [k, x] : c) {
    nc += x * x;
    const auto it = v.find(k);
    if (it != v.end()) dot += x * it->second;
  }
  for (const auto& [k, x] : v) nv += x * x;
  if (nc == 0.0 || nv == 0.0) return 0.0;
  return std::max(dot / std::sqrt(nc * nv), 0.0);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

EvalReport evaluate(const Translator& model, const SceneProvider& scenes, std::span<const TranslationExample> examples,
                    const SymbolLexicon& lex, const RngStream& rng, std::size_t max_decode) {
  const std::size_t n = examples.size();
  std::vector<std::optional<SceneVector>> vectors(n);
  std::vector<Scene> seen(n);
  if (scenes.source == SceneSource::generated) {
    if (!scenes.denoiser || !scenes.sched) throw std::invalid_argument("generated scenes need a denoiser and schedule");
    std::vector<Tokens> contexts;
    std::vector<RngStream> streams;
    for (std::size_t i = 0; i < n; ++i) {
      contexts.push_back(examples[i].source);
      streams.push_back(rng.derive(i));
    }
    const auto trajs = sample_trajectories(contexts, *scenes.denoiser, *scenes.sched, streams, scenes.noise_scale);
    for (std::size_t i = 0; i < n; ++i) {
      vectors[i] = trajs[i].x0();
      seen[i] = decode_scene(*vectors[i]);
    }
  } else if (scenes.source == SceneSource::oracle) {
    for (std::size_t i = 0; i < n; ++i) {
      vectors[i] = encode_scene(examples[i].scene);
      seen[i] = examples[i].scene;
    }
  }

  std::vector<Tokens> hyps(n);
  std::vector<std::exception_ptr> errors(n);
  const long len = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < len; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      hyps[k] = greedy_decode(model, examples[k].source, vectors[k] ? &*vectors[k] : nullptr, max_decode);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Accumulator all, normal, ambiguous;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = examples[i];
    const double r = scenes.source == SceneSource::none ? 0.0 : reward(parse_lsg(e.source), extract_vsg(seen[i]), lex);
    const double c = scenes.source == SceneSource::none ? 0.0 : clip_score_analog(e.source, seen[i], lex);
    const TokenCounts tc = token_counts(hyps[i], e.target);
    for (Accumulator* acc : {&all, e.split == Split::normal ? &normal : &ambiguous}) {
      acc->hyps.push_back(hyps[i]);
      acc->refs.push_back(e.target);
      acc->tokens.correct += tc.correct;
      acc->tokens.total += tc.total;
      acc->reward += r;
      acc->clip += c;
    }
  }
  return {all.finish(), normal.finish(), ambiguous.finish()};
}

void write_report_csv(const fs::path& path, const EvalReport& report) {
  std::string csv = "split,examples,bleu,token_accuracy,mean_reward,clip_analog\n";
  for (const auto& [name, m] : {std::pair{"overall", &report.overall}, {"normal", &report.normal},
                                {"ambiguous", &report.ambiguous}})
    csv += std::string(name) + "," + std::to_string(m->examples) + "," + metric(m->bleu) + "," +
           metric(m->token_accuracy) + "," + metric(m->mean_reward) + "," + metric(m->clip_analog) + "\n";
  write_file(path, csv);
}

EvalReport evaluate_run(const RunConfig& config, const RunPaths& paths) {
  const Translator model = load_translator_checkpoint(config, paths.final_translator());
  const Datasets data = load_data(paths);
  const NoiseSchedule sched = make_schedule(config);
  std::optional<Denoiser> denoiser;
  SceneProvider provider{config.scene_source(), nullptr, &sched, 1.0};
  if (provider.source == SceneSource::generated) {
    denoiser = load_denoiser_checkpoint(config, paths.final_denoiser());
    provider.denoiser = &*denoiser;
  }
  const EvalReport report = evaluate(model, provider, data.test, config.symbol_lexicon(),
                                     stage_stream(config, "eval").derive("test"), config.translator.max_decode);
  write_report_csv(paths.eval() / "report.csv", report);
  return report;
}

EvalReport score_imagination(const RunConfig& config, const RunPaths& paths) {
  const Datasets data = load_data(paths);
  const NoiseSchedule sched = make_schedule(config);
  const Denoiser denoiser = load_denoiser_checkpoint(config, paths.tuned_denoiser());
  const SymbolLexicon lex = config.symbol_lexicon();
  const RngStream rng = stage_stream(config, "eval").derive("score");
  std::vector<Tokens> contexts;
  std::vector<RngStream> streams;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    contexts.push_back(data.test[i].source);
    streams.push_back(rng.derive(i));
  }
  const auto trajs = sample_trajectories(contexts, denoiser, sched, streams, 1.0);
  Accumulator all, normal, ambiguous;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto& e = data.test[i];
    const Scene s = decode_scene(trajs[i].x0());
    for (Accumulator* acc : {&all, e.split == Split::normal ? &normal : &ambiguous}) {
      acc->reward += reward(parse_lsg(e.source), extract_vsg(s), lex);
      acc->clip += clip_score_analog(e.source, s, lex);
      acc->hyps.push_back({});
    }
  }
  auto finish = [](const Accumulator& a) {
    SplitMetrics m;
    m.examples = a.hyps.size();
    if (m.examples) {
      m.mean_reward = a.reward / static_cast<double>(m.examples);
      m.clip_analog = a.clip / static_cast<double>(m.examples);
    }
    return m;
  };
  const EvalReport report{finish(all), finish(normal), finish(ambiguous)};
  std::string csv = "split,examples,mean_reward,clip_analog\n";
  for (const auto& [name, m] : {std::pair{"overall", &report.overall}, {"normal", &report.normal},
                                {"ambiguous", &report.ambiguous}})
    csv += std::string(name) + "," + std::to_string(m->examples) + "," + metric(m->mean_reward) + "," +
           metric(m->clip_analog) + "\n";
  write_file(paths.eval() / "score.csv", csv);
  return report;
}

Curve curve_from_points(std::vector<CurvePoint> points) {
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].iteration <= points[i - 1].iteration)
      throw std::invalid_argument("curve iterations must be strictly increasing");
  Curve c;
  c.points = std::move(points);
  if (c.points.size() < 5) {
    c.correlation_status = "omitted";
    return c;
  }
  std::vector<double> b, r;
  for (const auto& p : c.points) {
    b.push_back(p.bleu);
    r.push_back(p.mean_reward);
  }
  c.spearman = spearman(b, r);
  c.correlation_status = c.spearman ? "ok" : "undefined";
  return c;
}

Curve log_curve(const RunConfig& config, const RunPaths& paths) {
  const auto checkpoints = list_checkpoints(paths);
  const Datasets data = load_data(paths);
  const NoiseSchedule sched = make_schedule(config);
  const SymbolLexicon lex = config.symbol_lexicon();
  const RngStream rng = stage_stream(config, "eval").derive("curve");
  std::vector<CurvePoint> points;
  for (const auto& ck : checkpoints) {
    const Translator model = load_translator_checkpoint(config, ck.translator);
    std::optional<Denoiser> denoiser;
    SceneProvider provider{config.scene_source(), nullptr, &sched, 1.0};
    if (provider.source == SceneSource::generated) {
      denoiser = load_denoiser_checkpoint(config, ck.denoiser);
      provider.denoiser = &*denoiser;
    }
    const EvalReport r = evaluate(model, provider, data.dev, lex, rng, config.translator.max_decode);
    points.push_back({ck.step, r.overall.bleu, r.overall.mean_reward});
  }
  Curve curve = curve_from_points(std::move(points));
  std::string csv = "iteration,bleu,mean_reward\n";
  for (const auto& p : curve.points)
    csv += std::to_string(p.iteration) + "," + metric(p.bleu) + "," + metric(p.mean_reward) + "\n";
  write_file(paths.eval() / "curve.csv", csv);
  write_file(paths.eval() / "correlation.txt",
             "spearman=" + (curve.spearman ? metric(*curve.spearman) : curve.correlation_status) + "\n");
  return curve;
}

}  // namespace imagine
