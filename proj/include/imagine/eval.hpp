#pragma once

// Measurement: corpus BLEU, token accuracy, the symbol-bag text/scene cosine,
// per-checkpoint curves with their rank correlation, and the four-row
// ablation table.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imagine/trainer.hpp"

namespace imagine {

struct BleuCounts {
  std::array<std::size_t, 4> matches{};  // clipped n-gram matches, n = 1..4
  std::array<std::size_t, 4> totals{};   // hypothesis n-grams
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

BleuCounts bleu_counts(std::span<const Tokens> hypotheses, std::span<const Tokens> references);
/// 100 * BP * geometric mean of the four precisions; 0 if any precision is 0.
double bleu_from_counts(const BleuCounts& counts);
/// Throws std::invalid_argument on a count mismatch or an empty corpus.
double corpus_bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

/// Position-wise matches against the reference, over reference length.
struct TokenCounts {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};
TokenCounts token_counts(const Tokens& hypothesis, const Tokens& reference);

/// max(cos(c, v), 0) between the symbol bags of the sentence's LSG and the
/// scene's VSG (instance suffixes stripped).
double clip_score_analog(std::span<const std::string> source, const Scene& scene, const SymbolLexicon& lex);

/// Rank correlation with average ranks for ties; nullopt when either column
/// has no variance or the lengths differ or are below 2.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct SplitMetrics {
  std::size_t examples = 0;
  double bleu = 0.0;
  double token_accuracy = 0.0;
  double mean_reward = 0.0;
  double clip_analog = 0.0;
  TokenCounts tokens;
};

struct EvalReport {
  SplitMetrics overall, normal, ambiguous;
};

/// What a model sees at test time.
struct SceneProvider {
  SceneSource source = SceneSource::none;
  const Denoiser* denoiser = nullptr;  // for generated scenes
  const NoiseSchedule* sched = nullptr;
  double noise_scale = 1.0;
};

/// Translates every example with greedy decoding. mean_reward and clip_analog
/// score the scene the translator was given (0 when it gets none). Generated
/// scenes for example i come from rng.derive(i).
EvalReport evaluate(const Translator& model, const SceneProvider& scenes, std::span<const TranslationExample> examples,
                    const SymbolLexicon& lex, const RngStream& rng, std::size_t max_decode);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

/// Stage-3 run evaluated on the test split: eval/report.csv under paths.root.
EvalReport evaluate_run(const RunConfig& config, const RunPaths& paths);

/// Imagination quality of the stage-2 denoiser on the test split
/// (translator-free): eval/score.csv.
EvalReport score_imagination(const RunConfig& config, const RunPaths& paths);

struct CurvePoint {
  std::size_t iteration = 0;
  double bleu = 0.0;
  double mean_reward = 0.0;
};

struct Curve {
  std::vector<CurvePoint> points;
  std::optional<double> spearman;  // unset when undefined or fewer than 5 points
  std::string correlation_status;  // "ok", "undefined" or "omitted"
};

/// BLEU and mean reward of every stage-3 checkpoint on the dev split, with
/// the same scene draws for each checkpoint. Writes eval/curve.csv and
/// eval/correlation.txt.
Curve log_curve(const RunConfig& config, const RunPaths& paths);
Curve curve_from_points(std::vector<CurvePoint> points);

struct AblationRow {
  std::string name;
  RunConfig config;
  std::vector<std::string> switches;  // keys that differ from the base config
  std::optional<EvalReport> report;   // unset when the row is absent
  std::string status;
};

/// The four rows (full, wo_sd, w_ri, wo_vs) derived from a base config whose
/// ablation switches are all at their full-model values.
std::vector<AblationRow> ablation_rows(const RunConfig& base);

struct AblationOptions {
  bool train_missing = true;
  bool with_curve = true;
};

/// Trains what is missing (shared data and stages 1-2 once, stage 3 per row
/// under ablation/<row>/), evaluates every row on the same test set and writes
/// eval/ablation.csv. A row whose artifacts are missing or whose training
/// fails is reported absent.
std::vector<AblationRow> run_ablation(const RunConfig& base, const AblationOptions& options = {});

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace imagine
