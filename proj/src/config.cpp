#include "imagine/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "imagine/rng.hpp"

namespace imagine {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v))
    throw ConfigError("bad number for " + std::string(key) + ": '" + std::string(text) + "'");
  return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    throw ConfigError("bad integer for " + std::string(key) + ": '" + std::string(text) + "'");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = static_cast<std::size_t>(parse_uint(k, v));
          },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field double_field(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) { std::invoke(member, c) = parse_double(k, v); },
          [member](const RunConfig& c) { return format_double(std::invoke(member, c)); }};
}

template <typename Member>
Field bool_field(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) { std::invoke(member, c) = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

#define IMAGINE_SIZE(key, path) {key, size_field([](auto& c) -> auto& { return c.path; })}
#define IMAGINE_DOUBLE(key, path) {key, double_field([](auto& c) -> auto& { return c.path; })}
#define IMAGINE_BOOL(key, path) {key, bool_field([](auto& c) -> auto& { return c.path; })}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", {[](RunConfig& c, std::string_view k, std::string_view v) { c.seed = parse_uint(k, v); },
                [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"lexicon", {[](RunConfig& c, std::string_view, std::string_view v) { c.lexicon = std::string(v); },
                   [](const RunConfig& c) { return c.lexicon; }}},
      {"output_root", {[](RunConfig& c, std::string_view, std::string_view v) { c.output_root = std::string(v); },
                       [](const RunConfig& c) { return c.output_root; }}},
      IMAGINE_SIZE("data.train_size", data.train_size),
      IMAGINE_SIZE("data.dev_size", data.dev_size),
      IMAGINE_SIZE("data.test_size", data.test_size),
      IMAGINE_DOUBLE("data.ambiguous_fraction", data.ambiguous_fraction),
      IMAGINE_DOUBLE("data.test_ambiguous_fraction", data.test_ambiguous_fraction),
      IMAGINE_SIZE("diffusion.steps", diffusion.steps),
      IMAGINE_DOUBLE("diffusion.beta_start", diffusion.beta_start),
      IMAGINE_DOUBLE("diffusion.beta_end", diffusion.beta_end),
      IMAGINE_SIZE("diffusion.hidden", diffusion.hidden),
      IMAGINE_SIZE("diffusion.context_dim", diffusion.context_dim),
      IMAGINE_SIZE("diffusion.time_dim", diffusion.time_dim),
      IMAGINE_SIZE("diffusion.max_epochs", diffusion.max_epochs),
      IMAGINE_SIZE("diffusion.batch_size", diffusion.batch_size),
      IMAGINE_DOUBLE("diffusion.lr", diffusion.lr),
      IMAGINE_SIZE("diffusion.patience", diffusion.patience),
      IMAGINE_DOUBLE("diffusion.min_improvement", diffusion.min_improvement),
      IMAGINE_SIZE("ddpo.rl_steps", ddpo.rl_steps),
      IMAGINE_SIZE("ddpo.contexts_per_step", ddpo.contexts_per_step),
      IMAGINE_SIZE("ddpo.samples_per_context", ddpo.samples_per_context),
      IMAGINE_DOUBLE("ddpo.lr", ddpo.lr),
      IMAGINE_DOUBLE("ddpo.clip_norm", ddpo.clip_norm),
      IMAGINE_DOUBLE("ddpo.baseline_decay", ddpo.baseline_decay),
      IMAGINE_DOUBLE("ddpo.noise_scale", ddpo.noise_scale),
      IMAGINE_SIZE("ddpo.holdout_size", ddpo.holdout_size),
      IMAGINE_SIZE("translator.d_model", translator.d_model),
      IMAGINE_SIZE("translator.heads", translator.heads),
      IMAGINE_SIZE("translator.ff", translator.ff),
      IMAGINE_SIZE("translator.layers", translator.layers),
      IMAGINE_SIZE("translator.visual_tokens", translator.visual_tokens),
      IMAGINE_SIZE("translator.encoder_hidden", translator.encoder_hidden),
      IMAGINE_SIZE("translator.epochs", translator.epochs),
      IMAGINE_SIZE("translator.batch_size", translator.batch_size),
      IMAGINE_DOUBLE("translator.lr", translator.lr),
      IMAGINE_DOUBLE("translator.clip_norm", translator.clip_norm),
      IMAGINE_SIZE("translator.checkpoints", translator.checkpoints),
      IMAGINE_SIZE("translator.capture_batches", translator.capture_batches),
      IMAGINE_BOOL("translator.joint_loss", translator.joint_loss),
      IMAGINE_BOOL("translator.freeze_denoiser", translator.freeze_denoiser),
      IMAGINE_DOUBLE("translator.denoiser_lr", translator.denoiser_lr),
      IMAGINE_SIZE("translator.max_decode", translator.max_decode),
      IMAGINE_BOOL("ablation.use_diffusion", ablation.use_diffusion),
      IMAGINE_BOOL("ablation.use_real_scenes", ablation.use_real_scenes),
      IMAGINE_BOOL("ablation.use_scene_encoder", ablation.use_scene_encoder),
  };
  return table;
}

#undef IMAGINE_SIZE
#undef IMAGINE_DOUBLE
#undef IMAGINE_BOOL

const Field& field(std::string_view key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }();
  return names;
}

void RunConfig::validate() const {
  require(lexicon == "strict" || lexicon == "soft" || std::filesystem::exists(lexicon),
          "lexicon must be strict, soft or an existing table file: " + lexicon);
  require(!output_root.empty(), "output_root is empty");
  require(data.train_size > 0 && data.dev_size > 0 && data.test_size > 0, "dataset sizes must be positive");
  require(data.ambiguous_fraction >= 0.0 && data.ambiguous_fraction <= 1.0, "data.ambiguous_fraction not in [0,1]");
  require(data.test_ambiguous_fraction >= 0.0 && data.test_ambiguous_fraction <= 1.0,
          "data.test_ambiguous_fraction not in [0,1]");
  require(diffusion.steps >= 2, "diffusion.steps must be >= 2");
  require(diffusion.beta_start > 0.0 && diffusion.beta_start < diffusion.beta_end && diffusion.beta_end < 1.0,
          "diffusion betas must satisfy 0 < beta_start < beta_end < 1");
  require(diffusion.hidden > 0 && diffusion.context_dim > 0 && diffusion.time_dim > 0 && diffusion.time_dim % 2 == 0,
          "diffusion network sizes must be positive (time_dim even)");
  require(diffusion.batch_size > 0 && diffusion.lr > 0.0 && diffusion.patience > 0, "bad diffusion training settings");
  require(ddpo.contexts_per_step > 0 && ddpo.samples_per_context > 0, "ddpo batch sizes must be positive");
  require(ddpo.lr > 0.0 && ddpo.clip_norm > 0.0, "ddpo.lr and ddpo.clip_norm must be positive");
  require(ddpo.baseline_decay >= 0.0 && ddpo.baseline_decay < 1.0, "ddpo.baseline_decay not in [0,1)");
  require(ddpo.noise_scale >= 0.0 && ddpo.noise_scale <= 1.0, "ddpo.noise_scale not in [0,1]");
  require(ddpo.holdout_size > 0, "ddpo.holdout_size must be positive");
  require(translator.d_model > 0 && translator.heads > 0 && translator.d_model % translator.heads == 0,
          "translator.d_model must be a positive multiple of translator.heads");
  require(translator.ff > 0 && translator.layers > 0 && translator.visual_tokens > 0 && translator.encoder_hidden > 0,
          "translator sizes must be positive");
  require(translator.epochs > 0 && translator.batch_size > 0, "translator epochs and batch_size must be positive");
  require(translator.lr > 0.0 && translator.clip_norm > 0.0 && translator.denoiser_lr > 0.0,
          "translator learning rates and clip_norm must be positive");
  require(translator.checkpoints > 0, "translator.checkpoints must be positive");
  require(translator.capture_batches > 0, "translator.capture_batches must be positive");
  require(translator.max_decode > 0, "translator.max_decode must be positive");
  require(!(ablation.use_diffusion && ablation.use_real_scenes),
          "use_diffusion and use_real_scenes are mutually exclusive");
}

SceneSource RunConfig::scene_source() const {
  if (ablation.use_diffusion && ablation.use_real_scenes)
    throw ConfigError("use_diffusion and use_real_scenes are mutually exclusive");
  if (ablation.use_diffusion) return SceneSource::generated;
  if (ablation.use_real_scenes) return SceneSource::oracle;
  return SceneSource::none;
}

SymbolLexicon RunConfig::symbol_lexicon() const {
  if (lexicon == "strict" || lexicon == "soft") return SymbolLexicon::named(lexicon);
  return SymbolLexicon::load(lexicon);
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, f] : fields()) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << (dot == std::string::npos ? key : key.substr(dot + 1)) << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

std::string RunConfig::hash() const {
  // Where the run is stored is not part of what it computes.
  RunConfig anchored = *this;
  anchored.output_root = "-";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(anchored.to_text())));
  return buf;
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) line = line.substr(0, c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      static const char* const known[] = {"data", "diffusion", "ddpo", "translator", "ablation"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known))
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = std::string(trim(line.substr(0, eq)));
    const std::string full = section.empty() ? key : section + "." + key;
    config.set(full, line.substr(eq + 1));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: '" + o + "'");
    config.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  for (const auto& key : RunConfig::keys())
    if (a.get(key) != b.get(key)) out.push_back(key);
  return out;
}

std::string_view name(SceneSource s) {
  switch (s) {
    case SceneSource::generated:
      return "generated";
    case SceneSource::oracle:
      return "oracle";
    case SceneSource::none:
      return "none";
  }
  return "?";
}

}  // namespace imagine
