#include "imagine/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace imagine {

namespace {

constexpr std::array<std::string_view, 3> kShapes = {"circle", "square", "triangle"};
constexpr std::array<std::string_view, 3> kColors = {"red", "green", "blue"};
constexpr std::array<std::string_view, 3> kShapesT = {"sirkolo", "kwadro", "trigono"};
constexpr std::array<std::string_view, 3> kColorsT = {"roja", "verda", "blua"};

constexpr std::string_view kLeftOf = "left-of";
constexpr std::string_view kAbove = "above";
constexpr std::string_view kHasColor = "has-color";
constexpr std::string_view kExists = "exists";

std::size_t idx(ShapeKind s) { return static_cast<std::size_t>(s); }
std::size_t idx(Color c) { return static_cast<std::size_t>(c); }

bool row_major_less(const ObjectSpec& a, const ObjectSpec& b) {
  return a.row != b.row ? a.row < b.row : a.col < b.col;
}

bool column_major_less(const ObjectSpec& a, const ObjectSpec& b) {
  return a.col != b.col ? a.col < b.col : a.row < b.row;
}

// Relation between consecutive mentions a (first) and b.
std::string_view relation(const ObjectSpec& a, const ObjectSpec& b) {
  return a.col < b.col ? kLeftOf : kAbove;
}

std::string_view translate(std::string_view word) {
  for (const auto& [src, tgt] : bilingual_lexicon())
    if (src == word) return tgt;
  throw std::invalid_argument("no translation for '" + std::string(word) + "'");
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

int decode_coord(double v) {
  const double cell = std::round((v + 1.0) * 1.5);
  return static_cast<int>(std::clamp(cell, 0.0, static_cast<double>(kGrid - 1)));
}

}  // namespace

std::string_view name(ShapeKind s) { return kShapes[idx(s)]; }
std::string_view name(Color c) { return kColors[idx(c)]; }
std::string_view name(Split s) { return s == Split::normal ? "normal" : "ambiguous"; }

ShapeKind parse_shape(std::string_view s) {
  for (std::size_t i = 0; i < kShapes.size(); ++i)
    if (kShapes[i] == s) return static_cast<ShapeKind>(i);
  throw std::invalid_argument("unknown shape '" + std::string(s) + "'");
}

Color parse_color(std::string_view s) {
  for (std::size_t i = 0; i < kColors.size(); ++i)
    if (kColors[i] == s) return static_cast<Color>(i);
  throw std::invalid_argument("unknown color '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "normal") return Split::normal;
  if (s == "ambiguous") return Split::ambiguous;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

Scene Scene::canonical() const {
  Scene out = *this;
  std::sort(out.objects.begin(), out.objects.end(), row_major_less);
  return out;
}

std::vector<ObjectSpec> Scene::mention_order() const {
  auto out = objects;
  std::sort(out.begin(), out.end(), column_major_less);
  return out;
}

bool operator==(const Scene& a, const Scene& b) { return a.canonical().objects == b.canonical().objects; }

void validate(const Scene& scene) {
  if (scene.objects.empty() || scene.objects.size() > kMaxObjects)
    throw std::invalid_argument("scene must hold 1-3 objects, has " + std::to_string(scene.objects.size()));
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    if (o.col < 0 || o.col >= kGrid || o.row < 0 || o.row >= kGrid)
      throw std::invalid_argument("object off the grid");
    for (std::size_t j = 0; j < i; ++j)
      if (scene.objects[j].col == o.col && scene.objects[j].row == o.row)
        throw std::invalid_argument("two objects share a cell");
  }
}

Scene sample_scene(RngStream& rng, const SceneConfig& config) {
  const auto& w = config.count_weights;
  const double total = w[0] + w[1] + w[2];
  if (!(total > 0.0) || w[0] < 0.0 || w[1] < 0.0 || w[2] < 0.0)
    throw std::invalid_argument("object-count weights must be non-negative with a positive sum");
  const double u = rng.uniform() * total;
  const std::size_t count = u < w[0] ? 1 : (u < w[0] + w[1] ? 2 : 3);
  Scene scene;
  while (scene.objects.size() < count) {
    ObjectSpec o;
    o.shape = static_cast<ShapeKind>(rng.below(3));
    o.color = static_cast<Color>(rng.below(3));
    const auto cell = static_cast<int>(rng.below(kGrid * kGrid));
    o.col = cell % kGrid;
    o.row = cell / kGrid;
    const bool taken = std::any_of(scene.objects.begin(), scene.objects.end(),
                                   [&](const ObjectSpec& p) { return p.col == o.col && p.row == o.row; });
    if (!taken) scene.objects.push_back(o);
  }
  return scene.canonical();
}

const std::vector<std::pair<std::string, std::string>>& bilingual_lexicon() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"circle", "sirkolo"}, {"square", "kwadro"},        {"triangle", "trigono"}, {"red", "roja"},
      {"green", "verda"},    {"blue", "blua"},            {"left-of", "maldekstre-de"},
      {"above", "supre-de"}};
  return table;
}

const Tokens& source_words() {
  static const Tokens words = {"a", "circle", "square", "triangle", "red", "green", "blue", "left-of", "above"};
  return words;
}

const Tokens& target_words() {
  static const Tokens words = {"sirkolo", "kwadro", "trigono", "roja", "verda", "blua", "maldekstre-de", "supre-de"};
  return words;
}

SentencePair render_pair(const Scene& scene, Split mode) {
  validate(scene);
  const auto objs = scene.mention_order();
  SentencePair out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i > 0) out.source.emplace_back(relation(objs[i - 1], objs[i]));
    out.source.emplace_back("a");
    if (mode == Split::normal || i == 0) out.source.emplace_back(name(objs[i].color));
    out.source.emplace_back(name(objs[i].shape));
  }
  out.target = render_target(scene);
  return out;
}

Tokens render_target(const Scene& scene) {
  const auto objs = scene.mention_order();
  Tokens out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i > 0) out.emplace_back(translate(relation(objs[i - 1], objs[i])));
    out.emplace_back(kShapesT[idx(objs[i].shape)]);
    out.emplace_back(kColorsT[idx(objs[i].color)]);
  }
  return out;
}

SceneVector encode_scene(const Scene& scene) {
  validate(scene);
  SceneVector v{};
  const Scene c = scene.canonical();
  for (std::size_t s = 0; s < c.objects.size(); ++s) {
    const auto& o = c.objects[s];
    double* slot = v.data() + s * kSlotDim;
    slot[idx(o.shape)] = 1.0;
    slot[3 + idx(o.color)] = 1.0;
    slot[6] = o.col / 1.5 - 1.0;
    slot[7] = o.row / 1.5 - 1.0;
    slot[8] = 1.0;
  }
  return v;
}

Scene decode_scene(std::span<const double> v) {
  if (v.size() != kSceneDim)
    throw std::invalid_argument("scene vector must have " + std::to_string(kSceneDim) + " values");
  Scene out;
  for (std::size_t s = 0; s < kMaxObjects; ++s) {
    const auto slot = v.subspan(s * kSlotDim, kSlotDim);
    if (!(slot[8] > 0.5)) continue;
    ObjectSpec o;
    o.shape = static_cast<ShapeKind>(argmax(slot.subspan(0, 3)));
    o.color = static_cast<Color>(argmax(slot.subspan(3, 3)));
    o.col = decode_coord(slot[6]);
    o.row = decode_coord(slot[7]);
    const bool taken = std::any_of(out.objects.begin(), out.objects.end(),
                                   [&](const ObjectSpec& p) { return p.col == o.col && p.row == o.row; });
    if (!taken) out.objects.push_back(o);
  }
  return out.canonical();
}

SceneGraph parse_lsg(std::span<const std::string> tokens) {
  SceneGraph g;
  std::array<int, 3> seen{};
  std::vector<std::string> entities;
  std::string pending_relation;
  std::string pending_color;
  for (const std::string& tok : tokens) {
    if (tok == "a") continue;
    if (tok == kLeftOf || tok == kAbove) {
      if (entities.empty()) throw std::invalid_argument("relation '" + tok + "' before any entity");
      pending_relation = tok;
      continue;
    }
    if (std::find(kColors.begin(), kColors.end(), tok) != kColors.end()) {
      pending_color = tok;
      continue;
    }
    if (std::find(kShapes.begin(), kShapes.end(), tok) != kShapes.end()) {
      const auto shape = parse_shape(tok);
      std::string entity = tok + "#" + std::to_string(++seen[idx(shape)]);
      if (!pending_color.empty()) g.insert({entity, std::string(kHasColor), pending_color});
      if (!pending_relation.empty()) g.insert({entities.back(), pending_relation, entity});
      pending_color.clear();
      pending_relation.clear();
      entities.push_back(std::move(entity));
      continue;
    }
    throw std::invalid_argument("unknown token '" + tok + "'");
  }
  if (g.empty() && entities.size() == 1) g.insert({entities[0], std::string(kExists), entities[0]});
  return g;
}

SceneGraph extract_vsg(const Scene& scene) {
  SceneGraph g;
  const auto objs = scene.mention_order();
  std::array<int, 3> seen{};
  std::vector<std::string> entities;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    std::string entity = std::string(name(objs[i].shape)) + "#" + std::to_string(++seen[idx(objs[i].shape)]);
    g.insert({entity, std::string(kHasColor), std::string(name(objs[i].color))});
    if (i > 0) g.insert({entities.back(), std::string(relation(objs[i - 1], objs[i])), entity});
    entities.push_back(std::move(entity));
  }
  return g;
}

bool is_ambiguous_slot(std::size_t index, double f) {
  const auto before = static_cast<std::size_t>(std::floor(static_cast<double>(index) * f));
  const auto after = static_cast<std::size_t>(std::floor(static_cast<double>(index + 1) * f));
  return after > before;
}

std::vector<TranslationExample> make_examples(RngStream& rng, std::size_t n, double fraction,
                                              const SceneConfig& config) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("ambiguous fraction must lie in [0,1]");
  // An ambiguous sentence needs a second object whose colour can be dropped.
  SceneConfig multi = config;
  multi.count_weights[0] = 0.0;
  if (multi.count_weights[1] + multi.count_weights[2] <= 0.0) multi.count_weights = {0.0, 1.0, 1.0};
  std::vector<TranslationExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Split split = is_ambiguous_slot(i, fraction) ? Split::ambiguous : Split::normal;
    TranslationExample ex;
    ex.scene = sample_scene(rng, split == Split::ambiguous ? multi : config);
    auto pair = render_pair(ex.scene, split);
    ex.source = std::move(pair.source);
    ex.target = std::move(pair.target);
    ex.split = split;
    out.push_back(std::move(ex));
  }
  return out;
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

Tokens split_words(std::string_view text) {
  Tokens out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string to_jsonl(const TranslationExample& ex) {
  nlohmann::ordered_json j;
  j["source"] = join(ex.source);
  j["target"] = join(ex.target);
  auto scene = nlohmann::ordered_json::array();
  for (const auto& o : ex.scene.objects) {
    nlohmann::ordered_json obj;
    obj["shape"] = name(o.shape);
    obj["color"] = name(o.color);
    obj["col"] = o.col;
    obj["row"] = o.row;
    scene.push_back(std::move(obj));
  }
  j["scene"] = std::move(scene);
  j["split"] = name(ex.split);
  return j.dump();
}

TranslationExample from_jsonl(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  TranslationExample ex;
  ex.source = split_words(j.at("source").get<std::string>());
  ex.target = split_words(j.at("target").get<std::string>());
  for (const auto& o : j.at("scene")) {
    ObjectSpec spec;
    spec.shape = parse_shape(o.at("shape").get<std::string>());
    spec.color = parse_color(o.at("color").get<std::string>());
    spec.col = o.at("col").get<int>();
    spec.row = o.at("row").get<int>();
    ex.scene.objects.push_back(spec);
  }
  validate(ex.scene);
  ex.split = parse_split(j.at("split").get<std::string>());
  return ex;
}

void emit_dataset(RngStream& rng, std::size_t n, double fraction, const std::filesystem::path& path,
                  const SceneConfig& config) {
  if (n == 0) throw std::invalid_argument("dataset size must be positive");
  const auto examples = make_examples(rng, n, fraction, config);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& ex : examples) out << to_jsonl(ex) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<TranslationExample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  std::vector<TranslationExample> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(from_jsonl(line));
  return out;
}

}  // namespace imagine
