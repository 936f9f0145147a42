#pragma once

// The synthetic world: scenes of up to three coloured shapes on a 4x4 grid,
// a source language ("Sourcish") describing them, a deterministic target
// language ("Targetese"), a fixed-width vector encoding for diffusion, and
// rule-based parsers producing scene graphs from either side.
//
// Objects are mentioned in column-major order (col, then row), so every
// consecutive pair is related by exactly one of left-of (strictly smaller
// column) or above (same column, smaller row).

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imagine/rng.hpp"
#include "imagine/scene_graph.hpp"

namespace imagine {

enum class ShapeKind { circle, square, triangle };
enum class Color { red, green, blue };
enum class Split { normal, ambiguous };

inline constexpr int kGrid = 4;
inline constexpr std::size_t kMaxObjects = 3;
inline constexpr std::size_t kSlotDim = 9;  // 3 shape + 3 color + 2 position + 1 presence
inline constexpr std::size_t kSceneDim = kMaxObjects * kSlotDim;

std::string_view name(ShapeKind s);
std::string_view name(Color c);
std::string_view name(Split s);
ShapeKind parse_shape(std::string_view s);
Color parse_color(std::string_view s);
Split parse_split(std::string_view s);

struct ObjectSpec {
  ShapeKind shape = ShapeKind::circle;
  Color color = Color::red;
  int col = 0;
  int row = 0;

  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

struct Scene {
  std::vector<ObjectSpec> objects;

  /// Objects in row-major order of their cells.
  Scene canonical() const;
  /// Objects in column-major order (the order sentences mention them).
  std::vector<ObjectSpec> mention_order() const;
  /// Order-insensitive comparison.
  friend bool operator==(const Scene& a, const Scene& b);
};

/// Throws std::invalid_argument on bad counts, off-grid positions or shared cells.
void validate(const Scene& scene);

using SceneVector = std::array<double, kSceneDim>;

struct SceneConfig {
  /// Relative weights of object counts 1, 2 and 3.
  std::array<double, 3> count_weights{1.0, 1.0, 1.0};
};

Scene sample_scene(RngStream& rng, const SceneConfig& config = {});

using Tokens = std::vector<std::string>;

struct SentencePair {
  Tokens source;
  Tokens target;
};

SentencePair render_pair(const Scene& scene, Split mode);
Tokens render_target(const Scene& scene);

SceneVector encode_scene(const Scene& scene);
/// Total: any 27 values decode to a valid (possibly empty) scene.
Scene decode_scene(std::span<const double> v);

/// Language scene graph of a Sourcish sentence. Throws on unknown tokens.
SceneGraph parse_lsg(std::span<const std::string> source_tokens);
/// Visual scene graph read off the scene's attributes and geometry.
SceneGraph extract_vsg(const Scene& scene);

/// Sourcish -> Targetese word table ("a" has no translation).
const std::vector<std::pair<std::string, std::string>>& bilingual_lexicon();
const Tokens& source_words();
const Tokens& target_words();

struct TranslationExample {
  Tokens source;
  Tokens target;
  Scene scene;
  Split split = Split::normal;
};

/// True when example `index` of a stream with the given fraction is ambiguous.
/// Ambiguous examples are spread evenly, floor(n * fraction) of the first n.
bool is_ambiguous_slot(std::size_t index, double ambiguous_fraction);

std::vector<TranslationExample> make_examples(RngStream& rng, std::size_t n, double ambiguous_fraction,
                                              const SceneConfig& config = {});

std::string to_jsonl(const TranslationExample& example);
TranslationExample from_jsonl(std::string_view line);

void emit_dataset(RngStream& rng, std::size_t n, double ambiguous_fraction, const std::filesystem::path& path,
                  const SceneConfig& config = {});
std::vector<TranslationExample> load_dataset(const std::filesystem::path& path);

std::string join(std::span<const std::string> tokens, std::string_view sep = " ");
Tokens split_words(std::string_view text);

}  // namespace imagine
