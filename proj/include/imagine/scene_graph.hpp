#pragma once

// Scene graphs and the structured LSG/VSG consistency reward.
//
// A triple's similarity to another is the mean of the three symbol
// similarities; a language triple scores the best match among visual
// triples, and the reward is the mean score over language triples. Symbol
// similarity comes from a SymbolLexicon whose entries live in [0, 1], which
// keeps the reward in [0, 1].

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace imagine {

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Duplicate-free collection of triples in insertion order.
class SceneGraph {
 public:
  SceneGraph() = default;
  SceneGraph(std::initializer_list<Triple> triples);

  /// Returns false when the triple was already present.
  bool insert(Triple t);
  bool contains(const Triple& t) const;
  bool empty() const { return triples_.empty(); }
  std::size_t size() const { return triples_.size(); }
  const std::vector<Triple>& triples() const { return triples_; }
  auto begin() const { return triples_.begin(); }
  auto end() const { return triples_.end(); }

  /// Order-insensitive equality.
  bool same_set(const SceneGraph& other) const;
  /// Every triple of `other` is in this graph.
  bool includes(const SceneGraph& other) const;

 private:
  std::vector<Triple> triples_;
};

/// "circle#2" -> "circle"; symbols without a suffix are returned unchanged.
std::string_view strip_instance(std::string_view symbol);

/// Symmetric similarity table over a closed symbol set. Diagonal is 1,
/// unspecified pairs are 0, every entry is clamped into [0, 1].
class SymbolLexicon {
 public:
  explicit SymbolLexicon(std::vector<std::string> symbols);

  /// Identity similarity over the world's symbols.
  static SymbolLexicon strict();
  /// strict() plus 0.2 between the spatial relations left-of and above.
  static SymbolLexicon soft();
  static SymbolLexicon named(std::string_view name);
  /// Text table, one "symbol_a symbol_b value" per line; '#' starts a comment.
  /// Symbols not in the world's closed set are added.
  static SymbolLexicon parse(std::istream& in);
  static SymbolLexicon load(const std::filesystem::path& path);

  void set(std::string_view a, std::string_view b, double value);
  double sim(std::string_view a, std::string_view b) const;
  bool knows(std::string_view symbol) const;
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::size_t index_of(std::string_view symbol) const;
  double at(std::size_t i, std::size_t j) const { return table_[i * symbols_.size() + j]; }

 private:
  std::vector<std::string> symbols_;
  std::vector<double> table_;
};

/// The world's closed symbol set: shapes, colors and relation names.
const std::vector<std::string>& world_symbols();

double sim_symbols(std::string_view a, std::string_view b, const SymbolLexicon& lex);
double sim_triple(const Triple& l, const Triple& v, const SymbolLexicon& lex);
/// Best similarity of `l` against any triple of `vsg`; 0 for an empty vsg.
double score_triple(const Triple& l, const SceneGraph& vsg, const SymbolLexicon& lex);
/// Mean best-match score over the language graph. Throws on an empty lsg.
double reward(const SceneGraph& lsg, const SceneGraph& vsg, const SymbolLexicon& lex);

}  // namespace imagine
