#include "imagine/scene_graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace imagine {

SceneGraph::SceneGraph(std::initializer_list<Triple> triples) {
  for (const auto& t : triples) insert(t);
}

bool SceneGraph::insert(Triple t) {
  if (contains(t)) return false;
  triples_.push_back(std::move(t));
  return true;
}

bool SceneGraph::contains(const Triple& t) const {
  return std::find(triples_.begin(), triples_.end(), t) != triples_.end();
}

bool SceneGraph::includes(const SceneGraph& other) const {
  return std::all_of(other.begin(), other.end(), [&](const Triple& t) { return contains(t); });
}

bool SceneGraph::same_set(const SceneGraph& other) const {
  return size() == other.size() && includes(other);
}

std::string_view strip_instance(std::string_view symbol) {
  const auto hash = symbol.find('#');
  return hash == std::string_view::npos ? symbol : symbol.substr(0, hash);
}

const std::vector<std::string>& world_symbols() {
  static const std::vector<std::string> symbols = {"circle", "square",  "triangle", "red",   "green",
                                                   "blue",   "has-color", "left-of", "above", "exists"};
  return symbols;
}

SymbolLexicon::SymbolLexicon(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  const std::size_t n = symbols_.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (symbols_[i] == symbols_[j]) throw std::invalid_argument("duplicate lexicon symbol " + symbols_[i]);
  table_.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) table_[i * n + i] = 1.0;
}

SymbolLexicon SymbolLexicon::strict() { return SymbolLexicon(world_symbols()); }

SymbolLexicon SymbolLexicon::soft() {
  SymbolLexicon lex = strict();
  lex.set("left-of", "above", 0.2);
  return lex;
}

SymbolLexicon SymbolLexicon::named(std::string_view name) {
  if (name == "strict") return strict();
  if (name == "soft") return soft();
  return load(std::filesystem::path(std::string(name)));
}

SymbolLexicon SymbolLexicon::parse(std::istream& in) {
  struct Entry {
    std::string a, b;
    double v;
  };
  std::vector<Entry> entries;
  std::vector<std::string> symbols = world_symbols();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Entry e;
    if (!(ls >> e.a)) continue;
    if (!(ls >> e.b >> e.v))
      throw std::invalid_argument("lexicon line " + std::to_string(lineno) + ": expected 'symbol symbol value'");
    for (const auto* s : {&e.a, &e.b})
      if (std::find(symbols.begin(), symbols.end(), *s) == symbols.end()) symbols.push_back(*s);
    entries.push_back(std::move(e));
  }
  SymbolLexicon lex(std::move(symbols));
  std::vector<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : entries) {
    const double v = std::clamp(e.v, 0.0, 1.0);
    const std::size_t i = lex.index_of(e.a), j = lex.index_of(e.b);
    const std::pair<std::size_t, std::size_t> key{std::min(i, j), std::max(i, j)};
    if (std::find(seen.begin(), seen.end(), key) != seen.end() && lex.at(i, j) != v)
      throw std::invalid_argument("lexicon is not symmetric for " + e.a + "/" + e.b);
    seen.emplace_back(key);
    if (i == j && v != 1.0) throw std::invalid_argument("lexicon self-similarity of " + e.a + " must be 1");
    lex.set(e.a, e.b, v);
  }
  return lex;
}

SymbolLexicon SymbolLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read lexicon " + path.string());
  return parse(in);
}

std::size_t SymbolLexicon::index_of(std::string_view symbol) const {
  const auto it = std::find(symbols_.begin(), symbols_.end(), symbol);
  if (it == symbols_.end()) throw std::invalid_argument("unknown symbol '" + std::string(symbol) + "'");
  return static_cast<std::size_t>(it - symbols_.begin());
}

bool SymbolLexicon::knows(std::string_view symbol) const {
  return std::find(symbols_.begin(), symbols_.end(), symbol) != symbols_.end();
}

void SymbolLexicon::set(std::string_view a, std::string_view b, double value) {
  const std::size_t i = index_of(a), j = index_of(b);
  if (i == j) return;
  const double v = std::clamp(value, 0.0, 1.0);
  const std::size_t n = symbols_.size();
  table_[i * n + j] = v;
  table_[j * n + i] = v;
}

double SymbolLexicon::sim(std::string_view a, std::string_view b) const { return at(index_of(a), index_of(b)); }

double sim_symbols(std::string_view a, std::string_view b, const SymbolLexicon& lex) {
  return lex.sim(strip_instance(a), strip_instance(b));
}

double sim_triple(const Triple& l, const Triple& v, const SymbolLexicon& lex) {
  return (sim_symbols(l.head, v.head, lex) + sim_symbols(l.relation, v.relation, lex) +
          sim_symbols(l.tail, v.tail, lex)) /
         3.0;
}

double score_triple(const Triple& l, const SceneGraph& vsg, const SymbolLexicon& lex) {
  double best = 0.0;
  for (const Triple& v : vsg) best = std::max(best, sim_triple(l, v, lex));
  return best;
}

double reward(const SceneGraph& lsg, const SceneGraph& vsg, const SymbolLexicon& lex) {
  if (lsg.empty()) throw std::invalid_argument("reward: language scene graph is empty");
  double total = 0.0;
  for (const Triple& l : lsg) total += score_triple(l, vsg, lex);
  return total / static_cast<double>(lsg.size());
}

}  // namespace imagine
