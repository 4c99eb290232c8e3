#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtbp/types.hpp"

namespace mtbp {

// A derivation tree.  Leaves carry no children; an internal node represents
// one production application: arity 1 (a single leaf child) is an emission,
// arity >= 2 is a branching.  Interior unary chains -- a single child that is
// itself internal -- are not valid derivations and are rejected on parse.
//
// Children are kept in canonical order (child type index, then canonical
// serialization), so structurally equal trees compare and serialize equal.
struct DerivationTree {
  int type = 0;
  std::vector<DerivationTree> children;

  bool is_leaf() const { return children.empty(); }
};

inline bool operator==(const DerivationTree& a, const DerivationTree& b) {
  return a.type == b.type && a.children == b.children;
}

namespace detail {

// Sorts children into canonical order recursively and returns the canonical
// serialization, reusing the child strings built along the way.
inline std::string normalize_and_serialize(DerivationTree& t, const TypeTable& types) {
  if (t.is_leaf()) return types.name(t.type);
  std::vector<std::pair<std::pair<int, std::string>, DerivationTree>> keyed;
  keyed.reserve(t.children.size());
  for (DerivationTree& c : t.children) {
    std::string s = normalize_and_serialize(c, types);
    keyed.emplace_back(std::make_pair(c.type, std::move(s)), std::move(c));
  }
  std::sort(keyed.begin(), keyed.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out = types.name(t.type) + "(";
  t.children.clear();
  for (size_t i = 0; i < keyed.size(); ++i) {
    if (i) out += ' ';
    out += keyed[i].first.second;
    t.children.push_back(std::move(keyed[i].second));
  }
  out += ')';
  return out;
}

}  // namespace detail

inline void normalize_tree(DerivationTree& t, const TypeTable& types) {
  detail::normalize_and_serialize(t, types);
}

// "T1t" for a leaf, "T1(T1(T1t) T2(T2t))" for internal nodes; children in
// canonical order.
inline std::string serialize_tree(const DerivationTree& t, const TypeTable& types) {
  DerivationTree copy = t;
  return detail::normalize_and_serialize(copy, types);
}

namespace detail {

struct TreeParser {
  std::string_view text;
  size_t pos = 0;
  const TypeTable& types;
  const OffspringModel* model;  // may be null: no production-existence check

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorKind::validation,
         "tree: offset " + std::to_string(pos) + ": " + what);
  }

  void skip_space() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
      ++pos;
  }

  std::string read_name() {
    size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           text[pos] != '(' && text[pos] != ')')
      ++pos;
    if (pos == start) error("expected a type name");
    return std::string(text.substr(start, pos - start));
  }

  DerivationTree parse_node() {
    skip_space();
    std::string name = read_name();
    int type = types.index_of(name);
    if (type < 0) error("unknown type name '" + name + "'");
    DerivationTree node;
    node.type = type;
    skip_space();
    if (pos < text.size() && text[pos] == '(') {
      ++pos;
      skip_space();
      while (pos < text.size() && text[pos] != ')') {
        node.children.push_back(parse_node());
        skip_space();
      }
      if (pos >= text.size()) error("unterminated '('");
      ++pos;  // ')'
      if (node.children.empty()) error("empty child list");
      check_internal(node);
    }
    return node;
  }

  void check_internal(const DerivationTree& node) const {
    if (types.is_terminal(node.type))
      error("terminal '" + types.name(node.type) + "' cannot have children");
    if (node.children.size() == 1 && !node.children[0].is_leaf())
      error("interior unary chain under '" + types.name(node.type) + "'");
    if (model) {
      CountVector offspring(types.num_types(), 0);
      for (const DerivationTree& c : node.children) ++offspring[c.type];
      if (find_production(*model, node.type, offspring) < 0)
        error("no production '" +
              production_label(types, Production{node.type, offspring, 0.0}) +
              "' in the model");
    }
  }
};

}  // namespace detail

// Parses one serialized tree.  With a model, every internal node must match
// an existing production of its type.  The result is in canonical order.
inline DerivationTree parse_tree(std::string_view text, const TypeTable& types,
                                 const OffspringModel* model = nullptr) {
  detail::TreeParser parser{text, 0, types, model};
  DerivationTree t = parser.parse_node();
  parser.skip_space();
  if (parser.pos != text.size()) parser.error("trailing input after the tree");
  normalize_tree(t, types);
  return t;
}

// Counts of leaf types: the observation a tree realizes.
inline CountVector yield_vector(const DerivationTree& t, const TypeTable& types) {
  CountVector x(types.num_types(), 0);
  auto walk = [&](auto&& self, const DerivationTree& node) -> void {
    if (node.is_leaf()) { ++x[node.type]; return; }
    for (const DerivationTree& c : node.children) self(self, c);
  };
  walk(walk, t);
  return x;
}

// Trees file: one canonical serialized tree per line; blank lines ignored.
inline std::string write_trees_file(const std::vector<DerivationTree>& trees,
                                    const TypeTable& types) {
  std::string out;
  for (const DerivationTree& t : trees) out += serialize_tree(t, types) + "\n";
  return out;
}

inline std::vector<DerivationTree> parse_trees_file(std::string_view text,
                                                    const TypeTable& types,
                                                    const OffspringModel* model = nullptr) {
  std::vector<DerivationTree> trees;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) { blank = false; break; }
    if (blank) continue;
    try {
      trees.push_back(parse_tree(line, types, model));
    } catch (const Error& e) {
      fail(e.kind(), "trees:" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trees;
}

// Complete-data sufficient statistics: how often each nonterminal occurs as
// an internal node, and how often each production is applied.
struct TreeCounts {
  std::vector<long long> type_counts;  // indexed by type; terminals stay 0
  std::map<std::pair<int, CountVector>, long long> production_counts;
};

inline TreeCounts count_occurrences(const DerivationTree& t, const TypeTable& types) {
  TreeCounts counts;
  counts.type_counts.assign(types.num_types(), 0);
  auto walk = [&](auto&& self, const DerivationTree& node) -> void {
    if (node.is_leaf()) return;
    ++counts.type_counts[node.type];
    CountVector offspring(types.num_types(), 0);
    for (const DerivationTree& c : node.children) ++offspring[c.type];
    ++counts.production_counts[{node.type, offspring}];
    for (const DerivationTree& c : node.children) self(self, c);
  };
  walk(walk, t);
  return counts;
}

inline void merge_counts(TreeCounts& into, const TreeCounts& from) {
  for (size_t i = 0; i < into.type_counts.size(); ++i)
    into.type_counts[i] += from.type_counts[i];
  for (const auto& [key, n] : from.production_counts)
    into.production_counts[key] += n;
}

// Maximum-likelihood estimate from fully observed trees: each production's
// count divided by its parent's occurrence count.  With a structure model,
// the output has exactly the structure's productions (unobserved ones get
// probability 0); without one, exactly the observed productions.  Every
// nonterminal must occur at least once, or its distribution is undefined.
inline OffspringModel complete_data_mle(const std::vector<DerivationTree>& trees,
                                        const TypeTable& types,
                                        const OffspringModel* structure = nullptr) {
  if (trees.empty())
    fail(ErrorKind::validation, "no trees to estimate from");
  TreeCounts counts;
  counts.type_counts.assign(types.num_types(), 0);
  for (const DerivationTree& t : trees)
    merge_counts(counts, count_occurrences(t, types));

  for (int v = 0; v < types.num_nonterminals; ++v)
    if (counts.type_counts[v] == 0)
      fail(ErrorKind::data, "nonterminal '" + types.name(v) +
                                "' never occurs; its distribution is undefined");

  std::vector<Production> productions;
  if (structure) {
    for (const auto& [key, n] : counts.production_counts)
      if (find_production(*structure, key.first, key.second) < 0)
        fail(ErrorKind::data,
             "observed production '" +
                 production_label(types, Production{key.first, key.second, 0.0}) +
                 "' is not in the structure");
    for (const Production& p : structure->productions) {
      auto it = counts.production_counts.find({p.parent, p.offspring});
      long long n = (it == counts.production_counts.end()) ? 0 : it->second;
      productions.push_back(
          {p.parent, p.offspring,
           static_cast<double>(n) / static_cast<double>(counts.type_counts[p.parent])});
    }
  } else {
    for (const auto& [key, n] : counts.production_counts)
      productions.push_back(
          {key.first, key.second,
           static_cast<double>(n) / static_cast<double>(counts.type_counts[key.first])});
  }
  return make_model(types, std::move(productions));
}

}  // namespace mtbp
