#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mtbp/error.hpp"

namespace mtbp {

// A particle-count vector over all types, indexed like TypeTable::names.
// Used both for observations (counts per type in one generation) and for
// production offspring multisets.
using CountVector = std::vector<int>;

inline int total_count(const CountVector& v) {
  int t = 0;
  for (int c : v) t += c;
  return t;
}

inline bool componentwise_leq(const CountVector& a, const CountVector& b) {
  for (size_t k = 0; k < a.size(); ++k)
    if (a[k] > b[k]) return false;
  return true;
}

inline CountVector add(const CountVector& a, const CountVector& b) {
  CountVector r(a);
  for (size_t k = 0; k < r.size(); ++k) r[k] += b[k];
  return r;
}

// Requires a >= b componentwise.
inline CountVector subtract(const CountVector& a, const CountVector& b) {
  CountVector r(a);
  for (size_t k = 0; k < r.size(); ++k) r[k] -= b[k];
  return r;
}

inline CountVector unit_vector(size_t dims, int type) {
  CountVector e(dims, 0);
  e[type] = 1;
  return e;
}

inline bool lex_less(const CountVector& a, const CountVector& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// "1,0,1,1" -- the on-disk / report spelling of a count vector.
inline std::string format_counts(const CountVector& v) {
  std::string s;
  for (size_t k = 0; k < v.size(); ++k) {
    if (k) s += ',';
    s += std::to_string(v[k]);
  }
  return s;
}

// Shortest decimal that round-trips a double (17 significant digits).
inline std::string format_probability(double p) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", p);
  return buf;
}

// The type alphabet.  Nonterminals (types that reproduce) come first, then
// terminals (types that never reproduce); a single index space covers both.
struct TypeTable {
  std::vector<std::string> names;
  int num_nonterminals = 0;

  int num_types() const { return static_cast<int>(names.size()); }
  bool is_terminal(int type) const { return type >= num_nonterminals; }
  const std::string& name(int type) const { return names[type]; }

  // Index of a name, or -1 if unknown.
  int index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline bool valid_type_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name) {
    if (std::isspace(static_cast<unsigned char>(c))) return false;
    if (c == ':' || c == '#' || c == '(' || c == ')' || c == ',') return false;
  }
  if (name.find("->") != std::string::npos) return false;
  return true;
}

inline TypeTable make_type_table(std::vector<std::string> nonterminals,
                                 std::vector<std::string> terminals) {
  TypeTable table;
  table.num_nonterminals = static_cast<int>(nonterminals.size());
  table.names = std::move(nonterminals);
  table.names.insert(table.names.end(), terminals.begin(), terminals.end());
  if (table.num_nonterminals < 1)
    fail(ErrorKind::validation, "at least one nonterminal type is required");
  for (const std::string& n : table.names)
    if (!valid_type_name(n))
      fail(ErrorKind::validation, "invalid type name '" + n + "'");
  for (size_t i = 0; i < table.names.size(); ++i)
    for (size_t j = i + 1; j < table.names.size(); ++j)
      if (table.names[i] == table.names[j])
        fail(ErrorKind::validation, "duplicate type name '" + table.names[i] + "'");
  return table;
}

// One production v -> multiset of offspring types, with its probability.
// offspring[u] = number of children of type u; arity 1 means an emission
// (the parent leaves one particle behind: a terminal, or itself one last
// time), arity >= 2 means a branching into that many particles.
struct Production {
  int parent = 0;
  CountVector offspring;
  double probability = 0.0;

  int arity() const { return total_count(offspring); }
  bool is_emission() const { return arity() == 1; }

  // For emissions: the single offspring type.
  int emission_child() const {
    for (size_t u = 0; u < offspring.size(); ++u)
      if (offspring[u]) return static_cast<int>(u);
    return -1;
  }
};

inline bool production_order(const Production& a, const Production& b) {
  if (a.parent != b.parent) return a.parent < b.parent;
  return lex_less(a.offspring, b.offspring);
}

// "T1 -> T1 T2" rendered as "T1->T1+T2" (offspring expanded, type order).
// Used for trace column headers and report rows.
inline std::string production_label(const TypeTable& types, const Production& p) {
  std::string s = types.name(p.parent) + "->";
  bool first = true;
  for (size_t u = 0; u < p.offspring.size(); ++u)
    for (int k = 0; k < p.offspring[u]; ++k) {
      if (!first) s += '+';
      s += types.name(static_cast<int>(u));
      first = false;
    }
  return s;
}

// An offspring distribution: for every nonterminal, a probability
// distribution over its productions.  Productions are kept in canonical
// order (parent index, then offspring lexicographically) so that equal
// models serialize to equal bytes; parent_spans[v] is the half-open range
// of v's productions inside `productions`.
struct OffspringModel {
  TypeTable types;
  std::vector<Production> productions;
  std::vector<std::pair<int, int>> parent_spans;

  int num_productions() const { return static_cast<int>(productions.size()); }
};

// One generation-level observation: the root type that started the process
// and the particle counts of the observed generation.
struct Observation {
  int root = 0;
  CountVector x;
};

// Index into model.productions, or -1 if no such production exists.
inline int find_production(const OffspringModel& model, int parent,
                           const CountVector& offspring) {
  auto [b, e] = model.parent_spans[parent];
  for (int i = b; i < e; ++i)
    if (model.productions[i].offspring == offspring) return i;
  return -1;
}

// How far a probability sum may drift from 1 before the model is rejected.
inline constexpr double kSumTolerance = 1e-9;

// Sorts, indexes and validates; the only way to build a model.
inline OffspringModel make_model(TypeTable types, std::vector<Production> productions) {
  OffspringModel model;
  model.types = std::move(types);
  model.productions = std::move(productions);
  const int m = model.types.num_nonterminals;
  const int d = model.types.num_types();

  for (const Production& p : model.productions) {
    if (p.parent < 0 || p.parent >= m)
      fail(ErrorKind::validation, "production parent must be a nonterminal");
    if (static_cast<int>(p.offspring.size()) != d)
      fail(ErrorKind::validation, "offspring vector has wrong dimension");
    for (int c : p.offspring)
      if (c < 0) fail(ErrorKind::validation, "negative offspring count");
    if (p.arity() < 1)
      fail(ErrorKind::validation, "production '" +
               production_label(model.types, p) + "' has no offspring");
    if (!(p.probability >= 0.0 && p.probability <= 1.0))
      fail(ErrorKind::validation, "probability of '" +
               production_label(model.types, p) + "' is outside [0,1]");
  }

  std::sort(model.productions.begin(), model.productions.end(), production_order);
  for (size_t i = 1; i < model.productions.size(); ++i)
    if (model.productions[i].parent == model.productions[i - 1].parent &&
        model.productions[i].offspring == model.productions[i - 1].offspring)
      fail(ErrorKind::validation, "duplicate production '" +
               production_label(model.types, model.productions[i]) + "'");

  model.parent_spans.assign(m, {0, 0});
  size_t i = 0;
  for (int v = 0; v < m; ++v) {
    int begin = static_cast<int>(i);
    double sum = 0.0;
    while (i < model.productions.size() &&
           model.productions[i].parent == v)
      sum += model.productions[i++].probability;
    model.parent_spans[v] = {begin, static_cast<int>(i)};
    if (begin == static_cast<int>(i))
      fail(ErrorKind::validation,
           "nonterminal '" + model.types.name(v) + "' has no productions");
    if (std::abs(sum - 1.0) > kSumTolerance)
      fail(ErrorKind::validation,
           "probabilities for '" + model.types.name(v) + "' sum to " +
               format_probability(sum) + ", expected 1");
  }
  return model;
}

// Re-checks every invariant of an already built model.
inline void validate_model(const OffspringModel& model) {
  OffspringModel copy = make_model(model.types, model.productions);
  if (copy.productions.size() != model.productions.size())
    fail(ErrorKind::validation, "model production list is not canonical");
  for (size_t i = 0; i < model.productions.size(); ++i) {
    const Production &a = model.productions[i], &b = copy.productions[i];
    if (a.parent != b.parent || a.offspring != b.offspring)
      fail(ErrorKind::validation, "model production list is not in canonical order");
  }
}

}  // namespace mtbp
