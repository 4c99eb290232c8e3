#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtbp/inside_outside.hpp"
#include "mtbp/lattice.hpp"
#include "mtbp/tree.hpp"
#include "mtbp/types.hpp"

namespace mtbp {

// One unordered derivation tree realizing an observation.
//   probability:  product of its production probabilities (each distinct
//                 unordered tree counted once);
//   multiplicity: the number of ordered derivations that collapse onto it
//                 (per node, the multinomial over groups of identical
//                 children, multiplied through the subtrees).
struct WeightedTree {
  DerivationTree tree;
  double probability = 0.0;
  long long multiplicity = 1;
};

inline constexpr int kDefaultEnumerationGuard = 8;

namespace detail {

struct OracleEntry {
  DerivationTree tree;
  double probability;
  long long multiplicity;
  std::string serial;
};

struct OracleEnumerator {
  const OffspringModel& model;
  const Lattice& lattice;
  // memo[v * lattice.size() + rank]: all derivation subtrees of type v with
  // that yield, sorted by canonical serialization.
  std::vector<std::optional<std::vector<OracleEntry>>> memo;

  OracleEnumerator(const OffspringModel& m, const Lattice& l)
      : model(m), lattice(l),
        memo(static_cast<size_t>(m.types.num_nonterminals) * l.size()) {}

  static long long factorial(int n) {
    long long f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
  }

  // Ordered realizations of one node: c_t! over the node's children of each
  // type t, divided by g! per group of identical child subtrees.
  static long long node_permutations(const std::vector<const OracleEntry*>& chosen,
                                     const CountVector& terminal_part,
                                     const TypeTable& types) {
    long long perm = 1;
    std::map<int, int> per_type;
    std::map<std::pair<int, std::string>, int> per_group;
    for (int u = 0; u < types.num_types(); ++u)
      if (terminal_part[u] > 0) per_type[u] += terminal_part[u];  // identical leaves
    for (const OracleEntry* e : chosen) {
      ++per_type[e->tree.type];
      ++per_group[{e->tree.type, e->serial}];
    }
    for (const auto& [t, c] : per_type) perm *= factorial(c);
    for (const auto& [g, c] : per_group) perm /= factorial(c);
    for (const auto& [u, c] : per_type)
      if (types.is_terminal(u)) perm /= factorial(c);
    return perm;
  }

  const std::vector<OracleEntry>& enumerate(int v, int rank) {
    auto& slot = memo[static_cast<size_t>(v) * lattice.size() + rank];
    if (slot) return *slot;
    slot.emplace();
    std::vector<OracleEntry>& out = *slot;
    const TypeTable& types = model.types;
    const CountVector& Y = lattice.at(rank);
    const int total = lattice.total_at(rank);

    if (total == 1) {
      int u = 0;
      while (Y[u] == 0) ++u;
      const int i = find_production(model, v, Y);
      if (i >= 0 && model.productions[i].probability > 0.0) {
        OracleEntry e;
        e.tree = DerivationTree{v, {DerivationTree{u, {}}}};
        e.probability = model.productions[i].probability;
        e.multiplicity = 1;
        e.serial = serialize_tree(e.tree, types);
        out.push_back(std::move(e));
      }
    }

    auto [b, en] = model.parent_spans[v];
    for (int i = b; i < en; ++i) {
      const Production& p = model.productions[i];
      if (p.is_emission() || p.probability == 0.0) continue;
      if (p.arity() > total || p.arity() < 2) continue;
      const ProductionSlots ps = make_slots(types, p);
      if (!componentwise_leq(ps.terminal_part, Y)) continue;
      const CountVector target = subtract(Y, ps.terminal_part);

      std::vector<const OracleEntry*> chosen;
      chosen.reserve(ps.slots.size());
      assign(v, p, ps, target, 0, -1, -1, chosen, out);
    }

    std::sort(out.begin(), out.end(),
              [](const OracleEntry& a, const OracleEntry& b) { return a.serial < b.serial; });
    return out;
  }

  // Chooses a (yield rank, entry index) for each nonterminal slot; within a
  // run of equal-typed slots the pairs are nondecreasing, so every multiset
  // of child subtrees is assembled exactly once.
  void assign(int v, const Production& p, const ProductionSlots& ps,
              const CountVector& remaining, size_t slot, int prev_rank, int prev_idx,
              std::vector<const OracleEntry*>& chosen, std::vector<OracleEntry>& out) {
    const TypeTable& types = model.types;
    if (slot == ps.slots.size()) {
      if (total_count(remaining) != 0) return;
      OracleEntry e;
      e.tree.type = v;
      for (int u = 0; u < types.num_types(); ++u)
        for (int k = 0; k < ps.terminal_part[u]; ++k)
          e.tree.children.push_back(DerivationTree{u, {}});
      e.probability = p.probability;
      e.multiplicity = node_permutations(chosen, ps.terminal_part, types);
      for (const OracleEntry* c : chosen) {
        e.tree.children.push_back(c->tree);
        e.probability *= c->probability;
        e.multiplicity *= c->multiplicity;
      }
      e.serial = detail::normalize_and_serialize(e.tree, types);
      out.push_back(std::move(e));
      return;
    }
    const int t = ps.slots[slot];
    const bool chained = slot > 0 && ps.slots[slot - 1] == t;
    const int later = static_cast<int>(ps.slots.size() - slot - 1);
    const int remaining_total = total_count(remaining);
    lattice.for_each_below(remaining, [&](int r, int total) {
      if (total < 1 || remaining_total - total < later) return;
      if (chained && r < prev_rank) return;
      const std::vector<OracleEntry>& entries = enumerate(t, r);
      for (size_t idx = 0; idx < entries.size(); ++idx) {
        if (chained && r == prev_rank && static_cast<int>(idx) < prev_idx) continue;
        chosen.push_back(&entries[idx]);
        assign(v, p, ps, subtract(remaining, lattice.at(r)), slot + 1, r,
               static_cast<int>(idx), chosen, out);
        chosen.pop_back();
      }
    });
  }
};

}  // namespace detail

// Every derivation tree of the observation, each distinct unordered tree
// once, sorted by canonical serialization.  Underivable observations give an
// empty list.  Guarded by the observation's total leaf count.
inline std::vector<WeightedTree> enumerate_trees(const OffspringModel& model,
                                                 const Observation& obs,
                                                 int max_leaves_guard = kDefaultEnumerationGuard) {
  detail::check_observation(model, obs);
  if (total_count(obs.x) > max_leaves_guard)
    fail(ErrorKind::guard,
         "enumeration guard exceeded: observation total " +
             std::to_string(total_count(obs.x)) + " > " + std::to_string(max_leaves_guard));
  const Lattice lattice(obs.x);
  detail::OracleEnumerator oracle(model, lattice);
  const auto& entries = oracle.enumerate(obs.root, lattice.rank(obs.x));
  std::vector<WeightedTree> out;
  out.reserve(entries.size());
  for (const auto& e : entries)
    out.push_back({e.tree, e.probability, e.multiplicity});
  return out;
}

// Reference expectations by exhaustive enumeration: posterior-weights the
// complete-data counts of every derivation tree.  Tree weights are the
// probability (multiset mode) or probability * multiplicity (ordered mode);
// the likelihood is the total weight.
inline ExpectedCounts oracle_expected_counts(const OffspringModel& model,
                                             const Observation& obs, CountingMode mode,
                                             int max_leaves_guard = kDefaultEnumerationGuard) {
  const std::vector<WeightedTree> trees = enumerate_trees(model, obs, max_leaves_guard);
  double weight_sum = 0.0;
  std::vector<double> weights;
  weights.reserve(trees.size());
  for (const WeightedTree& wt : trees) {
    const double w = mode == CountingMode::ordered
                         ? wt.probability * static_cast<double>(wt.multiplicity)
                         : wt.probability;
    weights.push_back(w);
    weight_sum += w;
  }
  if (weight_sum == 0.0)
    fail(ErrorKind::data, "observation " + detail::describe(model.types, obs) +
                              " is underivable under the model");

  ExpectedCounts out;
  out.likelihood = weight_sum;
  out.type_expectations.assign(model.types.num_nonterminals, 0.0);
  out.production_expectations.assign(model.productions.size(), 0.0);
  for (size_t i = 0; i < trees.size(); ++i) {
    const double q = weights[i] / weight_sum;
    if (q == 0.0) continue;
    const TreeCounts counts = count_occurrences(trees[i].tree, model.types);
    for (int v = 0; v < model.types.num_nonterminals; ++v)
      out.type_expectations[v] += q * static_cast<double>(counts.type_counts[v]);
    for (const auto& [key, n] : counts.production_counts) {
      const int pi = find_production(model, key.first, key.second);
      out.production_expectations[pi] += q * static_cast<double>(n);
    }
  }
  return out;
}

}  // namespace mtbp
