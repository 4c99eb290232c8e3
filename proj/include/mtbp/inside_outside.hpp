#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mtbp/lattice.hpp"
#include "mtbp/types.hpp"

namespace mtbp {

// How child-yield assignments of a production are counted.
//
// multiset: one term per distinct multiset of (child type, yield vector)
//   pairs -- splits that differ only by swapping equal-typed children with
//   equal yields are not double counted.  This is the convention under which
//   the worked-example arithmetic holds.
// ordered: every composition of the yield over child slots counts, so the
//   inner value is the true process probability of the event "the chosen
//   generation realizes exactly this vector".
enum class CountingMode { multiset, ordered };

inline const char* counting_mode_name(CountingMode m) {
  return m == CountingMode::multiset ? "multiset" : "ordered";
}

inline CountingMode parse_counting_mode(const std::string& s) {
  if (s == "multiset") return CountingMode::multiset;
  if (s == "ordered") return CountingMode::ordered;
  fail(ErrorKind::validation, "unknown counting mode '" + s + "'");
}

// Inner pass output.  alpha[rank * m + v] is the total weight of derivation
// subtrees rooted at type v whose yield is the vector of that rank; absent
// combinations are exactly 0.  split_sums caches, for every positive-
// probability branching production, the assignment sum S(I, production)
// (see below) for reuse by the expected-count pass.
struct InnerTable {
  std::shared_ptr<const Lattice> lattice;
  Observation observation;
  CountingMode mode = CountingMode::multiset;
  std::vector<double> alpha;
  std::vector<double> split_sums;   // consecutive lattice-sized blocks
  std::vector<int> split_offset;    // production index -> block start, or -1
  double likelihood = 0.0;          // alpha at (observation.x, observation.root)
  int row_stride = 0;               // number of nonterminals

  // Entries outside the lattice are exactly zero.
  double alpha_at(const CountVector& I, int v) const {
    if (!componentwise_leq(I, lattice->bound())) return 0.0;
    return alpha[static_cast<size_t>(lattice->rank(I)) * row_stride + v];
  }
};

// Outer pass output.  beta[rank * m + v] is the total context weight for a
// type-v subtree yielding the vector of that rank inside a full derivation
// of the observation.
struct OuterTable {
  CountingMode mode = CountingMode::multiset;
  std::vector<double> beta;
  int row_stride = 0;

  double beta_at(const Lattice& lattice, const CountVector& I, int v) const {
    if (!componentwise_leq(I, lattice.bound())) return 0.0;
    return beta[lattice.rank(I) * row_stride + v];
  }
};

// Posterior expectations for one observation.
struct ExpectedCounts {
  double likelihood = 0.0;
  std::vector<double> type_expectations;        // per nonterminal
  std::vector<double> production_expectations;  // aligned with model.productions
};

// Sums over a batch of observations, the E step's output.
struct AggregatedCounts {
  int observations = 0;
  double total_log_likelihood = 0.0;
  std::vector<double> type_expectations;
  std::vector<double> production_expectations;
};

namespace detail {

// Per-production split of offspring into terminal children (each consumes
// exactly one observed particle of its type) and nonterminal child slots
// (each receives a sub-vector with total >= 1).
struct ProductionSlots {
  CountVector terminal_part;
  std::vector<int> slots;  // nonterminal child types, expanded, ascending
};

inline ProductionSlots make_slots(const TypeTable& types, const Production& p) {
  ProductionSlots ps;
  ps.terminal_part.assign(types.num_types(), 0);
  for (int u = 0; u < types.num_types(); ++u)
    for (int k = 0; k < p.offspring[u]; ++k) {
      if (types.is_terminal(u)) ++ps.terminal_part[u];
      else ps.slots.push_back(u);
    }
  return ps;
}

// Sums Π_slot alpha(J_slot, type_slot) over assignments of `target` to the
// slots.  multiset mode keeps the vectors within each run of equal-typed
// slots lexicographically nondecreasing (one term per distinct multiset);
// ordered mode enumerates every composition.
class AssignmentSum {
 public:
  AssignmentSum(const Lattice& lattice, const std::vector<double>& alpha, int m,
                CountingMode mode)
      : lattice_(lattice), alpha_(alpha), m_(m), mode_(mode) {}

  double run(const CountVector& target, const std::vector<int>& slots) const {
    if (slots.empty()) return total_count(target) == 0 ? 1.0 : 0.0;
    return recurse(slots, 0, target, total_count(target), nullptr);
  }

 private:
  double recurse(const std::vector<int>& slots, size_t i, const CountVector& remaining,
                 int remaining_total, const CountVector* lower) const {
    const int t = slots[i];
    if (i + 1 == slots.size()) {
      if (remaining_total < 1) return 0.0;
      if (lower && lex_less(remaining, *lower)) return 0.0;
      return alpha_[lattice_.rank(remaining) * m_ + t];
    }
    const int later = static_cast<int>(slots.size() - i - 1);
    const bool chain = mode_ == CountingMode::multiset && slots[i + 1] == t;
    double acc = 0.0;
    lattice_.for_each_below(remaining, [&](int r, int total) {
      if (total < 1 || remaining_total - total < later) return;
      const double a = alpha_[r * m_ + t];
      if (a == 0.0) return;
      const CountVector& J = lattice_.at(r);
      if (lower && lex_less(J, *lower)) return;
      acc += a * recurse(slots, i + 1, subtract(remaining, J),
                         remaining_total - total, chain ? &J : nullptr);
    });
    return acc;
  }

  const Lattice& lattice_;
  const std::vector<double>& alpha_;
  int m_;
  CountingMode mode_;
};

inline void check_observation(const OffspringModel& model, const Observation& obs) {
  const TypeTable& t = model.types;
  if (obs.root < 0 || obs.root >= t.num_nonterminals)
    fail(ErrorKind::validation, "observation root must be a nonterminal");
  if (static_cast<int>(obs.x.size()) != t.num_types())
    fail(ErrorKind::validation, "observation vector has wrong dimension");
  for (int c : obs.x)
    if (c < 0) fail(ErrorKind::validation, "negative observation count");
  if (total_count(obs.x) < 1)
    fail(ErrorKind::validation, "observation vector must have total >= 1");
}

inline std::string describe(const TypeTable& types, const Observation& obs) {
  return "root=" + types.name(obs.root) + " x=" + format_counts(obs.x);
}

}  // namespace detail

// Inner (bottom-up) pass over the sub-vector lattice of the observation.
//
//   total(I) == 1, I = e_u:  alpha(I, v) = sum of emission probabilities
//       p(v -> {u}).
//   total(I) >= 2:  alpha(I, v) = sum over branching productions v -> mu of
//       p * S(I, mu), where S assigns I to mu's children: terminal children
//       consume one particle each, nonterminal children receive sub-vectors
//       with total >= 1, counted per the mode.
//
// The likelihood of the observation is alpha(x, root).
inline InnerTable inner_probabilities(const OffspringModel& model, const Observation& obs,
                                      CountingMode mode,
                                      std::shared_ptr<const Lattice> lattice) {
  detail::check_observation(model, obs);
  const TypeTable& types = model.types;
  const int m = types.num_nonterminals;
  const int d = types.num_types();
  const Lattice& L = *lattice;

  InnerTable table;
  table.lattice = lattice;
  table.observation = obs;
  table.mode = mode;
  table.row_stride = m;
  table.alpha.assign(static_cast<size_t>(L.size()) * m, 0.0);

  // Emission layer: emission[v*d + u] = p(v -> {u}).
  std::vector<double> emission(static_cast<size_t>(m) * d, 0.0);
  // Branching productions: slots and split-sum cache blocks.
  std::vector<detail::ProductionSlots> slots(model.productions.size());
  table.split_offset.assign(model.productions.size(), -1);
  int blocks = 0;
  for (size_t i = 0; i < model.productions.size(); ++i) {
    const Production& p = model.productions[i];
    if (p.is_emission()) {
      emission[p.parent * d + p.emission_child()] += p.probability;
    } else if (p.probability > 0.0) {
      slots[i] = detail::make_slots(types, p);
      table.split_offset[i] = blocks++ * L.size();
    }
  }
  table.split_sums.assign(static_cast<size_t>(blocks) * L.size(), 0.0);

  const detail::AssignmentSum assign(L, table.alpha, m, mode);
  for (int r : L.ascending()) {
    const int total = L.total_at(r);
    if (total == 0) continue;
    const CountVector& I = L.at(r);
    if (total == 1) {
      int u = 0;
      while (I[u] == 0) ++u;
      for (int v = 0; v < m; ++v)
        table.alpha[static_cast<size_t>(r) * m + v] = emission[v * d + u];
      continue;  // branching productions yield at least 2 particles
    }
    for (size_t i = 0; i < model.productions.size(); ++i) {
      if (table.split_offset[i] < 0) continue;
      const Production& p = model.productions[i];
      if (p.arity() > total) continue;
      if (!componentwise_leq(slots[i].terminal_part, I)) continue;
      const double s = assign.run(subtract(I, slots[i].terminal_part), slots[i].slots);
      if (s == 0.0) continue;
      table.split_sums[table.split_offset[i] + r] = s;
      table.alpha[static_cast<size_t>(r) * m + p.parent] += p.probability * s;
    }
  }
  table.likelihood = table.alpha[static_cast<size_t>(L.rank(obs.x)) * m + obs.root];
  return table;
}

inline InnerTable inner_probabilities(const OffspringModel& model, const Observation& obs,
                                      CountingMode mode = CountingMode::multiset) {
  detail::check_observation(model, obs);
  return inner_probabilities(model, obs, mode, std::make_shared<Lattice>(obs.x));
}

// Outer (top-down) pass.  beta(x, root) = 1; for smaller I, contexts are
// pulled from every branching production w -> mu with a child slot of type v:
//
//   beta(I, v) += p * beta(I + J, w) * Sib(J),
//
// where Sib(J) assigns J to mu's remaining children (terminals consume one
// particle each, sibling subtrees are counted per the mode).  In ordered
// mode Sib additionally carries the factor mu[v] -- the subtree under
// scrutiny may occupy any of the equal-typed slots.  In multiset mode a
// sibling assignment in which k same-typed siblings carry the scrutinized
// subtree's own vector I is weighted (k+1), because the nondecreasing
// ordering leaves k+1 interchangeable positions for the subtree; this keeps
// beta the exact gradient of the likelihood with respect to alpha, which the
// expected-count formulas (and the fit's monotonicity) rely on.  Expanding
// by how many tied siblings there are, the multiset factor is
//
//   Sib(J) = sum_{s >= 0} alpha(I, v)^s * H_s(J - s * I),
//
// where H_s assigns its argument to the remaining children with s of the
// type-v slots removed.
inline OuterTable outer_probabilities(const OffspringModel& model, const InnerTable& inner) {
  const TypeTable& types = model.types;
  const int m = types.num_nonterminals;
  const Lattice& L = *inner.lattice;
  const CountVector& X = L.bound();
  const int rank_x = L.rank(X);

  OuterTable table;
  table.mode = inner.mode;
  table.row_stride = m;
  table.beta.assign(static_cast<size_t>(L.size()) * m, 0.0);
  table.beta[static_cast<size_t>(rank_x) * m + inner.observation.root] = 1.0;

  // Pull entries: one per (branching production with p > 0, distinct
  // nonterminal child type), with the sibling assignment sum tabulated over
  // the whole lattice up front (it depends only on alpha).
  struct PullEntry {
    int parent;
    int child;
    double probability;
    int min_total;  // arity - 1: every sibling slot consumes at least 1
    // sib[s]: sibling assignment sums with s type-`child` slots removed
    // (multiset tie weighting); ordered mode always has exactly sib[0].
    std::vector<std::vector<double>> sib;
  };
  std::vector<PullEntry> entries;
  const detail::AssignmentSum assign(L, inner.alpha, m, inner.mode);
  for (const Production& p : model.productions) {
    if (p.is_emission() || p.probability == 0.0) continue;
    const detail::ProductionSlots ps = detail::make_slots(types, p);
    for (size_t k = 0; k < ps.slots.size(); ++k) {
      const int v = ps.slots[k];
      if (k > 0 && ps.slots[k - 1] == v) continue;  // one entry per distinct type
      PullEntry e;
      e.parent = p.parent;
      e.child = v;
      e.probability = p.probability;
      e.min_total = p.arity() - 1;
      const double factor =
          inner.mode == CountingMode::ordered ? static_cast<double>(p.offspring[v]) : 1.0;
      const int tiers = inner.mode == CountingMode::ordered ? 1 : p.offspring[v];
      std::vector<int> siblings = ps.slots;
      siblings.erase(siblings.begin() + static_cast<long>(k));
      for (int s = 0; s < tiers; ++s) {
        if (s > 0)  // drop one more type-v slot (they are grouped together)
          siblings.erase(std::find(siblings.begin(), siblings.end(), v));
        std::vector<double> table_s(L.size(), 0.0);
        const int min_total = e.min_total - s;
        for (int r = 0; r < L.size(); ++r) {
          if (L.total_at(r) < min_total) continue;
          const CountVector& J = L.at(r);
          if (!componentwise_leq(ps.terminal_part, J)) continue;
          const double sum = assign.run(subtract(J, ps.terminal_part), siblings);
          if (sum != 0.0) table_s[r] = factor * sum;
        }
        e.sib.push_back(std::move(table_s));
      }
      entries.push_back(std::move(e));
    }
  }

  const std::vector<int>& order = L.ascending();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int r = *it;
    if (r == rank_x) continue;  // the root context row is the initialization
    const CountVector& I = L.at(r);
    const CountVector rest = subtract(X, I);
    for (const PullEntry& e : entries) {
      const double alpha_i = inner.alpha[static_cast<size_t>(r) * m + e.child];
      const int tiers = alpha_i == 0.0 ? 1 : static_cast<int>(e.sib.size());
      double acc = 0.0;
      L.for_each_below(rest, [&](int rj, int total) {
        if (total < e.min_total) return;
        double s = e.sib[0][rj];
        double scale = 1.0;
        CountVector left = L.at(rj);
        for (int tier = 1; tier < tiers; ++tier) {
          // Weight assignments whose type-v siblings tie with I: peel one
          // tied sibling per tier.
          if (!componentwise_leq(I, left)) break;
          left = subtract(left, I);
          scale *= alpha_i;
          s += scale * e.sib[tier][rj - tier * r];
        }
        if (s == 0.0) return;
        const double b = table.beta[static_cast<size_t>(r + rj) * m + e.parent];
        if (b == 0.0) return;
        acc += s * b;
      });
      table.beta[static_cast<size_t>(r) * m + e.child] += e.probability * acc;
    }
  }
  return table;
}

// Posterior expected occurrence and application counts for one observation.
//
//   E c(T_v)        = (1/P) * sum_I alpha(I, v) * beta(I, v)
//   E c(v -> {u})   = (1/P) * beta(e_u, v) * p
//   E c(v -> mu)    = (1/P) * p * sum_I beta(I, v) * S(I, mu)   (branching)
//
// with P the observation's likelihood.  Zero-probability productions have
// expectation exactly 0.
inline ExpectedCounts expected_counts(const OffspringModel& model, const InnerTable& inner,
                                      const OuterTable& outer) {
  if (outer.mode != inner.mode)
    fail(ErrorKind::validation, "inner and outer tables use different counting modes");
  const TypeTable& types = model.types;
  const int m = types.num_nonterminals;
  const Lattice& L = *inner.lattice;
  const double P = inner.likelihood;
  if (P == 0.0)
    fail(ErrorKind::data, "observation " + detail::describe(types, inner.observation) +
                              " is underivable under the model");

  ExpectedCounts out;
  out.likelihood = P;
  out.type_expectations.assign(m, 0.0);
  for (int r = 0; r < L.size(); ++r)
    for (int v = 0; v < m; ++v)
      out.type_expectations[v] += inner.alpha[static_cast<size_t>(r) * m + v] *
                                  outer.beta[static_cast<size_t>(r) * m + v];
  for (double& e : out.type_expectations) e /= P;

  out.production_expectations.assign(model.productions.size(), 0.0);
  for (size_t i = 0; i < model.productions.size(); ++i) {
    const Production& p = model.productions[i];
    if (p.probability == 0.0) continue;
    if (p.is_emission()) {
      const int u = p.emission_child();
      if (L.bound()[u] < 1) continue;
      const int r = L.rank(unit_vector(types.num_types(), u));
      out.production_expectations[i] =
          outer.beta[static_cast<size_t>(r) * m + p.parent] * p.probability / P;
    } else {
      const int block = inner.split_offset[i];
      double acc = 0.0;
      for (int r = 0; r < L.size(); ++r) {
        const double s = inner.split_sums[block + r];
        if (s != 0.0) acc += outer.beta[static_cast<size_t>(r) * m + p.parent] * s;
      }
      out.production_expectations[i] = acc * p.probability / P;
    }
  }
  return out;
}

// Convenience: both passes plus the count extraction.
inline ExpectedCounts compute_expected_counts(const OffspringModel& model,
                                              const Observation& obs,
                                              CountingMode mode = CountingMode::multiset) {
  InnerTable inner = inner_probabilities(model, obs, mode);
  OuterTable outer = outer_probabilities(model, inner);
  return expected_counts(model, inner, outer);
}

// Sums per-observation expectations; total_log_likelihood is the sum of
// log-likelihoods.  Entries must all come from the same model.
inline AggregatedCounts aggregate_counts(const std::vector<ExpectedCounts>& counts) {
  if (counts.empty())
    fail(ErrorKind::validation, "no expected counts to aggregate");
  AggregatedCounts agg;
  agg.observations = static_cast<int>(counts.size());
  agg.type_expectations.assign(counts[0].type_expectations.size(), 0.0);
  agg.production_expectations.assign(counts[0].production_expectations.size(), 0.0);
  for (const ExpectedCounts& c : counts) {
    if (c.type_expectations.size() != agg.type_expectations.size() ||
        c.production_expectations.size() != agg.production_expectations.size())
      fail(ErrorKind::validation, "expected counts from mismatched models");
    agg.total_log_likelihood += std::log(c.likelihood);
    for (size_t v = 0; v < agg.type_expectations.size(); ++v)
      agg.type_expectations[v] += c.type_expectations[v];
    for (size_t i = 0; i < agg.production_expectations.size(); ++i)
      agg.production_expectations[i] += c.production_expectations[i];
  }
  return agg;
}

// TSV dump of both tables: kind, type, vector, value -- every lattice entry,
// in the ascending sweep order.  Deterministic bytes.
inline std::string dump_tables(const OffspringModel& model, const InnerTable& inner,
                               const OuterTable* outer) {
  const TypeTable& types = model.types;
  const int m = types.num_nonterminals;
  const Lattice& L = *inner.lattice;
  std::string out = "kind\ttype\tvector\tvalue\n";
  auto section = [&](const char* kind, const std::vector<double>& table) {
    for (int r : L.ascending())
      for (int v = 0; v < m; ++v)
        out += std::string(kind) + "\t" + types.name(v) + "\t" +
               format_counts(L.at(r)) + "\t" +
               format_probability(table[static_cast<size_t>(r) * m + v]) + "\n";
  };
  section("alpha", inner.alpha);
  if (outer) section("beta", outer->beta);
  return out;
}

}  // namespace mtbp
