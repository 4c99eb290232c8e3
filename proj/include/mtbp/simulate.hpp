#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtbp/model_io.hpp"
#include "mtbp/tree.hpp"
#include "mtbp/types.hpp"

namespace mtbp {

struct SimConfig {
  int root = 0;
  int max_depth = 30;  // root has depth 1; a node at max_depth must emit
  std::optional<std::pair<int, int>> size_bounds;  // accepted leaf-count range
  std::uint64_t seed = 0;
  int count = 0;  // accepted trees wanted
  // 0: off — growth runs to completion under the depth cap.  >= 1: the
  // process is observed mid-flight at this depth; a nonterminal reaching it
  // draws nothing and is recorded alive through its survival production
  // (v -> v, which must exist in the model).  Binds before max_depth.
  int observe_alive_depth = 0;
};

struct Sample {
  std::vector<DerivationTree> trees;
  std::vector<Observation> observations;
};

inline std::uint64_t split_mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Every draw gets its own generator stream, so discarding one draw never
// shifts the randomness of the next: the accepted sample is a deterministic
// function of (model, config) alone.
inline std::uint64_t draw_seed(std::uint64_t seed, std::uint64_t draw) {
  return split_mix64(seed + 0x9E3779B97F4A7C15ull * (draw + 1));
}

inline void validate_sim_config(const OffspringModel& model, const SimConfig& cfg) {
  const TypeTable& types = model.types;
  if (cfg.root < 0 || cfg.root >= types.num_nonterminals)
    fail(ErrorKind::validation, "simulation root must be a nonterminal");
  if (cfg.max_depth < 1)
    fail(ErrorKind::validation, "max_depth must be at least 1");
  if (cfg.count < 0)
    fail(ErrorKind::validation, "count must be nonnegative");
  if (cfg.size_bounds) {
    auto [lo, hi] = *cfg.size_bounds;
    if (lo < 1 || hi < lo)
      fail(ErrorKind::validation, "leaf bounds must satisfy 1 <= min <= max");
  }
  if (cfg.observe_alive_depth < 0)
    fail(ErrorKind::validation, "observe_alive_depth must be 0 (off) or at least 1");
  if (cfg.observe_alive_depth >= 1) {
    // A particle observed alive becomes a leaf through its survival
    // production, so every nonterminal must have one.
    for (int v = 0; v < types.num_nonterminals; ++v) {
      CountVector self(types.num_types(), 0);
      self[v] = 1;
      if (find_production(model, v, self) < 0)
        fail(ErrorKind::validation,
             "observing alive particles requires the survival production '" +
                 types.name(v) + " -> " + types.name(v) + "'");
    }
  }
  // The depth cap forces emissions, so every nonterminal needs somewhere to
  // go when it hits the cap.  Checked up front, not at the first deep tree.
  for (int v = 0; v < types.num_nonterminals; ++v) {
    auto [b, e] = model.parent_spans[v];
    double emission_mass = 0.0;
    for (int i = b; i < e; ++i)
      if (model.productions[i].is_emission())
        emission_mass += model.productions[i].probability;
    if (emission_mass <= 0.0)
      fail(ErrorKind::validation,
           "nonterminal '" + types.name(v) +
               "' has no positive-probability emission; the depth cap cannot be enforced");
  }
}

namespace detail {

struct DrawAborted {};  // internal: the draw exceeded the leaf cap mid-growth

struct TreeGenerator {
  const OffspringModel& model;
  int max_depth;
  std::mt19937_64 rng;
  long long leaf_cap;     // < 0: none
  int alive_depth = 0;    // 0: off; see SimConfig::observe_alive_depth
  long long leaves = 0;

  // Chooses among the parent's productions in canonical order; at the depth
  // cap only emissions are candidates, renormalized among themselves.
  const Production& choose(int v, bool emissions_only) {
    auto [b, e] = model.parent_spans[v];
    double mass = 0.0;
    for (int i = b; i < e; ++i) {
      const Production& p = model.productions[i];
      if (emissions_only && !p.is_emission()) continue;
      mass += p.probability;
    }
    const double u = uniform01(rng) * mass;
    double cum = 0.0;
    const Production* last = nullptr;
    for (int i = b; i < e; ++i) {
      const Production& p = model.productions[i];
      if (emissions_only && !p.is_emission()) continue;
      if (p.probability == 0.0) continue;
      cum += p.probability;
      last = &p;
      if (u < cum) return p;
    }
    return *last;  // float round-off fell past the end; mass > 0 is validated
  }

  void note_leaf() {
    ++leaves;
    if (leaf_cap >= 0 && leaves > leaf_cap) throw DrawAborted{};
  }

  DerivationTree generate(int v, int depth) {
    if (alive_depth >= 1 && depth >= alive_depth) {
      // Observed alive: the survival production turns the particle into a
      // leaf of its own type.  No randomness is consumed.
      note_leaf();
      DerivationTree node;
      node.type = v;
      node.children.push_back(DerivationTree{v, {}});
      return node;
    }
    const Production& p = choose(v, depth >= max_depth);
    DerivationTree node;
    node.type = v;
    for (size_t u = 0; u < p.offspring.size(); ++u)
      for (int k = 0; k < p.offspring[u]; ++k) {
        const int child = static_cast<int>(u);
        if (p.is_emission() || model.types.is_terminal(child)) {
          note_leaf();
          node.children.push_back(DerivationTree{child, {}});
        } else {
          node.children.push_back(generate(child, depth + 1));
        }
      }
    return node;
  }
};

}  // namespace detail

// The full tree of one draw (no leaf cap), in canonical child order.
inline DerivationTree simulate_tree(const OffspringModel& model, const SimConfig& cfg,
                                    std::uint64_t draw_index) {
  validate_sim_config(model, cfg);
  detail::TreeGenerator gen{model, cfg.max_depth,
                            std::mt19937_64(draw_seed(cfg.seed, draw_index)), -1,
                            cfg.observe_alive_depth};
  DerivationTree t = gen.generate(cfg.root, 1);
  normalize_tree(t, model.types);
  return t;
}

inline constexpr long long kRejectionLimit = 1000000;

// Draws trees until `count` are accepted.  With size_bounds, draws whose
// leaf count falls outside [min, max] are discarded (growth stops early once
// a draw passes max); more than kRejectionLimit consecutive discards is
// treated as infeasible bounds.
inline Sample simulate_sample(const OffspringModel& model, const SimConfig& cfg) {
  validate_sim_config(model, cfg);
  Sample sample;
  long long consecutive_discards = 0;
  std::uint64_t draw = 0;
  while (static_cast<int>(sample.trees.size()) < cfg.count) {
    detail::TreeGenerator gen{model, cfg.max_depth,
                              std::mt19937_64(draw_seed(cfg.seed, draw)),
                              cfg.size_bounds ? cfg.size_bounds->second : -1,
                              cfg.observe_alive_depth};
    ++draw;
    DerivationTree t;
    bool accepted = true;
    try {
      t = gen.generate(cfg.root, 1);
      if (cfg.size_bounds && gen.leaves < cfg.size_bounds->first) accepted = false;
    } catch (const detail::DrawAborted&) {
      accepted = false;
    }
    if (!accepted) {
      if (++consecutive_discards > kRejectionLimit)
        fail(ErrorKind::guard,
             "rejection sampling stalled: " + std::to_string(kRejectionLimit) +
                 " consecutive draws fell outside the leaf bounds [" +
                 std::to_string(cfg.size_bounds->first) + "," +
                 std::to_string(cfg.size_bounds->second) + "]");
      continue;
    }
    consecutive_discards = 0;
    normalize_tree(t, model.types);
    sample.observations.push_back({cfg.root, yield_vector(t, model.types)});
    sample.trees.push_back(std::move(t));
  }
  return sample;
}

// Observations CSV: header "root,<type names...>", one row per observation.
inline std::string write_observations_csv(const TypeTable& types,
                                          const std::vector<Observation>& observations) {
  std::string out = "root";
  for (const std::string& n : types.names) out += "," + n;
  out += "\n";
  for (const Observation& o : observations) {
    out += types.name(o.root);
    for (int c : o.x) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t pos = 0;
  for (;;) {
    size_t c = line.find(',', pos);
    if (c == std::string_view::npos) { fields.push_back(line.substr(pos)); break; }
    fields.push_back(line.substr(pos, c - pos));
    pos = c + 1;
  }
  return fields;
}

}  // namespace detail

inline std::vector<Observation> parse_observations_csv(std::string_view text,
                                                       const TypeTable& types) {
  std::vector<Observation> out;
  int line_no = 0;
  size_t pos = 0;
  bool saw_header = false;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto where = [&] { return "observations:" + std::to_string(line_no) + ": "; };
    std::vector<std::string_view> fields = detail::split_fields(line);
    if (!saw_header) {
      if (fields.empty() || fields[0] != "root" ||
          static_cast<int>(fields.size()) != types.num_types() + 1)
        fail(ErrorKind::validation, where() + "header must be 'root,<all type names>'");
      for (int u = 0; u < types.num_types(); ++u)
        if (fields[u + 1] != types.name(u))
          fail(ErrorKind::validation,
               where() + "header column " + std::to_string(u + 2) + " is '" +
                   std::string(fields[u + 1]) + "', expected '" + types.name(u) + "'");
      saw_header = true;
      continue;
    }
    if (static_cast<int>(fields.size()) != types.num_types() + 1)
      fail(ErrorKind::validation, where() + "expected " +
                                      std::to_string(types.num_types() + 1) + " fields");
    Observation o;
    o.root = types.index_of(std::string(fields[0]));
    if (o.root < 0 || types.is_terminal(o.root))
      fail(ErrorKind::validation,
           where() + "root '" + std::string(fields[0]) + "' is not a nonterminal");
    o.x.assign(types.num_types(), 0);
    for (int u = 0; u < types.num_types(); ++u) {
      const std::string_view f = fields[u + 1];
      int value = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
      if (ec != std::errc() || p != f.data() + f.size() || value < 0)
        fail(ErrorKind::validation,
             where() + "bad count '" + std::string(f) + "' for type " + types.name(u));
      o.x[u] = value;
    }
    if (total_count(o.x) < 1)
      fail(ErrorKind::validation, where() + "observation total must be at least 1");
    out.push_back(std::move(o));
  }
  if (!saw_header)
    fail(ErrorKind::validation, "observations: empty file");
  return out;
}

}  // namespace mtbp
