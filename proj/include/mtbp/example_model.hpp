#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtbp/em.hpp"
#include "mtbp/inside_outside.hpp"
#include "mtbp/types.hpp"

namespace mtbp {

// The built-in two-type demonstration: T1 can split into {T1,T1} or {T1,T2},
// survive one last time, or emit a terminal T1t; T2 can split into {T2,T2},
// survive, or emit T2t.  Probabilities are uniform per parent.  Together
// with the observation x = (1,0,1,1) rooted at T1 this exercises every code
// path of the inner/outer/count/update pipeline on a lattice small enough to
// verify by hand.
inline OffspringModel example_model() {
  TypeTable types = make_type_table({"T1", "T2"}, {"T1t", "T2t"});
  auto prod = [&](const char* parent, std::vector<const char*> children, double p) {
    Production out;
    out.parent = types.index_of(parent);
    out.offspring.assign(types.num_types(), 0);
    for (const char* c : children) ++out.offspring[types.index_of(c)];
    out.probability = p;
    return out;
  };
  return make_model(types, {
      prod("T1", {"T1", "T1"}, 0.25),
      prod("T1", {"T1", "T2"}, 0.25),
      prod("T1", {"T1"}, 0.25),
      prod("T1", {"T1t"}, 0.25),
      prod("T2", {"T2", "T2"}, 1.0 / 3),
      prod("T2", {"T2"}, 1.0 / 3),
      prod("T2", {"T2t"}, 1.0 / 3),
  });
}

inline Observation example_observation() { return Observation{0, {1, 0, 1, 1}}; }

struct ExampleCheck {
  std::string label;
  double expected = 0.0;
  double actual = 0.0;

  double difference() const { return std::abs(actual - expected); }
};

struct ExampleRun {
  OffspringModel model;
  Observation observation;
  InnerTable inner;
  OuterTable outer;
  ExpectedCounts counts;
  OffspringModel updated;   // after one EM update
  EMResult em;              // full fit from the uniform start
  std::vector<ExampleCheck> checks;  // empty in ordered mode
  double max_difference = 0.0;
};

// Runs the whole pipeline on the demonstration fixture and, in multiset
// mode, compares every computed quantity against its hand-derived value.
inline ExampleRun run_example(CountingMode mode = CountingMode::multiset) {
  ExampleRun run;
  run.model = example_model();
  run.observation = example_observation();
  run.inner = inner_probabilities(run.model, run.observation, mode);
  run.outer = outer_probabilities(run.model, run.inner);
  run.counts = expected_counts(run.model, run.inner, run.outer);

  EMStepResult step = em_step(run.model, {run.observation}, mode);
  run.updated = std::move(step.model);

  EMConfig cfg;
  cfg.mode = mode;
  run.em = fit(run.model, {run.observation}, cfg);

  if (mode != CountingMode::multiset) return run;

  const TypeTable& types = run.model.types;
  const Lattice& L = *run.inner.lattice;
  auto alpha_check = [&](CountVector I, const char* v, double expected) {
    run.checks.push_back({"alpha[" + format_counts(I) + "][" + v + "]", expected,
                          run.inner.alpha_at(I, types.index_of(v))});
  };
  auto beta_check = [&](CountVector I, const char* v, double expected) {
    run.checks.push_back({"beta[" + format_counts(I) + "][" + v + "]", expected,
                          run.outer.beta_at(L, I, types.index_of(v))});
  };
  auto count_check = [&](const char* label, double expected, double actual) {
    run.checks.push_back({label, expected, actual});
  };

  // Inner table, every derivable and several structurally-zero entries.
  alpha_check({1, 0, 0, 0}, "T1", 0.25);
  alpha_check({1, 0, 0, 0}, "T2", 0.0);
  alpha_check({0, 0, 1, 0}, "T1", 0.25);
  alpha_check({0, 0, 1, 0}, "T2", 0.0);
  alpha_check({0, 0, 0, 1}, "T1", 0.0);
  alpha_check({0, 0, 0, 1}, "T2", 1.0 / 3);
  alpha_check({1, 0, 1, 0}, "T1", 1.0 / 64);
  alpha_check({1, 0, 1, 0}, "T2", 0.0);
  alpha_check({1, 0, 0, 1}, "T1", 1.0 / 48);
  alpha_check({1, 0, 0, 1}, "T2", 0.0);
  alpha_check({0, 0, 1, 1}, "T1", 1.0 / 48);
  alpha_check({0, 0, 1, 1}, "T2", 0.0);
  alpha_check({1, 0, 1, 1}, "T1", 1.0 / 256);
  alpha_check({1, 0, 1, 1}, "T2", 0.0);
  count_check("likelihood", 1.0 / 256, run.inner.likelihood);

  // Outer table.
  beta_check({1, 0, 1, 1}, "T1", 1.0);
  beta_check({1, 0, 1, 1}, "T2", 0.0);
  beta_check({1, 0, 1, 0}, "T1", 1.0 / 12);
  beta_check({1, 0, 1, 0}, "T2", 0.0);
  beta_check({1, 0, 0, 1}, "T1", 1.0 / 16);
  beta_check({1, 0, 0, 1}, "T2", 1.0 / 16);
  beta_check({0, 0, 1, 1}, "T1", 1.0 / 16);
  beta_check({0, 0, 1, 1}, "T2", 1.0 / 16);
  beta_check({1, 0, 0, 0}, "T1", 1.0 / 64);
  beta_check({1, 0, 0, 0}, "T2", 5.0 / 288);
  beta_check({0, 0, 1, 0}, "T1", 1.0 / 64);
  beta_check({0, 0, 1, 0}, "T2", 5.0 / 288);
  beta_check({0, 0, 0, 1}, "T1", 3.0 / 256);
  beta_check({0, 0, 0, 1}, "T2", 3.0 / 256);

  // Expected counts.
  auto production_index = [&](const char* parent, std::vector<const char*> children) {
    CountVector offspring(types.num_types(), 0);
    for (const char* c : children) ++offspring[types.index_of(c)];
    return find_production(run.model, types.index_of(parent), offspring);
  };
  count_check("E[c(T1)]", 4.0, run.counts.type_expectations[0]);
  count_check("E[c(T2)]", 1.0, run.counts.type_expectations[1]);
  struct ProdExpect { const char* parent; std::vector<const char*> children; double e; double p; };
  const std::vector<ProdExpect> prods = {
      {"T1", {"T1", "T1"}, 1.0, 0.25}, {"T1", {"T1", "T2"}, 1.0, 0.25},
      {"T1", {"T1"}, 1.0, 0.25},       {"T1", {"T1t"}, 1.0, 0.25},
      {"T2", {"T2", "T2"}, 0.0, 0.0},  {"T2", {"T2"}, 0.0, 0.0},
      {"T2", {"T2t"}, 1.0, 1.0},
  };
  for (const ProdExpect& pe : prods) {
    const int i = production_index(pe.parent, pe.children);
    count_check(("E[c(" + production_label(types, run.model.productions[i]) + ")]").c_str(),
                pe.e, run.counts.production_expectations[i]);
    count_check(("updated p(" + production_label(types, run.model.productions[i]) + ")").c_str(),
                pe.p, run.updated.productions[i].probability);
  }

  // Fit behavior: the first update already lands on a fixed point, so the
  // second iteration sees zero change and zero likelihood gain.
  count_check("fit converged", 1.0, run.em.converged ? 1.0 : 0.0);
  count_check("fit iterations", 2.0, static_cast<double>(run.em.iterations));
  count_check("trace loglik 1", std::log(1.0 / 256), run.em.trace.at(0).log_likelihood);
  count_check("trace loglik 2", std::log(3.0 / 256), run.em.trace.at(1).log_likelihood);

  for (const ExampleCheck& c : run.checks)
    run.max_difference = std::max(run.max_difference, c.difference());
  return run;
}

inline constexpr double kExampleTolerance = 1e-12;

}  // namespace mtbp
