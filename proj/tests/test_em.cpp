#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "mtbp/em.hpp"
#include "mtbp/example_model.hpp"
#include "mtbp/model_io.hpp"
#include "mtbp/simulate.hpp"
#include "mtbp/study.hpp"

using namespace mtbp;

namespace {

std::vector<double> probabilities(const OffspringModel& m) {
  std::vector<double> p;
  for (const Production& prod : m.productions) p.push_back(prod.probability);
  return p;
}

}  // namespace

TEST_CASE("one update step reproduces the fixture's closed-form result") {
  OffspringModel model = example_model();
  EMStepResult step = em_step(model, {example_observation()});
  CHECK(step.log_likelihood == Catch::Approx(std::log(1.0 / 256)).epsilon(1e-14));
  // Canonical production order: T1's four productions, then T2 -> T2t,
  // T2 -> T2, T2 -> T2 T2.
  const std::vector<double> expected = {0.25, 0.25, 0.25, 0.25, 1.0, 0.0, 0.0};
  const std::vector<double> got = probabilities(step.model);
  REQUIRE(got.size() == expected.size());
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == Catch::Approx(expected[i]).margin(1e-12));
}

TEST_CASE("a fixed point of the update stays put bit for bit") {
  OffspringModel model = example_model();
  const std::vector<Observation> obs = {example_observation()};
  OffspringModel once = em_step(model, obs).model;
  OffspringModel twice = em_step(once, obs).model;
  CHECK(probabilities(twice) == probabilities(once));

  EMResult refit = fit(once, obs);
  CHECK(refit.converged);
  CHECK(refit.iterations == 1);
  CHECK(probabilities(refit.model) == probabilities(once));
}

TEST_CASE("the fixture fit converges on the second iteration") {
  EMConfig cfg;
  EMResult r = fit(example_model(), {example_observation()}, cfg);
  CHECK(r.converged);
  CHECK(r.iterations == 2);
  REQUIRE(r.trace.size() == 2);
  CHECK(r.trace[0].iteration == 1);
  CHECK(r.trace[1].iteration == 2);
  CHECK(r.trace[0].log_likelihood == Catch::Approx(std::log(1.0 / 256)).epsilon(1e-14));
  CHECK(r.trace[1].log_likelihood == Catch::Approx(std::log(3.0 / 256)).epsilon(1e-14));
  CHECK(r.final_log_likelihood == Catch::Approx(std::log(3.0 / 256)).epsilon(1e-14));
  // The first update lands on the fixed point, so both snapshots and the
  // final model carry identical probabilities.
  CHECK(r.trace[0].probabilities == r.trace[1].probabilities);
  CHECK(r.trace[1].probabilities == probabilities(r.model));
  CHECK(r.skipped_observations.empty());
}

TEST_CASE("stopping after one iteration is exactly one update step") {
  OffspringModel model = example_model();
  const std::vector<Observation> obs = {example_observation()};
  EMConfig cfg;
  cfg.max_iter = 1;
  EMResult r = fit(model, obs, cfg);
  CHECK_FALSE(r.converged);  // the first update moves parameters by 2/3
  CHECK(r.iterations == 1);
  CHECK(probabilities(r.model) == probabilities(em_step(model, obs).model));
}

TEST_CASE("duplicating every observation changes nothing but the total") {
  OffspringModel model = example_model();
  const Observation obs = example_observation();
  EMResult single = fit(model, {obs});
  EMResult doubled = fit(model, {obs, obs});
  // Every aggregated count doubles, so every update ratio -- and with it the
  // whole optimization path -- is bitwise identical.
  CHECK(probabilities(doubled.model) == probabilities(single.model));
  CHECK(doubled.converged == single.converged);
  CHECK(doubled.iterations == single.iterations);
  CHECK(doubled.final_log_likelihood == 2 * single.final_log_likelihood);

  // The same invariance holds (to rounding) for a heterogeneous batch.
  OffspringModel truth = study_truth_model();
  SimConfig sim;
  sim.root = 0;
  sim.max_depth = 25;
  sim.size_bounds = std::pair<int, int>{3, 12};
  sim.seed = 17;
  sim.count = 6;
  std::vector<Observation> batch = simulate_sample(truth, sim).observations;
  std::vector<Observation> twice = batch;
  twice.insert(twice.end(), batch.begin(), batch.end());
  EMConfig fixed;  // a fixed iteration budget keeps both paths comparable
  fixed.max_iter = 40;
  fixed.tol_loglik = 0.0;
  fixed.tol_param = 0.0;
  EMResult a = fit(uniform_init(truth), batch, fixed);
  EMResult b = fit(uniform_init(truth), twice, fixed);
  CHECK(a.iterations == 40);
  CHECK(b.iterations == 40);
  const std::vector<double> pa = probabilities(a.model), pb = probabilities(b.model);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i] == Catch::Approx(pb[i]).margin(1e-9));
}

TEST_CASE("zero probabilities are absorbing") {
  OffspringModel model = example_model();
  const std::vector<Observation> obs = {example_observation()};
  OffspringModel updated = em_step(model, obs).model;
  const int dead = find_production(updated, 1, {0, 2, 0, 0});  // T2 -> T2 T2
  REQUIRE(dead >= 0);
  REQUIRE(updated.productions[dead].probability == 0.0);
  OffspringModel again = em_step(updated, obs).model;
  CHECK(again.productions[dead].probability == 0.0);
  EMResult r = fit(updated, obs);
  CHECK(r.model.productions[dead].probability == 0.0);
}

TEST_CASE("an unobservable nonterminal keeps its distribution, with a warning") {
  OffspringModel model = example_model();
  // Two surviving T1 particles: T2 cannot appear anywhere in a derivation,
  // so its expected counts are all zero.
  const std::vector<Observation> obs = {{0, {2, 0, 0, 0}}};
  EMStepResult step = em_step(model, obs);
  REQUIRE_FALSE(step.warnings.empty());
  CHECK(step.warnings[0].find("'T2'") != std::string::npos);
  CHECK(step.warnings[0].find("keeping its current distribution") != std::string::npos);
  for (int i = 4; i < 7; ++i)  // T2's span in canonical order
    CHECK(step.model.productions[i].probability == model.productions[i].probability);

  EMResult r = fit(model, obs);
  CHECK(r.converged);
  REQUIRE_FALSE(r.warnings.empty());
  for (int i = 4; i < 7; ++i)
    CHECK(r.model.productions[i].probability == model.productions[i].probability);
}

TEST_CASE("underivable observations abort by default and can be skipped") {
  OffspringModel model = example_model();
  const Observation good = example_observation();
  const Observation impossible{0, {0, 0, 0, 2}};

  try {
    fit(model, {good, impossible});
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("observation 1") != std::string::npos);
    CHECK(std::string(e.what()).find("underivable under the initial model") !=
          std::string::npos);
  }

  EMConfig skip;
  skip.on_impossible = OnImpossible::skip;
  EMResult r = fit(model, {good, impossible}, skip);
  CHECK(r.skipped_observations == std::vector<int>{1});
  REQUIRE_FALSE(r.warnings.empty());
  CHECK(r.warnings[0].find("skipped") != std::string::npos);

  EMResult alone = fit(model, {good});
  CHECK(probabilities(r.model) == probabilities(alone.model));
  CHECK(r.final_log_likelihood == alone.final_log_likelihood);
  CHECK(r.iterations == alone.iterations);

  try {
    fit(model, {impossible}, skip);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("every observation") != std::string::npos);
  }
}

TEST_CASE("fit validates its configuration") {
  OffspringModel model = example_model();
  const std::vector<Observation> obs = {example_observation()};
  CHECK_THROWS_AS(fit(model, {}), Error);
  EMConfig bad_iter;
  bad_iter.max_iter = 0;
  CHECK_THROWS_AS(fit(model, obs, bad_iter), Error);
  EMConfig bad_tol;
  bad_tol.tol_param = -1.0;
  CHECK_THROWS_AS(fit(model, obs, bad_tol), Error);
}

TEST_CASE("the study fits the survival-extended structure") {
  const OffspringModel structure = study_estimation_structure();
  REQUIRE(structure.num_productions() == 7);
  const char* labels[7] = {"T1->T1t", "T1->T1",   "T1->T1+T2", "T1->T1+T1",
                           "T2->T2t", "T2->T2",   "T2->T2+T2"};
  const double truth_probs[7] = {1.0 / 3, 0.0, 1.0 / 3, 1.0 / 3, 0.5, 0.0, 0.5};
  for (int i = 0; i < 7; ++i) {
    CHECK(production_label(structure.types, structure.productions[i]) == labels[i]);
    CHECK(structure.productions[i].probability == truth_probs[i]);
  }

  // The uniform start spreads each parent's mass over all of its
  // productions, survival included: four at 1/4, three at 1/3.
  const OffspringModel init = uniform_init(structure);
  for (int i = 0; i < 4; ++i) CHECK(init.productions[i].probability == 0.25);
  for (int i = 4; i < 7; ++i) CHECK(init.productions[i].probability == 1.0 / 3);
}

TEST_CASE("study reports are per-parent renormalized and deterministic") {
  StudyConfig cfg;
  cfg.samples = 2;
  cfg.sample_size = 20;
  StudyResult result = run_study(cfg);

  CHECK(result.observe_alive_depth == 3);
  CHECK(result.leaf_bounds == std::pair<int, int>{1, 12});
  REQUIRE(result.samples.size() == 2);
  REQUIRE(result.mean.size() == 5);
  REQUIRE(result.stdev.size() == 5);
  for (const StudySample& s : result.samples) {
    REQUIRE(s.probabilities.size() == 5);
    for (double p : s.probabilities) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
    // Renormalization: the reported values are each parent's fitted
    // probabilities conditioned on drawing one of the truth's productions.
    CHECK(s.probabilities[0] + s.probabilities[1] + s.probabilities[2] ==
          Catch::Approx(1.0).margin(1e-12));
    CHECK(s.probabilities[3] + s.probabilities[4] ==
          Catch::Approx(1.0).margin(1e-12));
  }

  StudyResult again = run_study(cfg);
  for (size_t s = 0; s < result.samples.size(); ++s)
    CHECK(again.samples[s].probabilities == result.samples[s].probabilities);

  // Only the harness geometry of the large-tree band is checked here; a
  // full large-tree run is exercised by the acceptance gate.
  const StudyGeometry large = study_geometry(true);
  CHECK(large.leaf_bounds == std::pair<int, int>{8, 20});
  CHECK(large.observe_alive_depth == 7);
  CHECK(large.observe_alive_depth < large.max_depth);
}
