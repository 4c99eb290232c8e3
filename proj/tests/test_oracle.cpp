#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "mtbp/example_model.hpp"
#include "mtbp/model_io.hpp"
#include "mtbp/oracle.hpp"
#include "mtbp/simulate.hpp"

using namespace mtbp;

namespace {

void compare_counts(const ExpectedCounts& dp, const ExpectedCounts& oracle, double tol) {
  CHECK(std::abs(dp.likelihood - oracle.likelihood) <= tol);
  REQUIRE(dp.type_expectations.size() == oracle.type_expectations.size());
  for (size_t v = 0; v < dp.type_expectations.size(); ++v)
    CHECK(std::abs(dp.type_expectations[v] - oracle.type_expectations[v]) <= tol);
  REQUIRE(dp.production_expectations.size() == oracle.production_expectations.size());
  for (size_t i = 0; i < dp.production_expectations.size(); ++i)
    CHECK(std::abs(dp.production_expectations[i] - oracle.production_expectations[i]) <= tol);
}

}  // namespace

TEST_CASE("the fixture observation has exactly three derivations") {
  OffspringModel model = example_model();
  std::vector<WeightedTree> trees = enumerate_trees(model, example_observation());
  REQUIRE(trees.size() == 3);
  const std::vector<std::string> expected = {
      "T1(T1(T1(T1) T1(T1t)) T2(T2t))",
      "T1(T1(T1(T1) T2(T2t)) T1(T1t))",
      "T1(T1(T1(T1t) T2(T2t)) T1(T1))",
  };
  for (size_t i = 0; i < trees.size(); ++i) {
    CHECK(serialize_tree(trees[i].tree, model.types) == expected[i]);
    CHECK(trees[i].probability == 1.0 / 768);
    CHECK(trees[i].multiplicity == 2);
    CHECK(yield_vector(trees[i].tree, model.types) == example_observation().x);
  }
}

TEST_CASE("total enumeration weight matches both counting modes") {
  OffspringModel model = example_model();
  const Observation obs = example_observation();
  ExpectedCounts multi = oracle_expected_counts(model, obs, CountingMode::multiset);
  ExpectedCounts ord = oracle_expected_counts(model, obs, CountingMode::ordered);
  CHECK(multi.likelihood == Catch::Approx(1.0 / 256).epsilon(1e-14));
  CHECK(ord.likelihood == Catch::Approx(1.0 / 128).epsilon(1e-14));

  compare_counts(compute_expected_counts(model, obs, CountingMode::multiset), multi, 1e-12);
  compare_counts(compute_expected_counts(model, obs, CountingMode::ordered), ord, 1e-12);
}

TEST_CASE("single-particle observations enumerate the emissions") {
  OffspringModel model = example_model();
  std::vector<WeightedTree> emit = enumerate_trees(model, {0, {0, 0, 1, 0}});
  REQUIRE(emit.size() == 1);
  CHECK(serialize_tree(emit[0].tree, model.types) == "T1(T1t)");
  CHECK(emit[0].probability == 0.25);
  CHECK(emit[0].multiplicity == 1);

  std::vector<WeightedTree> survive = enumerate_trees(model, {0, {1, 0, 0, 0}});
  REQUIRE(survive.size() == 1);
  CHECK(serialize_tree(survive[0].tree, model.types) == "T1(T1)");

  // T1 has no production emitting T2t.
  CHECK(enumerate_trees(model, {0, {0, 0, 0, 1}}).empty());
}

TEST_CASE("underivable observations enumerate to nothing") {
  OffspringModel model = example_model();
  CHECK(enumerate_trees(model, {0, {0, 0, 0, 2}}).empty());
  try {
    oracle_expected_counts(model, {0, {0, 0, 0, 2}}, CountingMode::multiset);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("the leaf guard bounds the enumeration") {
  OffspringModel model = example_model();
  const Observation nine{0, {0, 0, 9, 0}};
  try {
    enumerate_trees(model, nine);  // default guard is 8
    FAIL("expected a guard error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::guard);
    CHECK(std::string(e.what()).find("9 > 8") != std::string::npos);
  }
  CHECK_NOTHROW(enumerate_trees(model, nine, 9));
}

TEST_CASE("nine equal leaves reproduce the classic tree counts") {
  // Under T1's binary split every derivation of nine T1t leaves is a binary
  // tree with 8 internal nodes and 9 emissions, each with probability
  // 0.25^17.  There are 46 distinct unordered such trees and 1430 ordered
  // ones, so both mode likelihoods are pinned in closed form.
  OffspringModel model = example_model();
  const Observation nine{0, {0, 0, 9, 0}};
  std::vector<WeightedTree> trees = enumerate_trees(model, nine, 9);
  REQUIRE(trees.size() == 46);
  const double each = std::pow(0.25, 17);
  long long ordered_total = 0;
  for (const WeightedTree& wt : trees) {
    CHECK(wt.probability == Catch::Approx(each).epsilon(1e-13));
    ordered_total += wt.multiplicity;
  }
  CHECK(ordered_total == 1430);

  ExpectedCounts multi = oracle_expected_counts(model, nine, CountingMode::multiset, 9);
  CHECK(multi.likelihood == Catch::Approx(46 * each).epsilon(1e-12));
  CHECK(multi.type_expectations[0] == Catch::Approx(17.0).epsilon(1e-12));
  CHECK(multi.type_expectations[1] == Catch::Approx(0.0).margin(1e-15));

  ExpectedCounts ord = oracle_expected_counts(model, nine, CountingMode::ordered, 9);
  CHECK(ord.likelihood == Catch::Approx(1430 * each).epsilon(1e-12));

  // The ordered dynamic program matches its closed form exactly.
  InnerTable ord_dp = inner_probabilities(model, nine, CountingMode::ordered);
  CHECK(ord_dp.likelihood == Catch::Approx(1430 * each).epsilon(1e-12));

  // The multiset dynamic program orders equal-type children by yield vector
  // alone, so two *distinct* subtrees sharing a yield count in both orders.
  // Its tree count obeys C(1)=C(2)=1, C(n) = sum_{a<b,a+b=n} C(a)C(b)
  // + C(n/2)^2 for even n, giving C(9) = 47: one more than the 46 distinct
  // unordered trees (the lone coincidence is an 8-leaf node split 4+4 into
  // the two different 4-leaf shapes).  The enumeration lists each unordered
  // tree once, so the two multiset totals legitimately differ here; they
  // coincide whenever equal-yield sibling subtrees are themselves equal, as
  // in the worked example.
  InnerTable multi_dp = inner_probabilities(model, nine, CountingMode::multiset);
  CHECK(multi_dp.likelihood == Catch::Approx(47 * each).epsilon(1e-12));
}

TEST_CASE("enumerated trees are distinct and sorted by serialization") {
  OffspringModel model = example_model();
  std::vector<WeightedTree> trees = enumerate_trees(model, {0, {2, 0, 2, 1}}, 8);
  REQUIRE(trees.size() > 1);
  std::string prev;
  for (const WeightedTree& wt : trees) {
    const std::string s = serialize_tree(wt.tree, model.types);
    CHECK(prev < s);  // strictly increasing: sorted and duplicate free
    prev = s;
    CHECK(yield_vector(wt.tree, model.types) == CountVector{2, 0, 2, 1});
  }
}

TEST_CASE("ordered expectations match the enumeration on randomized models") {
  // A structure with equal-typed splits, so the two modes genuinely differ.
  OffspringModel structure = parse_model(
      "nonterminals: A B\n"
      "terminals: a b\n"
      "A -> A A : 0.2\n"
      "A -> A B : 0.2\n"
      "A -> B B : 0.2\n"
      "A -> a : 0.2\n"
      "A -> A : 0.2\n"
      "B -> B B : 0.25\n"
      "B -> A : 0.25\n"
      "B -> b : 0.25\n"
      "B -> B : 0.25\n");
  int compared = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    OffspringModel model = random_init(structure, seed);
    SimConfig sim;
    sim.root = 0;
    sim.max_depth = 6;
    sim.size_bounds = std::pair<int, int>{1, 6};
    sim.seed = seed * 101;
    sim.count = 3;
    Sample sample = simulate_sample(model, sim);
    for (const Observation& obs : sample.observations) {
      ExpectedCounts dp = compute_expected_counts(model, obs, CountingMode::ordered);
      ExpectedCounts oracle = oracle_expected_counts(model, obs, CountingMode::ordered);
      compare_counts(dp, oracle, 1e-10);
      ++compared;
    }
  }
  CHECK(compared == 30);
}
