#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <string>

#include "mtbp/model_io.hpp"
#include "mtbp/simulate.hpp"
#include "mtbp/study.hpp"

using namespace mtbp;

namespace {

// Depth of the deepest internal node, with the root at depth 1.
int internal_depth(const DerivationTree& t, int depth = 1) {
  if (t.is_leaf()) return 0;
  int d = depth;
  for (const DerivationTree& c : t.children)
    d = std::max(d, internal_depth(c, depth + 1));
  return d;
}

// Two-sided chi-square thresholds at significance 1e-6; a correct sampler
// fails with probability ~1e-6 per seed, and the seeds below are fixed.
constexpr double kChiSquare1 = 23.9281;  // 1 degree of freedom
constexpr double kChiSquare2 = 27.6310;  // 2 degrees of freedom

}  // namespace

TEST_CASE("samples are a deterministic function of model and config") {
  OffspringModel truth = study_truth_model();
  SimConfig cfg;
  cfg.root = 0;
  cfg.max_depth = 25;
  cfg.size_bounds = std::pair<int, int>{3, 12};
  cfg.seed = 7;
  cfg.count = 10;

  Sample a = simulate_sample(truth, cfg);
  Sample b = simulate_sample(truth, cfg);
  REQUIRE(a.trees.size() == 10);
  CHECK(a.trees == b.trees);
  CHECK(write_observations_csv(truth.types, a.observations) ==
        write_observations_csv(truth.types, b.observations));

  cfg.seed = 8;
  Sample c = simulate_sample(truth, cfg);
  CHECK(a.trees != c.trees);
}

TEST_CASE("each draw has its own stream: rejection never shifts later draws") {
  OffspringModel truth = study_truth_model();
  SimConfig cfg;
  cfg.root = 0;
  cfg.max_depth = 25;
  cfg.size_bounds = std::pair<int, int>{3, 12};
  cfg.seed = 11;
  cfg.count = 8;
  Sample sample = simulate_sample(truth, cfg);

  // Replaying draw by draw without any leaf cap must reproduce exactly the
  // accepted trees, in order: early aborts only ever cut off draws that
  // would have been rejected anyway.
  SimConfig uncapped = cfg;
  uncapped.size_bounds.reset();
  size_t next = 0;
  for (std::uint64_t draw = 0; next < sample.trees.size(); ++draw) {
    REQUIRE(draw < 100000);  // the fixture accepts well before this
    DerivationTree t = simulate_tree(truth, uncapped, draw);
    const int leaves = total_count(yield_vector(t, truth.types));
    if (leaves < 3 || leaves > 12) continue;
    CHECK(t == sample.trees[next]);
    ++next;
  }
}

TEST_CASE("observations are the yields of the sampled trees") {
  OffspringModel truth = study_truth_model();
  SimConfig cfg;
  cfg.root = 0;
  cfg.max_depth = 20;
  cfg.size_bounds = std::pair<int, int>{3, 12};
  cfg.seed = 3;
  cfg.count = 25;
  Sample sample = simulate_sample(truth, cfg);
  REQUIRE(sample.observations.size() == sample.trees.size());
  for (size_t i = 0; i < sample.trees.size(); ++i) {
    CHECK(sample.observations[i].root == 0);
    CHECK(sample.observations[i].x == yield_vector(sample.trees[i], truth.types));
    const int leaves = total_count(sample.observations[i].x);
    CHECK(leaves >= 3);
    CHECK(leaves <= 12);
  }
}

TEST_CASE("the depth cap forces an emission at the capped level") {
  OffspringModel truth = study_truth_model();
  SimConfig cfg;
  cfg.root = 0;
  cfg.max_depth = 1;
  cfg.seed = 5;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    DerivationTree t = simulate_tree(truth, cfg, draw);
    // With the cap at the root, the only choice is the emission T1 -> T1t.
    CHECK(serialize_tree(t, truth.types) == "T1(T1t)");
  }

  cfg.max_depth = 4;
  for (std::uint64_t draw = 0; draw < 200; ++draw) {
    DerivationTree t = simulate_tree(truth, cfg, draw);
    CHECK(internal_depth(t) <= 4);
  }
}

TEST_CASE("a nonterminal may survive as a leaf at the depth cap") {
  OffspringModel model = parse_model(
      "nonterminals: A\n"
      "terminals:\n"
      "A -> A A : 0.5\n"
      "A -> A : 0.5\n");
  SimConfig cfg;
  cfg.max_depth = 3;
  cfg.seed = 9;
  std::set<std::string> seen;
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    DerivationTree t = simulate_tree(model, cfg, draw);
    CHECK(internal_depth(t) <= 3);
    CHECK(yield_vector(t, model.types)[0] >= 1);  // all leaves are surviving A's
    seen.insert(serialize_tree(t, model.types));
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("a snapshot run turns particles at the horizon into survivor leaves") {
  OffspringModel structure = study_estimation_structure();
  SimConfig cfg;
  cfg.root = 0;
  cfg.max_depth = 25;
  cfg.seed = 31;
  cfg.observe_alive_depth = 3;

  // Below the horizon only the truth's positive-probability productions are
  // drawn; survivor leaves appear exactly at the horizon.
  auto walk = [&](auto&& self, const DerivationTree& t, int depth) -> void {
    REQUIRE_FALSE(t.is_leaf());  // internal nodes only; leaves handled below
    const bool survivor = t.children.size() == 1 && t.children[0].is_leaf() &&
                          t.children[0].type == t.type;
    if (survivor) {
      CHECK(depth == 3);
      return;
    }
    CHECK(depth < 3);
    for (const DerivationTree& c : t.children)
      if (!c.is_leaf()) self(self, c, depth + 1);
  };
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    DerivationTree t = simulate_tree(structure, cfg, draw);
    if (!t.is_leaf()) walk(walk, t, 1);
    CHECK(t == simulate_tree(structure, cfg, draw));  // deterministic
  }

  // At horizon 1 the root itself is observed alive; no randomness is used.
  cfg.observe_alive_depth = 1;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    DerivationTree t = simulate_tree(structure, cfg, draw);
    CHECK(serialize_tree(t, structure.types) == "T1(T1)");
    CHECK(yield_vector(t, structure.types) == CountVector{1, 0, 0, 0});
  }

  // At horizon 2 the root draws once and its children are observed, so the
  // three possible trees appear with the root production's probabilities.
  cfg.observe_alive_depth = 2;
  cfg.seed = 33;
  int counts[3] = {0, 0, 0};  // emit, T1+T2, T1+T1
  for (std::uint64_t draw = 0; draw < 3000; ++draw) {
    const std::string s = serialize_tree(simulate_tree(structure, cfg, draw),
                                         structure.types);
    if (s == "T1(T1t)") ++counts[0];
    else if (s == "T1(T1(T1) T2(T2))") ++counts[1];
    else if (s == "T1(T1(T1) T1(T1))") ++counts[2];
    else FAIL("unexpected tree " + s);
  }
  double chi2 = 0;
  for (int k = 0; k < 3; ++k)
    chi2 += (counts[k] - 1000.0) * (counts[k] - 1000.0) / 1000.0;
  CHECK(chi2 < kChiSquare2);

  // Snapshots need a survival production per nonterminal; the truth model
  // has none, and negative horizons are rejected outright.
  auto expect_validation = [&](const OffspringModel& m, SimConfig c) {
    try {
      simulate_tree(m, c, 0);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::validation;
    }
    return false;
  };
  SimConfig no_survival;
  no_survival.observe_alive_depth = 4;
  CHECK(expect_validation(study_truth_model(), no_survival));
  SimConfig negative;
  negative.observe_alive_depth = -1;
  CHECK(expect_validation(structure, negative));
}

TEST_CASE("single-step frequencies match the model probabilities") {
  SimConfig cfg;
  cfg.max_depth = 1;
  cfg.seed = 20260816;
  cfg.count = 4000;

  SECTION("two outcomes") {
    OffspringModel model = parse_model(
        "nonterminals: A\nterminals: a b\nA -> a : 0.3\nA -> b : 0.7\n");
    cfg.count = 4000;
    Sample s = simulate_sample(model, cfg);
    double n_a = 0;
    for (const Observation& o : s.observations) n_a += o.x[1];
    const double n_b = 4000 - n_a;
    const double chi2 = (n_a - 1200) * (n_a - 1200) / 1200.0 +
                        (n_b - 2800) * (n_b - 2800) / 2800.0;
    CHECK(chi2 < kChiSquare1);
  }

  SECTION("three outcomes") {
    OffspringModel model = parse_model(
        "nonterminals: A\nterminals: a b c\n"
        "A -> a : 0.2\nA -> b : 0.3\nA -> c : 0.5\n");
    cfg.count = 5000;
    Sample s = simulate_sample(model, cfg);
    double n[3] = {0, 0, 0};
    for (const Observation& o : s.observations)
      for (int u = 0; u < 3; ++u) n[u] += o.x[1 + u];
    const double expected[3] = {1000, 1500, 2500};
    double chi2 = 0;
    for (int u = 0; u < 3; ++u)
      chi2 += (n[u] - expected[u]) * (n[u] - expected[u]) / expected[u];
    CHECK(chi2 < kChiSquare2);
  }

  SECTION("emissions renormalized at the cap") {
    // At the cap the branching is excluded, so A -> A and A -> a are drawn
    // at 50/50 from their renormalized masses.
    OffspringModel model = parse_model(
        "nonterminals: A\nterminals: a\n"
        "A -> A A : 0.5\nA -> A : 0.25\nA -> a : 0.25\n");
    cfg.count = 4000;
    Sample s = simulate_sample(model, cfg);
    double survivors = 0;
    for (const Observation& o : s.observations) survivors += o.x[0];
    const double chi2 = (survivors - 2000) * (survivors - 2000) / 2000.0 +
                        (2000 - survivors) * (2000 - survivors) / 2000.0;
    CHECK(chi2 < kChiSquare1);
  }
}

TEST_CASE("infeasible leaf bounds trip the rejection guard") {
  OffspringModel model = parse_model(
      "nonterminals: A\nterminals: a\nA -> a : 1\n");
  SimConfig cfg;
  cfg.max_depth = 1;
  cfg.size_bounds = std::pair<int, int>{2, 3};  // every tree has exactly one leaf
  cfg.count = 1;
  try {
    simulate_sample(model, cfg);
    FAIL("expected a guard error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::guard);
    CHECK(std::string(e.what()).find("rejection sampling stalled") != std::string::npos);
  }
}

TEST_CASE("simulation config validation") {
  OffspringModel truth = study_truth_model();
  auto expect_validation = [&](SimConfig cfg) {
    try {
      simulate_sample(truth, cfg);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::validation;
    }
    return false;
  };
  SimConfig bad_root;
  bad_root.root = 2;  // a terminal
  CHECK(expect_validation(bad_root));
  SimConfig bad_depth;
  bad_depth.max_depth = 0;
  CHECK(expect_validation(bad_depth));
  SimConfig bad_count;
  bad_count.count = -1;
  CHECK(expect_validation(bad_count));
  SimConfig bad_bounds;
  bad_bounds.size_bounds = std::pair<int, int>{5, 4};
  CHECK(expect_validation(bad_bounds));
  SimConfig zero_min;
  zero_min.size_bounds = std::pair<int, int>{0, 4};
  CHECK(expect_validation(zero_min));

  // A nonterminal with no emission can never satisfy the depth cap.
  OffspringModel no_emission = make_model(
      make_type_table({"A"}, {"a"}),
      {Production{0, {2, 0}, 0.5}, Production{0, {0, 2}, 0.5}});
  try {
    simulate_sample(no_emission, SimConfig{});
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::validation);
    CHECK(std::string(e.what()).find("no positive-probability emission") != std::string::npos);
  }
}

TEST_CASE("observations CSV round-trips and validates") {
  OffspringModel truth = study_truth_model();
  SimConfig cfg;
  cfg.root = 0;
  cfg.max_depth = 15;
  cfg.size_bounds = std::pair<int, int>{3, 12};
  cfg.seed = 2;
  cfg.count = 12;
  Sample sample = simulate_sample(truth, cfg);

  std::string csv = write_observations_csv(truth.types, sample.observations);
  CHECK(csv.rfind("root,T1,T2,T1t,T2t\n", 0) == 0);
  std::vector<Observation> parsed = parse_observations_csv(csv, truth.types);
  REQUIRE(parsed.size() == sample.observations.size());
  for (size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].root == sample.observations[i].root);
    CHECK(parsed[i].x == sample.observations[i].x);
  }

  // Carriage returns and blank lines are tolerated.
  std::string crlf;
  for (char ch : csv) {
    if (ch == '\n') crlf += "\r\n";
    else crlf += ch;
  }
  CHECK(parse_observations_csv(crlf + "\n\n", truth.types).size() == parsed.size());

  auto error_of = [&](const std::string& text) {
    try {
      parse_observations_csv(text, truth.types);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(error_of("").find("empty file") != std::string::npos);
  CHECK(error_of("root,T1,T2\nT1,1,0\n").find("observations:1:") != std::string::npos);
  CHECK(error_of("root,T1,T2,T2t,T1t\n").find("header column") != std::string::npos);
  CHECK(error_of("root,T1,T2,T1t,T2t\nT1t,1,0,0,0\n").find("not a nonterminal") !=
        std::string::npos);
  CHECK(error_of("root,T1,T2,T1t,T2t\nT1,1,x,0,0\n").find("bad count") != std::string::npos);
  CHECK(error_of("root,T1,T2,T1t,T2t\nT1,1,-1,0,0\n").find("bad count") != std::string::npos);
  CHECK(error_of("root,T1,T2,T1t,T2t\nT1,0,0,0,0\n").find("at least 1") != std::string::npos);
  CHECK(error_of("root,T1,T2,T1t,T2t\nT1,1,0,0\n").find("observations:2:") !=
        std::string::npos);
}
