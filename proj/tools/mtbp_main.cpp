// mtbp: estimate the offspring distribution of a multitype branching process
// with terminal types from generation-level observations.
//
// Subcommands: simulate, estimate, oracle, mle, example, study.
// Exit codes: 0 success, 2 usage or validation error, 3 a resource guard
// tripped, 4 EM hit max-iter without converging, 5 the model cannot explain
// the data, 6 a verification command found a mismatch.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtbp/em.hpp"
#include "mtbp/example_model.hpp"
#include "mtbp/inside_outside.hpp"
#include "mtbp/manifest.hpp"
#include "mtbp/model_io.hpp"
#include "mtbp/oracle.hpp"
#include "mtbp/simulate.hpp"
#include "mtbp/study.hpp"
#include "mtbp/tree.hpp"
#include "mtbp/version.hpp"

namespace {

using namespace mtbp;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitGuard = 3;
constexpr int kExitNoConvergence = 4;
constexpr int kExitData = 5;
constexpr int kExitMismatch = 6;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::validation: return kExitUsage;
    case ErrorKind::guard: return kExitGuard;
    case ErrorKind::data: return kExitData;
  }
  return 1;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  std::string model_path, root_name, out_path, trees_path;
  int count = 0;
  std::uint64_t seed = 0;
  int max_depth = 30;
  std::optional<int> min_leaves, max_leaves;
};

int run_simulate(const SimulateOptions& opt) {
  const std::string model_text = read_file(opt.model_path);
  const OffspringModel model = parse_model(model_text);

  SimConfig cfg;
  cfg.root = model.types.index_of(opt.root_name);
  if (cfg.root < 0)
    fail(ErrorKind::validation, "unknown root type '" + opt.root_name + "'");
  cfg.max_depth = opt.max_depth;
  cfg.seed = opt.seed;
  cfg.count = opt.count;
  if (opt.min_leaves || opt.max_leaves) {
    if (!opt.min_leaves || !opt.max_leaves)
      fail(ErrorKind::validation, "--min-leaves and --max-leaves must be given together");
    cfg.size_bounds = {*opt.min_leaves, *opt.max_leaves};
  }

  const Sample sample = simulate_sample(model, cfg);
  write_file(opt.out_path, write_observations_csv(model.types, sample.observations));
  if (!opt.trees_path.empty())
    write_file(opt.trees_path, write_trees_file(sample.trees, model.types));

  RunManifest manifest;
  manifest.command = "simulate";
  manifest.config["model"] = opt.model_path;
  manifest.config["root"] = opt.root_name;
  manifest.config["count"] = opt.count;
  manifest.config["seed"] = opt.seed;
  manifest.config["max_depth"] = opt.max_depth;
  manifest.config["min_leaves"] =
      cfg.size_bounds ? nlohmann::ordered_json(cfg.size_bounds->first) : nullptr;
  manifest.config["max_leaves"] =
      cfg.size_bounds ? nlohmann::ordered_json(cfg.size_bounds->second) : nullptr;
  manifest.config["out"] = opt.out_path;
  manifest.config["trees"] =
      opt.trees_path.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(opt.trees_path);
  manifest.add_input(opt.model_path, model_text);
  manifest.outputs.push_back(opt.out_path);
  if (!opt.trees_path.empty()) manifest.outputs.push_back(opt.trees_path);
  write_manifest_file(opt.out_path, manifest);

  std::cout << "wrote " << sample.observations.size() << " observations to "
            << opt.out_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- estimate

struct EstimateOptions {
  std::string structure_path, obs_path, out_path, trace_path;
  std::string init = "uniform";
  std::string init_file;
  std::uint64_t seed = 0;
  std::string mode = "multiset";
  double tol = 1e-8;
  int max_iter = 200;
  bool skip_impossible = false;
};

// An explicit starting model must carry exactly the structure being fitted.
void check_same_structure(const OffspringModel& structure, const OffspringModel& init) {
  if (structure.types.names != init.types.names ||
      structure.types.num_nonterminals != init.types.num_nonterminals)
    fail(ErrorKind::validation, "initial model's type table differs from the structure");
  if (structure.productions.size() != init.productions.size())
    fail(ErrorKind::validation, "initial model's productions differ from the structure");
  for (size_t i = 0; i < structure.productions.size(); ++i)
    if (structure.productions[i].parent != init.productions[i].parent ||
        structure.productions[i].offspring != init.productions[i].offspring)
      fail(ErrorKind::validation, "initial model's productions differ from the structure");
}

std::string render_trace_tsv(const OffspringModel& model, const std::vector<EMTracePoint>& trace) {
  std::string out = "iter\tloglik";
  for (const Production& p : model.productions)
    out += "\t" + production_label(model.types, p);
  out += "\n";
  for (const EMTracePoint& t : trace) {
    out += std::to_string(t.iteration) + "\t" + format_probability(t.log_likelihood);
    for (double p : t.probabilities) out += "\t" + format_probability(p);
    out += "\n";
  }
  return out;
}

int run_estimate(const EstimateOptions& opt) {
  const std::string structure_text = read_file(opt.structure_path);
  const OffspringModel structure = parse_model(structure_text);
  const std::string obs_text = read_file(opt.obs_path);
  const std::vector<Observation> observations =
      parse_observations_csv(obs_text, structure.types);

  OffspringModel init = uniform_init(structure);
  std::string init_text;
  if (opt.init == "random") {
    init = random_init(structure, opt.seed);
  } else if (opt.init == "file") {
    if (opt.init_file.empty())
      fail(ErrorKind::validation, "--init file requires --init-file");
    init_text = read_file(opt.init_file);
    init = parse_model(init_text);
    check_same_structure(structure, init);
  }

  EMConfig cfg;
  cfg.mode = parse_counting_mode(opt.mode);
  cfg.tol_loglik = opt.tol;
  cfg.tol_param = opt.tol;
  cfg.max_iter = opt.max_iter;
  cfg.on_impossible = opt.skip_impossible ? OnImpossible::skip : OnImpossible::abort;

  const EMResult result = fit(init, observations, cfg);

  write_file(opt.out_path, serialize_model(result.model));
  write_file(opt.trace_path, render_trace_tsv(result.model, result.trace));

  RunManifest manifest;
  manifest.command = "estimate";
  manifest.config["structure"] = opt.structure_path;
  manifest.config["obs"] = opt.obs_path;
  manifest.config["init"] = opt.init;
  manifest.config["init_file"] =
      opt.init_file.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(opt.init_file);
  manifest.config["seed"] = opt.seed;
  manifest.config["mode"] = opt.mode;
  manifest.config["tol"] = opt.tol;
  manifest.config["max_iter"] = opt.max_iter;
  manifest.config["skip_impossible"] = opt.skip_impossible;
  manifest.config["out"] = opt.out_path;
  manifest.config["trace"] = opt.trace_path;
  manifest.add_input(opt.structure_path, structure_text);
  manifest.add_input(opt.obs_path, obs_text);
  if (!opt.init_file.empty()) manifest.add_input(opt.init_file, init_text);
  manifest.outputs.push_back(opt.out_path);
  manifest.outputs.push_back(opt.trace_path);
  write_manifest_file(opt.out_path, manifest);

  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";
  if (!result.skipped_observations.empty()) {
    std::cout << "skipped " << result.skipped_observations.size() << " observation(s):";
    for (int i : result.skipped_observations) std::cout << " " << i;
    std::cout << "\n";
  }
  std::cout << "log-likelihood: " << format_probability(result.final_log_likelihood) << "\n";
  std::cout << "converged: " << (result.converged ? "true" : "false") << " ("
            << result.iterations << " iteration" << (result.iterations == 1 ? "" : "s")
            << (result.converged ? "" : ", max-iter reached") << ")\n";
  return result.converged ? kExitOk : kExitNoConvergence;
}

// ------------------------------------------------------------------ oracle

struct OracleOptions {
  std::string model_path, obs_path;
  std::string mode = "multiset";
  int guard = kDefaultEnumerationGuard;
};

inline constexpr double kOracleTolerance = 1e-9;

int run_oracle(const OracleOptions& opt) {
  const std::string model_text = read_file(opt.model_path);
  const OffspringModel model = parse_model(model_text);
  const std::string obs_text = read_file(opt.obs_path);
  const std::vector<Observation> observations =
      parse_observations_csv(obs_text, model.types);
  if (observations.empty())
    fail(ErrorKind::validation, "observations: no data rows");
  const CountingMode mode = parse_counting_mode(opt.mode);

  std::string report = "quantity\tdp\toracle\tabsdiff\n";
  double max_diff = 0.0;
  for (size_t n = 0; n < observations.size(); ++n) {
    const Observation& obs = observations[n];
    const std::vector<WeightedTree> trees = enumerate_trees(model, obs, opt.guard);
    const ExpectedCounts dp = compute_expected_counts(model, obs, mode);
    const ExpectedCounts oracle = oracle_expected_counts(model, obs, mode, opt.guard);

    report += "# observation " + std::to_string(n + 1) + ": " +
              detail::describe(model.types, obs) + ", " + std::to_string(trees.size()) +
              " derivation tree(s), mode " + counting_mode_name(mode) + "\n";
    auto row = [&](const std::string& name, double a, double b) {
      const double diff = std::abs(a - b);
      max_diff = std::max(max_diff, diff);
      report += name + "\t" + format_probability(a) + "\t" + format_probability(b) +
                "\t" + format_probability(diff) + "\n";
    };
    row("likelihood", dp.likelihood, oracle.likelihood);
    for (int v = 0; v < model.types.num_nonterminals; ++v)
      row("E[c(" + model.types.name(v) + ")]", dp.type_expectations[v],
          oracle.type_expectations[v]);
    for (size_t i = 0; i < model.productions.size(); ++i)
      row("E[c(" + production_label(model.types, model.productions[i]) + ")]",
          dp.production_expectations[i], oracle.production_expectations[i]);
  }
  report += "# max abs diff: " + format_probability(max_diff) + " (tolerance " +
            format_probability(kOracleTolerance) + ")\n";
  std::cout << report;

  RunManifest manifest;
  manifest.command = "oracle";
  manifest.config["model"] = opt.model_path;
  manifest.config["obs"] = opt.obs_path;
  manifest.config["mode"] = opt.mode;
  manifest.config["max_leaves_guard"] = opt.guard;
  manifest.add_input(opt.model_path, model_text);
  manifest.add_input(opt.obs_path, obs_text);
  std::cout << "# manifest\n" << render_manifest(manifest);

  return max_diff < kOracleTolerance ? kExitOk : kExitMismatch;
}

// --------------------------------------------------------------------- mle

struct MleOptions {
  std::string trees_path, structure_path, out_path;
};

int run_mle(const MleOptions& opt) {
  const std::string structure_text = read_file(opt.structure_path);
  const OffspringModel structure = parse_model(structure_text);
  const std::string trees_text = read_file(opt.trees_path);
  const std::vector<DerivationTree> trees =
      parse_trees_file(trees_text, structure.types, &structure);
  const OffspringModel model = complete_data_mle(trees, structure.types, &structure);
  write_file(opt.out_path, serialize_model(model));

  RunManifest manifest;
  manifest.command = "mle";
  manifest.config["trees"] = opt.trees_path;
  manifest.config["structure"] = opt.structure_path;
  manifest.config["out"] = opt.out_path;
  manifest.add_input(opt.trees_path, trees_text);
  manifest.add_input(opt.structure_path, structure_text);
  manifest.outputs.push_back(opt.out_path);
  write_manifest_file(opt.out_path, manifest);

  std::cout << "estimated from " << trees.size() << " tree(s)\n";
  return kExitOk;
}

// ----------------------------------------------------------------- example

int run_example_command(const std::string& mode_name) {
  const CountingMode mode = parse_counting_mode(mode_name);
  const ExampleRun run = run_example(mode);
  const TypeTable& types = run.model.types;

  std::cout << "# model\n" << serialize_model(run.model);
  std::cout << "# observation\n"
            << detail::describe(types, run.observation) << "\n";
  std::cout << "# tables (mode " << counting_mode_name(mode) << ")\n"
            << dump_tables(run.model, run.inner, &run.outer);
  std::cout << "# expected counts\n";
  for (int v = 0; v < types.num_nonterminals; ++v)
    std::cout << "type\t" << types.name(v) << "\t"
              << format_probability(run.counts.type_expectations[v]) << "\n";
  for (size_t i = 0; i < run.model.productions.size(); ++i)
    std::cout << "prod\t" << production_label(types, run.model.productions[i]) << "\t"
              << format_probability(run.counts.production_expectations[i]) << "\n";
  std::cout << "# updated model (one EM step)\n" << serialize_model(run.updated);
  std::cout << "# fit\n"
            << "converged=" << (run.em.converged ? "true" : "false")
            << " iterations=" << run.em.iterations
            << " loglik=" << format_probability(run.em.final_log_likelihood) << "\n";

  int failures = 0;
  std::cout << "# checks\n";
  if (mode == CountingMode::multiset) {
    for (const ExampleCheck& c : run.checks)
      if (c.difference() > kExampleTolerance) {
        ++failures;
        std::cout << "MISMATCH " << c.label << ": expected "
                  << format_probability(c.expected) << ", got "
                  << format_probability(c.actual) << "\n";
      }
    std::cout << "verified " << (run.checks.size() - failures) << "/" << run.checks.size()
              << " golden values (max abs diff " << format_probability(run.max_difference)
              << ", tolerance " << format_probability(kExampleTolerance) << ")\n";
  } else {
    std::cout << "skipped (golden values are defined for multiset mode)\n";
  }

  RunManifest manifest;
  manifest.command = "example";
  manifest.config["mode"] = mode_name;
  std::cout << "# manifest\n" << render_manifest(manifest);
  return failures == 0 ? kExitOk : kExitMismatch;
}

// ------------------------------------------------------------------- study

struct StudyOptions {
  int samples = 16;
  int sample_size = 20;
  std::string tree_size = "small";
  std::uint64_t seed = 1;
  std::string mode = "multiset";
};

int run_study_command(const StudyOptions& opt) {
  StudyConfig cfg;
  cfg.samples = opt.samples;
  cfg.sample_size = opt.sample_size;
  cfg.large_trees = opt.tree_size == "large";
  cfg.seed = opt.seed;
  cfg.mode = parse_counting_mode(opt.mode);

  const StudyResult result = run_study(cfg);
  const OffspringModel& truth = result.truth;

  std::cout << "# study: samples=" << opt.samples << " sample_size=" << opt.sample_size
            << " tree_size=" << opt.tree_size << " seed=" << opt.seed << " mode="
            << opt.mode << "\n";
  std::cout << "# trees: leaf bounds [" << result.leaf_bounds.first << ","
            << result.leaf_bounds.second << "], observed alive at depth "
            << result.observe_alive_depth << " (depth cap " << result.max_depth << ")\n";
  std::cout << "# truth:";
  for (const Production& p : truth.productions)
    std::cout << " " << production_label(truth.types, p) << "="
              << format_probability(p.probability);
  std::cout << "\n";
  std::cout << "# estimation: truth structure plus survival productions "
               "(uniform start); reported values renormalized over the truth "
               "productions per parent\n";

  char buf[64];
  std::cout << "sample";
  for (const Production& p : truth.productions) {
    std::snprintf(buf, sizeof buf, "\t%s", production_label(truth.types, p).c_str());
    std::cout << buf;
  }
  std::cout << "\titerations\n";
  for (size_t s = 0; s < result.samples.size(); ++s) {
    const StudySample& row = result.samples[s];
    std::cout << "s." << (s + 1);
    for (double p : row.probabilities) {
      std::snprintf(buf, sizeof buf, "\t%.4f", p);
      std::cout << buf;
    }
    std::cout << "\t" << row.iterations << (row.converged ? "" : "*") << "\n";
  }
  std::cout << "mean";
  for (double m : result.mean) {
    std::snprintf(buf, sizeof buf, "\t%.4f", m);
    std::cout << buf;
  }
  std::cout << "\t\nst.dev.";
  for (double v : result.stdev) {
    std::snprintf(buf, sizeof buf, "\t%.4f", v);
    std::cout << buf;
  }
  std::cout << "\t\n";
  if (!std::all_of(result.samples.begin(), result.samples.end(),
                   [](const StudySample& s) { return s.converged; }))
    std::cout << "# * = max-iter reached without convergence\n";

  RunManifest manifest;
  manifest.command = "study";
  manifest.config["samples"] = opt.samples;
  manifest.config["sample_size"] = opt.sample_size;
  manifest.config["tree_size"] = opt.tree_size;
  manifest.config["seed"] = opt.seed;
  manifest.config["mode"] = opt.mode;
  manifest.config["leaf_bounds"] = {result.leaf_bounds.first, result.leaf_bounds.second};
  manifest.config["max_depth"] = result.max_depth;
  manifest.config["observe_alive_depth"] = result.observe_alive_depth;
  manifest.config["estimation_structure"] = "truth + survival productions";
  manifest.config["report"] = "renormalized over truth productions";
  manifest.config["init"] = "uniform";
  std::cout << "# manifest\n" << render_manifest(manifest);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offspring-distribution estimation for multitype branching processes "
               "with terminal types"};
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);

  SimulateOptions sim;
  CLI::App* c_sim = app.add_subcommand(
      "simulate", "draw seeded derivation trees and emit their observations");
  c_sim->add_option("--model", sim.model_path, "model file")->required();
  c_sim->add_option("--root", sim.root_name, "root type name")->required();
  c_sim->add_option("--count", sim.count, "number of accepted trees")->required();
  c_sim->add_option("--seed", sim.seed, "random seed")->default_val(0);
  c_sim->add_option("--max-depth", sim.max_depth, "depth cap (root has depth 1)")
      ->default_val(30);
  c_sim->add_option("--min-leaves", sim.min_leaves, "smallest accepted leaf count");
  c_sim->add_option("--max-leaves", sim.max_leaves, "largest accepted leaf count");
  c_sim->add_option("--out", sim.out_path, "observations CSV to write")->required();
  c_sim->add_option("--trees", sim.trees_path, "also write the trees, one per line");

  EstimateOptions est;
  CLI::App* c_est = app.add_subcommand(
      "estimate", "fit an offspring distribution to observations by EM");
  c_est->add_option("--structure", est.structure_path, "model file fixing the productions")
      ->required();
  c_est->add_option("--obs", est.obs_path, "observations CSV")->required();
  c_est->add_option("--init", est.init, "starting point: uniform, random, or file")
      ->default_val("uniform")
      ->check(CLI::IsMember({"uniform", "random", "file"}));
  c_est->add_option("--init-file", est.init_file, "starting model for --init file");
  c_est->add_option("--seed", est.seed, "seed for --init random")->default_val(0);
  c_est->add_option("--mode", est.mode, "counting mode")
      ->default_val("multiset")
      ->check(CLI::IsMember({"multiset", "ordered"}));
  c_est->add_option("--tol", est.tol, "convergence tolerance (log-likelihood and parameters)")
      ->default_val(1e-8);
  c_est->add_option("--max-iter", est.max_iter, "iteration cap")->default_val(200);
  c_est->add_flag("--skip-impossible", est.skip_impossible,
                  "skip underivable observations instead of aborting");
  c_est->add_option("--out", est.out_path, "fitted model file to write")->required();
  c_est->add_option("--trace", est.trace_path, "iteration trace TSV to write")->required();

  OracleOptions orc;
  CLI::App* c_orc = app.add_subcommand(
      "oracle", "check the dynamic program against exhaustive enumeration");
  c_orc->add_option("--model", orc.model_path, "model file")->required();
  c_orc->add_option("--obs", orc.obs_path, "observations CSV")->required();
  c_orc->add_option("--mode", orc.mode, "counting mode")
      ->default_val("multiset")
      ->check(CLI::IsMember({"multiset", "ordered"}));
  c_orc->add_option("--max-leaves-guard", orc.guard, "largest observation total to enumerate")
      ->default_val(kDefaultEnumerationGuard);

  MleOptions mle;
  CLI::App* c_mle = app.add_subcommand(
      "mle", "closed-form estimate from fully observed trees");
  c_mle->add_option("--trees", mle.trees_path, "trees file, one per line")->required();
  c_mle->add_option("--structure", mle.structure_path, "model file fixing the productions")
      ->required();
  c_mle->add_option("--out", mle.out_path, "fitted model file to write")->required();

  std::string example_mode = "multiset";
  CLI::App* c_ex = app.add_subcommand(
      "example", "run the built-in worked example and verify its golden values");
  c_ex->add_option("--mode", example_mode, "counting mode")
      ->default_val("multiset")
      ->check(CLI::IsMember({"multiset", "ordered"}));

  StudyOptions study;
  CLI::App* c_study = app.add_subcommand(
      "study", "replicate the small/large-tree estimation study");
  c_study->add_option("--samples", study.samples, "number of simulated samples")
      ->default_val(16);
  c_study->add_option("--sample-size", study.sample_size, "observations per sample")
      ->default_val(20)
      ->check(CLI::IsMember({20, 50, 100}));
  c_study->add_option("--tree-size", study.tree_size, "small or large trees")
      ->default_val("small")
      ->check(CLI::IsMember({"small", "large"}));
  c_study->add_option("--seed", study.seed, "master seed")->default_val(1);
  c_study->add_option("--mode", study.mode, "counting mode")
      ->default_val("multiset")
      ->check(CLI::IsMember({"multiset", "ordered"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_est->parsed()) return run_estimate(est);
    if (c_orc->parsed()) return run_oracle(orc);
    if (c_mle->parsed()) return run_mle(mle);
    if (c_ex->parsed()) return run_example_command(example_mode);
    if (c_study->parsed()) return run_study_command(study);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
