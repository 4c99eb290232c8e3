#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtbp/inside_outside.hpp"
#include "mtbp/types.hpp"

namespace mtbp {

enum class OnImpossible { abort, skip };

struct EMConfig {
  CountingMode mode = CountingMode::multiset;
  double tol_loglik = 1e-8;
  double tol_param = 1e-8;
  int max_iter = 200;
  OnImpossible on_impossible = OnImpossible::abort;
};

// One fit iteration: the log-likelihood of the model the update was computed
// from, and the post-update probabilities in canonical production order.
struct EMTracePoint {
  int iteration = 0;  // 1-based
  double log_likelihood = 0.0;
  std::vector<double> probabilities;
};

struct EMResult {
  OffspringModel model;
  double final_log_likelihood = 0.0;  // of `model` on the kept observations
  bool converged = false;
  int iterations = 0;
  std::vector<EMTracePoint> trace;
  std::vector<int> skipped_observations;  // indices into the input list
  std::vector<std::string> warnings;
};

namespace detail {

// Closed-form M step: each production's probability becomes its expected
// application count divided by the parent's total.  A parent with zero
// total keeps its current distribution (with a warning) -- there is nothing
// to estimate from.
inline OffspringModel m_step(const OffspringModel& model, const AggregatedCounts& agg,
                             std::vector<std::string>& warnings) {
  std::vector<Production> productions = model.productions;
  for (int v = 0; v < model.types.num_nonterminals; ++v) {
    auto [b, e] = model.parent_spans[v];
    double denom = 0.0;
    for (int i = b; i < e; ++i) denom += agg.production_expectations[i];
    if (denom <= 0.0) {
      warnings.push_back("no expected occurrences of '" + model.types.name(v) +
                         "'; keeping its current distribution");
      continue;
    }
    for (int i = b; i < e; ++i)
      productions[i].probability = agg.production_expectations[i] / denom;
  }
  return make_model(model.types, std::move(productions));
}

inline std::vector<double> probabilities_of(const OffspringModel& model) {
  std::vector<double> p;
  p.reserve(model.productions.size());
  for (const Production& prod : model.productions) p.push_back(prod.probability);
  return p;
}

}  // namespace detail

struct EMStepResult {
  OffspringModel model;
  double log_likelihood = 0.0;  // of the INPUT model on the observations
  std::vector<std::string> warnings;
};

// One E step + M step.  Throws on an underivable observation.
inline EMStepResult em_step(const OffspringModel& model,
                            const std::vector<Observation>& observations,
                            CountingMode mode = CountingMode::multiset) {
  if (observations.empty())
    fail(ErrorKind::validation, "no observations");
  std::vector<ExpectedCounts> counts;
  counts.reserve(observations.size());
  for (const Observation& obs : observations)
    counts.push_back(compute_expected_counts(model, obs, mode));
  AggregatedCounts agg = aggregate_counts(counts);
  EMStepResult r;
  r.log_likelihood = agg.total_log_likelihood;
  r.model = detail::m_step(model, agg, r.warnings);
  return r;
}

// Full EM loop.  Observations are screened once against the initial model;
// an underivable one aborts (default) or is skipped with a warning.  Each
// iteration computes expectations under the current model, applies the
// closed-form update, then evaluates the updated model's log-likelihood
// (inner pass only); the fit has converged when that evaluation improves by
// less than tol_loglik while no parameter moved by more than tol_param.
inline EMResult fit(const OffspringModel& init, const std::vector<Observation>& observations,
                    const EMConfig& cfg = {}) {
  if (observations.empty())
    fail(ErrorKind::validation, "no observations");
  if (cfg.max_iter < 1)
    fail(ErrorKind::validation, "max_iter must be at least 1");
  if (!(cfg.tol_loglik >= 0.0) || !(cfg.tol_param >= 0.0))
    fail(ErrorKind::validation, "tolerances must be nonnegative");

  EMResult result;

  // Derivability screen; kept observations carry their cached inner tables
  // so each iteration needs exactly one inner pass per observation.
  std::vector<int> kept;
  std::vector<InnerTable> inner;
  double loglik = 0.0;
  for (size_t i = 0; i < observations.size(); ++i) {
    InnerTable t = inner_probabilities(init, observations[i], cfg.mode);
    if (t.likelihood == 0.0) {
      const std::string what = "observation " + std::to_string(i) + " (" +
                               detail::describe(init.types, observations[i]) +
                               ") is underivable under the initial model";
      if (cfg.on_impossible == OnImpossible::abort) fail(ErrorKind::data, what);
      result.skipped_observations.push_back(static_cast<int>(i));
      result.warnings.push_back("skipped " + what);
      continue;
    }
    loglik += std::log(t.likelihood);
    kept.push_back(static_cast<int>(i));
    inner.push_back(std::move(t));
  }
  if (kept.empty())
    fail(ErrorKind::data, "every observation is underivable under the initial model");

  OffspringModel model = init;
  for (int k = 1; k <= cfg.max_iter; ++k) {
    // E step from the cached inner tables, M step.
    std::vector<ExpectedCounts> counts;
    counts.reserve(inner.size());
    for (const InnerTable& t : inner) {
      OuterTable outer = outer_probabilities(model, t);
      counts.push_back(expected_counts(model, t, outer));
    }
    AggregatedCounts agg = aggregate_counts(counts);
    OffspringModel updated = detail::m_step(model, agg, result.warnings);

    double delta_param = 0.0;
    for (size_t i = 0; i < model.productions.size(); ++i)
      delta_param = std::max(delta_param,
                             std::abs(updated.productions[i].probability -
                                      model.productions[i].probability));

    result.trace.push_back({k, loglik, detail::probabilities_of(updated)});

    // Evaluate the updated model; these tables seed the next iteration.
    std::vector<InnerTable> next_inner;
    next_inner.reserve(inner.size());
    double next_loglik = 0.0;
    for (size_t j = 0; j < inner.size(); ++j) {
      InnerTable t = inner_probabilities(updated, observations[kept[j]], cfg.mode,
                                         inner[j].lattice);
      if (t.likelihood == 0.0)
        fail(ErrorKind::data,
             "observation " + std::to_string(kept[j]) +
                 " became underivable after an update");
      next_loglik += std::log(t.likelihood);
      next_inner.push_back(std::move(t));
    }

    result.iterations = k;
    result.final_log_likelihood = next_loglik;
    model = std::move(updated);
    if (next_loglik - loglik < cfg.tol_loglik && delta_param < cfg.tol_param) {
      result.converged = true;
      break;
    }
    if (next_loglik < loglik - 1e-9)
      result.warnings.push_back("log-likelihood decreased at iteration " +
                                std::to_string(k) + " by " +
                                format_probability(loglik - next_loglik));
    inner = std::move(next_inner);
    loglik = next_loglik;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace mtbp
