#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wasgd/dataset.hpp"
#include "wasgd/models.hpp"
#include "wasgd/protocol.hpp"
#include "wasgd/weighting.hpp"

namespace wasgd {

// Parameters of the zeta-mode noisy-quadratic analysis. Communication fires
// after each gradient step with shared probability zeta; on communication
// every worker adopts sum_i theta_i x_i.
struct VarianceSpec {
  double c = 1.0;
  double eta = 0.1;
  double sigma_b = 0.0;
  double sigma_h = 1.0;
  double zeta = 1.0;
  int p = 1;
  WeightVector theta;  // empty -> equal weights

  WeightVector weights() const;
  double omega() const;  // sum of squared weights, in [1/p, 1]
  void validate() const;
};

struct MonteCarloReport {
  double empirical_variance = 0.0;
  double closed_form = 0.0;
  long replicas = 0;
  long steps = 0;  // post-burn-in steps per replica
  double relative_error = 0.0;
};

// Closed-form asymptotic variance of the aggregate:
//   Q = eta sigma_h^2 omega / (2c - eta c^2 - eta sigma_b^2 (1+delta omega)/(1+delta)),
//   delta = zeta / ((1-zeta) eta (2c - eta c^2)).
// Throws InstabilityError when the denominator is not positive.
double asymptotic_variance(const VarianceSpec& spec);

// Independent check: solves the two-equation steady state for (Q, P) directly
// and returns Q. Shares no algebra with asymptotic_variance.
double asymptotic_variance_oracle(const VarianceSpec& spec);

// Runs p coupled noisy-quadratic chains per replica and estimates the
// long-run Var(sum theta_i x_i) from the post-burn-in time average.
// total_steps counts all steps; the first burn_in_fraction of them are
// discarded. Replicas run in parallel; the estimate is deterministic in seed.
MonteCarloReport simulate_variance(const VarianceSpec& spec, long total_steps, long replicas,
                                   uint64_t seed, double burn_in_fraction = 0.5);

// Max parameter deviation between the zeta-chain engine (communicate every
// step) and an independent mini-batch GD on the same sample stream.
// Equal weights keep the two coupled to rounding error; unequal weights are
// the negative control.
double minibatch_equivalence(const Model& model, const DatasetHandle& data, int p, double eta,
                             uint64_t seed, long steps, const WeightVector& theta = {});

struct ContractionReport {
  std::vector<double> round_distances;  // includes the initial separation
  std::vector<double> round_ratios;
  double fitted_ratio = 0.0;   // exp(slope) of the log-distance fit
  double r_squared = 0.0;
  double predicted_ratio = 0.0;  // (1 - eta c)^tau for the scalar quadratic
};

// Runs two engine executions differing only in their (scalar) initialization
// on the noiseless quadratic with beta = 1 and measures the inter-run
// distance at every communication round.
ContractionReport contraction_rate(double curvature, EngineOptions opts, double x_init_a,
                                   double x_init_b, long rounds);

struct SweepComparison {
  std::string parameter;  // "T" or "beta"
  double value = 0.0;
  double mean_diff = 0.0;  // mean over replicas of (baseline - candidate)
  double variance = 0.0;   // across-replica variance of the per-replica means
  std::vector<double> per_replica;
};

// Mean-difference-to-baseline comparison across replicas. The T sweep uses
// the equal-weight run (a_tilde = 0) as baseline, the beta sweep the beta = 1
// run; candidates reuse the baseline's seeds.
std::vector<SweepComparison> weighting_tendency_sweep(
    const Model& model, const DatasetHandle& data, const EngineOptions& base,
    const std::vector<double>& T_values, const std::vector<double>& beta_values, int replicas,
    const std::string& metric = "train_loss");

}  // namespace wasgd
