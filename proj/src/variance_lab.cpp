#include "wasgd/variance_lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <mutex>
#include <thread>

#include "wasgd/errors.hpp"
#include "wasgd/trajectory.hpp"

namespace wasgd {

namespace {

constexpr uint64_t kReplicaStream = 0x4E9;
constexpr uint64_t kSweepStream = 0x5EED;

double weighted_sum(const std::vector<double>& xs, const WeightVector& theta) {
  double out = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) out += theta[i] * xs[i];
  return out;
}

ParamVector weighted_sum(const std::vector<ParamVector>& xs, const WeightVector& theta) {
  ParamVector out(xs[0].size(), 0.0);
  for (size_t i = 0; i < xs.size(); ++i) {
    for (size_t d = 0; d < out.size(); ++d) out[d] += theta[i] * xs[i][d];
  }
  return out;
}

// The zeta-mode chain shared by the Monte-Carlo variance estimate and the
// mini-batch equivalence check: every step each worker takes its gradient
// update, then with shared probability zeta all workers adopt the aggregate.
template <class State, class GradStep, class PostStep>
void run_zeta_chain(double zeta, const WeightVector& theta, Rng& comm_rng, long steps,
                    std::vector<State>& xs, GradStep grad_step, PostStep post) {
  for (long t = 1; t <= steps; ++t) {
    for (size_t i = 0; i < xs.size(); ++i) grad_step(i, xs[i]);
    bool comm = comm_rng.uniform01() < zeta;
    if (comm) {
      State agg = weighted_sum(xs, theta);
      for (State& x : xs) x = agg;
    }
    post(t, comm);
  }
}

double fit_log_slope(const std::vector<double>& values, double* r_squared) {
  // Least squares on (index, log value); returns the slope.
  size_t n = values.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double x = static_cast<double>(i);
    double y = std::log(values[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  double dn = static_cast<double>(n);
  double denom = dn * sxx - sx * sx;
  double slope = (dn * sxy - sx * sy) / denom;
  if (r_squared) {
    double ss_tot = syy - sy * sy / dn;
    double intercept = (sy - slope * sx) / dn;
    double ss_res = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double x = static_cast<double>(i);
      double y = std::log(values[i]);
      double e = y - (intercept + slope * x);
      ss_res += e * e;
    }
    *r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  }
  return slope;
}

}  // namespace

WeightVector VarianceSpec::weights() const {
  if (theta.empty()) return WeightVector(static_cast<size_t>(p), 1.0 / static_cast<double>(p));
  return theta;
}

double VarianceSpec::omega() const {
  double w = 0.0;
  for (double t : weights()) w += t * t;
  return w;
}

void VarianceSpec::validate() const {
  if (p < 1) throw ConfigError("variance: p must be >= 1");
  if (c <= 0.0) throw ConfigError("variance: c must be > 0");
  if (sigma_b < 0.0 || sigma_h < 0.0) throw ConfigError("variance: sigmas must be >= 0");
  if (!(eta > 0.0 && eta < 2.0 / c)) throw ConfigError("variance: need 0 < eta < 2/c");
  if (zeta < 0.0 || zeta > 1.0) throw ConfigError("variance: zeta must be in [0, 1]");
  if (!theta.empty()) {
    if (static_cast<int>(theta.size()) != p || !is_weight_vector(theta)) {
      throw ConfigError("variance: theta must be a length-p weight vector");
    }
  }
}

double asymptotic_variance(const VarianceSpec& spec) {
  spec.validate();
  double rho_base = 2.0 * spec.c - spec.eta * spec.c * spec.c;  // (1-(1-eta c)^2)/eta
  double omega = spec.omega();
  double shrink;  // (1 + delta omega) / (1 + delta)
  if (spec.zeta >= 1.0) {
    shrink = omega;  // delta -> infinity
  } else {
    double delta = spec.zeta / ((1.0 - spec.zeta) * spec.eta * rho_base);
    shrink = (1.0 + delta * omega) / (1.0 + delta);
  }
  double denom = rho_base - spec.eta * spec.sigma_b * spec.sigma_b * shrink;
  if (denom <= 0.0) {
    throw InstabilityError("asymptotic_variance: non-positive denominator (unstable spec)");
  }
  return spec.eta * spec.sigma_h * spec.sigma_h * omega / denom;
}

double asymptotic_variance_oracle(const VarianceSpec& spec) {
  spec.validate();
  double eta = spec.eta;
  double a = 1.0 - eta * spec.c;  // per-step contraction factor
  double a2 = a * a;
  double sb2 = spec.sigma_b * spec.sigma_b;
  double sh2 = spec.sigma_h * spec.sigma_h;
  double w = spec.omega();
  double z = spec.zeta;

  if (z >= 1.0) {
    // All workers hold the aggregate, so P = Q and one equation remains:
    // Q = a^2 Q + eta^2 sb2 w Q + eta^2 sh2 w.
    double denom = 1.0 - a2 - eta * eta * sb2 * w;
    if (denom <= 0.0) throw InstabilityError("variance oracle: unstable spec");
    return eta * eta * sh2 * w / denom;
  }
  // Steady state of
  //   Q = (1-z) [a^2 Q + eta^2 sb2 w P + eta^2 sh2 w] + z Q
  //   P = (1-z) [a^2 P + eta^2 sb2 P + eta^2 sh2]     + z Q
  // written as a 2x2 linear system A [Q P]^T = rhs.
  double a11 = 1.0 - (1.0 - z) * a2 - z;
  double a12 = -(1.0 - z) * eta * eta * sb2 * w;
  double b1 = (1.0 - z) * eta * eta * sh2 * w;
  double a21 = -z;
  double a22 = 1.0 - (1.0 - z) * (a2 + eta * eta * sb2);
  double b2 = (1.0 - z) * eta * eta * sh2;
  double det = a11 * a22 - a12 * a21;
  if (det == 0.0) throw InstabilityError("variance oracle: singular steady-state system");
  double q = (b1 * a22 - a12 * b2) / det;
  double pp = (a11 * b2 - b1 * a21) / det;
  if (q <= 0.0 && sh2 > 0.0) throw InstabilityError("variance oracle: unstable spec");
  (void)pp;
  return q;
}

MonteCarloReport simulate_variance(const VarianceSpec& spec, long total_steps, long replicas,
                                   uint64_t seed, double burn_in_fraction) {
  spec.validate();
  if (total_steps < 2 || replicas < 1) {
    throw ConfigError("simulate_variance: need total_steps >= 2, replicas >= 1");
  }
  if (burn_in_fraction < 0.0 || burn_in_fraction >= 1.0) {
    throw ConfigError("simulate_variance: burn_in_fraction in [0, 1)");
  }
  long burn = static_cast<long>(static_cast<double>(total_steps) * burn_in_fraction);
  WeightVector theta = spec.weights();
  NoisyQuadraticSpec nq{spec.c, spec.sigma_b, spec.sigma_h};

  auto one_replica = [&](long r) {
    uint64_t rs = derive_seed(seed, kReplicaStream + static_cast<uint64_t>(r));
    std::vector<Rng> noise;
    noise.reserve(static_cast<size_t>(spec.p));
    for (int i = 0; i < spec.p; ++i) noise.emplace_back(derive_seed(rs, static_cast<uint64_t>(i)));
    Rng comm_rng(derive_seed(rs, 0xC0));
    std::vector<double> xs(static_cast<size_t>(spec.p), 0.0);
    double acc = 0.0;
    long count = 0;
    run_zeta_chain(
        spec.zeta, theta, comm_rng, total_steps, xs,
        [&](size_t i, double& x) { x -= spec.eta * sample_noisy_gradient(nq, x, noise[i]); },
        [&](long t, bool) {
          if (t > burn) {
            double agg = weighted_sum(xs, theta);
            acc += agg * agg;
            ++count;
          }
          if ((t & 0x3FF) == 0) {
            for (double x : xs) {
              if (!std::isfinite(x) || std::abs(x) > 1e10) {
                throw InstabilityError("simulate_variance: divergent trajectory");
              }
            }
          }
        });
    return acc / static_cast<double>(count);
  };

  std::vector<double> estimates(static_cast<size_t>(replicas), 0.0);
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::future<void>> futures;
  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mu;
  for (unsigned t = 0; t < workers; ++t) {
    futures.push_back(std::async(std::launch::async, [&] {
      long r;
      while ((r = next.fetch_add(1)) < replicas && !failed.load()) {
        try {
          estimates[static_cast<size_t>(r)] = one_replica(r);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lk(failure_mu);
          failure = e.what();
          failed.store(true);
        }
      }
    }));
  }
  for (auto& f : futures) f.get();
  if (failed.load()) throw InstabilityError(failure);

  MonteCarloReport report;
  for (double e : estimates) report.empirical_variance += e;
  report.empirical_variance /= static_cast<double>(replicas);
  report.closed_form = asymptotic_variance(spec);
  report.replicas = replicas;
  report.steps = total_steps - burn;
  report.relative_error = report.closed_form != 0.0
                              ? std::abs(report.empirical_variance - report.closed_form) /
                                    report.closed_form
                              : std::abs(report.empirical_variance);
  return report;
}

double minibatch_equivalence(const Model& model, const DatasetHandle& data, int p, double eta,
                             uint64_t seed, long steps, const WeightVector& theta_in) {
  if (p < 1 || steps < 1) throw ConfigError("minibatch_equivalence: need p >= 1, steps >= 1");
  if (data.train.empty()) throw DataError("minibatch_equivalence: empty dataset");
  WeightVector theta =
      theta_in.empty() ? WeightVector(static_cast<size_t>(p), 1.0 / static_cast<double>(p))
                       : theta_in;
  if (static_cast<int>(theta.size()) != p || !is_weight_vector(theta)) {
    throw ConfigError("minibatch_equivalence: theta must be a length-p weight vector");
  }
  size_t M = data.train.size();

  // One shared sample stream: index matrix drawn up front so the engine and
  // the oracle consume identical samples.
  std::vector<std::vector<size_t>> assigned(static_cast<size_t>(steps),
                                            std::vector<size_t>(static_cast<size_t>(p)));
  {
    std::vector<Rng> stream;
    for (int i = 0; i < p; ++i) {
      stream.emplace_back(derive_seed(seed, 0x517EA6 + static_cast<uint64_t>(i)));
    }
    for (long t = 0; t < steps; ++t) {
      for (int i = 0; i < p; ++i) {
        assigned[static_cast<size_t>(t)][static_cast<size_t>(i)] =
            static_cast<size_t>(stream[static_cast<size_t>(i)].below(M));
      }
    }
  }

  std::vector<ParamVector> xs(static_cast<size_t>(p), model.zero_params());
  ParamVector y = model.zero_params();
  ParamVector g(static_cast<size_t>(model.dim()));
  ParamVector gsum(static_cast<size_t>(model.dim()));
  Rng comm_rng(derive_seed(seed, 0xC0));
  double max_dev = 0.0;
  size_t row = 0;  // current row of the assignment matrix

  run_zeta_chain(
      1.0, theta, comm_rng, steps, xs,
      [&](size_t i, ParamVector& x) {
        const Sample& s = data.train[assigned[row][i]];
        model.grad(x, s, g);
        for (size_t d = 0; d < x.size(); ++d) x[d] -= eta * g[d];
      },
      [&](long, bool) {
        // Oracle: one mini-batch step over the p samples assigned this step.
        std::fill(gsum.begin(), gsum.end(), 0.0);
        for (int i = 0; i < p; ++i) {
          const Sample& s = data.train[assigned[row][static_cast<size_t>(i)]];
          model.grad(y, s, g);
          for (size_t d = 0; d < g.size(); ++d) gsum[d] += g[d];
        }
        double scale = eta / static_cast<double>(p);
        for (size_t d = 0; d < y.size(); ++d) y[d] -= scale * gsum[d];
        // xs are all equal to the aggregate after the zeta = 1 communication.
        for (size_t d = 0; d < y.size(); ++d) {
          max_dev = std::max(max_dev, std::abs(xs[0][d] - y[d]));
        }
        ++row;
      });
  return max_dev;
}

ContractionReport contraction_rate(double curvature, EngineOptions opts, double x_init_a,
                                   double x_init_b, long rounds) {
  if (rounds < 1) throw ConfigError("contraction_rate: rounds >= 1");
  QuadraticModel model(curvature, 1);
  long M = static_cast<long>(opts.comm.tau) * rounds;
  DatasetHandle data;
  data.train.assign(static_cast<size_t>(M), Sample{});
  opts.comm.beta = 1.0;
  opts.comm.m = 1;
  opts.comm.c = 1;
  opts.comm.n = 1;
  opts.epochs = 1;
  opts.collect_round_aggregates = true;
  opts.execution = Execution::SimSync;
  opts.comm_mode = CommMode::Period;

  auto run_one = [&](double init) {
    EngineOptions o = opts;
    o.init_params = ParamVector{init};
    return run_wasgd_plus_sync(model, data, o);
  };
  RunReport a = run_one(x_init_a);
  RunReport b = run_one(x_init_b);
  if (a.round_aggregates.size() != b.round_aggregates.size()) {
    throw InstabilityError("contraction_rate: runs produced different round counts");
  }

  ContractionReport rep;
  rep.predicted_ratio = std::pow(1.0 - opts.comm.eta * curvature,
                                 static_cast<double>(opts.comm.tau));
  // Distances at the communication rounds themselves; consecutive snapshots
  // are exactly tau steps apart, so their ratio is the per-round contraction.
  for (size_t r = 0; r < a.round_aggregates.size(); ++r) {
    rep.round_distances.push_back(std::abs(a.round_aggregates[r][0] - b.round_aggregates[r][0]));
  }
  for (size_t r = 1; r < rep.round_distances.size(); ++r) {
    if (rep.round_distances[r - 1] > 0.0) {
      rep.round_ratios.push_back(rep.round_distances[r] / rep.round_distances[r - 1]);
    }
  }
  // Fit only rounds still clear of the double noise floor.
  std::vector<double> usable;
  for (double d : rep.round_distances) {
    if (d > 1e-280) usable.push_back(d);
    else break;
  }
  if (usable.size() >= 2) {
    double r2 = 0.0;
    double slope = fit_log_slope(usable, &r2);
    rep.fitted_ratio = std::exp(slope);
    rep.r_squared = r2;
  } else {
    rep.fitted_ratio = 0.0;
    rep.r_squared = 1.0;
  }
  return rep;
}

std::vector<SweepComparison> weighting_tendency_sweep(
    const Model& model, const DatasetHandle& data, const EngineOptions& base,
    const std::vector<double>& T_values, const std::vector<double>& beta_values, int replicas,
    const std::string& metric) {
  if (replicas < 1) throw ConfigError("weighting_tendency_sweep: replicas >= 1");
  auto run_replicas = [&](double a_tilde, double beta) {
    std::vector<TrajectoryLog> logs;
    for (int r = 0; r < replicas; ++r) {
      EngineOptions o = base;
      o.comm.a_tilde = a_tilde;
      o.comm.beta = beta;
      o.comm.seed = derive_seed(base.comm.seed, kSweepStream + static_cast<uint64_t>(r));
      o.execution = Execution::SimSync;
      logs.push_back(run_wasgd_plus_sync(model, data, o).log);
    }
    return logs;
  };

  std::vector<SweepComparison> rows;
  if (!T_values.empty()) {
    auto baseline = run_replicas(0.0, base.comm.beta);
    for (double T : T_values) {
      if (T <= 0.0) throw ConfigError("weighting_tendency_sweep: T must be > 0");
      auto cand = run_replicas(1.0 / T, base.comm.beta);
      RunComparison cmp = compare_runs(baseline, cand, metric);
      rows.push_back({"T", T, cmp.mean_diff, cmp.variance, cmp.per_replica});
    }
  }
  if (!beta_values.empty()) {
    auto baseline = run_replicas(base.comm.a_tilde, 1.0);
    for (double beta : beta_values) {
      auto cand = run_replicas(base.comm.a_tilde, beta);
      RunComparison cmp = compare_runs(baseline, cand, metric);
      rows.push_back({"beta", beta, cmp.mean_diff, cmp.variance, cmp.per_replica});
    }
  }
  return rows;
}

}  // namespace wasgd
