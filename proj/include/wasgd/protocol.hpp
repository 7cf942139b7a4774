#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wasgd/dataset.hpp"
#include "wasgd/models.hpp"
#include "wasgd/ordering.hpp"
#include "wasgd/trajectory.hpp"
#include "wasgd/weighting.hpp"

namespace wasgd {

// Protocol hyperparameters. beta = lambda * eta is the acceptance factor:
// 0 rejects the aggregation entirely, 1 adopts it outright.
struct CommConfig {
  int p = 1;             // local workers
  int b = 0;             // backup workers (async only)
  int tau = 1000;        // communication period in steps
  double beta = 1.0;     // acceptance factor in [0, 1]
  double a_tilde = 1.0;  // Boltzmann inverse temperature
  double eta = 0.01;     // learning rate
  int m = 100;           // recorded estimation samples per period
  int c = 1;             // record sub-segments per period
  int n = 1;             // order chunks per epoch
  double zeta = 1.0;     // per-step communication probability (zeta mode only)
  double alpha = -1.0;   // EASGD moving rate; negative = unset (0.009 / p)
  uint64_t seed = 0;

  void validate() const;
};

// Seed-stream ids, fixed so runs can be reproduced outside the engine:
// worker w's order stream is derive_seed(seed, kWorkerOrderStream + w), the
// communication stream (Bernoulli draws, MWU selection) is
// derive_seed(seed, kCommRngStream).
inline constexpr uint64_t kWorkerOrderStream = 0x100000;
inline constexpr uint64_t kCommRngStream = 0x200000;
inline constexpr uint64_t kSharedOrderStream = 0x300000;

enum class WeightMode { Boltzmann, InverseLoss, Fixed };
// Scored: retained-or-reshuffled orders driven by Judge scores (Function 2/3).
// Reshuffle: fresh uniform order per chunk, no scoring.
// SharedRandom: all workers walk one common order.
// GroupedLabel: label runs of length group_delta.
enum class OrderMode { Scored, Reshuffle, SharedRandom, GroupedLabel };
// Period: exchange every tau steps, blend before the gradient step.
// ZetaBernoulli: variance-lab switch; after every gradient step all workers
// adopt the aggregate with shared probability zeta.
enum class CommMode { Period, ZetaBernoulli };
enum class Execution { SimSync, ThreadedSync, SimAsync, ThreadedAsync };

struct WorkerMessage {
  int worker_index = 0;
  double loss_energy = 0.0;
  ParamVector params;
};

// Sum_j theta_j x_j accumulated in ascending worker_index order.
// messages must already be arranged by worker_index.
ParamVector aggregate(const std::vector<WorkerMessage>& messages, const WeightVector& theta);

// (1 - beta) x + beta agg - eta g. Non-communication steps pass agg = x
// (or beta = 0). The gradient is always the one evaluated at the
// pre-aggregation parameters.
ParamVector local_step(const ParamVector& x, const ParamVector& agg, const ParamVector& g,
                       double beta, double eta);

struct EngineOptions {
  CommConfig comm;
  WeightMode weight_mode = WeightMode::Boltzmann;
  WeightVector fixed_weights;  // WeightMode::Fixed
  OrderMode order_mode = OrderMode::Scored;
  int group_delta = 1;
  CommMode comm_mode = CommMode::Period;
  Execution execution = Execution::SimSync;

  long epochs = 1;
  std::optional<double> loss_threshold;  // stop once train loss falls below
  long checkpoint_every = 0;             // steps; 0 means tau; must be a multiple of tau in Period mode

  ParamVector init_params;  // empty -> zeros
  // Remaps worker w to seed stream worker_streams[w]; empty -> identity.
  // Lets a p=1 run replay exactly the stream of one worker of a larger run.
  std::vector<int> worker_streams;

  // Per-worker artificial step duration: threaded engines sleep for it,
  // async simulation advances virtual clocks by it.
  std::vector<double> step_delay_us;
  double async_round_timeout_s = 10.0;

  bool collect_round_aggregates = false;   // post-blend aggregate per round
  bool collect_estimation_errors = false;  // estimated-vs-true weight error per round
  bool collect_async_selections = false;
  bool strict_finite = false;  // per-step finiteness checks (default: per round)
};

struct RunReport {
  TrajectoryLog log;
  std::vector<ParamVector> final_params;  // one per worker (p + b for async)
  ParamVector final_aggregate;
  WeightVector last_weights;
  long steps_per_worker = 0;
  long rounds_completed = 0;  // rounds reached by at least p workers
  std::vector<long> rounds_per_worker;
  std::vector<long> messages_consumed;  // one entry per executed communication
  double wall_ms = 0.0;
  double comm_wall_ms = 0.0;  // time inside the message-exchange block
  double eval_wall_ms = 0.0;  // weight-evaluation time (MWU baselines)

  std::vector<ParamVector> round_aggregates;
  std::vector<std::vector<double>> round_energies;  // exchanged loss energies per round
  std::vector<double> estimation_errors;
  // [worker][round] -> worker indices whose messages entered that aggregation
  std::vector<std::vector<std::vector<int>>> async_selections;
};

// Algorithm switchboard shared by the WASGD family. The named runners below
// are thin presets over this.
RunReport run_engine(const Model& model, const DatasetHandle& data, const EngineOptions& opts,
                     const std::string& protocol_name);

// Boltzmann weights over the (m, c) record schedule, scored sample orders.
RunReport run_wasgd_plus_sync(const Model& model, const DatasetHandle& data, EngineOptions opts);
// Backup-worker variant: a round proceeds on the first p messages.
RunReport run_wasgd_plus_async(const Model& model, const DatasetHandle& data, EngineOptions opts);
// Legacy variant: inverse-loss weights, beta = 1, last-m recording (c = 1),
// plain reshuffled orders.
RunReport run_wasgd_sync(const Model& model, const DatasetHandle& data, EngineOptions opts);

// Center-variable baseline; alpha <= 0 picks the MNIST-scale default 0.009/p.
RunReport run_easgd(const Model& model, const DatasetHandle& data, EngineOptions opts);
// Shard-and-average baseline.
RunReport run_simuparallel(const Model& model, const DatasetHandle& data, EngineOptions opts);
// Multiplicative-weights baseline; estimated = false evaluates the full
// training set each round (OMWU), true evaluates an m-sample estimate (MMWU).
RunReport run_mwu(const Model& model, const DatasetHandle& data, EngineOptions opts,
                  bool estimated);

// One multiplicative-weights round: w_i <- w_i exp(-a_tilde h_norm_i),
// renormalized to sum 1. Selection probabilities are scale invariant.
WeightVector mwu_update(const WeightVector& weights, const std::vector<double>& h_norm,
                        double a_tilde);

struct EasgdCondition {
  double weight_of_center = 0.0;  // (1 - p alpha)^p
  double alpha = 0.0;
  bool center_dominates = false;  // (1 - p alpha)^p > alpha
  bool sufficient = false;        // alpha < 1 / (1 + p^2)
};
EasgdCondition easgd_weight_condition(int p, double alpha);

}  // namespace wasgd
