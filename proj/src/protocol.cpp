#include "wasgd/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <barrier>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "wasgd/errors.hpp"

namespace wasgd {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void check_finite(const ParamVector& x, const std::string& where) {
  for (double v : x) {
    if (!std::isfinite(v)) throw InstabilityError("non-finite parameter during " + where);
  }
}

struct WorkerState {
  int index = 0;
  ParamVector x;
  ParamVector g;
  double h = 0.0;
  double score_acc = 0.0;
  ScoreBoard board;
  Rng order_rng{0};
  std::vector<uint32_t> order;
  long k = 0;       // chunk-local step, 1-based
  long rounds = 0;
  long global_step = 0;
  double sim_time_us = 0.0;
};

struct EngineContext {
  const Model& model;
  const DatasetHandle& data;
  const EngineOptions& opts;
  std::string protocol;
  long chunk_len = 0;
  RecordSchedule schedule;
  long checkpoint_rounds = 0;  // Period mode: rounds between checkpoints
  long checkpoint_steps = 0;   // step-indexed checkpointing (zeta / shard runs)

  const CommConfig& comm() const { return opts.comm; }
};

EngineContext make_context(const Model& model, const DatasetHandle& data,
                           const EngineOptions& opts, const std::string& protocol,
                           bool uses_schedule) {
  opts.comm.validate();
  if (data.train.empty()) throw DataError(protocol + ": empty training set");
  long M = static_cast<long>(data.train.size());
  if (M % opts.comm.n != 0) {
    throw ConfigError(protocol + ": n (" + std::to_string(opts.comm.n) +
                      ") must divide the dataset size " + std::to_string(M));
  }
  EngineContext ctx{model, data, opts, protocol};
  ctx.chunk_len = M / opts.comm.n;
  if (uses_schedule) {
    ctx.schedule = record_index(opts.comm.m, opts.comm.c, opts.comm.tau);
  } else {
    ctx.schedule.tau = opts.comm.tau;
  }
  long every = opts.checkpoint_every > 0 ? opts.checkpoint_every : opts.comm.tau;
  if (opts.comm_mode == CommMode::Period) {
    if (every % opts.comm.tau != 0) {
      throw ConfigError(protocol + ": checkpoint_every must be a multiple of tau");
    }
    ctx.checkpoint_rounds = every / opts.comm.tau;
  }
  ctx.checkpoint_steps = every;
  if (opts.weight_mode == WeightMode::Fixed &&
      static_cast<int>(opts.fixed_weights.size()) != opts.comm.p) {
    throw ConfigError(protocol + ": fixed_weights must have length p");
  }
  if (!opts.worker_streams.empty() &&
      static_cast<int>(opts.worker_streams.size()) < opts.comm.p + opts.comm.b) {
    throw ConfigError(protocol + ": worker_streams shorter than worker count");
  }
  if (opts.epochs < 1) throw ConfigError(protocol + ": epochs must be >= 1");
  return ctx;
}

int stream_of(const EngineOptions& opts, int w) {
  return opts.worker_streams.empty() ? w : opts.worker_streams[static_cast<size_t>(w)];
}

double step_delay_of(const EngineOptions& opts, int w) {
  if (opts.step_delay_us.empty()) return 0.0;
  return opts.step_delay_us[static_cast<size_t>(w) % opts.step_delay_us.size()];
}

WorkerState make_worker(const EngineContext& ctx, int w) {
  WorkerState ws;
  ws.index = w;
  ws.x = ctx.opts.init_params.empty() ? ctx.model.zero_params() : ctx.opts.init_params;
  if (static_cast<int>(ws.x.size()) != ctx.model.dim()) {
    throw ConfigError(ctx.protocol + ": init_params dimension mismatch");
  }
  ws.board = ScoreBoard(static_cast<size_t>(ctx.comm().n));
  ws.order_rng =
      Rng(derive_seed(ctx.comm().seed, kWorkerOrderStream + static_cast<uint64_t>(stream_of(ctx.opts, w))));
  return ws;
}

std::vector<int> chunk_labels(const EngineContext& ctx, long chunk_base) {
  std::vector<int> labels(static_cast<size_t>(ctx.chunk_len));
  for (long j = 0; j < ctx.chunk_len; ++j) {
    labels[static_cast<size_t>(j)] = ctx.data.train[static_cast<size_t>(chunk_base + j)].label;
  }
  return labels;
}

void setup_chunk(const EngineContext& ctx, WorkerState& w, long epoch, long chunk) {
  w.h = 0.0;
  w.score_acc = 0.0;
  w.k = 0;
  switch (ctx.opts.order_mode) {
    case OrderMode::Scored: {
      SampleOrder o = order_gen(w.board.scores[static_cast<size_t>(chunk)],
                                w.board.seeds[static_cast<size_t>(chunk)],
                                static_cast<size_t>(ctx.chunk_len), w.order_rng);
      w.board.seeds[static_cast<size_t>(chunk)] = o.seed;
      w.order = std::move(o.permutation);
      break;
    }
    case OrderMode::Reshuffle:
      w.order = seeded_permutation(w.order_rng.next_u64(), static_cast<size_t>(ctx.chunk_len));
      break;
    case OrderMode::SharedRandom:
      w.order = seeded_permutation(
          derive_seed(ctx.comm().seed, kSharedOrderStream +
                                           static_cast<uint64_t>(epoch) *
                                               static_cast<uint64_t>(ctx.comm().n) +
                                           static_cast<uint64_t>(chunk)),
          static_cast<size_t>(ctx.chunk_len));
      break;
    case OrderMode::GroupedLabel:
      w.order = grouped_order(chunk_labels(ctx, chunk * ctx.chunk_len), ctx.opts.group_delta,
                              w.order_rng);
      break;
  }
}

// One local step's forward+backward at the current (pre-aggregation)
// parameters. Records the loss byproduct when the period index is scheduled.
void step_compute(const EngineContext& ctx, WorkerState& w, long chunk_base) {
  const Sample& s =
      ctx.data.train[static_cast<size_t>(chunk_base) +
                     w.order[static_cast<size_t>(w.k - 1)]];
  double loss = ctx.model.grad(w.x, s, w.g);
  if (!ctx.schedule.indices.empty() && ctx.schedule.contains((w.k - 1) % ctx.comm().tau)) {
    w.h += loss;
  }
  ++w.global_step;
}

void apply_grad(const EngineContext& ctx, WorkerState& w) {
  double eta = ctx.comm().eta;
  for (size_t d = 0; d < w.x.size(); ++d) w.x[d] -= eta * w.g[d];
  if (ctx.opts.strict_finite) check_finite(w.x, "step " + std::to_string(w.global_step));
}

WeightVector equal_weights(size_t p) { return WeightVector(p, 1.0 / static_cast<double>(p)); }

WeightVector compute_weights(const EngineOptions& opts, const std::vector<double>& energies) {
  switch (opts.weight_mode) {
    case WeightMode::Fixed:
      return opts.fixed_weights;
    case WeightMode::Boltzmann:
      try {
        return boltzmann_weights(normalize_energies(energies), opts.comm.a_tilde);
      } catch (const DegenerateEnergyError&) {
        return equal_weights(energies.size());
      }
    case WeightMode::InverseLoss:
      try {
        return inverse_loss_weights(energies);
      } catch (const DegenerateEnergyError&) {
        return equal_weights(energies.size());
      }
  }
  throw ConfigError("unknown weight mode");
}

// Blend x <- (1-beta) x + beta agg, skipped entirely at beta = 0 so a
// no-communication run stays bit-identical to independent sequential runs.
void blend_into(ParamVector& x, const ParamVector& agg, double beta) {
  if (beta == 0.0) return;
  for (size_t d = 0; d < x.size(); ++d) x[d] = (1.0 - beta) * x[d] + beta * agg[d];
}

struct CommOutcome {
  WeightVector theta;
  ParamVector aggregate_params;
};

// Shared communication math for one worker given the round's p messages
// (already arranged by worker_index). my_pos is this worker's slot in msgs.
CommOutcome finish_comm(const EngineContext& ctx, WorkerState& w,
                        const std::vector<WorkerMessage>& msgs, size_t my_pos,
                        bool with_scoring) {
  std::vector<double> energies(msgs.size());
  for (size_t j = 0; j < msgs.size(); ++j) energies[j] = msgs[j].loss_energy;
  CommOutcome out;
  out.theta = compute_weights(ctx.opts, energies);
  out.aggregate_params = aggregate(msgs, out.theta);
  blend_into(w.x, out.aggregate_params, ctx.comm().beta);
  if (with_scoring) w.score_acc += judge(energies, my_pos);
  w.h = 0.0;
  ++w.rounds;
  return out;
}

Checkpoint make_checkpoint(const EngineContext& ctx, long step, double wall_ms,
                           const ParamVector& params) {
  Checkpoint c;
  c.step = step;
  c.wall_ms = wall_ms;
  EvalResult train = evaluate(ctx.model, params, ctx.data.train);
  c.train_loss = train.loss;
  c.train_err = train.error;
  if (!ctx.data.test.empty()) {
    EvalResult test = evaluate(ctx.model, params, ctx.data.test);
    c.test_loss = test.loss;
    c.test_err = test.error;
  } else {
    c.test_loss = std::numeric_limits<double>::quiet_NaN();
    c.test_err = std::numeric_limits<double>::quiet_NaN();
  }
  return c;
}

void finalize_report(const EngineContext& ctx, RunReport& report,
                     const std::vector<WorkerState>& workers, const WeightVector& last_theta) {
  report.final_params.clear();
  for (const WorkerState& w : workers) report.final_params.push_back(w.x);
  int p = ctx.comm().p;
  WeightVector theta = last_theta.empty() ? equal_weights(static_cast<size_t>(p)) : last_theta;
  std::vector<WorkerMessage> msgs(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) {
    msgs[static_cast<size_t>(i)] = {i, 0.0, workers[static_cast<size_t>(i)].x};
  }
  report.final_aggregate = aggregate(msgs, theta);
  report.last_weights = theta;
  report.rounds_per_worker.clear();
  for (const WorkerState& w : workers) report.rounds_per_worker.push_back(w.rounds);
  std::vector<long> sorted = report.rounds_per_worker;
  std::sort(sorted.begin(), sorted.end(), std::greater<long>());
  report.rounds_completed = sorted[static_cast<size_t>(p - 1)];
  report.steps_per_worker = workers.empty() ? 0 : workers[0].global_step;
}

// ---------------------------------------------------------------------------
// Synchronous engine, single-threaded deterministic schedule. Round-robin by
// worker index inside every step; bit-exact across runs and platforms.
// ---------------------------------------------------------------------------
RunReport run_sync_sim(const EngineContext& ctx) {
  const CommConfig& cc = ctx.comm();
  int p = cc.p;
  std::vector<WorkerState> workers;
  workers.reserve(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) workers.push_back(make_worker(ctx, i));

  RunReport report;
  report.log.protocol = ctx.protocol;
  report.log.p = p;
  report.log.seed = cc.seed;

  Rng comm_rng(derive_seed(cc.seed, kCommRngStream));
  WeightVector last_theta;
  long global_step = 0;
  long round = 0;
  bool stop = false;
  auto t0 = Clock::now();

  for (long epoch = 0; epoch < ctx.opts.epochs && !stop; ++epoch) {
    for (long l = 0; l < cc.n && !stop; ++l) {
      for (auto& w : workers) setup_chunk(ctx, w, epoch, l);
      long chunk_base = l * ctx.chunk_len;
      for (long k = 1; k <= ctx.chunk_len && !stop; ++k) {
        ++global_step;
        for (auto& w : workers) {
          w.k = k;
          step_compute(ctx, w, chunk_base);
        }
        bool period_comm = ctx.opts.comm_mode == CommMode::Period && k % cc.tau == 0;
        if (period_comm) {
          ++round;
          auto tc = Clock::now();
          std::vector<WorkerMessage> msgs(static_cast<size_t>(p));
          for (int i = 0; i < p; ++i) {
            msgs[static_cast<size_t>(i)] = {i, workers[static_cast<size_t>(i)].h,
                                            workers[static_cast<size_t>(i)].x};
          }
          if (ctx.opts.collect_estimation_errors) {
            std::vector<ParamVector> params;
            for (const auto& m : msgs) params.push_back(m.params);
            std::vector<double> energies(msgs.size());
            for (size_t j = 0; j < msgs.size(); ++j) energies[j] = msgs[j].loss_energy;
            WeightVector est = compute_weights(ctx.opts, energies);
            WeightVector truth = true_weights(ctx.model, params, ctx.data.train, cc.a_tilde);
            report.estimation_errors.push_back(estimation_error(est, truth));
          }
          CommOutcome outcome;
          for (int i = 0; i < p; ++i) {
            outcome = finish_comm(ctx, workers[static_cast<size_t>(i)], msgs,
                                  static_cast<size_t>(i), ctx.opts.order_mode == OrderMode::Scored);
          }
          last_theta = outcome.theta;
          report.messages_consumed.push_back(p);
          check_finite(outcome.aggregate_params, "round " + std::to_string(round));
          if (ctx.opts.collect_round_aggregates) {
            report.round_aggregates.push_back(outcome.aggregate_params);
            std::vector<double> energies(msgs.size());
            for (size_t j = 0; j < msgs.size(); ++j) energies[j] = msgs[j].loss_energy;
            report.round_energies.push_back(std::move(energies));
          }
          report.comm_wall_ms += ms_since(tc);
          if (round % ctx.checkpoint_rounds == 0) {
            Checkpoint c = make_checkpoint(ctx, global_step, 0.0, outcome.aggregate_params);
            report.log.append(c);
            if (ctx.opts.loss_threshold && c.train_loss <= *ctx.opts.loss_threshold) stop = true;
          }
        }
        for (auto& w : workers) apply_grad(ctx, w);
        if (ctx.opts.comm_mode == CommMode::ZetaBernoulli &&
            comm_rng.uniform01() < cc.zeta) {
          ++round;
          std::vector<WorkerMessage> msgs(static_cast<size_t>(p));
          for (int i = 0; i < p; ++i) {
            msgs[static_cast<size_t>(i)] = {i, workers[static_cast<size_t>(i)].h,
                                            workers[static_cast<size_t>(i)].x};
          }
          CommOutcome outcome;
          for (int i = 0; i < p; ++i) {
            outcome = finish_comm(ctx, workers[static_cast<size_t>(i)], msgs,
                                  static_cast<size_t>(i), false);
          }
          last_theta = outcome.theta;
          report.messages_consumed.push_back(p);
          check_finite(outcome.aggregate_params, "zeta round " + std::to_string(round));
        }
        if (ctx.opts.comm_mode == CommMode::ZetaBernoulli &&
            global_step % ctx.checkpoint_steps == 0) {
          WeightVector theta = ctx.opts.weight_mode == WeightMode::Fixed
                                   ? ctx.opts.fixed_weights
                                   : equal_weights(static_cast<size_t>(p));
          std::vector<WorkerMessage> msgs(static_cast<size_t>(p));
          for (int i = 0; i < p; ++i) {
            msgs[static_cast<size_t>(i)] = {i, 0.0, workers[static_cast<size_t>(i)].x};
          }
          Checkpoint c = make_checkpoint(ctx, global_step, 0.0, aggregate(msgs, theta));
          report.log.append(c);
          if (ctx.opts.loss_threshold && c.train_loss <= *ctx.opts.loss_threshold) stop = true;
        }
      }
      if (ctx.opts.order_mode == OrderMode::Scored) {
        for (auto& w : workers) {
          w.board.scores[static_cast<size_t>(l)] = w.score_acc;
        }
      }
    }
  }
  finalize_report(ctx, report, workers, last_theta);
  report.wall_ms = ms_since(t0);
  return report;
}

// ---------------------------------------------------------------------------
// Synchronous engine, one thread per worker with a full barrier every tau
// steps. Produces the same trajectory as run_sync_sim (fixed reduction order,
// same per-worker streams); only wall_ms differs.
// ---------------------------------------------------------------------------
RunReport run_sync_threaded(const EngineContext& ctx) {
  const CommConfig& cc = ctx.comm();
  int p = cc.p;
  std::vector<WorkerState> workers;
  workers.reserve(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) workers.push_back(make_worker(ctx, i));

  RunReport report;
  report.log.protocol = ctx.protocol;
  report.log.p = p;
  report.log.seed = cc.seed;

  std::vector<WorkerMessage> slots(static_cast<size_t>(p));
  std::barrier<> bar(p);
  std::atomic<bool> panicked{false};
  std::exception_ptr panic_error;
  std::mutex panic_mu;
  bool stop_flag = false;  // written by worker 0 between barriers
  WeightVector last_theta;
  auto t0 = Clock::now();

  auto worker_fn = [&](int i) {
    WorkerState& w = workers[static_cast<size_t>(i)];
    double delay_us = step_delay_of(ctx.opts, i);
    bool dropped = false;
    auto drop = [&] {
      if (!dropped) {
        bar.arrive_and_drop();
        dropped = true;
      }
    };
    try {
      long round = 0;
      for (long epoch = 0; epoch < ctx.opts.epochs; ++epoch) {
        for (long l = 0; l < cc.n; ++l) {
          setup_chunk(ctx, w, epoch, l);
          long chunk_base = l * ctx.chunk_len;
          for (long k = 1; k <= ctx.chunk_len; ++k) {
            w.k = k;
            step_compute(ctx, w, chunk_base);
            if (delay_us > 0.0) {
              std::this_thread::sleep_for(std::chrono::duration<double, std::micro>(delay_us));
            }
            if (k % cc.tau == 0) {
              ++round;
              slots[static_cast<size_t>(i)] = {i, w.h, w.x};
              bar.arrive_and_wait();
              if (panicked.load()) return drop();
              auto tc = Clock::now();
              std::vector<WorkerMessage> msgs = slots;  // already index-ordered
              CommOutcome outcome = finish_comm(ctx, w, msgs, static_cast<size_t>(i),
                                                ctx.opts.order_mode == OrderMode::Scored);
              if (i == 0) {
                last_theta = outcome.theta;
                report.messages_consumed.push_back(p);
                check_finite(outcome.aggregate_params, "round " + std::to_string(round));
                if (ctx.opts.collect_round_aggregates) {
                  report.round_aggregates.push_back(outcome.aggregate_params);
                }
                if (round % ctx.checkpoint_rounds == 0) {
                  Checkpoint c = make_checkpoint(ctx, w.global_step, ms_since(t0),
                                                 outcome.aggregate_params);
                  report.log.append(c);
                  if (ctx.opts.loss_threshold && c.train_loss <= *ctx.opts.loss_threshold) {
                    stop_flag = true;
                  }
                }
                report.comm_wall_ms += ms_since(tc);
              }
              bar.arrive_and_wait();
              if (panicked.load()) return drop();
              apply_grad(ctx, w);
              if (stop_flag) return drop();
            } else {
              apply_grad(ctx, w);
            }
          }
          if (ctx.opts.order_mode == OrderMode::Scored) {
            w.board.scores[static_cast<size_t>(l)] = w.score_acc;
          }
        }
      }
      drop();
    } catch (...) {
      {
        std::lock_guard<std::mutex> lk(panic_mu);
        if (!panic_error) panic_error = std::current_exception();
      }
      panicked.store(true);
      drop();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) threads.emplace_back(worker_fn, i);
  for (auto& t : threads) t.join();
  if (panic_error) {
    try {
      std::rethrow_exception(panic_error);
    } catch (const std::exception& e) {
      throw InstabilityError(ctx.protocol + ": worker panic: " + e.what());
    }
  }
  finalize_report(ctx, report, workers, last_theta);
  report.wall_ms = ms_since(t0);
  return report;
}

// ---------------------------------------------------------------------------
// Asynchronous engine. A worker's round r aggregation uses its own message
// plus the first p-1 peer messages for round r; later arrivals are discarded
// for that round. Aggregation itself is ordered by worker index.
// ---------------------------------------------------------------------------

// Deterministic event-timed simulation: message arrival is (virtual post
// time, worker index); per-step durations come from step_delay_us.
RunReport run_async_sim(const EngineContext& ctx) {
  const CommConfig& cc = ctx.comm();
  int total = cc.p + cc.b;
  std::vector<WorkerState> workers;
  workers.reserve(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) workers.push_back(make_worker(ctx, i));

  RunReport report;
  report.log.protocol = ctx.protocol;
  report.log.p = cc.p;
  report.log.seed = cc.seed;
  if (ctx.opts.collect_async_selections) {
    report.async_selections.assign(static_cast<size_t>(total), {});
  }

  // Cursor per worker inside the epoch/chunk/step structure.
  struct Cursor {
    long epoch = 0;
    long chunk = -1;
    bool finished = false;
  };
  std::vector<Cursor> cursors(static_cast<size_t>(total));

  // Advances one worker to its next communication point (or to the end of the
  // run); returns true when a message was posted.
  auto advance = [&](int i) -> bool {
    WorkerState& w = workers[static_cast<size_t>(i)];
    Cursor& cur = cursors[static_cast<size_t>(i)];
    if (cur.finished) return false;
    double delay = step_delay_of(ctx.opts, i);
    if (delay <= 0.0) delay = 1.0;
    while (true) {
      if (cur.chunk < 0 || w.k >= ctx.chunk_len) {
        if (cur.chunk >= 0 && ctx.opts.order_mode == OrderMode::Scored) {
          w.board.scores[static_cast<size_t>(cur.chunk)] = w.score_acc;
        }
        ++cur.chunk;
        if (cur.chunk >= cc.n) {
          cur.chunk = 0;
          ++cur.epoch;
          if (cur.epoch >= ctx.opts.epochs) {
            cur.finished = true;
            return false;
          }
        }
        setup_chunk(ctx, w, cur.epoch, cur.chunk);
      }
      long chunk_base = cur.chunk * ctx.chunk_len;
      while (w.k < ctx.chunk_len) {
        ++w.k;
        step_compute(ctx, w, chunk_base);
        w.sim_time_us += delay;
        if (w.k % cc.tau == 0) return true;  // comm point: blend pending
        apply_grad(ctx, w);
      }
      // chunk exhausted without a pending comm; loop on to the next chunk
    }
  };

  auto t0 = Clock::now();
  while (true) {
    std::vector<int> posted;
    for (int i = 0; i < total; ++i) {
      if (advance(i)) posted.push_back(i);
    }
    if (posted.empty()) break;
    // Same chunk structure for every worker: all active workers post each
    // round together.
    std::vector<WorkerMessage> all(static_cast<size_t>(total));
    for (int i : posted) {
      all[static_cast<size_t>(i)] = {i, workers[static_cast<size_t>(i)].h,
                                     workers[static_cast<size_t>(i)].x};
    }
    for (int i : posted) {
      WorkerState& w = workers[static_cast<size_t>(i)];
      // Peers sorted by (virtual arrival, index); take the first p-1.
      std::vector<int> peers;
      for (int j : posted) {
        if (j != i) peers.push_back(j);
      }
      std::sort(peers.begin(), peers.end(), [&](int a, int b) {
        double ta = workers[static_cast<size_t>(a)].sim_time_us;
        double tb = workers[static_cast<size_t>(b)].sim_time_us;
        return ta != tb ? ta < tb : a < b;
      });
      if (static_cast<int>(peers.size()) < cc.p - 1) {
        throw InstabilityError(ctx.protocol + ": fewer than p-1 peers posted a round");
      }
      peers.resize(static_cast<size_t>(cc.p - 1));
      std::vector<int> selected = peers;
      selected.push_back(i);
      std::sort(selected.begin(), selected.end());
      std::vector<WorkerMessage> msgs;
      size_t my_pos = 0;
      double resume = w.sim_time_us;
      for (size_t s = 0; s < selected.size(); ++s) {
        int j = selected[s];
        if (j == i) my_pos = s;
        msgs.push_back(all[static_cast<size_t>(j)]);
        resume = std::max(resume, workers[static_cast<size_t>(j)].sim_time_us);
      }
      CommOutcome outcome =
          finish_comm(ctx, w, msgs, my_pos, ctx.opts.order_mode == OrderMode::Scored);
      w.sim_time_us = resume;
      report.messages_consumed.push_back(static_cast<long>(msgs.size()));
      check_finite(outcome.aggregate_params, "async round");
      if (ctx.opts.collect_async_selections) {
        report.async_selections[static_cast<size_t>(i)].push_back(selected);
      }
      if (i == 0) {
        if (w.rounds % ctx.checkpoint_rounds == 0) {
          report.log.append(make_checkpoint(ctx, w.global_step, 0.0, outcome.aggregate_params));
        }
      }
      apply_grad(ctx, w);  // the comm step's pending gradient
    }
  }
  finalize_report(ctx, report, workers, {});
  report.wall_ms = ms_since(t0);
  return report;
}

// Threaded async with a per-round mailbox. The run stops once p workers have
// finished their epochs; stragglers are cancelled at their next step.
RunReport run_async_threaded(const EngineContext& ctx) {
  const CommConfig& cc = ctx.comm();
  int total = cc.p + cc.b;
  std::vector<WorkerState> workers;
  workers.reserve(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) workers.push_back(make_worker(ctx, i));

  RunReport report;
  report.log.protocol = ctx.protocol;
  report.log.p = cc.p;
  report.log.seed = cc.seed;
  if (ctx.opts.collect_async_selections) {
    report.async_selections.assign(static_cast<size_t>(total), {});
  }

  std::mutex mu;
  std::condition_variable cv;
  std::map<long, std::vector<WorkerMessage>> board;  // arrival-ordered per round
  std::atomic<bool> stop{false};
  std::atomic<int> completed{0};
  std::atomic<bool> panicked{false};
  std::exception_ptr panic_error;
  std::mutex panic_mu;
  std::mutex report_mu;
  auto t0 = Clock::now();

  auto worker_fn = [&](int i) {
    WorkerState& w = workers[static_cast<size_t>(i)];
    double delay_us = step_delay_of(ctx.opts, i);
    try {
      long round = 0;
      for (long epoch = 0; epoch < ctx.opts.epochs && !stop.load(); ++epoch) {
        for (long l = 0; l < cc.n && !stop.load(); ++l) {
          setup_chunk(ctx, w, epoch, l);
          long chunk_base = l * ctx.chunk_len;
          for (long k = 1; k <= ctx.chunk_len && !stop.load(); ++k) {
            w.k = k;
            step_compute(ctx, w, chunk_base);
            if (delay_us > 0.0) {
              std::this_thread::sleep_for(std::chrono::duration<double, std::micro>(delay_us));
            }
            if (k % cc.tau == 0) {
              ++round;
              std::vector<WorkerMessage> msgs;
              size_t my_pos = 0;
              std::vector<int> selected;
              {
                std::unique_lock<std::mutex> lk(mu);
                auto& slot = board[round];
                slot.push_back({i, w.h, w.x});
                cv.notify_all();
                bool ok = cv.wait_for(
                    lk, std::chrono::duration<double>(ctx.opts.async_round_timeout_s), [&] {
                      if (stop.load() || panicked.load()) return true;
                      int others = 0;
                      for (const auto& m : slot) {
                        if (m.worker_index != i) ++others;
                      }
                      return others >= cc.p - 1;
                    });
                if (stop.load() || panicked.load()) return;
                if (!ok) {
                  throw InstabilityError(ctx.protocol + ": async round " + std::to_string(round) +
                                         " timed out waiting for " + std::to_string(cc.p - 1) +
                                         " peers (deadlock?)");
                }
                // Own message plus the first p-1 peers by arrival order.
                msgs.push_back({i, w.h, w.x});
                int taken = 0;
                for (const auto& m : slot) {
                  if (m.worker_index == i) continue;
                  msgs.push_back(m);
                  if (++taken == cc.p - 1) break;
                }
              }
              std::sort(msgs.begin(), msgs.end(), [](const WorkerMessage& a, const WorkerMessage& b) {
                return a.worker_index < b.worker_index;
              });
              for (size_t s = 0; s < msgs.size(); ++s) {
                if (msgs[s].worker_index == i) my_pos = s;
                selected.push_back(msgs[s].worker_index);
              }
              CommOutcome outcome =
                  finish_comm(ctx, w, msgs, my_pos, ctx.opts.order_mode == OrderMode::Scored);
              check_finite(outcome.aggregate_params, "async round " + std::to_string(round));
              {
                std::lock_guard<std::mutex> lk(report_mu);
                report.messages_consumed.push_back(static_cast<long>(msgs.size()));
                if (ctx.opts.collect_async_selections) {
                  report.async_selections[static_cast<size_t>(i)].push_back(selected);
                }
                if (i == 0 && round % ctx.checkpoint_rounds == 0) {
                  report.log.append(
                      make_checkpoint(ctx, w.global_step, ms_since(t0), outcome.aggregate_params));
                }
              }
            }
            apply_grad(ctx, w);
          }
          if (ctx.opts.order_mode == OrderMode::Scored && !stop.load()) {
            w.board.scores[static_cast<size_t>(l)] = w.score_acc;
          }
        }
      }
      if (completed.fetch_add(1) + 1 >= cc.p) {
        stop.store(true);
        cv.notify_all();
      }
    } catch (...) {
      {
        std::lock_guard<std::mutex> lk(panic_mu);
        if (!panic_error) panic_error = std::current_exception();
      }
      panicked.store(true);
      stop.store(true);
      cv.notify_all();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) threads.emplace_back(worker_fn, i);
  for (auto& t : threads) t.join();
  if (panic_error) {
    try {
      std::rethrow_exception(panic_error);
    } catch (const InstabilityError&) {
      throw;
    } catch (const std::exception& e) {
      throw InstabilityError(ctx.protocol + ": worker panic: " + e.what());
    }
  }
  finalize_report(ctx, report, workers, {});
  report.wall_ms = ms_since(t0);
  return report;
}

}  // namespace

void CommConfig::validate() const {
  if (p < 1) throw ConfigError("config: p must be >= 1");
  if (b < 0) throw ConfigError("config: b must be >= 0");
  if (tau < 1) throw ConfigError("config: tau must be >= 1");
  if (beta < 0.0 || beta > 1.0) throw ConfigError("config: beta must be in [0, 1]");
  if (eta <= 0.0) throw ConfigError("config: eta must be > 0");
  if (m < 1 || m > tau) throw ConfigError("config: need 1 <= m <= tau");
  if (c < 1 || m % c != 0 || tau % c != 0) {
    throw ConfigError("config: c must divide both m and tau");
  }
  if (n < 1) throw ConfigError("config: n must be >= 1");
  if (zeta < 0.0 || zeta > 1.0) throw ConfigError("config: zeta must be in [0, 1]");
  if (alpha > 1.0 / static_cast<double>(p)) {
    throw ConfigError("config: alpha must not exceed 1/p");
  }
}

ParamVector aggregate(const std::vector<WorkerMessage>& messages, const WeightVector& theta) {
  if (messages.empty() || messages.size() != theta.size()) {
    throw ConfigError("aggregate: message/weight count mismatch");
  }
  for (size_t j = 1; j < messages.size(); ++j) {
    if (messages[j].worker_index <= messages[j - 1].worker_index) {
      throw ConfigError("aggregate: messages must be arranged by worker index");
    }
  }
  ParamVector out(messages[0].params.size(), 0.0);
  for (size_t j = 0; j < messages.size(); ++j) {
    const ParamVector& x = messages[j].params;
    if (x.size() != out.size()) throw ConfigError("aggregate: parameter dimension mismatch");
    double t = theta[j];
    for (size_t d = 0; d < out.size(); ++d) out[d] += t * x[d];
  }
  return out;
}

ParamVector local_step(const ParamVector& x, const ParamVector& agg, const ParamVector& g,
                       double beta, double eta) {
  if (x.size() != agg.size() || x.size() != g.size()) {
    throw ConfigError("local_step: dimension mismatch");
  }
  ParamVector out(x.size());
  if (beta == 0.0) {
    for (size_t d = 0; d < x.size(); ++d) out[d] = x[d] - eta * g[d];
  } else {
    for (size_t d = 0; d < x.size(); ++d) {
      out[d] = (1.0 - beta) * x[d] + beta * agg[d] - eta * g[d];
    }
  }
  return out;
}

WeightVector mwu_update(const WeightVector& weights, const std::vector<double>& h_norm,
                        double a_tilde) {
  if (weights.size() != h_norm.size() || weights.empty()) {
    throw ConfigError("mwu_update: weight/energy length mismatch");
  }
  WeightVector next(weights.size());
  double sum = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    next[i] = weights[i] * std::exp(-a_tilde * h_norm[i]);
    sum += next[i];
  }
  if (sum <= 0.0) throw DegenerateEnergyError("mwu_update: all weights vanished");
  for (double& v : next) v /= sum;
  return next;
}

EasgdCondition easgd_weight_condition(int p, double alpha) {
  if (p < 1) throw ConfigError("easgd_weight_condition: p must be >= 1");
  EasgdCondition cond;
  cond.alpha = alpha;
  cond.weight_of_center = std::pow(1.0 - p * alpha, p);
  cond.center_dominates = cond.weight_of_center > alpha;
  cond.sufficient = alpha < 1.0 / (1.0 + static_cast<double>(p) * p);
  return cond;
}

RunReport run_engine(const Model& model, const DatasetHandle& data, const EngineOptions& opts,
                     const std::string& protocol_name) {
  bool uses_schedule = true;
  EngineContext ctx = make_context(model, data, opts, protocol_name, uses_schedule);
  switch (opts.execution) {
    case Execution::SimSync:
      return run_sync_sim(ctx);
    case Execution::ThreadedSync:
      if (opts.comm_mode != CommMode::Period) {
        throw ConfigError(protocol_name + ": zeta mode runs in simulation only");
      }
      return run_sync_threaded(ctx);
    case Execution::SimAsync:
      return run_async_sim(ctx);
    case Execution::ThreadedAsync:
      return run_async_threaded(ctx);
  }
  throw ConfigError("unknown execution mode");
}

RunReport run_wasgd_plus_sync(const Model& model, const DatasetHandle& data, EngineOptions opts) {
  opts.weight_mode = WeightMode::Boltzmann;
  if (opts.order_mode != OrderMode::SharedRandom && opts.order_mode != OrderMode::GroupedLabel) {
    opts.order_mode = OrderMode::Scored;
  }
  if (opts.execution != Execution::ThreadedSync) opts.execution = Execution::SimSync;
  return run_engine(model, data, opts, "wasgd+");
}

RunReport run_wasgd_plus_async(const Model& model, const DatasetHandle& data, EngineOptions opts) {
  opts.weight_mode = WeightMode::Boltzmann;
  if (opts.order_mode != OrderMode::SharedRandom && opts.order_mode != OrderMode::GroupedLabel) {
    opts.order_mode = OrderMode::Scored;
  }
  if (opts.execution != Execution::SimAsync) opts.execution = Execution::ThreadedAsync;
  return run_engine(model, data, opts, "wasgd+async");
}

RunReport run_wasgd_sync(const Model& model, const DatasetHandle& data, EngineOptions opts) {
  opts.weight_mode = WeightMode::InverseLoss;
  opts.order_mode = OrderMode::Reshuffle;
  opts.comm.beta = 1.0;
  opts.comm.c = 1;  // record the last m steps of each period
  if (opts.execution != Execution::ThreadedSync) opts.execution = Execution::SimSync;
  return run_engine(model, data, opts, "wasgd");
}

// ---------------------------------------------------------------------------
// Baselines (simulation mode).
// ---------------------------------------------------------------------------

RunReport run_easgd(const Model& model, const DatasetHandle& data, EngineOptions opts) {
  if (opts.comm.alpha < 0.0) opts.comm.alpha = 0.009 / opts.comm.p;
  opts.order_mode = OrderMode::Reshuffle;
  opts.comm.m = 1;
  opts.comm.c = 1;
  EngineContext ctx = make_context(model, data, opts, "easgd", false);
  ctx.schedule.indices.clear();  // no loss recording
  const CommConfig& cc = ctx.comm();
  int p = cc.p;
  double alpha = cc.alpha;

  std::vector<WorkerState> workers;
  for (int i = 0; i < p; ++i) workers.push_back(make_worker(ctx, i));
  ParamVector center = workers[0].x;

  RunReport report;
  report.log.protocol = "easgd";
  report.log.p = p;
  report.log.seed = cc.seed;
  long global_step = 0;
  long round = 0;
  bool stop = false;
  auto t0 = Clock::now();

  for (long epoch = 0; epoch < ctx.opts.epochs && !stop; ++epoch) {
    for (long l = 0; l < cc.n && !stop; ++l) {
      for (auto& w : workers) setup_chunk(ctx, w, epoch, l);
      long chunk_base = l * ctx.chunk_len;
      for (long k = 1; k <= ctx.chunk_len && !stop; ++k) {
        ++global_step;
        for (auto& w : workers) {
          w.k = k;
          step_compute(ctx, w, chunk_base);
        }
        if (k % cc.tau == 0) {
          ++round;
          // Center update uses the pre-pull worker parameters.
          ParamVector center_new(center.size());
          for (size_t d = 0; d < center.size(); ++d) {
            double sum = 0.0;
            for (const auto& w : workers) sum += w.x[d];
            center_new[d] = (1.0 - p * alpha) * center[d] + alpha * sum;
          }
          for (auto& w : workers) {
            for (size_t d = 0; d < w.x.size(); ++d) w.x[d] -= alpha * (w.x[d] - center[d]);
            ++w.rounds;
          }
          center = std::move(center_new);
          check_finite(center, "easgd round " + std::to_string(round));
          report.messages_consumed.push_back(p);
          if (round % ctx.checkpoint_rounds == 0) {
            Checkpoint c = make_checkpoint(ctx, global_step, 0.0, center);
            report.log.append(c);
            if (ctx.opts.loss_threshold && c.train_loss <= *ctx.opts.loss_threshold) stop = true;
          }
        }
        for (auto& w : workers) apply_grad(ctx, w);
      }
    }
  }
  finalize_report(ctx, report, workers, {});
  report.final_aggregate = center;  // the center variable is the trajectory
  report.wall_ms = ms_since(t0);
  return report;
}

RunReport run_simuparallel(const Model& model, const DatasetHandle& data, EngineOptions opts) {
  opts.order_mode = OrderMode::Reshuffle;
  opts.comm.m = 1;
  opts.comm.c = 1;
  opts.comm.n = 1;
  EngineContext ctx = make_context(model, data, opts, "simuparallel", false);
  ctx.schedule.indices.clear();
  const CommConfig& cc = ctx.comm();
  int p = cc.p;
  long M = static_cast<long>(data.train.size());
  if (M % p != 0) throw ConfigError("simuparallel: p must divide the dataset size");
  long shard = M / p;

  std::vector<WorkerState> workers;
  for (int i = 0; i < p; ++i) workers.push_back(make_worker(ctx, i));

  RunReport report;
  report.log.protocol = "simuparallel";
  report.log.p = p;
  report.log.seed = cc.seed;
  auto mean_params = [&] {
    ParamVector mean(workers[0].x.size(), 0.0);
    for (const auto& w : workers) {
      for (size_t d = 0; d < mean.size(); ++d) mean[d] += w.x[d];
    }
    for (double& v : mean) v /= static_cast<double>(p);
    return mean;
  };
  long global_step = 0;
  auto t0 = Clock::now();

  for (long epoch = 0; epoch < ctx.opts.epochs; ++epoch) {
    // Each worker shuffles its own shard.
    for (int i = 0; i < p; ++i) {
      workers[static_cast<size_t>(i)].order =
          seeded_permutation(workers[static_cast<size_t>(i)].order_rng.next_u64(),
                             static_cast<size_t>(shard));
      workers[static_cast<size_t>(i)].k = 0;
    }
    for (long k = 1; k <= shard; ++k) {
      ++global_step;
      for (int i = 0; i < p; ++i) {
        WorkerState& w = workers[static_cast<size_t>(i)];
        w.k = k;
        const Sample& s =
            data.train[static_cast<size_t>(i) * static_cast<size_t>(shard) +
                       w.order[static_cast<size_t>(k - 1)]];
        ctx.model.grad(w.x, s, w.g);
        ++w.global_step;
        apply_grad(ctx, w);
      }
      if (global_step % ctx.checkpoint_steps == 0) {
        report.log.append(make_checkpoint(ctx, global_step, 0.0, mean_params()));
      }
    }
  }
  ParamVector avg = mean_params();
  check_finite(avg, "simuparallel average");
  if (report.log.points.empty() || report.log.points.back().step != global_step) {
    report.log.append(make_checkpoint(ctx, global_step, 0.0, avg));
  }
  finalize_report(ctx, report, workers, {});
  report.final_aggregate = avg;
  report.wall_ms = ms_since(t0);
  return report;
}

RunReport run_mwu(const Model& model, const DatasetHandle& data, EngineOptions opts,
                  bool estimated) {
  opts.order_mode = OrderMode::Reshuffle;
  std::string name = estimated ? "mmwu" : "omwu";
  EngineContext ctx = make_context(model, data, opts, name, false);
  ctx.schedule.indices.clear();
  const CommConfig& cc = ctx.comm();
  int p = cc.p;
  long M = static_cast<long>(data.train.size());

  std::vector<WorkerState> workers;
  for (int i = 0; i < p; ++i) workers.push_back(make_worker(ctx, i));
  WeightVector mult_weights(static_cast<size_t>(p), 1.0 / static_cast<double>(p));
  Rng comm_rng(derive_seed(cc.seed, kCommRngStream));

  RunReport report;
  report.log.protocol = name;
  report.log.p = p;
  report.log.seed = cc.seed;
  long global_step = 0;
  long round = 0;
  bool stop = false;
  auto t0 = Clock::now();

  for (long epoch = 0; epoch < ctx.opts.epochs && !stop; ++epoch) {
    for (long l = 0; l < cc.n && !stop; ++l) {
      for (auto& w : workers) setup_chunk(ctx, w, epoch, l);
      long chunk_base = l * ctx.chunk_len;
      for (long k = 1; k <= ctx.chunk_len && !stop; ++k) {
        ++global_step;
        for (auto& w : workers) {
          w.k = k;
          step_compute(ctx, w, chunk_base);
        }
        if (k % cc.tau == 0) {
          ++round;
          // Weight evaluation: the full training set (OMWU) or a shared
          // m-sample estimate (MMWU). This block dominates OMWU's round time.
          auto te = Clock::now();
          std::vector<double> energies(static_cast<size_t>(p), 0.0);
          if (estimated) {
            std::vector<size_t> idx(static_cast<size_t>(cc.m));
            for (auto& id : idx) id = static_cast<size_t>(comm_rng.below(static_cast<uint64_t>(M)));
            for (int i = 0; i < p; ++i) {
              for (size_t id : idx) {
                energies[static_cast<size_t>(i)] +=
                    model.loss(workers[static_cast<size_t>(i)].x, data.train[id]);
              }
            }
          } else {
            for (int i = 0; i < p; ++i) {
              for (const Sample& s : data.train) {
                energies[static_cast<size_t>(i)] += model.loss(workers[static_cast<size_t>(i)].x, s);
              }
            }
          }
          report.eval_wall_ms += ms_since(te);

          std::vector<double> h_norm;
          try {
            h_norm = normalize_energies(energies);
          } catch (const DegenerateEnergyError&) {
            h_norm.assign(static_cast<size_t>(p), 1.0 / static_cast<double>(p));
          }
          mult_weights = mwu_update(mult_weights, h_norm, cc.a_tilde);
          // Draw the broadcast winner with probability proportional to weight.
          double u = comm_rng.uniform01();
          int winner = 0;
          double acc = 0.0;
          for (int i = 0; i < p; ++i) {
            acc += mult_weights[static_cast<size_t>(i)];
            if (u < acc) {
              winner = i;
              break;
            }
          }
          ParamVector chosen = workers[static_cast<size_t>(winner)].x;
          for (auto& w : workers) {
            w.x = chosen;
            ++w.rounds;
          }
          check_finite(chosen, name + " round " + std::to_string(round));
          report.messages_consumed.push_back(p);
          if (round % ctx.checkpoint_rounds == 0) {
            Checkpoint c = make_checkpoint(ctx, global_step, 0.0, chosen);
            report.log.append(c);
            if (ctx.opts.loss_threshold && c.train_loss <= *ctx.opts.loss_threshold) stop = true;
          }
        }
        for (auto& w : workers) apply_grad(ctx, w);
      }
    }
  }
  finalize_report(ctx, report, workers, mult_weights);
  report.wall_ms = ms_since(t0);
  return report;
}

}  // namespace wasgd
