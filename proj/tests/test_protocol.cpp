#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wasgd/errors.hpp"
#include "wasgd/protocol.hpp"
#include "wasgd/trajectory.hpp"

using namespace wasgd;

namespace {

DatasetHandle toy_blobs(int count = 120, int classes = 3, int dim = 4, uint64_t seed = 5) {
  return synth_blobs(count, classes, dim, 0.6, seed);
}

EngineOptions toy_options(int p, int tau, uint64_t seed) {
  EngineOptions opts;
  opts.comm.p = p;
  opts.comm.tau = tau;
  opts.comm.m = std::min(4, tau);
  opts.comm.c = 1;
  opts.comm.n = 1;
  opts.comm.eta = 0.05;
  opts.comm.beta = 1.0;
  opts.comm.a_tilde = 1.0;
  opts.comm.seed = seed;
  opts.epochs = 1;
  return opts;
}

bool params_equal(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("local_step limits and hand value") {
  ParamVector x{2.0}, agg{4.0}, g{1.0};
  CHECK(local_step(x, agg, g, 0.0, 0.1)[0] == doctest::Approx(1.9));
  CHECK(local_step(x, agg, g, 1.0, 0.1)[0] == doctest::Approx(3.9));
  CHECK(local_step(x, agg, g, 0.5, 0.1)[0] == doctest::Approx(2.9).epsilon(1e-15));
  CHECK_THROWS_AS(local_step(x, {1.0, 2.0}, g, 0.5, 0.1), ConfigError);
}

TEST_CASE("aggregate: consensus, hand value, mean, ordering guard") {
  std::vector<WorkerMessage> same{{0, 0.0, {3.0, -1.0}}, {1, 0.0, {3.0, -1.0}}};
  auto agg = aggregate(same, {0.3, 0.7});
  CHECK(agg[0] == doctest::Approx(3.0));
  CHECK(agg[1] == doctest::Approx(-1.0));

  std::vector<WorkerMessage> two{{0, 0.0, {0.0}}, {1, 0.0, {4.0}}};
  CHECK(aggregate(two, {0.75, 0.25})[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(aggregate(two, {0.5, 0.5})[0] == doctest::Approx(2.0));

  std::vector<WorkerMessage> unsorted{{1, 0.0, {4.0}}, {0, 0.0, {0.0}}};
  CHECK_THROWS_AS(aggregate(unsorted, {0.5, 0.5}), ConfigError);
}

TEST_CASE("config invariants are validated") {
  CommConfig cc;
  cc.p = 0;
  CHECK_THROWS_AS(cc.validate(), ConfigError);
  cc = CommConfig{};
  cc.beta = 1.5;
  CHECK_THROWS_AS(cc.validate(), ConfigError);
  cc = CommConfig{};
  cc.m = 2000;  // m > tau
  CHECK_THROWS_AS(cc.validate(), ConfigError);
  cc = CommConfig{};
  cc.m = 100;
  cc.c = 3;  // does not divide m
  CHECK_THROWS_AS(cc.validate(), ConfigError);
  cc = CommConfig{};
  CHECK_NOTHROW(cc.validate());
}

TEST_CASE("sim-sync runs are deterministic") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs();
  EngineOptions opts = toy_options(3, 10, 99);
  RunReport a = run_wasgd_plus_sync(model, data, opts);
  RunReport b = run_wasgd_plus_sync(model, data, opts);
  CHECK(to_csv(a.log) == to_csv(b.log));
  REQUIRE(a.final_params.size() == b.final_params.size());
  for (size_t i = 0; i < a.final_params.size(); ++i) {
    CHECK(params_equal(a.final_params[i], b.final_params[i]));
  }
}

TEST_CASE("threaded sync matches the simulation trajectory bit-for-bit") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs();
  EngineOptions opts = toy_options(3, 10, 123);
  RunReport sim = run_wasgd_plus_sync(model, data, opts);
  opts.execution = Execution::ThreadedSync;
  RunReport thr = run_wasgd_plus_sync(model, data, opts);
  REQUIRE(sim.final_params.size() == thr.final_params.size());
  for (size_t i = 0; i < sim.final_params.size(); ++i) {
    CHECK(params_equal(sim.final_params[i], thr.final_params[i]));
  }
  REQUIRE(sim.log.points.size() == thr.log.points.size());
  for (size_t j = 0; j < sim.log.points.size(); ++j) {
    CHECK(sim.log.points[j].step == thr.log.points[j].step);
    CHECK(sim.log.points[j].train_loss == thr.log.points[j].train_loss);
    CHECK(sim.log.points[j].train_err == thr.log.points[j].train_err);
  }
}

TEST_CASE("energies are exchanged per period and reset after each communication") {
  // eta tiny: parameters barely move, so each period's recorded energy is
  // nearly constant. Growth across rounds would mean a missing reset.
  QuadraticModel model(1.0, 1);
  DatasetHandle data;
  data.train.assign(40, Sample{});
  EngineOptions opts = toy_options(2, 10, 7);
  opts.comm.eta = 1e-9;
  opts.comm.m = 10;  // record every step of the period
  opts.init_params = {1.0};
  opts.collect_round_aggregates = true;
  RunReport rep = run_wasgd_plus_sync(model, data, opts);
  REQUIRE(rep.round_energies.size() == 4);
  for (const auto& round : rep.round_energies) {
    for (double h : round) CHECK(h == doctest::Approx(5.0).epsilon(1e-6));
  }
}

TEST_CASE("message conservation: every sync round consumes exactly p messages") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs();
  EngineOptions opts = toy_options(4, 10, 11);
  RunReport rep = run_wasgd_plus_sync(model, data, opts);
  CHECK(rep.messages_consumed.size() == 12);  // 120 steps / tau 10
  for (long m : rep.messages_consumed) CHECK(m == 4);
}

TEST_CASE("consensus fixed point: identical workers with zero gradients stay put") {
  QuadraticModel model(1.0, 2);
  DatasetHandle data;
  data.train.assign(20, Sample{});
  EngineOptions opts = toy_options(3, 5, 3);
  opts.comm.beta = 1.0;
  opts.init_params = {0.0, 0.0};  // gradient c x = 0 at the origin
  RunReport rep = run_wasgd_plus_sync(model, data, opts);
  for (const auto& x : rep.final_params) {
    CHECK(x[0] == 0.0);
    CHECK(x[1] == 0.0);
  }
}

TEST_CASE("beta = 0 equals independent sequential runs bit-exactly") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(90, 3, 4, 21);
  EngineOptions opts = toy_options(3, 5, 555);
  opts.comm.beta = 0.0;
  RunReport joint = run_wasgd_plus_sync(model, data, opts);

  for (int w = 0; w < 3; ++w) {
    EngineOptions solo = toy_options(1, 5, 555);
    solo.comm.beta = 0.0;
    solo.worker_streams = {w};
    RunReport alone = run_wasgd_plus_sync(model, data, solo);
    CHECK(params_equal(joint.final_params[static_cast<size_t>(w)], alone.final_params[0]));
  }
}

TEST_CASE("p = 1 equals sequential SGD reproduced from the public stream recipe") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(60, 3, 4, 33);
  EngineOptions opts = toy_options(1, 10, 777);
  RunReport rep = run_wasgd_plus_sync(model, data, opts);

  // Reference loop: plain SGD over the same chunk orders.
  Rng order_rng(derive_seed(777, kWorkerOrderStream));
  ScoreBoard board(1);
  SampleOrder order = order_gen(board.scores[0], board.seeds[0], data.train.size(), order_rng);
  ParamVector x = model.zero_params();
  ParamVector g;
  for (size_t k = 0; k < data.train.size(); ++k) {
    model.grad(x, data.train[order.permutation[k]], g);
    for (size_t d = 0; d < x.size(); ++d) x[d] -= 0.05 * g[d];
  }
  CHECK(params_equal(rep.final_params[0], x));
}

TEST_CASE("easgd weight condition examples") {
  EasgdCondition cond = easgd_weight_condition(4, 0.01);
  CHECK(cond.weight_of_center == doctest::Approx(std::pow(0.96, 4)).epsilon(1e-15));
  CHECK(cond.center_dominates);
  CHECK(cond.sufficient);

  EasgdCondition big = easgd_weight_condition(4, 0.24);
  CHECK_FALSE(big.sufficient);

  // sufficient direction over a grid: alpha < 1/(1+p^2) implies dominance
  for (int p = 1; p <= 16; ++p) {
    double bound = 1.0 / (1.0 + static_cast<double>(p) * p);
    for (double f : {0.1, 0.5, 0.9, 0.99}) {
      EasgdCondition c = easgd_weight_condition(p, f * bound);
      CHECK(c.center_dominates);
    }
  }
}

TEST_CASE("easgd one-round hand trace matches the two update equations") {
  // p = 2 scalar workers, one communication round at tau = 1.
  ConstantFitModel model;
  DatasetHandle data;
  Sample s;
  s.target = 0.0;
  data.train.assign(2, s);
  EngineOptions opts = toy_options(2, 1, 1);
  opts.comm.alpha = 0.05;
  opts.comm.eta = 0.1;
  opts.comm.n = 1;
  opts.comm.m = 1;
  opts.epochs = 1;
  opts.init_params = {1.0};
  RunReport rep = run_easgd(model, data, opts);

  // Hand trace. Both workers start at 1, center at 1; every sample has
  // target 0, so g = x at each step. Two steps (dataset of 2), comm each.
  double x1 = 1.0, x2 = 1.0, center = 1.0;
  for (int k = 0; k < 2; ++k) {
    double g1 = x1, g2 = x2;
    double center_next = (1.0 - 2 * 0.05) * center + 0.05 * (x1 + x2);
    x1 = x1 - 0.1 * g1 - 0.05 * (x1 - center);
    x2 = x2 - 0.1 * g2 - 0.05 * (x2 - center);
    center = center_next;
  }
  CHECK(std::abs(rep.final_params[0][0] - x1) <= 1e-12);
  CHECK(std::abs(rep.final_params[1][0] - x2) <= 1e-12);
  CHECK(std::abs(rep.final_aggregate[0] - center) <= 1e-12);
}

TEST_CASE("easgd with alpha = 0 decouples workers and freezes the center") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(60, 3, 4, 2);
  EngineOptions opts = toy_options(2, 10, 42);
  opts.comm.alpha = 0.0;
  RunReport rep = run_easgd(model, data, opts);
  for (double v : rep.final_aggregate) CHECK(v == 0.0);  // center never moves

  // decoupled workers equal plain sequential runs with the same streams
  for (int w = 0; w < 2; ++w) {
    EngineOptions solo = toy_options(1, 10, 42);
    solo.comm.beta = 0.0;
    solo.worker_streams = {w};
    solo.order_mode = OrderMode::Reshuffle;
    RunReport alone = run_engine(model, data, solo, "seq");
    CHECK(params_equal(rep.final_params[static_cast<size_t>(w)], alone.final_params[0]));
  }
}

TEST_CASE("simuparallel: p = 1 is sequential and identical shards average to any worker") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(60, 3, 4, 8);
  EngineOptions opts = toy_options(1, 10, 314);
  RunReport seq = run_simuparallel(model, data, opts);
  CHECK(params_equal(seq.final_aggregate, seq.final_params[0]));

  // two identical shards + identical streams: average equals either worker
  DatasetHandle doubled;
  doubled.num_classes = data.num_classes;
  doubled.feature_dim = data.feature_dim;
  doubled.train = data.train;
  doubled.train.insert(doubled.train.end(), data.train.begin(), data.train.end());
  EngineOptions twin = toy_options(2, 10, 314);
  twin.worker_streams = {0, 0};
  RunReport rep = run_simuparallel(model, doubled, twin);
  CHECK(params_equal(rep.final_params[0], rep.final_params[1]));
  CHECK(params_equal(rep.final_aggregate, rep.final_params[0]));
}

TEST_CASE("simuparallel: p = 2 scalar run matches the hand-traced average") {
  ConstantFitModel model;
  DatasetHandle data;
  Sample s;
  data.train.resize(4);
  data.train[0].target = 1.0;
  data.train[1].target = 3.0;
  data.train[2].target = -1.0;
  data.train[3].target = 5.0;
  EngineOptions opts = toy_options(2, 1, 77);
  opts.comm.eta = 0.5;
  RunReport rep = run_simuparallel(model, data, opts);

  // reproduce each worker's shard walk with the engine's stream recipe
  double expect[2];
  for (int w = 0; w < 2; ++w) {
    Rng rng(derive_seed(77, kWorkerOrderStream + static_cast<uint64_t>(w)));
    auto perm = seeded_permutation(rng.next_u64(), 2);
    double x = 0.0;
    for (uint32_t idx : perm) {
      double target = data.train[static_cast<size_t>(w * 2 + idx)].target;
      x -= 0.5 * (x - target);
    }
    expect[w] = x;
  }
  CHECK(rep.final_params[0][0] == doctest::Approx(expect[0]).epsilon(1e-15));
  CHECK(rep.final_params[1][0] == doctest::Approx(expect[1]).epsilon(1e-15));
  CHECK(rep.final_aggregate[0] ==
        doctest::Approx(0.5 * (expect[0] + expect[1])).epsilon(1e-15));
}

TEST_CASE("mwu_update: equal losses keep uniform selection forever") {
  WeightVector w(4, 0.25);
  std::vector<double> h(4, 0.25);
  for (int round = 0; round < 50; ++round) {
    w = mwu_update(w, h, 2.0);
    for (double v : w) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("mwu_update: a dominant worker's selection probability rises to one") {
  WeightVector w(3, 1.0 / 3.0);
  std::vector<double> h{0.1, 0.45, 0.45};  // worker 0 always best
  double prev = w[0];
  for (int round = 0; round < 200; ++round) {
    w = mwu_update(w, h, 3.0);
    CHECK(w[0] >= prev - 1e-15);  // monotone
    prev = w[0];
  }
  CHECK(w[0] >= 1.0 - 1e-6);
}

TEST_CASE("mwu runs: identical workers stay uniformly weighted") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(60, 3, 4, 4);
  EngineOptions opts = toy_options(3, 10, 2718);
  opts.worker_streams = {0, 0, 0};
  RunReport rep = run_mwu(model, data, opts, false);
  for (double v : rep.last_weights) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(params_equal(rep.final_params[0], rep.final_params[1]));
}

TEST_CASE("omwu's weight evaluation is an order of magnitude above mmwu's") {
  SoftmaxRegressionModel model(16, 10);
  DatasetHandle data = synth_blobs(2000, 10, 16, 0.5, 6);
  EngineOptions opts = toy_options(2, 200, 10);
  opts.comm.m = 100;
  opts.comm.eta = 0.02;
  RunReport omwu = run_mwu(model, data, opts, false);
  RunReport mmwu = run_mwu(model, data, opts, true);
  REQUIRE(omwu.eval_wall_ms > 0.0);
  REQUIRE(mmwu.eval_wall_ms > 0.0);
  // N / m = 20; demand at least a 4x gap to stay robust to timer noise
  CHECK(omwu.eval_wall_ms / mmwu.eval_wall_ms >= 4.0);
}

TEST_CASE("async threaded with b = 0 reproduces the sync trajectory") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(60, 3, 4, 10);
  EngineOptions opts = toy_options(3, 10, 31);
  RunReport sync = run_wasgd_plus_sync(model, data, opts);
  EngineOptions aopts = opts;
  aopts.execution = Execution::ThreadedAsync;
  RunReport async = run_wasgd_plus_async(model, data, aopts);
  REQUIRE(async.final_params.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(params_equal(sync.final_params[i], async.final_params[i]));
  }
  for (long m : async.messages_consumed) CHECK(m == 3);
}

TEST_CASE("async simulation: slowed backups never enter the fast workers' rounds") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(60, 3, 4, 12);
  EngineOptions opts = toy_options(3, 10, 64);
  opts.comm.b = 2;
  opts.execution = Execution::SimAsync;
  opts.collect_async_selections = true;
  opts.step_delay_us = {1.0, 1.0, 1.0, 10.0, 10.0};  // workers 3, 4 delayed 10x
  RunReport rep = run_wasgd_plus_async(model, data, opts);

  REQUIRE(rep.async_selections.size() == 5);
  for (int fast = 0; fast < 3; ++fast) {
    for (const auto& sel : rep.async_selections[static_cast<size_t>(fast)]) {
      CHECK(sel.size() == 3);
      for (int idx : sel) CHECK(idx < 3);
    }
  }
  for (long m : rep.messages_consumed) CHECK(m == 3);
  // all five workers complete every round in simulation
  for (long r : rep.rounds_per_worker) CHECK(r == 6);
}

TEST_CASE("worker panic aborts the threaded run with a diagnostic") {
  struct PoisonModel : Model {
    int dim() const override { return 1; }
    int feature_dim() const override { return 0; }
    std::string name() const override { return "poison"; }
    double loss(const ParamVector&, const Sample&) const override { return 0.0; }
    double grad(const ParamVector&, const Sample&, ParamVector& g) const override {
      calls_ = calls_ + 1;
      if (calls_ > 25) throw std::runtime_error("poisoned gradient");
      g.assign(1, 0.0);
      return 0.0;
    }
    mutable int calls_ = 0;
  };
  PoisonModel model;
  DatasetHandle data;
  data.train.assign(40, Sample{});
  EngineOptions opts = toy_options(2, 5, 15);
  opts.execution = Execution::ThreadedSync;
  CHECK_THROWS_AS(run_engine(model, data, opts, "poison-run"), InstabilityError);
}

TEST_CASE("run rejects an n that does not divide the dataset") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(61, 3, 4, 2);
  EngineOptions opts = toy_options(2, 10, 2);
  opts.comm.n = 2;
  CHECK_THROWS_AS(run_wasgd_plus_sync(model, data, opts), ConfigError);
}

TEST_CASE("wasgd legacy: equal recorded energies average equally each round") {
  QuadraticModel model(1.0, 1);
  DatasetHandle data;
  data.train.assign(20, Sample{});
  EngineOptions opts = toy_options(2, 10, 5);
  opts.comm.m = 3;
  opts.init_params = {1.0};
  RunReport rep = run_wasgd_sync(model, data, opts);
  // identical workers, equal energies, inverse weights = 1/2 each
  CHECK(rep.last_weights[0] == doctest::Approx(0.5));
  CHECK(params_equal(rep.final_params[0], rep.final_params[1]));
}

TEST_CASE("wasgd reproduces wasgd+ when the four design toggles align") {
  SoftmaxRegressionModel model(4, 3);
  DatasetHandle data = toy_blobs(60, 3, 4, 9);

  EngineOptions plus = toy_options(2, 10, 44);
  plus.comm.beta = 1.0;
  plus.comm.m = 4;
  plus.comm.c = 1;
  RunReport want = run_wasgd_plus_sync(model, data, plus);

  // legacy engine with weight function, recording, and ordering toggled over
  EngineOptions toggled = plus;
  toggled.weight_mode = WeightMode::Boltzmann;
  toggled.order_mode = OrderMode::Scored;
  RunReport got = run_engine(model, data, toggled, "wasgd+");
  for (size_t i = 0; i < want.final_params.size(); ++i) {
    CHECK(params_equal(want.final_params[i], got.final_params[i]));
  }
}
