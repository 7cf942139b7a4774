#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "wasgd/config.hpp"
#include "wasgd/errors.hpp"
#include "wasgd/trajectory.hpp"
#include "wasgd/variance_lab.hpp"

namespace fs = std::filesystem;
using namespace wasgd;

namespace {

constexpr uint64_t kReplicaSeedStream = 0x5EED;

struct CliRunArgs {
  std::string config_path;
  RunConfig cfg;
  // flag presence trackers so file values survive unset flags
};

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad numeric value '" + tok + "' in --values");
    }
  }
  if (out.empty()) throw ConfigError("--values is empty");
  return out;
}

std::vector<std::string> split_paths(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

// Registers the RunConfig keys as flags on a subcommand; flags override the
// values loaded from --config.
void add_run_options(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "flat key = value config file");
  cmd->add_option("--protocol", cfg.protocol,
                  "wasgd+ | wasgd+async | wasgd | easgd | simuparallel | omwu | mmwu | sgd");
  cmd->add_option("--model", cfg.model, "model spec, e.g. softmax:16,10");
  cmd->add_option("--dataset", cfg.dataset, "dataset spec, e.g. blobs:2000,10,16,0.5,1");
  cmd->add_option("--p", cfg.comm.p, "worker count");
  cmd->add_option("--b", cfg.comm.b, "backup workers (async)");
  cmd->add_option("--tau", cfg.comm.tau, "communication period (steps)");
  cmd->add_option("--beta", cfg.comm.beta, "acceptance factor in [0,1]");
  cmd->add_option("--a-tilde", cfg.comm.a_tilde, "Boltzmann inverse temperature");
  cmd->add_option("--eta", cfg.comm.eta, "learning rate");
  cmd->add_option("--m", cfg.comm.m, "estimation samples per period");
  cmd->add_option("--c", cfg.comm.c, "record sub-segments per period");
  cmd->add_option("--n", cfg.comm.n, "order chunks per epoch");
  cmd->add_option("--zeta", cfg.comm.zeta, "per-step communication probability (zeta mode)");
  cmd->add_option("--alpha", cfg.comm.alpha, "EASGD moving rate (negative = 0.009/p)");
  cmd->add_option("--seed", cfg.comm.seed, "base seed");
  cmd->add_option("--execution", cfg.execution, "sim | threads");
  cmd->add_option("--order", cfg.order, "scored | reshuffle | shared | grouped");
  cmd->add_option("--delta", cfg.delta, "grouped-order run length");
  cmd->add_option("--comm-mode", cfg.comm_mode, "period | zeta");
  cmd->add_option("--epochs", cfg.epochs, "epoch count");
  cmd->add_option("--loss-threshold", [&cfg](const std::vector<std::string>& v) {
      cfg.loss_threshold = std::stod(v.back());
      return true;
  }, "stop once train loss falls below");
  cmd->add_option("--checkpoint-every", cfg.checkpoint_every, "steps between checkpoints");
  cmd->add_option("--out", cfg.out, "trajectory CSV path");
}

// Re-parses so --config is read first and explicit flags still win.
RunConfig resolve_config(CLI::App* cmd, const RunConfig& flag_cfg, const std::string& config_path) {
  if (config_path.empty()) return flag_cfg;
  RunConfig cfg = parse_config_file(config_path);
  // overlay every flag the user actually passed
  RunConfig out = cfg;
  auto overlay = [&](const char* flag, auto member) {
    if (cmd->count(flag) > 0) *member(out) = *member(const_cast<RunConfig*>(&flag_cfg));
  };
  auto s = [](auto field) { return field; };
  (void)s;
  if (cmd->count("--protocol")) out.protocol = flag_cfg.protocol;
  if (cmd->count("--model")) out.model = flag_cfg.model;
  if (cmd->count("--dataset")) out.dataset = flag_cfg.dataset;
  if (cmd->count("--p")) out.comm.p = flag_cfg.comm.p;
  if (cmd->count("--b")) out.comm.b = flag_cfg.comm.b;
  if (cmd->count("--tau")) out.comm.tau = flag_cfg.comm.tau;
  if (cmd->count("--beta")) out.comm.beta = flag_cfg.comm.beta;
  if (cmd->count("--a-tilde")) out.comm.a_tilde = flag_cfg.comm.a_tilde;
  if (cmd->count("--eta")) out.comm.eta = flag_cfg.comm.eta;
  if (cmd->count("--m")) out.comm.m = flag_cfg.comm.m;
  if (cmd->count("--c")) out.comm.c = flag_cfg.comm.c;
  if (cmd->count("--n")) out.comm.n = flag_cfg.comm.n;
  if (cmd->count("--zeta")) out.comm.zeta = flag_cfg.comm.zeta;
  if (cmd->count("--alpha")) out.comm.alpha = flag_cfg.comm.alpha;
  if (cmd->count("--seed")) out.comm.seed = flag_cfg.comm.seed;
  if (cmd->count("--execution")) out.execution = flag_cfg.execution;
  if (cmd->count("--order")) out.order = flag_cfg.order;
  if (cmd->count("--delta")) out.delta = flag_cfg.delta;
  if (cmd->count("--comm-mode")) out.comm_mode = flag_cfg.comm_mode;
  if (cmd->count("--epochs")) out.epochs = flag_cfg.epochs;
  if (cmd->count("--loss-threshold")) out.loss_threshold = flag_cfg.loss_threshold;
  if (cmd->count("--checkpoint-every")) out.checkpoint_every = flag_cfg.checkpoint_every;
  if (cmd->count("--out")) out.out = flag_cfg.out;
  (void)overlay;
  return out;
}

RunConfig with_replica_seed(RunConfig cfg, int replica) {
  cfg.comm.seed = derive_seed(cfg.comm.seed, kReplicaSeedStream + static_cast<uint64_t>(replica));
  return cfg;
}

void write_comparison_csv(const std::string& path, const std::string& parameter,
                          const std::vector<std::pair<double, RunComparison>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "parameter,value,mean_diff,variance,replicas,single_replica\n";
  char buf[256];
  for (const auto& [value, cmp] : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%zu,%d\n", parameter.c_str(), value,
                  cmp.mean_diff, cmp.variance, cmp.per_replica.size(),
                  cmp.single_replica ? 1 : 0);
    out << buf;
  }
}

std::vector<TrajectoryLog> run_replicas(const RunConfig& base, int replicas,
                                        const fs::path& dir, const std::string& tag) {
  std::vector<TrajectoryLog> logs;
  for (int r = 0; r < replicas; ++r) {
    RunConfig cfg = with_replica_seed(base, r);
    cfg.out = (dir / (tag + "_rep" + std::to_string(r) + ".csv")).string();
    logs.push_back(run_experiment(cfg).log);
  }
  return logs;
}

int cmd_run(const RunConfig& cfg) {
  RunReport report = run_experiment(cfg);
  std::printf("run complete: protocol=%s p=%d steps=%ld rounds=%ld out=%s\n",
              report.log.protocol.c_str(), report.log.p, report.steps_per_worker,
              report.rounds_completed, cfg.out.c_str());
  if (!report.log.points.empty()) {
    const Checkpoint& last = report.log.points.back();
    std::printf("final: step=%ld train_loss=%.6g train_err=%.6g\n", last.step, last.train_loss,
                last.train_err);
  }
  return 0;
}

int cmd_sweep_scalar(const RunConfig& base, const std::string& parameter,
                     const std::vector<double>& values, int replicas, const std::string& out_dir,
                     const std::string& metric) {
  fs::create_directories(out_dir);
  fs::path dir(out_dir);

  RunConfig baseline = base;
  if (parameter == "beta") baseline.comm.beta = 1.0;
  else baseline.comm.a_tilde = 0.0;  // T sweep: equal-weight baseline
  auto baseline_logs = run_replicas(baseline, replicas, dir, parameter + "_baseline");

  std::vector<std::pair<double, RunComparison>> rows;
  for (double v : values) {
    RunConfig cand = base;
    std::string tag;
    char tagbuf[64];
    if (parameter == "beta") {
      cand.comm.beta = v;
      std::snprintf(tagbuf, sizeof(tagbuf), "beta_%g", v);
    } else {
      if (v <= 0.0) throw ConfigError("sweep-T: T values must be > 0");
      cand.comm.a_tilde = 1.0 / v;
      std::snprintf(tagbuf, sizeof(tagbuf), "T_%g", v);
    }
    tag = tagbuf;
    auto cand_logs = run_replicas(cand, replicas, dir, tag);
    rows.emplace_back(v, compare_runs(baseline_logs, cand_logs, metric));
  }
  std::string table = (dir / "comparison.csv").string();
  write_comparison_csv(table, parameter, rows);
  for (const auto& [v, cmp] : rows) {
    std::printf("%s=%-8g mean_diff=%-12.6g variance=%.6g\n", parameter.c_str(), v, cmp.mean_diff,
                cmp.variance);
  }
  std::printf("comparison table: %s\n", table.c_str());
  return 0;
}

int cmd_sweep_m(const RunConfig& base, const std::vector<double>& values, int replicas,
                const std::string& out_dir) {
  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  std::string path = (dir / "estimation_error.csv").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "m,replica,round,error\n";
  char buf[128];

  auto model = make_model(base.model);
  DatasetHandle data = load_dataset(base.dataset);
  for (double mv : values) {
    int m = static_cast<int>(mv);
    for (int r = 0; r < replicas; ++r) {
      RunConfig cfg = with_replica_seed(base, r);
      cfg.comm.m = m;
      EngineOptions opts = cfg.engine_options();
      opts.collect_estimation_errors = true;
      RunReport rep = run_wasgd_plus_sync(*model, data, opts);
      for (size_t round = 0; round < rep.estimation_errors.size(); ++round) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%zu,%.17g\n", m, r, round,
                      rep.estimation_errors[round]);
        out << buf;
      }
    }
    std::printf("m=%d done\n", m);
  }
  std::printf("estimation-error table: %s\n", path.c_str());
  return 0;
}

int cmd_sweep_final(const RunConfig& base, const std::string& parameter,
                    const std::vector<double>& values, int replicas, const std::string& out_dir) {
  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  std::string path = (dir / (parameter + "_table.csv")).string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << parameter << ",replica,final_step,final_train_loss,final_train_err,"
      << "final_test_loss,final_test_err\n";
  char buf[256];
  for (double v : values) {
    for (int r = 0; r < replicas; ++r) {
      RunConfig cfg = with_replica_seed(base, r);
      char tagbuf[64];
      std::snprintf(tagbuf, sizeof(tagbuf), "%s_%g_rep%d", parameter.c_str(), v, r);
      cfg.out = (dir / (std::string(tagbuf) + ".csv")).string();
      if (parameter == "tau") {
        cfg.comm.tau = static_cast<int>(v);
        if (cfg.comm.m > cfg.comm.tau) cfg.comm.m = cfg.comm.tau;
        if (cfg.checkpoint_every == 0) cfg.checkpoint_every = cfg.comm.tau;
      } else if (parameter == "delta") {
        cfg.order = "grouped";
        cfg.delta = static_cast<int>(v);
      } else {
        throw ConfigError("unknown sweep parameter " + parameter);
      }
      RunReport rep = run_experiment(cfg);
      if (rep.log.points.empty()) throw ConfigError("sweep run produced no checkpoints");
      const Checkpoint& last = rep.log.points.back();
      std::snprintf(buf, sizeof(buf), "%g,%d,%ld,%.17g,%.17g,%.17g,%.17g\n", v, r, last.step,
                    last.train_loss, last.train_err, last.test_loss, last.test_err);
      out << buf;
    }
    std::printf("%s=%g done\n", parameter.c_str(), v);
  }
  std::printf("final-metrics table: %s\n", path.c_str());
  return 0;
}

int cmd_variance_lab(const VarianceSpec& spec, long mc_steps, long mc_replicas, uint64_t seed,
                     const std::string& out_path) {
  double closed = asymptotic_variance(spec);
  double oracle = asymptotic_variance_oracle(spec);
  std::printf("closed_form=%.12g oracle=%.12g omega=%.12g\n", closed, oracle, spec.omega());

  MonteCarloReport mc;
  bool ran_mc = mc_steps > 0 && mc_replicas > 0;
  if (ran_mc) {
    mc = simulate_variance(spec, mc_steps, mc_replicas, seed);
    std::printf("empirical=%.12g relative_error=%.4f (steps=%ld replicas=%ld)\n",
                mc.empirical_variance, mc.relative_error, mc.steps, mc.replicas);
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw DataError("cannot open " + out_path + " for writing");
    out << "c,eta,sigma_b,sigma_h,zeta,p,omega,closed_form,oracle,empirical,relative_error,"
           "replicas,steps\n";
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%ld,%ld\n",
                  spec.c, spec.eta, spec.sigma_b, spec.sigma_h, spec.zeta, spec.p, spec.omega(),
                  closed, oracle, ran_mc ? mc.empirical_variance : 0.0,
                  ran_mc ? mc.relative_error : 0.0, ran_mc ? mc.replicas : 0L,
                  ran_mc ? mc.steps : 0L);
    out << buf;
    std::printf("report: %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_compare(const std::string& baseline_csv, const std::string& candidate_csv,
                const std::string& metric, const std::string& out_path) {
  std::vector<TrajectoryLog> baseline, candidate;
  for (const auto& p : split_paths(baseline_csv)) baseline.push_back(read_csv(p));
  for (const auto& p : split_paths(candidate_csv)) candidate.push_back(read_csv(p));
  RunComparison cmp = compare_runs(baseline, candidate, metric);
  std::printf("mean_diff=%.10g variance=%.10g replicas=%zu%s\n", cmp.mean_diff, cmp.variance,
              cmp.per_replica.size(), cmp.single_replica ? " (single replica)" : "");
  if (!out_path.empty()) {
    write_comparison_csv(out_path, metric, {{0.0, cmp}});
    std::printf("comparison table: %s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weighted-aggregating parallel SGD experiment driver"};
  app.require_subcommand(1);

  RunConfig run_cfg;
  std::string run_config_path;
  auto* run_cmd = app.add_subcommand("run", "execute one experiment");
  add_run_options(run_cmd, run_cfg, run_config_path);

  struct SweepArgs {
    RunConfig cfg;
    std::string config_path;
    std::string values;
    int replicas = 5;
    std::string out_dir;
    std::string metric = "train_loss";
  };
  SweepArgs beta_args, t_args, m_args, tau_args, delta_args;
  auto add_sweep = [&](const char* name, const char* help, SweepArgs& args) {
    auto* cmd = app.add_subcommand(name, help);
    add_run_options(cmd, args.cfg, args.config_path);
    cmd->add_option("--values", args.values, "comma-separated sweep values")->required();
    cmd->add_option("--replicas", args.replicas, "replicas per value");
    cmd->add_option("--out-dir", args.out_dir, "output directory")->required();
    cmd->add_option("--metric", args.metric, "comparison metric column");
    return cmd;
  };
  auto* beta_cmd = add_sweep("sweep-beta", "beta sweep against the beta = 1 baseline", beta_args);
  auto* t_cmd = add_sweep("sweep-T", "T = 1/a_tilde sweep against the equal-weight baseline", t_args);
  auto* m_cmd = add_sweep("sweep-m", "estimation-sample sweep, emits weight-accuracy errors", m_args);
  auto* tau_cmd = add_sweep("sweep-tau", "communication-period sweep, final metrics per tau", tau_args);
  auto* delta_cmd = add_sweep("sweep-delta", "label-run-length sweep with grouped orders", delta_args);

  VarianceSpec vspec;
  std::string vtheta;
  long mc_steps = 0, mc_replicas = 0;
  uint64_t vseed = 1;
  std::string vout;
  auto* var_cmd = app.add_subcommand("variance-lab", "closed-form and Monte-Carlo variance checks");
  var_cmd->add_option("--c", vspec.c, "curvature");
  var_cmd->add_option("--eta", vspec.eta, "learning rate");
  var_cmd->add_option("--sigma-b", vspec.sigma_b, "multiplicative noise std");
  var_cmd->add_option("--sigma-h", vspec.sigma_h, "additive noise std");
  var_cmd->add_option("--zeta", vspec.zeta, "communication probability");
  var_cmd->add_option("--p", vspec.p, "workers");
  var_cmd->add_option("--theta", vtheta, "comma-separated fixed weights (default equal)");
  var_cmd->add_option("--mc-steps", mc_steps, "Monte-Carlo total steps per replica (0 = skip)");
  var_cmd->add_option("--mc-replicas", mc_replicas, "Monte-Carlo replicas");
  var_cmd->add_option("--seed", vseed, "Monte-Carlo seed");
  var_cmd->add_option("--out", vout, "CSV report path");

  std::string cmp_baseline, cmp_candidate, cmp_metric = "train_loss", cmp_out;
  auto* cmp_cmd = app.add_subcommand("compare", "compare candidate runs to a baseline");
  cmp_cmd->add_option("--baseline", cmp_baseline, "comma-separated baseline CSVs")->required();
  cmp_cmd->add_option("--candidate", cmp_candidate, "comma-separated candidate CSVs")->required();
  cmp_cmd->add_option("--metric", cmp_metric, "metric column");
  cmp_cmd->add_option("--out", cmp_out, "comparison CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ConfigError::exit_code;
  }

  try {
    if (*run_cmd) return cmd_run(resolve_config(run_cmd, run_cfg, run_config_path));
    if (*beta_cmd) {
      return cmd_sweep_scalar(resolve_config(beta_cmd, beta_args.cfg, beta_args.config_path),
                              "beta", parse_values(beta_args.values), beta_args.replicas,
                              beta_args.out_dir, beta_args.metric);
    }
    if (*t_cmd) {
      return cmd_sweep_scalar(resolve_config(t_cmd, t_args.cfg, t_args.config_path), "T",
                              parse_values(t_args.values), t_args.replicas, t_args.out_dir,
                              t_args.metric);
    }
    if (*m_cmd) {
      return cmd_sweep_m(resolve_config(m_cmd, m_args.cfg, m_args.config_path),
                         parse_values(m_args.values), m_args.replicas, m_args.out_dir);
    }
    if (*tau_cmd) {
      return cmd_sweep_final(resolve_config(tau_cmd, tau_args.cfg, tau_args.config_path), "tau",
                             parse_values(tau_args.values), tau_args.replicas, tau_args.out_dir);
    }
    if (*delta_cmd) {
      return cmd_sweep_final(resolve_config(delta_cmd, delta_args.cfg, delta_args.config_path),
                             "delta", parse_values(delta_args.values), delta_args.replicas,
                             delta_args.out_dir);
    }
    if (*var_cmd) {
      if (!vtheta.empty()) vspec.theta = parse_values(vtheta);
      return cmd_variance_lab(vspec, mc_steps, mc_replicas, vseed, vout);
    }
    if (*cmp_cmd) return cmd_compare(cmp_baseline, cmp_candidate, cmp_metric, cmp_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return ConfigError::exit_code;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return DataError::exit_code;
  } catch (const InstabilityError& e) {
    std::fprintf(stderr, "instability: %s\n", e.what());
    return InstabilityError::exit_code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
