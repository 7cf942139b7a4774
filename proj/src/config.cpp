#include "wasgd/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wasgd/errors.hpp"

namespace wasgd {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + value + "'");
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
  }
}

}  // namespace

EngineOptions RunConfig::engine_options() const {
  EngineOptions opts;
  opts.comm = comm;
  opts.epochs = epochs;
  opts.loss_threshold = loss_threshold;
  opts.checkpoint_every = checkpoint_every;
  opts.group_delta = delta;

  if (order == "scored") opts.order_mode = OrderMode::Scored;
  else if (order == "reshuffle") opts.order_mode = OrderMode::Reshuffle;
  else if (order == "shared") opts.order_mode = OrderMode::SharedRandom;
  else if (order == "grouped") opts.order_mode = OrderMode::GroupedLabel;
  else throw ConfigError("config: unknown order '" + order + "'");

  if (comm_mode == "period") opts.comm_mode = CommMode::Period;
  else if (comm_mode == "zeta") opts.comm_mode = CommMode::ZetaBernoulli;
  else throw ConfigError("config: unknown comm_mode '" + comm_mode + "'");

  bool async = protocol == "wasgd+async";
  if (execution == "sim") {
    opts.execution = async ? Execution::SimAsync : Execution::SimSync;
  } else if (execution == "threads") {
    opts.execution = async ? Execution::ThreadedAsync : Execution::ThreadedSync;
  } else {
    throw ConfigError("config: unknown execution '" + execution + "'");
  }
  return opts;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key == "protocol") cfg.protocol = value;
    else if (key == "model") cfg.model = value;
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "p") cfg.comm.p = static_cast<int>(parse_long(key, value));
    else if (key == "b") cfg.comm.b = static_cast<int>(parse_long(key, value));
    else if (key == "tau") cfg.comm.tau = static_cast<int>(parse_long(key, value));
    else if (key == "beta") cfg.comm.beta = parse_double(key, value);
    else if (key == "a_tilde") cfg.comm.a_tilde = parse_double(key, value);
    else if (key == "eta") cfg.comm.eta = parse_double(key, value);
    else if (key == "m") cfg.comm.m = static_cast<int>(parse_long(key, value));
    else if (key == "c") cfg.comm.c = static_cast<int>(parse_long(key, value));
    else if (key == "n") cfg.comm.n = static_cast<int>(parse_long(key, value));
    else if (key == "zeta") cfg.comm.zeta = parse_double(key, value);
    else if (key == "alpha") cfg.comm.alpha = parse_double(key, value);
    else if (key == "seed") cfg.comm.seed = static_cast<uint64_t>(parse_long(key, value));
    else if (key == "execution") cfg.execution = value;
    else if (key == "order") cfg.order = value;
    else if (key == "delta") cfg.delta = static_cast<int>(parse_long(key, value));
    else if (key == "comm_mode") cfg.comm_mode = value;
    else if (key == "epochs") cfg.epochs = parse_long(key, value);
    else if (key == "loss_threshold") cfg.loss_threshold = parse_double(key, value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_long(key, value);
    else if (key == "out") cfg.out = value;
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
  char buf[256];
  std::string out;
  auto kv = [&](const char* key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  };
  auto kd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    kv(key, buf);
  };
  kv("protocol", cfg.protocol);
  kv("model", cfg.model);
  kv("dataset", cfg.dataset);
  kv("p", std::to_string(cfg.comm.p));
  kv("b", std::to_string(cfg.comm.b));
  kv("tau", std::to_string(cfg.comm.tau));
  kd("beta", cfg.comm.beta);
  kd("a_tilde", cfg.comm.a_tilde);
  kd("eta", cfg.comm.eta);
  kv("m", std::to_string(cfg.comm.m));
  kv("c", std::to_string(cfg.comm.c));
  kv("n", std::to_string(cfg.comm.n));
  kd("zeta", cfg.comm.zeta);
  kd("alpha", cfg.comm.alpha);
  std::snprintf(buf, sizeof(buf), "%" PRIu64, cfg.comm.seed);
  kv("seed", buf);
  kv("execution", cfg.execution);
  kv("order", cfg.order);
  kv("delta", std::to_string(cfg.delta));
  kv("comm_mode", cfg.comm_mode);
  kv("epochs", std::to_string(cfg.epochs));
  if (cfg.loss_threshold) kd("loss_threshold", *cfg.loss_threshold);
  kv("checkpoint_every", std::to_string(cfg.checkpoint_every));
  kv("out", cfg.out);
  return out;
}

void write_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("config: cannot open " + path + " for writing");
  out << serialize_config(cfg);
}

RunReport run_experiment(const RunConfig& cfg) {
  auto model = make_model(cfg.model);
  DatasetHandle data = load_dataset(cfg.dataset);
  if (model->feature_dim() != 0 && model->feature_dim() != data.feature_dim) {
    throw ConfigError("config: model expects feature dim " +
                      std::to_string(model->feature_dim()) + " but dataset has " +
                      std::to_string(data.feature_dim));
  }
  EngineOptions opts = cfg.engine_options();

  RunReport report;
  if (cfg.protocol == "wasgd+") {
    report = run_wasgd_plus_sync(*model, data, opts);
  } else if (cfg.protocol == "wasgd+async") {
    report = run_wasgd_plus_async(*model, data, opts);
  } else if (cfg.protocol == "wasgd") {
    report = run_wasgd_sync(*model, data, opts);
  } else if (cfg.protocol == "easgd") {
    report = run_easgd(*model, data, opts);
  } else if (cfg.protocol == "simuparallel") {
    report = run_simuparallel(*model, data, opts);
  } else if (cfg.protocol == "omwu") {
    report = run_mwu(*model, data, opts, false);
  } else if (cfg.protocol == "mmwu") {
    report = run_mwu(*model, data, opts, true);
  } else if (cfg.protocol == "sgd") {
    opts.comm.p = 1;
    opts.comm.beta = 0.0;
    opts.order_mode = OrderMode::Reshuffle;
    opts.execution = Execution::SimSync;
    report = run_engine(*model, data, opts, "sgd");
  } else {
    throw ConfigError("config: unknown protocol '" + cfg.protocol + "'");
  }
  if (!cfg.out.empty()) write_csv(report.log, cfg.out);
  return report;
}

}  // namespace wasgd
