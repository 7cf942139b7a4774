#include "wasgd/trajectory.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wasgd/errors.hpp"

namespace wasgd {

namespace {
constexpr const char* kHeader = "protocol,p,seed,step,wall_ms,train_loss,train_err,test_loss,test_err";
}

void TrajectoryLog::append(const Checkpoint& c) {
  if (!points.empty() && c.step <= points.back().step) {
    throw ConfigError("trajectory: checkpoint steps must be strictly increasing");
  }
  points.push_back(c);
}

std::string to_csv(const TrajectoryLog& log) {
  std::string out(kHeader);
  out.push_back('\n');
  char buf[512];
  for (const Checkpoint& c : log.points) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%" PRIu64 ",%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  log.protocol.c_str(), log.p, log.seed, c.step, c.wall_ms, c.train_loss,
                  c.train_err, c.test_loss, c.test_err);
    out += buf;
  }
  return out;
}

void write_csv(const TrajectoryLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("trajectory: cannot open " + path + " for writing");
  out << to_csv(log);
}

TrajectoryLog read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("trajectory: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw DataError("trajectory: bad header in " + path);
  }
  TrajectoryLog log;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) throw DataError("trajectory: bad row in " + path);
    if (first) {
      log.protocol = fields[0];
      log.p = std::stoi(fields[1]);
      log.seed = std::stoull(fields[2]);
      first = false;
    }
    Checkpoint c;
    c.step = std::stol(fields[3]);
    c.wall_ms = std::stod(fields[4]);
    c.train_loss = std::stod(fields[5]);
    c.train_err = std::stod(fields[6]);
    c.test_loss = std::stod(fields[7]);
    c.test_err = std::stod(fields[8]);
    log.points.push_back(c);
  }
  return log;
}

std::vector<double> metric_series(const TrajectoryLog& log, const std::string& metric) {
  std::vector<double> out;
  out.reserve(log.points.size());
  for (const Checkpoint& c : log.points) {
    if (metric == "train_loss") out.push_back(c.train_loss);
    else if (metric == "train_err") out.push_back(c.train_err);
    else if (metric == "test_loss") out.push_back(c.test_loss);
    else if (metric == "test_err") out.push_back(c.test_err);
    else throw ConfigError("trajectory: unknown metric '" + metric + "'");
  }
  return out;
}

RunComparison compare_runs(const std::vector<TrajectoryLog>& baseline,
                           const std::vector<TrajectoryLog>& candidate,
                           const std::string& metric) {
  if (baseline.empty() || candidate.empty()) {
    throw ConfigError("compare_runs: need at least one baseline and one candidate log");
  }
  const auto& grid = baseline[0].points;
  size_t N = grid.size();
  if (N == 0) throw ConfigError("compare_runs: baseline has no checkpoints");
  auto check_grid = [&](const TrajectoryLog& log) {
    if (log.points.size() != N) {
      throw ConfigError("compare_runs: checkpoint grids do not align");
    }
    for (size_t j = 0; j < N; ++j) {
      if (log.points[j].step != grid[j].step) {
        throw ConfigError("compare_runs: checkpoint grids do not align");
      }
    }
  };
  for (const auto& log : baseline) check_grid(log);
  for (const auto& log : candidate) check_grid(log);

  std::vector<double> base_mean(N, 0.0);
  for (const auto& log : baseline) {
    auto series = metric_series(log, metric);
    for (size_t j = 0; j < N; ++j) base_mean[j] += series[j];
  }
  for (double& v : base_mean) v /= static_cast<double>(baseline.size());

  RunComparison cmp;
  for (const auto& log : candidate) {
    auto series = metric_series(log, metric);
    double d = 0.0;
    for (size_t j = 0; j < N; ++j) d += base_mean[j] - series[j];
    cmp.per_replica.push_back(d / static_cast<double>(N));
  }
  for (double d : cmp.per_replica) cmp.mean_diff += d;
  cmp.mean_diff /= static_cast<double>(cmp.per_replica.size());
  if (cmp.per_replica.size() < 2) {
    cmp.single_replica = true;
    cmp.variance = 0.0;
  } else {
    double ss = 0.0;
    for (double d : cmp.per_replica) ss += (d - cmp.mean_diff) * (d - cmp.mean_diff);
    cmp.variance = ss / static_cast<double>(cmp.per_replica.size() - 1);
  }
  return cmp;
}

}  // namespace wasgd
