#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wasgd {

struct Checkpoint {
  long step = 0;
  double wall_ms = 0.0;
  double train_loss = 0.0;
  double train_err = 0.0;
  double test_loss = 0.0;
  double test_err = 0.0;
};

// One record per checkpoint; steps strictly increasing. Serialized as CSV v1:
//   protocol,p,seed,step,wall_ms,train_loss,train_err,test_loss,test_err
// Doubles are written with %.17g so a deterministic run round-trips
// byte-for-byte. wall_ms is 0 in simulation mode.
struct TrajectoryLog {
  std::string protocol;
  int p = 1;
  uint64_t seed = 0;
  std::vector<Checkpoint> points;

  void append(const Checkpoint& c);
};

std::string to_csv(const TrajectoryLog& log);
void write_csv(const TrajectoryLog& log, const std::string& path);
TrajectoryLog read_csv(const std::string& path);

// Extracts one metric column ("train_loss", "train_err", "test_loss",
// "test_err") as a series indexed by checkpoint.
std::vector<double> metric_series(const TrajectoryLog& log, const std::string& metric);

struct RunComparison {
  double mean_diff = 0.0;  // mean over candidate replicas of their per-replica diff
  double variance = 0.0;   // unbiased across-replica variance; 0 when single_replica
  std::vector<double> per_replica;
  bool single_replica = false;
};

// Per-replica diff i = (1/N) sum_j (baseline_mean_j - candidate_ij) over the
// N shared checkpoints, where baseline_mean_j averages the baseline replicas
// at checkpoint j. All logs must share one checkpoint step grid.
RunComparison compare_runs(const std::vector<TrajectoryLog>& baseline,
                           const std::vector<TrajectoryLog>& candidate,
                           const std::string& metric = "train_loss");

}  // namespace wasgd
