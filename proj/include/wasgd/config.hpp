#pragma once

#include <optional>
#include <string>

#include "wasgd/protocol.hpp"

namespace wasgd {

// One experiment: protocol id, model and dataset specs, the CommConfig
// fields, and run control. Serialized as a flat key = value text file.
struct RunConfig {
  std::string protocol = "wasgd+";  // wasgd+ | wasgd+async | wasgd | easgd |
                                    // simuparallel | omwu | mmwu | sgd
  std::string model = "softmax:16,10";
  std::string dataset = "blobs:2000,10,16,0.5,1";
  CommConfig comm;
  std::string execution = "sim";    // sim | threads
  std::string order = "scored";     // scored | reshuffle | shared | grouped
  int delta = 1;                    // grouped-order run length
  std::string comm_mode = "period"; // period | zeta
  long epochs = 1;
  std::optional<double> loss_threshold;
  long checkpoint_every = 0;  // 0 -> tau
  std::string out = "run.csv";

  EngineOptions engine_options() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
std::string serialize_config(const RunConfig& cfg);
void write_config_file(const RunConfig& cfg, const std::string& path);

// Builds the model and dataset, dispatches the protocol, and writes the
// trajectory CSV to cfg.out (unless empty). Deterministic CSV in sim mode.
RunReport run_experiment(const RunConfig& cfg);

}  // namespace wasgd
