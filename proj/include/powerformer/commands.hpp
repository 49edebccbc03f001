#pragma once

#include "powerformer/agent.hpp"
#include "powerformer/network.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace powerformer {

struct RunConfig {
  std::string case_path;
  std::string sections_path;
  std::string scenarios_path;
  std::string checkpoint_path;  // empty = <out>/checkpoint.bin
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int count = 200;                 // generate
  std::vector<int> section_ids;    // restrict to these sections; empty = all
  std::string split = "test";      // evaluate: test | train | all
  int threads = 0;                 // evaluate workers, 0 = hardware concurrency
  EnvConfig env;
  TrainConfig train;
};

// Each command writes its artifacts, prints a short summary to `log` and throws powerformer::Error on failure.
void cmd_generate(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_evaluate(const RunConfig& config, std::ostream& log);
// AC (or DC) solve of the case, exported as bus.csv and branch.csv.
void cmd_solve(const RunConfig& config, bool dc, std::ostream& log);
// Writes a synthetic corridor case and its section file.
void cmd_synth(const RunConfig& config, int buses, std::ostream& log);

struct ScalingPoint {
  int nodes = 0;
  int edges = 0;
  double seconds = 0.0;  // median forward pass
};

// Forward-pass time of a single observation over random regular graphs.
std::vector<ScalingPoint> scaling_benchmark(const std::vector<int>& sizes, int degree, int repeats,
                                            const PowerformerConfig& config, std::uint64_t seed);
// Least-squares slope of log t against log n.
double power_law_exponent(const std::vector<ScalingPoint>& points);
void cmd_bench(const RunConfig& config, std::ostream& log);

}  // namespace powerformer
