#pragma once

#include "powerformer/grid.hpp"
#include "powerformer/network.hpp"
#include "powerformer/powerflow.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace powerformer {

struct Perturbation {
  enum class Kind { gen, load };
  Kind kind = Kind::gen;
  int index = 0;  // generator position for gen, bus id for load
  double factor = 1.0;

  bool operator==(const Perturbation&) const = default;
};

struct Scenario {
  int id = 0;
  int section = 0;  // target section id
  bool test = false;
  double initial_flow = 0.0;  // MW
  std::vector<Perturbation> perturbations;

  bool operator==(const Scenario&) const = default;
};

struct ScenarioOptions {
  double fraction = 0.25;       // of generators + loads perturbed per scenario
  int max_draws_per_scenario = 500;
  std::vector<int> section_ids;  // empty = all sections
};

// Insecure operating points: a random quarter of the units and loads scaled by k/10, k in 1..20,
// kept only when the AC solve converges and the target section is outside its bounds.
std::vector<Scenario> generate_scenarios(const GridCase& grid, const std::vector<Section>& sections,
                                         std::uint64_t seed, int count, const ScenarioOptions& options = {});

// Number of elements perturbed per scenario, ceil(fraction * (generators + loads)).
int perturbation_count(const GridCase& grid, double fraction = 0.25);

bool is_test_scenario(int id);

// Base case with the scenario's factors applied. Perturbed generators stay within [Pmin, Pmax].
GridCase apply_scenario(const GridCase& grid, const Scenario& scenario);

// Text format:
//   powerformer-scenarios 1
//   case <name> seed <seed> count <n>
//   <id> <section> <train|test> <initial flow> g:<gen>:<factor> l:<bus>:<factor> ...
void write_scenarios(std::ostream& out, const std::string& case_name, std::uint64_t seed,
                     const std::vector<Scenario>& scenarios);
std::vector<Scenario> read_scenarios(std::istream& in);
void save_scenarios(const std::string& path, const std::string& case_name, std::uint64_t seed,
                    const std::vector<Scenario>& scenarios);
std::vector<Scenario> load_scenarios(const std::string& path);

struct EnvConfig {
  double w_ed = 0.1;
  double success_bonus = 10.0;
  double divergence_reward = -10.0;
  int step_limit = 50;
  bool strict_q = false;
  double increase = 1.1;
  double decrease = 0.9;
  SectionEncodingMode encoding = SectionEncodingMode::full;
  AcOptions ac;
};

struct Observation {
  Eigen::MatrixXd features;  // n x 4, standardized
  Eigen::VectorXd section;   // section encoding
  std::vector<std::uint8_t> mask;  // 1 = allowed
  int step = 0;
  int section_id = 0;
};

enum class Outcome { running, success, step_limit, diverged };
std::string_view to_string(Outcome outcome);

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  Outcome outcome = Outcome::running;
  double cost = 0.0;
  double section_p = 0.0;
};

// Section encoding: per in-service branch (P p.u., Q p.u., from Vm, from Va rad), oriented by the
// section and zero outside it; active_only keeps P alone.
Eigen::VectorXd encode_section(const GridCase& grid, const PowerFlowSolution& sol, const Section& section,
                               SectionEncodingMode mode);
int section_width(const GridCase& grid, SectionEncodingMode mode);

// Action 2i raises generator i by the increase factor, 2i + 1 lowers it by the decrease factor.
// Out-of-service and slack-bus units are never dispatchable.
std::vector<std::uint8_t> action_mask(const GridCase& grid, const Eigen::VectorXd& pg, const EnvConfig& config = {});

class Environment {
 public:
  Environment(GridCase grid, std::vector<Section> sections, EnvConfig config = {},
              std::optional<FeatureScaler> scaler = {});

  const GridCase& base() const { return base_; }
  const std::vector<Section>& sections() const { return sections_; }
  const Section& section(int id) const;
  const EnvConfig& config() const { return config_; }
  const PowerGraph& graph() const { return graph_; }
  const Eigen::SparseMatrix<double>& adjacency() const { return adjacency_; }
  const std::optional<FeatureScaler>& scaler() const { return scaler_; }
  void set_scaler(std::optional<FeatureScaler> scaler) { scaler_ = std::move(scaler); }

  int nodes() const { return graph_.n; }
  int actions() const { return 2 * static_cast<int>(base_.generators.size()); }
  int section_width() const;

  Observation reset(const Scenario& scenario);
  StepResult step(int action);

  // Current state of the episode.
  const GridCase& grid() const { return grid_; }
  const PowerFlowSolution& solution() const { return solution_; }
  const Eigen::VectorXd& dispatch() const { return pg_; }
  const Observation& observation() const { return observation_; }
  double cost() const { return cost_; }
  double reference_cost() const { return reference_cost_; }
  double section_p() const;
  bool done() const { return done_; }

  // R_pf + w_ed * R_ed for a section flow and cost, without the terminal bonus.
  double shaped_reward(double section_p, double cost) const;
  bool satisfied(const PowerFlowSolution& sol) const;

 private:
  Observation observe() const;

  GridCase base_;
  std::vector<Section> sections_;
  EnvConfig config_;
  std::optional<FeatureScaler> scaler_;
  PowerGraph graph_;
  Eigen::SparseMatrix<double> adjacency_;

  GridCase grid_;
  std::size_t target_ = 0;
  Eigen::VectorXd pg_;
  PowerFlowSolution solution_;
  Observation observation_;
  double cost_ = 0.0;
  double reference_cost_ = 1.0;
  int steps_ = 0;
  bool done_ = true;
};

// Scaler fitted on the initial states of the training scenarios.
FeatureScaler fit_scaler(const GridCase& grid, const std::vector<Scenario>& scenarios, const AcOptions& ac = {});

}  // namespace powerformer
