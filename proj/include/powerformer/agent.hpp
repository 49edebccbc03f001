#pragma once

#include "powerformer/environment.hpp"
#include "powerformer/network.hpp"
#include "powerformer/optim.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <vector>

namespace powerformer {

struct Transition {
  std::shared_ptr<const Observation> observation;
  int action = 0;
  double reward = 0.0;
  std::shared_ptr<const Observation> next;  // unused when done
  bool done = false;
};

// FIFO replay memory. Capacity counts transitions, or whole episodes when by_episode is set.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity, bool by_episode = false);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t inserted() const { return inserted_; }
  // Oldest first.
  const Transition& operator[](std::size_t i) const { return items_[i]; }

  // Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t count, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  bool by_episode_;
  std::deque<Transition> items_;
  std::deque<std::size_t> episode_lengths_;  // completed episodes, oldest first
  std::size_t open_episode_ = 0;
  std::size_t inserted_ = 0;
};

struct TrainConfig {
  double gamma = 0.9;
  std::size_t batch = 64;
  int target_update = 100;  // gradient updates between target copies
  double epsilon_start = 0.1;
  double epsilon_end = 0.01;
  long epsilon_decay_steps = 500000;
  long total_steps = 0;
  int update_every = 1;  // environment steps per gradient update
  std::size_t buffer_capacity = 20000;
  bool buffer_by_episode = false;
  long eval_interval = 1000;
  int smooth_window = 100;  // episodes in the trailing success rate
  std::uint64_t seed = 0;
  ad::AdamOptions adam;
  PowerformerConfig network;
};

double epsilon_at(const TrainConfig& config, long step);

// Highest q among allowed actions, lowest index on ties. Throws AllMasked.
int greedy_action(const Eigen::VectorXd& q, std::span<const std::uint8_t> mask);
// Uniform over allowed actions with probability epsilon, greedy otherwise.
int select_action(const Eigen::VectorXd& q, std::span<const std::uint8_t> mask, double epsilon, std::mt19937_64& rng);

GraphBatch make_batch(const Eigen::SparseMatrix<double>& adjacency, std::span<const Observation* const> observations);
GraphBatch make_batch(const Eigen::SparseMatrix<double>& adjacency, const Observation& observation);

// TD targets r + gamma * max over allowed a' of Q_target(s', a'), or r for terminal transitions.
Eigen::VectorXd td_targets(QNetwork& target, const Eigen::SparseMatrix<double>& adjacency,
                           std::span<const Transition* const> batch, double gamma);

// Mean squared TD error on the online network's tape (gradients reach only the online parameters).
Var td_loss(Tape& tape, QNetwork& online, const Eigen::SparseMatrix<double>& adjacency,
            std::span<const Transition* const> batch, const Eigen::VectorXd& targets);

// One optimizer step on the batch; returns the loss before the step. Throws EmptyBatch.
double td_update(QNetwork& online, QNetwork& target, ad::Adam<double>& optimizer,
                 const Eigen::SparseMatrix<double>& adjacency, std::span<const Transition* const> batch, double gamma);

struct MetricsRow {
  long step = 0;
  double trailing_success_rate = 0.0;
  double loss = 0.0;  // mean TD loss over the interval, NaN before the first update
  double epsilon = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  QNetwork network;
  std::vector<MetricsRow> metrics;
  long episodes = 0;
  long updates = 0;
};

using IntervalCallback = std::function<void(const MetricsRow&, const QNetwork&)>;

// Single-threaded and deterministic under config.seed.
TrainResult train(Environment& env, const std::vector<Scenario>& scenarios, const TrainConfig& config,
                  const IntervalCallback& on_interval = {});

struct ScenarioResult {
  int id = 0;
  int section = 0;
  Outcome outcome = Outcome::running;
  int steps = 0;
  double cost = 0.0;
  double initial_flow = 0.0;
  double final_flow = 0.0;
  double inference_seconds = 0.0;
  double solver_seconds = 0.0;
};

struct SectionSummary {
  int scenarios = 0;
  double success_rate = 0.0;  // percent
  double mean_cost = 0.0;
};

struct EvalReport {
  int scenarios = 0;
  double success_rate = 0.0;  // percent
  double mean_cost = 0.0;
  double inference_mean = 0.0;  // seconds per scenario
  double inference_std = 0.0;
  double solver_mean = 0.0;
  std::map<int, SectionSummary> per_section;
  std::vector<ScenarioResult> results;  // scenario order
};

// Greedy rollouts (epsilon = 0). Scenarios are spread over worker threads, each with its own copy of
// the network and environment; threads = 0 picks the hardware concurrency.
EvalReport evaluate(const QNetwork& net, const Environment& env, const std::vector<Scenario>& scenarios,
                    int threads = 0);

// Uniform choice among allowed actions, seeded per scenario.
EvalReport evaluate_random(const Environment& env, const std::vector<Scenario>& scenarios, std::uint64_t seed,
                           int threads = 0);

// Readout embedding of each scenario's initial observation, one column per scenario.
Eigen::MatrixXd initial_embeddings(const QNetwork& net, const Environment& env, const std::vector<Scenario>& scenarios);

}  // namespace powerformer
