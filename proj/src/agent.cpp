#include "powerformer/agent.hpp"

#include "powerformer/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace powerformer {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Policy = std::function<int(const Environment&, const Observation&, int scenario_id)>;

ScenarioResult rollout(Environment& env, const Scenario& scenario, const Policy& policy) {
  ScenarioResult r;
  r.id = scenario.id;
  r.section = scenario.section;
  r.initial_flow = scenario.initial_flow;
  auto t0 = Clock::now();
  try {
    Observation obs = env.reset(scenario);
    r.solver_seconds += seconds_since(t0);
    r.cost = env.cost();
    r.final_flow = env.section_p();
    while (true) {
      t0 = Clock::now();
      const int action = policy(env, obs, scenario.id);
      r.inference_seconds += seconds_since(t0);
      t0 = Clock::now();
      StepResult s = env.step(action);
      r.solver_seconds += seconds_since(t0);
      r.steps = s.observation.step;
      r.cost = s.cost;
      if (s.outcome != Outcome::diverged) r.final_flow = s.section_p;
      if (s.done) {
        r.outcome = s.outcome;
        break;
      }
      obs = std::move(s.observation);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonConvergence && e.code() != ErrorCode::SingularJacobian) throw;
    r.outcome = Outcome::diverged;
  }
  return r;
}

int worker_count(int threads, std::size_t jobs) {
  int n = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min(n, static_cast<int>(jobs)));
}

// make_policy is called once per worker so that each thread owns its policy state.
EvalReport run_evaluation(const Environment& env, const std::vector<Scenario>& scenarios,
                          const std::function<Policy()>& make_policy, int threads) {
  EvalReport report;
  report.scenarios = static_cast<int>(scenarios.size());
  report.results.resize(scenarios.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(worker_count(threads, scenarios.size())));
  auto work = [&](std::size_t worker) {
    try {
      Environment local = env;
      const Policy policy = make_policy();
      for (std::size_t i = next++; i < scenarios.size(); i = next++) {
        report.results[i] = rollout(local, scenarios[i], policy);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (errors.size() == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < errors.size(); ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  if (scenarios.empty()) return report;
  double successes = 0.0, cost = 0.0, inf = 0.0, inf_sq = 0.0, solver = 0.0;
  std::map<int, std::pair<int, double>> section_success;  // id -> (successes, cost)
  for (const auto& r : report.results) {
    const bool ok = r.outcome == Outcome::success;
    successes += ok ? 1.0 : 0.0;
    cost += r.cost;
    inf += r.inference_seconds;
    inf_sq += r.inference_seconds * r.inference_seconds;
    solver += r.solver_seconds;
    auto& s = report.per_section[r.section];
    ++s.scenarios;
    section_success[r.section].first += ok ? 1 : 0;
    section_success[r.section].second += r.cost;
  }
  const double n = static_cast<double>(scenarios.size());
  report.success_rate = 100.0 * successes / n;
  report.mean_cost = cost / n;
  report.inference_mean = inf / n;
  report.inference_std = std::sqrt(std::max(0.0, inf_sq / n - report.inference_mean * report.inference_mean));
  report.solver_mean = solver / n;
  for (auto& [id, s] : report.per_section) {
    s.success_rate = 100.0 * section_success[id].first / s.scenarios;
    s.mean_cost = section_success[id].second / s.scenarios;
  }
  return report;
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity, bool by_episode) : capacity_(capacity), by_episode_(by_episode) {
  if (capacity == 0) throw Error(ErrorCode::MalformedConfig, "replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  const bool done = t.done;
  items_.push_back(std::move(t));
  ++inserted_;
  if (!by_episode_) {
    if (items_.size() > capacity_) items_.pop_front();
    return;
  }
  ++open_episode_;
  if (done) {
    episode_lengths_.push_back(open_episode_);
    open_episode_ = 0;
    while (episode_lengths_.size() > capacity_) {
      items_.erase(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(episode_lengths_.front()));
      episode_lengths_.pop_front();
    }
  }
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  if (items_.empty()) throw Error(ErrorCode::EmptyBatch, "sampling from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out(count);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

double epsilon_at(const TrainConfig& config, long step) {
  if (config.epsilon_decay_steps <= 0 || step >= config.epsilon_decay_steps) return config.epsilon_end;
  const double frac = static_cast<double>(step) / static_cast<double>(config.epsilon_decay_steps);
  return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start);
}

int greedy_action(const Eigen::VectorXd& q, std::span<const std::uint8_t> mask) {
  if (static_cast<Eigen::Index>(mask.size()) != q.size()) {
    throw Error(ErrorCode::ShapeMismatch, "mask of length " + std::to_string(mask.size()) + " for " +
                                              std::to_string(q.size()) + " q-values");
  }
  int best = -1;
  for (Eigen::Index a = 0; a < q.size(); ++a) {
    if (mask[static_cast<std::size_t>(a)] && (best < 0 || q[a] > q[best])) best = static_cast<int>(a);
  }
  if (best < 0) throw Error(ErrorCode::AllMasked, "every action is masked");
  return best;
}

int select_action(const Eigen::VectorXd& q, std::span<const std::uint8_t> mask, double epsilon, std::mt19937_64& rng) {
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon) {
    std::vector<int> allowed;
    for (std::size_t a = 0; a < mask.size(); ++a) {
      if (mask[a]) allowed.push_back(static_cast<int>(a));
    }
    if (allowed.empty()) throw Error(ErrorCode::AllMasked, "every action is masked");
    return allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(rng)];
  }
  return greedy_action(q, mask);
}

GraphBatch make_batch(const Eigen::SparseMatrix<double>& adjacency, std::span<const Observation* const> observations) {
  if (observations.empty()) throw Error(ErrorCode::EmptyBatch, "no observations to batch");
  GraphBatch b;
  b.adjacency = &adjacency;
  b.nodes = adjacency.rows();
  b.batch = static_cast<Eigen::Index>(observations.size());
  b.features.resize(4, b.nodes * b.batch);
  b.sections.resize(observations[0]->section.size(), b.batch);
  for (Eigen::Index j = 0; j < b.batch; ++j) {
    const Observation& o = *observations[static_cast<std::size_t>(j)];
    if (o.features.rows() != b.nodes || o.features.cols() != 4 || o.section.size() != b.sections.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "observation " + ad::shape_str(o.features.rows(), o.features.cols()) +
                                                " does not fit a batch over " + std::to_string(b.nodes) + " nodes");
    }
    b.features.middleCols(j * b.nodes, b.nodes) = o.features.transpose();
    b.sections.col(j) = o.section;
  }
  return b;
}

GraphBatch make_batch(const Eigen::SparseMatrix<double>& adjacency, const Observation& observation) {
  const Observation* one[] = {&observation};
  return make_batch(adjacency, one);
}

Eigen::VectorXd td_targets(QNetwork& target, const Eigen::SparseMatrix<double>& adjacency,
                           std::span<const Transition* const> batch, double gamma) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(batch.size()));
  std::vector<const Observation*> next;
  std::vector<Eigen::Index> slot;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[static_cast<Eigen::Index>(i)] = batch[i]->reward;
    if (!batch[i]->done && gamma != 0.0) {
      next.push_back(batch[i]->next.get());
      slot.push_back(static_cast<Eigen::Index>(i));
    }
  }
  if (next.empty()) return y;
  const Eigen::MatrixXd q = target.predict(make_batch(adjacency, next));
  for (std::size_t j = 0; j < next.size(); ++j) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < q.rows(); ++a) {
      if (next[j]->mask[static_cast<std::size_t>(a)]) best = std::max(best, q(a, static_cast<Eigen::Index>(j)));
    }
    if (std::isfinite(best)) y[slot[j]] += gamma * best;
  }
  return y;
}

Var td_loss(Tape& tape, QNetwork& online, const Eigen::SparseMatrix<double>& adjacency,
            std::span<const Transition* const> batch, const Eigen::VectorXd& targets) {
  std::vector<const Observation*> obs;
  std::vector<int> actions;
  for (const auto* t : batch) {
    obs.push_back(t->observation.get());
    actions.push_back(t->action);
  }
  const Var q = online.q_values(tape, make_batch(adjacency, obs));
  return ad::mse(ad::pick(q, std::span<const int>(actions)), Eigen::MatrixXd(targets.transpose()));
}

double td_update(QNetwork& online, QNetwork& target, ad::Adam<double>& optimizer,
                 const Eigen::SparseMatrix<double>& adjacency, std::span<const Transition* const> batch, double gamma) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "td_update needs at least one transition");
  const Eigen::VectorXd y = td_targets(target, adjacency, batch, gamma);
  Tape tape;
  const Var loss = td_loss(tape, online, adjacency, batch, y);
  const double value = loss.value()(0, 0);
  tape.backward(loss);
  optimizer.step(online.params());
  return value;
}

TrainResult train(Environment& env, const std::vector<Scenario>& scenarios, const TrainConfig& config,
                  const IntervalCallback& on_interval) {
  if (scenarios.empty()) throw Error(ErrorCode::EmptyBatch, "no training scenarios");
  if (!(config.gamma > 0.0 && config.gamma <= 1.0)) throw Error(ErrorCode::MalformedConfig, "gamma must lie in (0, 1]");
  if (config.batch == 0 || config.update_every < 1 || config.target_update < 1 || config.eval_interval < 1) {
    throw Error(ErrorCode::MalformedConfig, "batch, update_every, target_update and eval_interval must be positive");
  }
  PowerformerConfig net_config = config.network;
  net_config.section_encoding = env.config().encoding;
  TrainResult result{QNetwork(net_config, env.nodes(), env.section_width(), env.actions()), {}, 0, 0};
  QNetwork& online = result.network;
  QNetwork target = online;
  ad::Adam<double> optimizer(config.adam);
  ReplayBuffer buffer(config.buffer_capacity, config.buffer_by_episode);
  std::mt19937_64 rng(config.seed);
  const auto& adj = env.adjacency();

  std::deque<std::uint8_t> window;
  double loss_sum = 0.0;
  long loss_count = 0;
  const auto t0 = Clock::now();
  auto emit = [&](long step) {
    MetricsRow row;
    row.step = step;
    if (!window.empty()) {
      row.trailing_success_rate =
          static_cast<double>(std::count(window.begin(), window.end(), std::uint8_t{1})) / static_cast<double>(window.size());
    }
    row.loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : std::numeric_limits<double>::quiet_NaN();
    row.epsilon = epsilon_at(config, step);
    row.wall_seconds = seconds_since(t0);
    result.metrics.push_back(row);
    loss_sum = 0.0;
    loss_count = 0;
    if (on_interval) on_interval(row, online);
  };

  std::shared_ptr<const Observation> current;
  std::uniform_int_distribution<std::size_t> pick_scenario(0, scenarios.size() - 1);
  for (long step = 0; step < config.total_steps;) {
    if (!current) current = std::make_shared<const Observation>(env.reset(scenarios[pick_scenario(rng)]));
    const double eps = epsilon_at(config, step);
    int action = 0;
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < eps) {
      std::vector<int> allowed;
      for (std::size_t a = 0; a < current->mask.size(); ++a) {
        if (current->mask[a]) allowed.push_back(static_cast<int>(a));
      }
      if (allowed.empty()) throw Error(ErrorCode::AllMasked, "every action is masked at episode start");
      action = allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(rng)];
    } else {
      action = greedy_action(online.predict(make_batch(adj, *current)).col(0), current->mask);
    }
    StepResult r = env.step(action);
    ++step;
    Transition t;
    t.observation = current;
    t.action = action;
    t.reward = r.reward;
    t.done = r.done;
    if (r.done) {
      window.push_back(r.outcome == Outcome::success ? 1 : 0);
      if (static_cast<int>(window.size()) > config.smooth_window) window.pop_front();
      ++result.episodes;
      current.reset();
    } else {
      t.next = std::make_shared<const Observation>(std::move(r.observation));
      current = t.next;
    }
    buffer.push(std::move(t));

    if (buffer.size() >= config.batch && step % config.update_every == 0) {
      const auto batch = buffer.sample(config.batch, rng);
      loss_sum += td_update(online, target, optimizer, adj, batch, config.gamma);
      ++loss_count;
      ++result.updates;
      if (result.updates % config.target_update == 0) target.params().copy_values_from(online.params());
    }
    if (step % config.eval_interval == 0 || step == config.total_steps) emit(step);
  }
  return result;
}

EvalReport evaluate(const QNetwork& net, const Environment& env, const std::vector<Scenario>& scenarios, int threads) {
  return run_evaluation(
      env, scenarios,
      [&net]() -> Policy {
        auto local = std::make_shared<QNetwork>(net);
        return [local](const Environment& e, const Observation& obs, int) {
          return greedy_action(local->predict(make_batch(e.adjacency(), obs)).col(0), obs.mask);
        };
      },
      threads);
}

EvalReport evaluate_random(const Environment& env, const std::vector<Scenario>& scenarios, std::uint64_t seed,
                           int threads) {
  return run_evaluation(
      env, scenarios,
      [seed]() -> Policy {
        auto rng = std::make_shared<std::mt19937_64>();
        return [seed, rng](const Environment&, const Observation& obs, int scenario_id) {
          // reseed per episode so results do not depend on thread scheduling
          if (obs.step == 0) rng->seed(mix(seed, static_cast<std::uint64_t>(scenario_id)));
          std::vector<int> allowed;
          for (std::size_t a = 0; a < obs.mask.size(); ++a) {
            if (obs.mask[a]) allowed.push_back(static_cast<int>(a));
          }
          if (allowed.empty()) throw Error(ErrorCode::AllMasked, "every action is masked");
          return allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(*rng)];
        };
      },
      threads);
}

Eigen::MatrixXd initial_embeddings(const QNetwork& net, const Environment& env, const std::vector<Scenario>& scenarios) {
  QNetwork local = net;
  Environment e = env;
  Eigen::MatrixXd out(net.config().hidden, static_cast<Eigen::Index>(scenarios.size()));
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = local.predict_embedding(make_batch(e.adjacency(), e.reset(scenarios[i])));
  }
  return out;
}

}  // namespace powerformer
