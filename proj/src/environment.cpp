#include "powerformer/environment.hpp"

#include "powerformer/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace powerformer {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_slack_unit(const GridCase& grid, const Generator& g) {
  return grid.buses[static_cast<std::size_t>(grid.bus_order()[static_cast<std::size_t>(grid.node_of(g.bus))])].type ==
         BusType::slack;
}

double parse_double(std::string_view token, int line) {
  double v = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw Error(ErrorCode::MalformedRow, "scenario line " + std::to_string(line) + ": bad number '" +
                                             std::string(token) + "'");
  }
  return v;
}

int parse_int(std::string_view token, int line) {
  int v = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw Error(ErrorCode::MalformedRow, "scenario line " + std::to_string(line) + ": bad integer '" +
                                             std::string(token) + "'");
  }
  return v;
}

bool bounds_hold(const SectionFlow& f, bool strict_q) { return f.within_p_bounds && (!strict_q || f.within_q_bounds); }

}  // namespace

int perturbation_count(const GridCase& grid, double fraction) {
  int gens = 0;
  for (const auto& g : grid.generators) gens += g.in_service ? 1 : 0;
  const auto loads = static_cast<int>(grid.load_nodes().size());
  return static_cast<int>(std::ceil(fraction * static_cast<double>(gens + loads) - 1e-9));
}

bool is_test_scenario(int id) { return splitmix64(static_cast<std::uint64_t>(id)) % 10 == 0; }

GridCase apply_scenario(const GridCase& grid, const Scenario& scenario) {
  GridCase out = grid;
  for (const auto& p : scenario.perturbations) {
    if (p.kind == Perturbation::Kind::gen) {
      if (p.index < 0 || p.index >= static_cast<int>(out.generators.size())) {
        throw Error(ErrorCode::DanglingReference, "scenario " + std::to_string(scenario.id) + " names generator " +
                                                      std::to_string(p.index));
      }
      auto& g = out.generators[static_cast<std::size_t>(p.index)];
      g.pg = std::clamp(g.pg * p.factor, g.pmin, g.pmax);
    } else {
      auto& b = out.buses[static_cast<std::size_t>(out.bus_order()[static_cast<std::size_t>(out.node_of(p.index))])];
      b.pd *= p.factor;
      b.qd *= p.factor;
    }
  }
  return out;
}

std::vector<Scenario> generate_scenarios(const GridCase& grid, const std::vector<Section>& sections,
                                         std::uint64_t seed, int count, const ScenarioOptions& options) {
  if (count < 1) throw Error(ErrorCode::MalformedConfig, "scenario count must be at least 1");
  std::vector<const Section*> targets;
  for (const auto& s : sections) {
    if (options.section_ids.empty() ||
        std::find(options.section_ids.begin(), options.section_ids.end(), s.id) != options.section_ids.end()) {
      targets.push_back(&s);
    }
  }
  if (targets.empty()) throw Error(ErrorCode::EmptySection, "no sections to target");

  std::vector<Perturbation> elements;
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    if (grid.generators[i].in_service) elements.push_back({Perturbation::Kind::gen, static_cast<int>(i), 1.0});
  }
  const auto order = grid.bus_order();
  for (int node : grid.load_nodes()) {
    elements.push_back({Perturbation::Kind::load, grid.buses[static_cast<std::size_t>(order[static_cast<std::size_t>(node)])].id, 1.0});
  }
  const int k = perturbation_count(grid, options.fraction);

  std::mt19937_64 rng(seed);
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    bool accepted = false;
    for (int draw = 0; draw < options.max_draws_per_scenario && !accepted; ++draw) {
      Scenario sc;
      sc.id = static_cast<int>(out.size());
      const Section& target =
          *targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)];
      sc.section = target.id;
      // partial Fisher-Yates: the first k entries are a uniform sample without replacement
      std::vector<Perturbation> pool = elements;
      for (int i = 0; i < k; ++i) {
        const auto j = std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(i), pool.size() - 1)(rng);
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        pool[static_cast<std::size_t>(i)].factor = std::uniform_int_distribution<int>(1, 20)(rng) / 10.0;
      }
      sc.perturbations.assign(pool.begin(), pool.begin() + k);
      try {
        const PowerFlowSolution sol = solve_ac(apply_scenario(grid, sc));
        const SectionFlow f = section_flow(sol, target);
        if (f.within_p_bounds) continue;
        sc.initial_flow = f.p;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonConvergence || e.code() == ErrorCode::SingularJacobian) continue;
        throw;
      }
      sc.test = is_test_scenario(sc.id);
      out.push_back(std::move(sc));
      accepted = true;
    }
    if (!accepted) {
      throw Error(ErrorCode::ExhaustedAttempts, "no insecure scenario after " +
                                                    std::to_string(options.max_draws_per_scenario) +
                                                    " draws; section bounds may be too loose");
    }
  }
  return out;
}

void write_scenarios(std::ostream& out, const std::string& case_name, std::uint64_t seed,
                     const std::vector<Scenario>& scenarios) {
  out << "powerformer-scenarios 1\n";
  out << "case " << case_name << " seed " << seed << " count " << scenarios.size() << '\n';
  for (const auto& s : scenarios) {
    out << s.id << ' ' << s.section << ' ' << (s.test ? "test" : "train") << ' ' << format_number(s.initial_flow);
    for (const auto& p : s.perturbations) {
      out << ' ' << (p.kind == Perturbation::Kind::gen ? "g:" : "l:") << p.index << ':' << format_number(p.factor);
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "scenario write failed");
}

std::vector<Scenario> read_scenarios(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "powerformer-scenarios 1") {
    throw Error(ErrorCode::MalformedRow, "scenario line 1: expected header 'powerformer-scenarios 1'");
  }
  std::size_t declared = 0;
  {
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRow, "scenario line 2: missing case line");
    std::istringstream ss(line);
    std::string tag, name, seed_tag, seed, count_tag;
    if (!(ss >> tag >> name >> seed_tag >> seed >> count_tag >> declared) || tag != "case" || seed_tag != "seed" ||
        count_tag != "count") {
      throw Error(ErrorCode::MalformedRow, "scenario line 2: expected 'case <name> seed <n> count <n>'");
    }
  }
  std::vector<Scenario> out;
  int number = 2;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, section, split, flow;
    if (!(ss >> id >> section >> split >> flow) || (split != "train" && split != "test")) {
      throw Error(ErrorCode::MalformedRow, "scenario line " + std::to_string(number) + ": bad record");
    }
    Scenario s;
    s.id = parse_int(id, number);
    s.section = parse_int(section, number);
    s.test = split == "test";
    s.initial_flow = parse_double(flow, number);
    std::string token;
    while (ss >> token) {
      const auto c1 = token.find(':');
      const auto c2 = token.find(':', c1 == std::string::npos ? c1 : c1 + 1);
      if (c1 != 1 || c2 == std::string::npos || (token[0] != 'g' && token[0] != 'l')) {
        throw Error(ErrorCode::MalformedRow, "scenario line " + std::to_string(number) + ": bad perturbation '" +
                                                 token + "'");
      }
      Perturbation p;
      p.kind = token[0] == 'g' ? Perturbation::Kind::gen : Perturbation::Kind::load;
      p.index = parse_int(std::string_view(token).substr(2, c2 - 2), number);
      p.factor = parse_double(std::string_view(token).substr(c2 + 1), number);
      s.perturbations.push_back(p);
    }
    out.push_back(std::move(s));
  }
  if (out.size() != declared) {
    throw Error(ErrorCode::MalformedRow, "scenario file declares " + std::to_string(declared) + " records, has " +
                                             std::to_string(out.size()));
  }
  return out;
}

void save_scenarios(const std::string& path, const std::string& case_name, std::uint64_t seed,
                    const std::vector<Scenario>& scenarios) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  write_scenarios(out, case_name, seed, scenarios);
}

std::vector<Scenario> load_scenarios(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open scenario file " + path);
  return read_scenarios(in);
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::running: return "running";
    case Outcome::success: return "success";
    case Outcome::step_limit: return "step_limit";
    case Outcome::diverged: return "diverged";
  }
  return "unknown";
}

int section_width(const GridCase& grid, SectionEncodingMode mode) {
  int m = 0;
  for (const auto& br : grid.branches) m += br.in_service ? 1 : 0;
  return mode == SectionEncodingMode::full ? 4 * m : m;
}

Eigen::VectorXd encode_section(const GridCase& grid, const PowerFlowSolution& sol, const Section& section,
                               SectionEncodingMode mode) {
  const int width = mode == SectionEncodingMode::full ? 4 : 1;
  std::vector<int> slot(grid.branches.size(), -1);
  int m = 0;
  for (std::size_t i = 0; i < grid.branches.size(); ++i) {
    if (grid.branches[i].in_service) slot[i] = m++;
  }
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m) * width);
  for (std::size_t j = 0; j < section.branches.size(); ++j) {
    const auto b = static_cast<std::size_t>(section.branches[j]);
    if (slot[b] < 0) continue;
    const double o = section.orientation[j];
    const Eigen::Index at = static_cast<Eigen::Index>(slot[b]) * width;
    z[at] = o * sol.branch_p[static_cast<Eigen::Index>(b)] / grid.base_mva;
    if (mode == SectionEncodingMode::full) {
      const int from = grid.node_of(section.lines[j].first);
      z[at + 1] = o * sol.branch_q[static_cast<Eigen::Index>(b)] / grid.base_mva;
      z[at + 2] = sol.vm[from];
      z[at + 3] = sol.va[from];
    }
  }
  return z;
}

std::vector<std::uint8_t> action_mask(const GridCase& grid, const Eigen::VectorXd& pg, const EnvConfig& config) {
  std::vector<std::uint8_t> mask(2 * grid.generators.size(), 0);
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    const Generator& g = grid.generators[i];
    if (!g.in_service || is_slack_unit(grid, g)) continue;
    const double p = pg[static_cast<Eigen::Index>(i)];
    mask[2 * i] = config.increase * p <= g.pmax ? 1 : 0;
    mask[2 * i + 1] = config.decrease * p >= g.pmin ? 1 : 0;
  }
  return mask;
}

Environment::Environment(GridCase grid, std::vector<Section> sections, EnvConfig config,
                         std::optional<FeatureScaler> scaler)
    : base_(std::move(grid)), sections_(std::move(sections)), config_(config), scaler_(std::move(scaler)) {
  validate(base_);
  graph_ = build_graph(base_);
  adjacency_ = graph_.adjacency();
  grid_ = base_;
}

const Section& Environment::section(int id) const {
  for (const auto& s : sections_) {
    if (s.id == id) return s;
  }
  throw Error(ErrorCode::UnknownBranch, "no section with id " + std::to_string(id));
}

int Environment::section_width() const { return powerformer::section_width(base_, config_.encoding); }

double Environment::section_p() const { return section_flow(solution_, sections_[target_]).p; }

bool Environment::satisfied(const PowerFlowSolution& sol) const {
  return bounds_hold(section_flow(sol, sections_[target_]), config_.strict_q);
}

double Environment::shaped_reward(double p, double cost) const {
  const Section& s = sections_[target_];
  const double mid = 0.5 * (s.p_min + s.p_max);
  const double half = 0.5 * (s.p_max - s.p_min);
  const double r_pf = -std::abs(p - mid) / half;
  const double r_ed = -cost / reference_cost_;
  return r_pf + config_.w_ed * r_ed;
}

Observation Environment::observe() const {
  Observation obs;
  obs.features = state_features(solution_, scaler_);
  obs.section = encode_section(grid_, solution_, sections_[target_], config_.encoding);
  obs.mask = action_mask(grid_, pg_, config_);
  obs.step = steps_;
  obs.section_id = sections_[target_].id;
  return obs;
}

Observation Environment::reset(const Scenario& scenario) {
  const Section& target = section(scenario.section);
  target_ = static_cast<std::size_t>(&target - sections_.data());
  grid_ = apply_scenario(base_, scenario);
  solution_ = solve_ac(grid_, config_.ac);
  pg_.resize(static_cast<Eigen::Index>(grid_.generators.size()));
  for (std::size_t i = 0; i < grid_.generators.size(); ++i) pg_[static_cast<Eigen::Index>(i)] = grid_.generators[i].pg;
  cost_ = economic_cost(grid_, generator_outputs(grid_, solution_));
  reference_cost_ = cost_ > 0.0 ? cost_ : 1.0;
  steps_ = 0;
  done_ = false;
  observation_ = observe();
  return observation_;
}

StepResult Environment::step(int action) {
  if (done_) throw Error(ErrorCode::MaskedAction, "step called on a finished episode");
  if (action < 0 || action >= actions() || !observation_.mask[static_cast<std::size_t>(action)]) {
    throw Error(ErrorCode::MaskedAction, "action " + std::to_string(action) + " is masked");
  }
  const auto gen = static_cast<std::size_t>(action / 2);
  const double factor = action % 2 == 0 ? config_.increase : config_.decrease;
  pg_[static_cast<Eigen::Index>(gen)] *= factor;
  grid_.generators[gen].pg = pg_[static_cast<Eigen::Index>(gen)];
  ++steps_;

  StepResult r;
  try {
    solution_ = solve_ac(grid_, config_.ac);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonConvergence && e.code() != ErrorCode::SingularJacobian) throw;
    done_ = true;
    observation_.step = steps_;
    r.observation = observation_;
    r.reward = config_.divergence_reward;
    r.done = true;
    r.outcome = Outcome::diverged;
    r.cost = cost_;
    return r;
  }
  cost_ = economic_cost(grid_, generator_outputs(grid_, solution_));
  observation_ = observe();
  const SectionFlow flow = section_flow(solution_, sections_[target_]);
  r.section_p = flow.p;
  r.cost = cost_;
  r.reward = shaped_reward(flow.p, cost_);
  if (bounds_hold(flow, config_.strict_q)) {
    r.reward += config_.success_bonus;
    r.outcome = Outcome::success;
  } else if (steps_ >= config_.step_limit ||
             std::none_of(observation_.mask.begin(), observation_.mask.end(), [](std::uint8_t m) { return m != 0; })) {
    r.outcome = Outcome::step_limit;
  }
  r.done = r.outcome != Outcome::running;
  done_ = r.done;
  r.observation = observation_;
  return r;
}

FeatureScaler fit_scaler(const GridCase& grid, const std::vector<Scenario>& scenarios, const AcOptions& ac) {
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::Index rows = 0;
  for (const auto& s : scenarios) {
    if (s.test) continue;
    blocks.push_back(raw_state(solve_ac(apply_scenario(grid, s), ac)));
    rows += blocks.back().rows();
  }
  if (blocks.empty()) {
    blocks.push_back(raw_state(solve_ac(grid, ac)));
    rows = blocks.back().rows();
  }
  Eigen::MatrixXd stacked(rows, 4);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    stacked.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return FeatureScaler::fit(stacked);
}

}  // namespace powerformer
