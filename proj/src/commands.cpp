#include "powerformer/commands.hpp"

#include "powerformer/checkpoint.hpp"
#include "powerformer/error.hpp"
#include "powerformer/report.hpp"
#include "powerformer/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>

namespace powerformer {

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorCode::Io, std::string("missing ") + what + " path");
  if (!fs::exists(path)) throw Error(ErrorCode::Io, std::string(what) + " not found: " + path);
}

std::string output_path(const RunConfig& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return (fs::path(c.out_dir) / name).string();
}

struct Inputs {
  GridCase grid;
  std::vector<Section> sections;
};

Inputs load_inputs(const RunConfig& c) {
  require_file(c.case_path, "case file");
  require_file(c.sections_path, "section file");
  Inputs in;
  in.grid = load_matpower_case(c.case_path);
  in.sections = load_section_config(read_text_file(c.sections_path), in.grid);
  return in;
}

std::vector<Scenario> select(const std::vector<Scenario>& all, const RunConfig& c, const std::string& split) {
  std::vector<Scenario> out;
  for (const auto& s : all) {
    if (split == "test" && !s.test) continue;
    if (split == "train" && s.test) continue;
    if (!c.section_ids.empty() &&
        std::find(c.section_ids.begin(), c.section_ids.end(), s.section) == c.section_ids.end()) {
      continue;
    }
    out.push_back(s);
  }
  return out;
}

std::string checkpoint_path(const RunConfig& c) {
  return c.checkpoint_path.empty() ? output_path(c, "checkpoint.bin") : c.checkpoint_path;
}

CheckpointRecord network_meta(const PowerformerConfig& p) {
  Eigen::MatrixXd m(1, 3);
  m << static_cast<double>(p.kind), p.hidden, p.layers;
  return to_record("meta.network", m);
}

std::vector<CheckpointRecord> checkpoint_records(const QNetwork& net, const FeatureScaler& scaler) {
  auto records = to_records(net.params());
  records.push_back(to_record("scaler.mean", scaler.mean));
  records.push_back(to_record("scaler.stddev", scaler.stddev));
  records.push_back(network_meta(net.config()));
  return records;
}

const CheckpointRecord& find_record(const std::vector<CheckpointRecord>& records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw Error(ErrorCode::ShapeMismatch, "checkpoint has no record " + name);
}

}  // namespace

void cmd_generate(const RunConfig& c, std::ostream& log) {
  const Inputs in = load_inputs(c);
  ScenarioOptions options;
  options.section_ids = c.section_ids;
  const auto scenarios = generate_scenarios(in.grid, in.sections, c.seed, c.count, options);
  const std::string path = c.scenarios_path.empty() ? output_path(c, "scenarios.txt") : c.scenarios_path;
  if (!c.scenarios_path.empty() && fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  save_scenarios(path, in.grid.name, c.seed, scenarios);
  const auto test = std::count_if(scenarios.begin(), scenarios.end(), [](const Scenario& s) { return s.test; });
  log << "wrote " << scenarios.size() << " scenarios to " << path << " (train " << scenarios.size() - test << ", test "
      << test << ")\n";
}

void cmd_train(const RunConfig& c, std::ostream& log) {
  const Inputs in = load_inputs(c);
  require_file(c.scenarios_path, "scenario file");
  const auto training = select(load_scenarios(c.scenarios_path), c, "train");
  if (training.empty()) throw Error(ErrorCode::EmptyBatch, "scenario file has no training scenarios");

  const FeatureScaler scaler = fit_scaler(in.grid, training, c.env.ac);
  Environment env(in.grid, in.sections, c.env, scaler);
  const std::string ckpt = checkpoint_path(c);
  if (fs::path(ckpt).has_parent_path()) fs::create_directories(fs::path(ckpt).parent_path());

  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.network.seed = c.seed;
  log << "training " << to_string(tc.network.kind) << " on " << training.size() << " scenarios for " << tc.total_steps
      << " steps\n";
  const TrainResult result = train(env, training, tc, [&](const MetricsRow& row, const QNetwork& net) {
    save_checkpoint(ckpt, checkpoint_records(net, scaler));
    log << "step " << row.step << "  success " << format_number(std::round(row.trailing_success_rate * 1e4) / 1e2)
        << "%  loss " << format_number(row.loss) << "  epsilon " << format_number(row.epsilon) << '\n';
  });
  save_checkpoint(ckpt, checkpoint_records(result.network, scaler));

  {
    std::ofstream out(output_path(c, "metrics.csv"), std::ios::trunc);
    write_metrics_csv(out, result.metrics);
    if (!out) throw Error(ErrorCode::Io, "cannot write metrics.csv");
  }
  {
    std::ofstream out(output_path(c, "timing.csv"), std::ios::trunc);
    write_timing_csv(out, result.metrics);
    if (!out) throw Error(ErrorCode::Io, "cannot write timing.csv");
  }
  write_text_file(output_path(c, "learning_curve.svg"),
                  learning_curve_svg(result.metrics, std::string(to_string(tc.network.kind)) + " on " + in.grid.name));
  log << "episodes " << result.episodes << ", updates " << result.updates << "; wrote " << ckpt
      << ", metrics.csv, timing.csv, learning_curve.svg\n";
}

void cmd_evaluate(const RunConfig& c, std::ostream& log) {
  const Inputs in = load_inputs(c);
  require_file(c.scenarios_path, "scenario file");
  const std::string ckpt = checkpoint_path(c);
  require_file(ckpt, "checkpoint");
  const auto scenarios = select(load_scenarios(c.scenarios_path), c, c.split);
  const auto records = load_checkpoint(ckpt);

  PowerformerConfig pc = c.train.network;
  pc.section_encoding = c.env.encoding;
  const Eigen::MatrixXd meta = from_record(find_record(records, "meta.network"));
  if (meta.size() != 3 || static_cast<int>(meta(0, 0)) != static_cast<int>(pc.kind)) {
    throw Error(ErrorCode::ShapeMismatch, "checkpoint " + ckpt + " holds a different network kind than --network " +
                                              std::string(to_string(pc.kind)));
  }
  FeatureScaler scaler;
  scaler.mean = from_record(find_record(records, "scaler.mean"));
  scaler.stddev = from_record(find_record(records, "scaler.stddev"));
  Environment env(in.grid, in.sections, c.env, scaler);
  QNetwork net(pc, env.nodes(), env.section_width(), env.actions());
  assign_records(net.params(), records);

  const EvalReport report = evaluate(net, env, scenarios, c.threads);
  const EvalReport random = evaluate_random(env, scenarios, c.seed, c.threads);
  write_text_file(output_path(c, "report.json"), eval_report_json(report, &random));
  {
    std::ofstream out(output_path(c, "scenario_results.csv"), std::ios::trunc);
    write_scenario_results_csv(out, report);
    if (!out) throw Error(ErrorCode::Io, "cannot write scenario_results.csv");
  }
  {
    std::ofstream out(output_path(c, "embeddings.csv"), std::ios::trunc);
    write_embedding_csv(out, scenarios, initial_embeddings(net, env, scenarios));
    if (!out) throw Error(ErrorCode::Io, "cannot write embeddings.csv");
  }
  log << "scenarios " << report.scenarios << " (" << c.split << " split)\n";
  log << "success rate " << format_number(report.success_rate) << "% (random policy "
      << format_number(random.success_rate) << "%)\n";
  log << "mean economic cost " << format_number(report.mean_cost) << '\n';
  log << "inference " << format_number(report.inference_mean) << " +/- " << format_number(report.inference_std)
      << " s per scenario, solver " << format_number(report.solver_mean) << " s\n";
  log << "reference at 118-bus scale, 10 sections: 98.19% success, cost 622198, inference 0.078 +/- 0.151 s\n";
  log << "wrote report.json, scenario_results.csv, embeddings.csv to " << c.out_dir << '\n';
}

void cmd_solve(const RunConfig& c, bool dc, std::ostream& log) {
  require_file(c.case_path, "case file");
  const GridCase grid = load_matpower_case(c.case_path);
  const PowerFlowSolution sol = dc ? solve_dc(grid) : solve_ac(grid, c.env.ac);
  {
    std::ofstream out(output_path(c, "bus.csv"), std::ios::trunc);
    write_bus_csv(out, grid, sol);
  }
  {
    std::ofstream out(output_path(c, "branch.csv"), std::ios::trunc);
    write_branch_csv(out, grid, sol);
  }
  log << grid.name << ": " << grid.buses.size() << " buses, " << grid.branches.size() << " branches, "
      << grid.generators.size() << " generators\n";
  if (!dc) {
    log << "converged in " << sol.iterations << " iterations, max mismatch " << format_number(sol.max_mismatch)
        << " p.u.\n";
  }
  log << "wrote bus.csv and branch.csv to " << c.out_dir << '\n';
}

void cmd_synth(const RunConfig& c, int buses, std::ostream& log) {
  CorridorOptions o;
  o.seed = c.seed == 0 ? 1 : c.seed;
  if (buses == 9) {
    o.buses_per_area = 3;
    o.gens_per_area = 2;
  } else if (buses % 3 == 0 && buses >= 12) {
    o.buses_per_area = buses / 3;
    o.gens_per_area = 3;
  } else {
    throw Error(ErrorCode::MalformedConfig, "synthetic cases have 9 buses or a multiple of 3 from 12 up");
  }
  SyntheticCase sc = corridor_case(o);
  if (buses == 9) sc.sections.resize(1);
  const std::string case_file = output_path(c, sc.grid.name + ".m");
  const std::string section_file = output_path(c, sc.grid.name + "_sections.json");
  write_text_file(case_file, write_matpower_case(sc.grid));
  write_text_file(section_file, write_section_config(sc.sections));
  log << "wrote " << case_file << " and " << section_file << " (" << sc.sections.size() << " sections)\n";
}

std::vector<ScalingPoint> scaling_benchmark(const std::vector<int>& sizes, int degree, int repeats,
                                            const PowerformerConfig& config, std::uint64_t seed) {
  std::vector<ScalingPoint> out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (int n : sizes) {
    const PowerGraph g = random_regular_graph(n, degree, seed + static_cast<std::uint64_t>(n));
    const Eigen::SparseMatrix<double> adj = g.adjacency();
    const int m = static_cast<int>(g.edge_list.size());
    const int width = config.section_encoding == SectionEncodingMode::full ? 4 * m : m;
    const int actions = 2 * std::max(1, n / 10);
    QNetwork net(config, n, width, actions);

    GraphBatch b;
    b.adjacency = &adj;
    b.nodes = n;
    b.batch = 1;
    b.features = Eigen::MatrixXd::NullaryExpr(4, n, [&]() { return normal(rng); });
    b.sections = Eigen::MatrixXd::Zero(width, 1);
    for (int j = 0; j < std::min(4, width); ++j) b.sections(j, 0) = normal(rng);

    net.predict(b);  // warm-up
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      net.predict(b);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    out.push_back({n, m, times[times.size() / 2]});
  }
  return out;
}

double power_law_exponent(const std::vector<ScalingPoint>& points) {
  if (points.size() < 2) throw Error(ErrorCode::ShapeMismatch, "need at least two points for a power-law fit");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : points) {
    const double x = std::log(static_cast<double>(p.nodes));
    const double y = std::log(p.seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(points.size());
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

void cmd_bench(const RunConfig& c, std::ostream& log) {
  PowerformerConfig pc = c.train.network;
  pc.seed = c.seed;
  const auto points = scaling_benchmark({50, 100, 200, 400, 800}, 3, 15, pc, c.seed);
  std::ofstream out(output_path(c, "bench.csv"), std::ios::trunc);
  out << "nodes,edges,forward_seconds\n";
  for (const auto& p : points) {
    out << p.nodes << ',' << p.edges << ',' << format_number(p.seconds) << '\n';
    log << "n=" << p.nodes << " m=" << p.edges << " forward " << format_number(p.seconds) << " s\n";
  }
  log << "fitted exponent " << format_number(power_law_exponent(points)) << '\n';
}

}  // namespace powerformer
