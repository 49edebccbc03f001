#include "doctest.h"
#include "fixtures.hpp"

#include "powerformer/checkpoint.hpp"
#include "powerformer/commands.hpp"
#include "powerformer/error.hpp"
#include "powerformer/report.hpp"
#include "powerformer/synthetic.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace powerformer;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("powerformer_test_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

ErrorCode code_of(const std::function<void()>& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  return ErrorCode::Io;
}

// A 9-bus corridor case on disk plus a small training configuration over it.
RunConfig corridor_run(const TempDir& dir) {
  RunConfig c;
  c.out_dir = dir / "synth";
  std::ostringstream log;
  cmd_synth(c, 9, log);
  for (const auto& e : fs::directory_iterator(c.out_dir)) {
    if (e.path().extension() == ".m") c.case_path = e.path().string();
    if (e.path().extension() == ".json") c.sections_path = e.path().string();
  }
  c.out_dir = dir / "run";
  c.scenarios_path = dir / "scenarios.txt";
  c.count = 30;
  c.seed = 3;
  c.threads = 1;
  c.train.total_steps = 120;
  c.train.batch = 8;
  c.train.eval_interval = 40;
  c.train.network.hidden = 8;
  c.train.network.query_hidden = 8;
  c.train.network.value_hidden = 8;
  c.train.network.advantage_hidden = 8;
  return c;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("checkpoint round trip is bit exact") {
  PowerformerConfig cfg;
  cfg.hidden = 8;
  cfg.seed = 9;
  QNetwork net(cfg, 5, 12, 6);
  auto records = to_records(net.params());
  Eigen::MatrixXd odd(2, 3);
  odd << 0.1, -0.0, 1e-310, std::nextafter(1.0, 2.0), -1e300, 3.0;
  records.push_back(to_record("odd", odd));

  std::stringstream buf;
  write_checkpoint(buf, records);
  const auto back = read_checkpoint(buf);
  CHECK(back == records);
  const Eigen::MatrixXd odd_back = from_record(back.back());
  for (Eigen::Index i = 0; i < odd.size(); ++i) {
    CHECK(std::memcmp(&odd(i), &odd_back(i), sizeof(double)) == 0);
  }

  QNetwork other(PowerformerConfig{cfg.kind, cfg.layers, cfg.hidden, 4, 128, 128, 128, 128, 0.0,
                                   SectionEncodingMode::full, 77},
                 5, 12, 6);
  assign_records(other.params(), back);
  for (std::size_t i = 0; i < net.params().size(); ++i) CHECK(other.params()[i].value == net.params()[i].value);
}

TEST_CASE("checkpoint layout is little-endian and row-major") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 3, 4;
  std::stringstream buf;
  write_checkpoint(buf, {to_record("w", m)});
  const std::string bytes = buf.str();
  REQUIRE(bytes.size() == 8 + 4 + 8 + 4 + 1 + 4 + 16 + 32);
  CHECK(bytes.substr(0, 6) == "PFCKPT");
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);  // version, low byte first
  double second = 0.0;
  std::memcpy(&second, bytes.data() + bytes.size() - 24, sizeof(double));
  CHECK(second == 2.0);  // row-major: (0, 1) follows (0, 0)
}

TEST_CASE("corrupt checkpoints are rejected") {
  std::stringstream junk("not a checkpoint");
  CHECK(code_of([&] { read_checkpoint(junk); }) == ErrorCode::Io);
  std::stringstream buf;
  write_checkpoint(buf, {to_record("w", Eigen::MatrixXd::Ones(3, 3))});
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 5));
  CHECK(code_of([&] { read_checkpoint(cut); }) == ErrorCode::Io);

  ParameterStore store;
  store.add("w", 2, 2);
  CHECK(code_of([&] { assign_records(store, {to_record("w", Eigen::MatrixXd::Ones(3, 2))}); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { assign_records(store, {to_record("v", Eigen::MatrixXd::Ones(2, 2))}); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("metrics csv, timing csv and learning curve") {
  std::vector<MetricsRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[i].step = 100 * (i + 1);
    rows[i].trailing_success_rate = 0.25 * i;
    rows[i].loss = i == 0 ? std::nan("") : 1.5 / i;
    rows[i].epsilon = 0.1 - 0.01 * i;
    rows[i].wall_seconds = 0.5 * i;
  }
  std::ostringstream m, t;
  write_metrics_csv(m, rows);
  write_timing_csv(t, rows);
  const auto ml = lines_of(m.str());
  REQUIRE(ml.size() == 4);
  CHECK(ml[0] == "step,trailing_success_rate,loss,epsilon");
  CHECK(ml[2].rfind("200,0.25,1.5,", 0) == 0);
  const auto tl = lines_of(t.str());
  REQUIRE(tl.size() == 4);
  CHECK(tl[0] == "step,wall_seconds");

  const std::string svg = learning_curve_svg(rows, "run");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("viewBox=\"0 0 800 500\"") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("evaluation report json carries the headline metrics") {
  EvalReport r;
  r.scenarios = 2;
  r.success_rate = 50.0;
  r.mean_cost = 1234.5;
  r.inference_mean = 0.01;
  r.inference_std = 0.002;
  r.per_section[1] = SectionSummary{2, 50.0, 1234.5};
  const auto j = nlohmann::json::parse(eval_report_json(r, &r));
  for (const char* part : {"policy", "random_policy"}) {
    CAPTURE(part);
    const auto& p = j.at(part);
    CHECK(p.at("scenarios") == 2);
    CHECK(p.at("success_rate_percent") == 50.0);
    CHECK(p.at("mean_economic_cost") == 1234.5);
    CHECK(p.at("inference_seconds").at("mean") == 0.01);
    CHECK(p.at("inference_seconds").at("std") == 0.002);
    REQUIRE(p.at("per_section").size() == 1);
    CHECK(p.at("per_section")[0].at("section") == 1);
  }
  CHECK_FALSE(nlohmann::json::parse(eval_report_json(r)).contains("random_policy"));
}

TEST_CASE("embedding csv has one row per scenario") {
  std::vector<Scenario> s(2);
  s[0].id = 4;
  s[0].section = 1;
  s[1].id = 9;
  s[1].section = 2;
  Eigen::MatrixXd e(3, 2);
  e << 1, 2, 3, 4, 5, 6;
  std::ostringstream out;
  write_embedding_csv(out, s, e);
  const auto l = lines_of(out.str());
  REQUIRE(l.size() == 3);
  CHECK(l[0] == "scenario_id,section_id,e0,e1,e2");
  CHECK(l[1] == "4,1,1,3,5");
  CHECK(l[2] == "9,2,2,4,6");
}

TEST_CASE("generate, train and evaluate end to end") {
  TempDir dir("pipeline");
  RunConfig c = corridor_run(dir);
  std::ostringstream log;
  cmd_generate(c, log);
  CHECK(load_scenarios(c.scenarios_path).size() == 30);

  cmd_train(c, log);
  for (const char* f : {"checkpoint.bin", "metrics.csv", "timing.csv", "learning_curve.svg"}) {
    CAPTURE(f);
    CHECK(fs::exists(c.out_dir + "/" + f));
  }
  const std::string metrics = slurp(c.out_dir + "/metrics.csv");
  CHECK(lines_of(metrics).size() == 4);

  cmd_train(c, log);
  CHECK(slurp(c.out_dir + "/metrics.csv") == metrics);

  c.split = "all";
  cmd_evaluate(c, log);
  for (const char* f : {"report.json", "scenario_results.csv", "embeddings.csv"}) {
    CAPTURE(f);
    CHECK(fs::exists(c.out_dir + "/" + f));
  }
  CHECK(lines_of(slurp(c.out_dir + "/embeddings.csv")).size() == 31);
  CHECK(log.str().find("0.078 +/- 0.151") != std::string::npos);

  RunConfig wrong = c;
  wrong.train.network.kind = NetworkKind::concat;
  CHECK(code_of([&] { cmd_evaluate(wrong, log); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("an untrained checkpoint evaluates") {
  TempDir dir("untrained");
  RunConfig c = corridor_run(dir);
  std::ostringstream log;
  cmd_generate(c, log);
  c.train.total_steps = 0;
  cmd_train(c, log);
  cmd_evaluate(c, log);
  CHECK(fs::exists(c.out_dir + "/report.json"));
}

TEST_CASE("command errors are reported") {
  TempDir dir("errors");
  RunConfig c = corridor_run(dir);
  std::ostringstream log;
  std::string msg;

  RunConfig missing = c;
  missing.checkpoint_path = dir / "nope.bin";
  cmd_generate(c, log);
  CHECK(code_of([&] { cmd_evaluate(missing, log); }, &msg) == ErrorCode::Io);
  CHECK(msg.find("nope.bin") != std::string::npos);

  write_text_file(dir / "bad.json",
                  R"({"version": 1, "sections": [{"id": 4, "lines": [[1, 99]], "p_min": 0, "p_max": 10}]})");
  RunConfig bad = c;
  bad.sections_path = dir / "bad.json";
  CHECK(code_of([&] { cmd_generate(bad, log); }, &msg) == ErrorCode::UnknownBranch);
  CHECK(msg.find("section 4") != std::string::npos);

  RunConfig one = c;
  one.count = 1;
  one.scenarios_path = dir / "one.txt";
  cmd_generate(one, log);
  CHECK(load_scenarios(one.scenarios_path).size() == 1);
}

TEST_CASE("solve exports bus and branch tables") {
  TempDir dir("solve");
  RunConfig c;
  c.case_path = fixtures::data_path("case118.m");
  c.out_dir = dir / "out";
  std::ostringstream log;
  cmd_solve(c, false, log);
  CHECK(lines_of(slurp(c.out_dir + "/bus.csv")).size() == 119);
  CHECK(lines_of(slurp(c.out_dir + "/branch.csv")).size() == 187);
  cmd_solve(c, true, log);
  CHECK(lines_of(slurp(c.out_dir + "/branch.csv")).size() == 187);
}

TEST_CASE("power-law fit recovers a known exponent") {
  std::vector<ScalingPoint> pts;
  for (int n : {50, 100, 200, 400, 800}) pts.push_back({n, 0, 3e-6 * std::pow(n, 1.2)});
  CHECK(power_law_exponent(pts) == doctest::Approx(1.2).epsilon(1e-12));
}

}  // TEST_SUITE
