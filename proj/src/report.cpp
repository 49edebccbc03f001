#include "powerformer/report.hpp"

#include "powerformer/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace powerformer {

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "step,trailing_success_rate,loss,epsilon\n";
  for (const auto& r : rows) {
    out << r.step << ',' << format_number(r.trailing_success_rate) << ',' << format_number(r.loss) << ','
        << format_number(r.epsilon) << '\n';
  }
}

void write_timing_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "step,wall_seconds\n";
  for (const auto& r : rows) out << r.step << ',' << format_number(r.wall_seconds) << '\n';
}

std::string learning_curve_svg(const std::vector<MetricsRow>& rows, const std::string& title) {
  constexpr double width = 800, height = 500, left = 70, right = 30, top = 50, bottom = 60;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const double max_step = rows.empty() ? 1.0 : std::max(1.0, static_cast<double>(rows.back().step));
  auto x = [&](double step) { return left + plot_w * step / max_step; };
  auto y = [&](double rate) { return top + plot_h * (1.0 - rate); };

  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" width=\"800\" height=\"500\">\n";
  svg << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  std::string escaped;
  for (char c : title) {
    if (c == '<') escaped += "&lt;";
    else if (c == '>') escaped += "&gt;";
    else if (c == '&') escaped += "&amp;";
    else escaped += c;
  }
  svg << "<text x=\"400\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">" << escaped
      << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double rate = i / 5.0;
    svg << "<line x1=\"" << left << "\" y1=\"" << y(rate) << "\" x2=\"" << left + plot_w << "\" y2=\"" << y(rate)
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << y(rate) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << static_cast<int>(rate * 100)
        << "%</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double step = max_step * i / 4.0;
    svg << "<text x=\"" << x(step) << "\" y=\"" << top + plot_h + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << static_cast<long>(step)
        << "</text>\n";
  }
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"400\" y=\"" << height - 15
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">training step</text>\n";
  svg << "<text x=\"18\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 18 " << top + plot_h / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">trailing success rate</text>\n";
  svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  svg << x(0) << ',' << y(0);
  for (const auto& r : rows) svg << ' ' << x(static_cast<double>(r.step)) << ',' << y(r.trailing_success_rate);
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

namespace {

nlohmann::json summary_json(const EvalReport& r) {
  nlohmann::json j;
  j["scenarios"] = r.scenarios;
  j["success_rate_percent"] = r.success_rate;
  j["mean_economic_cost"] = r.mean_cost;
  j["inference_seconds"] = {{"mean", r.inference_mean}, {"std", r.inference_std}};
  j["solver_seconds_mean"] = r.solver_mean;
  nlohmann::json sections = nlohmann::json::array();
  for (const auto& [id, s] : r.per_section) {
    sections.push_back({{"section", id},
                        {"scenarios", s.scenarios},
                        {"success_rate_percent", s.success_rate},
                        {"mean_economic_cost", s.mean_cost}});
  }
  j["per_section"] = sections;
  return j;
}

}  // namespace

std::string eval_report_json(const EvalReport& report, const EvalReport* random_baseline) {
  nlohmann::json j;
  j["policy"] = summary_json(report);
  if (random_baseline) j["random_policy"] = summary_json(*random_baseline);
  return j.dump(2) + "\n";
}

void write_scenario_results_csv(std::ostream& out, const EvalReport& report) {
  out << "scenario_id,section_id,outcome,steps,economic_cost,initial_flow,final_flow,inference_seconds,solver_seconds\n";
  for (const auto& r : report.results) {
    out << r.id << ',' << r.section << ',' << to_string(r.outcome) << ',' << r.steps << ',' << format_number(r.cost)
        << ',' << format_number(r.initial_flow) << ',' << format_number(r.final_flow) << ','
        << format_number(r.inference_seconds) << ',' << format_number(r.solver_seconds) << '\n';
  }
}

void write_embedding_csv(std::ostream& out, const std::vector<Scenario>& scenarios, const Eigen::MatrixXd& embeddings) {
  if (embeddings.cols() != static_cast<Eigen::Index>(scenarios.size())) {
    throw Error(ErrorCode::ShapeMismatch, "embedding columns do not match scenario count");
  }
  out << "scenario_id,section_id";
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) out << ",e" << i;
  out << '\n';
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    out << scenarios[s].id << ',' << scenarios[s].section;
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
      out << ',' << format_number(embeddings(i, static_cast<Eigen::Index>(s)));
    }
    out << '\n';
  }
}

void write_bus_csv(std::ostream& out, const GridCase& grid, const PowerFlowSolution& sol) {
  out << "bus_id,vm_pu,va_deg,p_inj_mw,q_inj_mvar\n";
  const auto order = grid.bus_order();
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out << grid.buses[static_cast<std::size_t>(order[k])].id << ',' << format_number(sol.vm[i]) << ','
        << format_number(sol.va[i] * 180.0 / 3.14159265358979323846) << ',' << format_number(sol.p_inj[i]) << ','
        << format_number(sol.q_inj[i]) << '\n';
  }
}

void write_branch_csv(std::ostream& out, const GridCase& grid, const PowerFlowSolution& sol) {
  out << "branch,from_bus,to_bus,in_service,p_from_mw,q_from_mvar\n";
  for (std::size_t b = 0; b < grid.branches.size(); ++b) {
    const auto i = static_cast<Eigen::Index>(b);
    out << b << ',' << grid.branches[b].from << ',' << grid.branches[b].to << ','
        << (grid.branches[b].in_service ? 1 : 0) << ',' << format_number(sol.branch_p[i]) << ','
        << format_number(sol.branch_q[i]) << '\n';
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write to " + path + " failed");
}

}  // namespace powerformer
