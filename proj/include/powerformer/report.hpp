#pragma once

#include "powerformer/agent.hpp"
#include "powerformer/environment.hpp"
#include "powerformer/grid.hpp"
#include "powerformer/powerflow.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace powerformer {

// step,trailing_success_rate,loss,epsilon. Wall-clock time goes to a separate file so that
// reruns with the same seed stay byte-identical.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void write_timing_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

// Trailing success rate against step as an 800 x 500 SVG polyline plot.
std::string learning_curve_svg(const std::vector<MetricsRow>& rows, const std::string& title);

std::string eval_report_json(const EvalReport& report, const EvalReport* random_baseline = nullptr);
void write_scenario_results_csv(std::ostream& out, const EvalReport& report);

// scenario_id,section_id,e0..e{d-1}; one column of embeddings per scenario.
void write_embedding_csv(std::ostream& out, const std::vector<Scenario>& scenarios, const Eigen::MatrixXd& embeddings);

void write_bus_csv(std::ostream& out, const GridCase& grid, const PowerFlowSolution& sol);
void write_branch_csv(std::ostream& out, const GridCase& grid, const PowerFlowSolution& sol);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace powerformer
