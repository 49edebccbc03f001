#pragma once

#include <Eigen/SparseCore>

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace powerformer {

enum class BusType { pq = 1, pv = 2, slack = 3 };

struct Bus {
  int id = 0;
  BusType type = BusType::pq;
  double pd = 0.0;  // MW
  double qd = 0.0;  // MVAr
  double gs = 0.0;  // MW at 1 p.u.
  double bs = 0.0;  // MVAr at 1 p.u.
  double vm = 1.0;  // p.u.
  double va = 0.0;  // degrees
  double vmax = 1.1;
  double vmin = 0.9;

  bool operator==(const Bus&) const = default;
};

struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;
  double rate = 0.0;  // MVA, 0 = unlimited
  bool in_service = true;

  bool operator==(const Branch&) const = default;
};

struct Generator {
  int bus = 0;
  double pg = 0.0;  // MW
  double qg = 0.0;  // MVAr
  double qmax = 0.0;
  double qmin = 0.0;
  double vg = 1.0;  // voltage set point, p.u.
  double pmax = 0.0;
  double pmin = 0.0;
  bool in_service = true;

  bool operator==(const Generator&) const = default;
};

// Quadratic cost alpha*P^2 + beta*P + lambda with P in MW.
struct GenCost {
  double alpha = 0.0;
  double beta = 1.0;
  double lambda = 0.0;

  bool operator==(const GenCost&) const = default;
};

struct GridCase {
  std::string name = "case";
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<GenCost> gencost;  // one per generator

  bool operator==(const GridCase&) const = default;

  // Position of the bus in ascending-id order (the dense node index).
  int node_of(int bus_id) const;
  // Dense node indices sorted by bus id, i.e. bus_order()[k] = index into buses of node k.
  std::vector<int> bus_order() const;
  int slack_node() const;
  // Buses that carry a nonzero demand, in node order.
  std::vector<int> load_nodes() const;
};

// Throws InvalidCase / NoSlackBus / DanglingReference.
void validate(const GridCase& grid);

GridCase parse_matpower_case(std::string_view text);
std::string write_matpower_case(const GridCase& grid);
GridCase load_matpower_case(const std::string& path);

struct Section {
  int id = 0;
  std::vector<std::pair<int, int>> lines;  // declared (from_bus, to_bus)
  std::vector<int> branches;               // resolved branch index per line
  std::vector<int> orientation;            // +1 if declared along the branch, -1 if reversed
  double p_min = 0.0;
  double p_max = 0.0;
  std::optional<double> q_min;
  std::optional<double> q_max;
};

// JSON document, version 1:
//   {"version": 1, "sections": [{"id": 7, "lines": [[33, 37], ...], "p_min": 130, "p_max": 880}]}
// q_min / q_max are optional per section.
std::vector<Section> load_section_config(std::string_view text, const GridCase& grid);
std::string write_section_config(const std::vector<Section>& sections);

struct PowerGraph {
  int n = 0;
  std::vector<std::pair<int, int>> edge_list;  // (u, v), u < v, sorted; one per in-service branch
  std::map<int, int> node_index;               // bus id -> node

  bool operator==(const PowerGraph&) const = default;

  // Symmetric 0/1 neighbour matrix (parallel branches collapse to one neighbour).
  Eigen::SparseMatrix<double> adjacency() const;
};

PowerGraph build_graph(const GridCase& grid);

std::string read_text_file(const std::string& path);

// Shortest text that reads back to the same double.
std::string format_number(double v);

}  // namespace powerformer
