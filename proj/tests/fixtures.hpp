#pragma once

#include "powerformer/grid.hpp"

#include <string>

namespace fixtures {

inline std::string data_path(const std::string& name) { return std::string(POWERFORMER_DATA_DIR) + "/" + name; }

// Slack bus 1, PQ bus 2 drawing 50 MW through a lossless x = 0.1 line.
inline const char* two_bus_text = R"(function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	0	0	0	1	1	0	230	1	1.1	0.9;
];
%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin
mpc.gen = [
	1	50	0	300	-300	1	100	1	200	0;
];
%% fbus tbus r x b rateA rateB rateC ratio angle status
mpc.branch = [
	1	2	0	0.1	0	0	0	0	0	0	1;
];
)";

// Buses 1 (gen, +100 MW), 2 (load, 100 MW), 3 (slack), ring of x = 0.1 lines.
inline powerformer::GridCase three_bus_ring() {
  using namespace powerformer;
  GridCase g;
  g.name = "ring3";
  g.base_mva = 100.0;
  g.buses = {Bus{1, BusType::pv}, Bus{2, BusType::pq}, Bus{3, BusType::slack}};
  g.buses[1].pd = 100.0;
  g.branches = {Branch{1, 2, 0.0, 0.1}, Branch{1, 3, 0.0, 0.1}, Branch{2, 3, 0.0, 0.1}};
  Generator g1;
  g1.bus = 1;
  g1.pg = 100.0;
  g1.pmax = 200.0;
  g1.qmax = 300.0;
  g1.qmin = -300.0;
  Generator g3 = g1;
  g3.bus = 3;
  g3.pg = 0.0;
  g.generators = {g1, g3};
  g.gencost = {GenCost{}, GenCost{}};
  return g;
}

}  // namespace fixtures
