#pragma once

#include "powerformer/grid.hpp"

#include <cstdint>
#include <vector>

namespace powerformer {

// Areas chained west to east by tie lines; section a is the set of ties between area a and a + 1,
// oriented eastward. The slack unit sits in the last area, so generation in the western areas
// pushes flow across every downstream section.
struct CorridorOptions {
  int areas = 3;
  int buses_per_area = 10;
  int gens_per_area = 3;
  int ties = 2;
  std::uint64_t seed = 1;
  bool lossless = false;   // r = 0, b = 0
  double load_scale = 1.0;
  double bound_margin = 0.15;  // bounds = base flow +/- margin * |base flow| (at least min_band MW)
  double min_band = 8.0;
};

struct SyntheticCase {
  GridCase grid;
  std::vector<Section> sections;
};

SyntheticCase corridor_case(const CorridorOptions& options);

// 3 areas x 3 buses, one section; small enough for exhaustive action enumeration.
SyntheticCase corridor9(std::uint64_t seed = 1);
// 3 areas x 10 buses, two sections.
SyntheticCase corridor30(std::uint64_t seed = 1);

// Simple random graph in which every node has the given degree (pairing model with restarts).
PowerGraph random_regular_graph(int n, int degree, std::uint64_t seed);

}  // namespace powerformer
