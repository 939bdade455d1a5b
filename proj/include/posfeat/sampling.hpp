#pragma once

#include "posfeat/common.hpp"

#include <cstdint>
#include <vector>

namespace posfeat {

/// One query per grid cell, cells in row-major order.
struct QuerySet {
  std::vector<Vec2> points;
  int grid_size = 0;
};

/// Draws one point uniformly inside every g x g cell (sub-pixel positions).
/// Each cell's draw is keyed by (seed, iteration, cell index).
QuerySet grid_random_queries(int width, int height, int grid_size, std::uint64_t seed, std::uint64_t iteration = 0);

}  // namespace posfeat
