#include "posfeat/sampling.hpp"

#include "posfeat/rng.hpp"

#include <algorithm>
#include <cmath>

namespace posfeat {

namespace {

// Cell-local offset mapped to pixels, kept strictly inside (i*g, (i+1)*g).
double inside_cell(int i, double frac, int g) {
  const double lo = static_cast<double>(i) * g;
  const double hi = lo + g;
  const double x = lo + frac * g;
  return std::clamp(x, std::nextafter(lo, hi), std::nextafter(hi, lo));
}

}  // namespace

QuerySet grid_random_queries(int width, int height, int grid_size, std::uint64_t seed, std::uint64_t iteration) {
  if (grid_size < 1 || width < grid_size || height < grid_size)
    throw InputError("grid_random_queries: image smaller than one cell");
  if (width % grid_size != 0 || height % grid_size != 0)
    throw InputError("grid_random_queries: image size not divisible by the grid size");
  const int cols = width / grid_size;
  const int rows = height / grid_size;
  QuerySet qs;
  qs.grid_size = grid_size;
  qs.points.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::uint64_t cell = static_cast<std::uint64_t>(r) * cols + c;
      const double du = open_unit(hash_key(seed, iteration, cell, 0));
      const double dv = open_unit(hash_key(seed, iteration, cell, 1));
      qs.points.emplace_back(inside_cell(c, du, grid_size), inside_cell(r, dv, grid_size));
    }
  }
  return qs;
}

}  // namespace posfeat
