#include "amine/grid.hpp"

#include <stdexcept>

namespace amine {
namespace {

constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};

int neighbour_count(int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    throw std::invalid_argument("connectivity must be 4 or 8");
  }
  return connectivity;
}

template <typename Visit>
void fill(std::size_t width, std::size_t height,
          std::span<const std::uint8_t> cells, Pixel seed, int neighbours,
          std::vector<std::uint8_t>& seen, Visit&& visit) {
  std::vector<Pixel> stack{seed};
  seen[seed.x * height + seed.y] = 1;
  while (!stack.empty()) {
    const Pixel p = stack.back();
    stack.pop_back();
    visit(p);
    for (int k = 0; k < neighbours; ++k) {
      const long nx = static_cast<long>(p.x) + kDx[k];
      const long ny = static_cast<long>(p.y) + kDy[k];
      if (nx < 0 || ny < 0 || nx >= static_cast<long>(width) ||
          ny >= static_cast<long>(height)) {
        continue;
      }
      const std::size_t idx = static_cast<std::size_t>(nx) * height + ny;
      if (!cells[idx] || seen[idx]) continue;
      seen[idx] = 1;
      stack.push_back({static_cast<std::size_t>(nx), static_cast<std::size_t>(ny)});
    }
  }
}

}  // namespace

std::vector<Pixel> flood_component(std::size_t width, std::size_t height,
                                   std::span<const std::uint8_t> cells,
                                   Pixel seed, int connectivity) {
  const int neighbours = neighbour_count(connectivity);
  if (cells.size() != width * height) {
    throw std::invalid_argument("flood_component: grid size mismatch");
  }
  if (seed.x >= width || seed.y >= height) {
    throw std::out_of_range("flood_component: seed outside grid");
  }
  std::vector<Pixel> out;
  if (!cells[seed.x * height + seed.y]) return out;
  std::vector<std::uint8_t> seen(cells.size(), 0);
  fill(width, height, cells, seed, neighbours, seen,
       [&out](Pixel p) { out.push_back(p); });
  return out;
}

std::size_t label_components(std::size_t width, std::size_t height,
                             std::span<const std::uint8_t> cells,
                             int connectivity, std::vector<std::uint32_t>& labels) {
  const int neighbours = neighbour_count(connectivity);
  if (cells.size() != width * height) {
    throw std::invalid_argument("label_components: grid size mismatch");
  }
  labels.assign(cells.size(), 0);
  std::vector<std::uint8_t> seen(cells.size(), 0);
  std::uint32_t next = 0;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t idx = x * height + y;
      if (!cells[idx] || seen[idx]) continue;
      ++next;
      fill(width, height, cells, {x, y}, neighbours, seen,
           [&](Pixel p) { labels[p.x * height + p.y] = next; });
    }
  }
  return next;
}

}  // namespace amine
