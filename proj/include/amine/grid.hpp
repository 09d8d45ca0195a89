#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace amine {

// 2D maps are stored x-major: index = x * height + y, matching FeatureMap.
struct Pixel {
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const Pixel&) const = default;
};

// Pixels of the 4- or 8-connected component of set cells containing `seed`.
// Returns an empty list when the seed cell is not set.
std::vector<Pixel> flood_component(std::size_t width, std::size_t height,
                                   std::span<const std::uint8_t> cells,
                                   Pixel seed, int connectivity);

// Labels every component (1-based, 0 = background) in order of first
// appearance when scanning rows top to bottom. Returns the component count.
std::size_t label_components(std::size_t width, std::size_t height,
                             std::span<const std::uint8_t> cells,
                             int connectivity, std::vector<std::uint32_t>& labels);

}  // namespace amine
