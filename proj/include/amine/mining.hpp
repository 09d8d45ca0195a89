#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "amine/feature_map.hpp"
#include "amine/grid.hpp"

// Iterative attention mining over a fixed feature map X.
//
// Step t computes the masked CAM H_t = (X (.) M_{t-1}) w, min-max normalizes
// it over the still-live pixels, binarizes at the configured threshold and
// zeroes the connected component holding the global maximum to obtain M_t.
// The final heatmap combines the T per-step maps, filling erased regions from
// the steps that saw them:
//   H_f = (1/T) sum_t [ H_t + sum_{t' < t} H_t' (.) (1 - M_t') ]

namespace amine {

struct ErasureMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;  // 1 = keep, 0 = erased; x-major
  std::size_t step = 0;

  static ErasureMask all_ones(std::size_t width, std::size_t height);
  std::uint8_t at(std::size_t x, std::size_t y) const { return bits[x * height + y]; }
  std::size_t erased_count() const;
  bool all_erased() const { return erased_count() == bits.size(); }
};

struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // x-major

  Heatmap() = default;
  Heatmap(std::size_t width, std::size_t height, double fill = 0.0)
      : width(width), height(height), values(width * height, fill) {}
  double& at(std::size_t x, std::size_t y) { return values[x * height + y]; }
  double at(std::size_t x, std::size_t y) const { return values[x * height + y]; }
  double min() const;
  double max() const;
};

struct MiningConfig {
  std::size_t steps = 3;  // T
  double binarize_threshold = 0.5;
  int connectivity = 8;

  void validate() const;
};

// H[x, y] = sum_d X[n, x, y, d] * mask[x, y] * w[d]
Heatmap compute_cam(const FeatureMap& x, std::size_t n, const ErasureMask& mask,
                    std::span<const double> w);

struct BinarizedCam {
  bool degenerate = false;  // max == min over the live pixels
  Heatmap normalized;       // in [0, 1], exactly 0 on erased pixels
  std::vector<std::uint8_t> bits;
  Pixel max_location;
};

// Min-max normalization and thresholding. When `live` is given, statistics
// are taken over its kept pixels only and erased pixels stay 0. Ties for the
// maximum go to the smallest row-major index (y first, then x).
BinarizedCam binarize_cam(const Heatmap& cam, double threshold,
                          const ErasureMask* live = nullptr);

// Zeroes the component of `bits` containing `max_location`. Throws
// std::logic_error when that pixel is not set.
ErasureMask erase_component(const ErasureMask& previous,
                            std::span<const std::uint8_t> bits,
                            Pixel max_location, int connectivity = 8);

struct MiningRun {
  std::vector<Heatmap> raw_cams;     // H_1..H_k before normalization
  std::vector<Heatmap> heatmaps;     // normalized H_1..H_k
  std::vector<ErasureMask> masks;    // M_0..M_k
  bool stopped_early = false;

  std::size_t completed_steps() const { return heatmaps.size(); }
};

// Runs up to config.steps iterations for sample n. Stops early when a CAM is
// degenerate over the live region (nothing left to mine).
MiningRun run_am(const FeatureMap& x, std::size_t n, std::span<const double> w,
                 const MiningConfig& config);

// Averages over the available steps (1/k for k completed steps). Requires
// masks.size() == heatmaps.size() + 1. Returns an all-zero map when no step
// completed.
Heatmap aggregate_final_heatmap(std::span<const Heatmap> heatmaps,
                                std::span<const ErasureMask> masks);

// Min-max to [0, 1]; nullopt for a constant map.
std::optional<Heatmap> normalize_heatmap(const Heatmap& h);

// Bilinear resampling to (width, height) with an integer factor f on both
// axes. Output pixel p reads source coordinate p / f, so cell i lands on pixel
// f * i, the centre of its strided receptive field; clamped at the far edge.
Heatmap upsample_heatmap(const Heatmap& h, std::size_t width, std::size_t height);

}  // namespace amine
