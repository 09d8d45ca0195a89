#include "amine/mining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "amine/ops.hpp"

namespace amine {

ErasureMask ErasureMask::all_ones(std::size_t width, std::size_t height) {
  return ErasureMask{width, height, std::vector<std::uint8_t>(width * height, 1), 0};
}

std::size_t ErasureMask::erased_count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 0));
}

double Heatmap::min() const { return *std::min_element(values.begin(), values.end()); }
double Heatmap::max() const { return *std::max_element(values.begin(), values.end()); }

void MiningConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("mining: steps must be >= 1");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
    throw std::invalid_argument("mining: binarize threshold must lie in (0, 1)");
  }
  if (connectivity != 4 && connectivity != 8) {
    throw std::invalid_argument("mining: connectivity must be 4 or 8");
  }
}

Heatmap compute_cam(const FeatureMap& x, std::size_t n, const ErasureMask& mask,
                    std::span<const double> w) {
  const Shape4& s = x.shape();
  if (n >= s.n) throw ShapeError("sample " + std::to_string(n) + " outside " + s.str());
  if (mask.width != s.w || mask.height != s.h || mask.bits.size() != s.spatial()) {
    throw ShapeError("mask (" + std::to_string(mask.width) + ", " +
                     std::to_string(mask.height) + ") vs features " + s.str());
  }
  if (w.size() != s.d) {
    throw ShapeError("branch weights of length " + std::to_string(w.size()) +
                     " vs features " + s.str());
  }
  Heatmap h(s.w, s.h);
  for (std::size_t px = 0; px < s.w; ++px) {
    for (std::size_t py = 0; py < s.h; ++py) {
      const std::uint8_t bit = mask.at(px, py);
      if (bit > 1) throw std::invalid_argument("compute_cam: mask is not binary");
      if (!bit) continue;
      const double* f = x.ptr(n, px, py);
      double sum = 0.0;
      for (std::size_t d = 0; d < s.d; ++d) sum += f[d] * w[d];
      h.at(px, py) = sum;
    }
  }
  return h;
}

BinarizedCam binarize_cam(const Heatmap& cam, double threshold,
                          const ErasureMask* live) {
  if (live && live->bits.size() != cam.values.size()) {
    throw ShapeError("binarize_cam: live mask does not match heatmap");
  }
  for (double v : cam.values) {
    if (!std::isfinite(v)) throw std::invalid_argument("binarize_cam: non-finite heatmap");
  }
  auto is_live = [&](std::size_t idx) { return !live || live->bits[idx] != 0; };

  BinarizedCam out;
  out.normalized = Heatmap(cam.width, cam.height);
  out.bits.assign(cam.values.size(), 0);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  bool any = false;
  // Row-major scan (y outer) so the first maximum seen wins ties.
  for (std::size_t y = 0; y < cam.height; ++y) {
    for (std::size_t x = 0; x < cam.width; ++x) {
      const std::size_t idx = x * cam.height + y;
      if (!is_live(idx)) continue;
      const double v = cam.values[idx];
      lo = std::min(lo, v);
      if (!any || v > hi) {
        hi = v;
        out.max_location = {x, y};
      }
      any = true;
    }
  }
  if (!any || !(hi > lo)) {
    out.degenerate = true;
    return out;
  }
  const double range = hi - lo;
  for (std::size_t idx = 0; idx < cam.values.size(); ++idx) {
    if (!is_live(idx)) continue;
    const double v = (cam.values[idx] - lo) / range;
    out.normalized.values[idx] = v;
    out.bits[idx] = v >= threshold ? 1 : 0;
  }
  return out;
}

ErasureMask erase_component(const ErasureMask& previous,
                            std::span<const std::uint8_t> bits,
                            Pixel max_location, int connectivity) {
  if (bits.size() != previous.bits.size()) {
    throw ShapeError("erase_component: binary map does not match mask");
  }
  if (max_location.x >= previous.width || max_location.y >= previous.height ||
      !bits[max_location.x * previous.height + max_location.y]) {
    throw std::logic_error("erase_component: global maximum is not set in the binary map");
  }
  ErasureMask next = previous;
  next.step = previous.step + 1;
  for (const Pixel& p : flood_component(previous.width, previous.height, bits,
                                        max_location, connectivity)) {
    next.bits[p.x * previous.height + p.y] = 0;
  }
  return next;
}

MiningRun run_am(const FeatureMap& x, std::size_t n, std::span<const double> w,
                 const MiningConfig& config) {
  config.validate();
  const Shape4& s = x.shape();
  MiningRun run;
  run.masks.push_back(ErasureMask::all_ones(s.w, s.h));
  for (std::size_t t = 1; t <= config.steps; ++t) {
    const ErasureMask& prev = run.masks.back();
    if (prev.all_erased()) {
      run.stopped_early = true;
      break;
    }
    Heatmap cam = compute_cam(x, n, prev, w);
    BinarizedCam bin = binarize_cam(cam, config.binarize_threshold, &prev);
    if (bin.degenerate) {
      run.stopped_early = true;
      break;
    }
    ErasureMask next = erase_component(prev, bin.bits, bin.max_location,
                                       config.connectivity);
    run.raw_cams.push_back(std::move(cam));
    run.heatmaps.push_back(std::move(bin.normalized));
    run.masks.push_back(std::move(next));
  }
  return run;
}

Heatmap aggregate_final_heatmap(std::span<const Heatmap> heatmaps,
                                std::span<const ErasureMask> masks) {
  if (masks.size() != heatmaps.size() + 1) {
    throw std::invalid_argument("aggregate_final_heatmap: " +
                                std::to_string(heatmaps.size()) + " heatmaps need " +
                                std::to_string(heatmaps.size() + 1) + " masks, got " +
                                std::to_string(masks.size()));
  }
  if (heatmaps.empty()) {
    return Heatmap(masks.front().width, masks.front().height);
  }
  const std::size_t w = heatmaps.front().width;
  const std::size_t h = heatmaps.front().height;
  for (std::size_t t = 0; t < heatmaps.size(); ++t) {
    if (heatmaps[t].width != w || heatmaps[t].height != h ||
        masks[t + 1].bits.size() != w * h) {
      throw ShapeError("aggregate_final_heatmap: step " + std::to_string(t + 1) +
                       " has mismatched dimensions");
    }
  }
  Heatmap out(w, h);
  // fill[p] = sum_{t' < t} H_t'(p) (1 - M_t'(p)), maintained incrementally.
  std::vector<double> fill(w * h, 0.0);
  for (std::size_t t = 0; t < heatmaps.size(); ++t) {
    for (std::size_t i = 0; i < w * h; ++i) {
      out.values[i] += heatmaps[t].values[i] + fill[i];
    }
    const auto& erased_after = masks[t + 1].bits;
    for (std::size_t i = 0; i < w * h; ++i) {
      if (!erased_after[i]) fill[i] += heatmaps[t].values[i];
    }
  }
  const double steps = static_cast<double>(heatmaps.size());
  for (double& v : out.values) v /= steps;
  return out;
}

std::optional<Heatmap> normalize_heatmap(const Heatmap& h) {
  const double lo = h.min();
  const double hi = h.max();
  if (!(hi > lo)) return std::nullopt;
  Heatmap out(h.width, h.height);
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    out.values[i] = (h.values[i] - lo) / (hi - lo);
  }
  return out;
}

Heatmap upsample_heatmap(const Heatmap& h, std::size_t width, std::size_t height) {
  if (h.width == 0 || h.height == 0 || width % h.width != 0 || height % h.height != 0 ||
      width / h.width != height / h.height) {
    throw ShapeError("upsample_heatmap: cannot scale (" + std::to_string(h.width) +
                     ", " + std::to_string(h.height) + ") to (" +
                     std::to_string(width) + ", " + std::to_string(height) + ")");
  }
  const double factor = static_cast<double>(width / h.width);
  auto axis = [factor](std::size_t p, std::size_t n, std::size_t& lo, std::size_t& hi, double& t) {
    const double src = std::min(static_cast<double>(p) / factor, static_cast<double>(n - 1));
    lo = static_cast<std::size_t>(std::floor(src));
    hi = std::min(lo + 1, n - 1);
    t = src - static_cast<double>(lo);
  };
  Heatmap out(width, height);
  for (std::size_t x = 0; x < width; ++x) {
    std::size_t x0, x1;
    double tx;
    axis(x, h.width, x0, x1, tx);
    for (std::size_t y = 0; y < height; ++y) {
      std::size_t y0, y1;
      double ty;
      axis(y, h.height, y0, y1, ty);
      const double top = (1.0 - tx) * h.at(x0, y0) + tx * h.at(x1, y0);
      const double bottom = (1.0 - tx) * h.at(x0, y1) + tx * h.at(x1, y1);
      out.at(x, y) = (1.0 - ty) * top + ty * bottom;
    }
  }
  return out;
}

}  // namespace amine
