#include "amine/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "amine/rng.hpp"

namespace amine {
namespace {

constexpr double kBlobSigma = 5.5;
constexpr double kRingRadius = 9.0;
constexpr double kRingSigma = 1.0;
constexpr double kBarHalfLength = 12.0;
constexpr double kBarSigma = 1.0;
constexpr double kSpeckleSigma = 0.7;
constexpr double kSpeckleGain = 1.4;
constexpr double kSpeckleOffsets[4][2] = {{-1.5, -1.5}, {1.5, -1.5}, {-1.5, 1.5}, {1.5, 1.5}};
constexpr std::size_t kCoarseGrid = 5;
constexpr int kPlacementAttempts = 200;
constexpr double kInputMean = 0.25;
constexpr double kInputScale = 0.1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double gauss(double d2, double sigma) { return std::exp(-d2 / (2.0 * sigma * sigma)); }

struct Shape {
  PatternFamily family;
  bool vertical = false;  // bars only
};

// Unnormalized pattern value at offset (dx, dy) from the centre.
double pattern_value(const Shape& s, double dx, double dy) {
  switch (s.family) {
    case PatternFamily::kBlob:
      return gauss(dx * dx + dy * dy, kBlobSigma);
    case PatternFamily::kRing: {
      const double r = std::sqrt(dx * dx + dy * dy) - kRingRadius;
      return gauss(r * r, kRingSigma);
    }
    case PatternFamily::kBar: {
      const double u = s.vertical ? dy : dx;
      const double v = s.vertical ? dx : dy;
      const double over = std::max(0.0, std::abs(u) - kBarHalfLength);
      return gauss(v * v + over * over, kBarSigma);
    }
    case PatternFamily::kSpeckle: {
      double sum = 0.0;
      for (const auto& o : kSpeckleOffsets) {
        const double ex = dx - o[0];
        const double ey = dy - o[1];
        sum += gauss(ex * ex + ey * ey, kSpeckleSigma);
      }
      return sum;
    }
  }
  return 0.0;
}

// Half extents (x, y) of the footprint where the pattern exceeds ~0.1.
std::pair<double, double> footprint(const Shape& s) {
  switch (s.family) {
    case PatternFamily::kBlob:
      return {12.0, 12.0};
    case PatternFamily::kRing:
      return {11.5, 11.5};
    case PatternFamily::kBar:
      return s.vertical ? std::pair{2.5, 14.5} : std::pair{14.5, 2.5};
    case PatternFamily::kSpeckle:
      return {3.5, 3.5};
  }
  return {0.0, 0.0};
}

struct Placement {
  int cls;
  Shape shape;
  double amplitude;
  int cx = 0;
  int cy = 0;
};

bool overlaps(const Placement& a, const Placement& b) {
  const auto [ax, ay] = footprint(a.shape);
  const auto [bx, by] = footprint(b.shape);
  const double gap = 2.0;
  return std::abs(a.cx - b.cx) < ax + bx + gap && std::abs(a.cy - b.cy) < ay + by + gap;
}

bool place_all(std::vector<Placement>& items, std::size_t size, Rng& rng) {
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    bool ok = true;
    for (std::size_t i = 0; i < items.size() && ok; ++i) {
      const auto [ex, ey] = footprint(items[i].shape);
      const int lox = static_cast<int>(std::ceil(ex));
      const int loy = static_cast<int>(std::ceil(ey));
      const int spanx = static_cast<int>(size) - 2 * lox;
      const int spany = static_cast<int>(size) - 2 * loy;
      if (spanx <= 0 || spany <= 0) return false;
      items[i].cx = lox + static_cast<int>(rng.below(spanx));
      items[i].cy = loy + static_cast<int>(rng.below(spany));
      for (std::size_t j = 0; j < i; ++j) {
        if (overlaps(items[i], items[j])) {
          ok = false;
          break;
        }
      }
    }
    if (ok) return true;
  }
  return false;
}

std::vector<double> low_frequency_field(std::size_t size, Rng& rng) {
  double coarse[kCoarseGrid][kCoarseGrid];
  for (auto& row : coarse) {
    for (double& v : row) v = rng.normal();
  }
  std::vector<double> field(size * size);
  const double scale = static_cast<double>(kCoarseGrid - 1) / static_cast<double>(size - 1);
  for (std::size_t x = 0; x < size; ++x) {
    const double gx = x * scale;
    const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kCoarseGrid - 2);
    const double fx = gx - x0;
    for (std::size_t y = 0; y < size; ++y) {
      const double gy = y * scale;
      const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kCoarseGrid - 2);
      const double fy = gy - y0;
      field[x * size + y] = (1 - fx) * (1 - fy) * coarse[x0][y0] + fx * (1 - fy) * coarse[x0 + 1][y0] +
                            (1 - fx) * fy * coarse[x0][y0 + 1] + fx * fy * coarse[x0 + 1][y0 + 1];
    }
  }
  return field;
}

}  // namespace

const char* to_string(PatternFamily family) {
  switch (family) {
    case PatternFamily::kBlob:
      return "blob";
    case PatternFamily::kRing:
      return "ring";
    case PatternFamily::kBar:
      return "bar";
    case PatternFamily::kSpeckle:
      return "speckle";
  }
  return "unknown";
}

void SceneConfig::validate() const {
  if (image_size < 32) throw std::invalid_argument("scene: image_size must be >= 32");
  if (num_classes < 1 || num_classes > 4) {
    throw std::invalid_argument("scene: num_classes must be in [1, 4]");
  }
  if (!(class_probability >= 0.0 && class_probability <= 1.0)) {
    throw std::invalid_argument("scene: class_probability outside [0, 1]");
  }
  if (!(amplitude > 0.0)) throw std::invalid_argument("scene: amplitude must be > 0");
  if (!(second_instance_ratio > 0.0 && second_instance_ratio < 1.0)) {
    throw std::invalid_argument("scene: second_instance_ratio must be in (0, 1)");
  }
  if (!(background_amplitude >= 0.0 && pixel_noise >= 0.0)) {
    throw std::invalid_argument("scene: noise levels must be >= 0");
  }
}

Scene generate_scene(std::uint64_t seed, std::size_t index,
                     double multi_instance_fraction, const SceneConfig& config) {
  config.validate();
  if (!(multi_instance_fraction >= 0.0 && multi_instance_fraction <= 1.0)) {
    throw std::invalid_argument("scene: multi_instance_fraction outside [0, 1]");
  }
  Rng rng(splitmix64(seed) ^ splitmix64(index + 0x5851f42d4c957f2dULL));
  const std::size_t C = config.num_classes;
  const std::size_t S = config.image_size;

  std::vector<int> present;
  for (std::size_t c = 0; c < C; ++c) {
    if (rng.bernoulli(config.class_probability)) present.push_back(static_cast<int>(c));
  }
  const bool multi = rng.bernoulli(multi_instance_fraction);
  int doubled = -1;
  if (multi) {
    if (present.empty()) present.push_back(static_cast<int>(rng.below(C)));
    doubled = present[rng.below(present.size())];
  }

  std::vector<Placement> items;
  for (int c : present) {
    Shape shape{static_cast<PatternFamily>(c), false};
    if (shape.family == PatternFamily::kBar) shape.vertical = rng.bernoulli(0.5);
    items.push_back({c, shape, 1.0});
    if (c == doubled) {
      Shape second = shape;
      if (second.family == PatternFamily::kBar) second.vertical = rng.bernoulli(0.5);
      items.push_back({c, second, config.second_instance_ratio});
    }
  }
  // Drop single-instance classes from the back until the layout fits.
  while (!place_all(items, S, rng)) {
    auto it = std::find_if(items.rbegin(), items.rend(),
                           [&](const Placement& p) { return p.cls != doubled; });
    if (it == items.rend()) throw std::runtime_error("scene: cannot place instances");
    items.erase(std::next(it).base());
  }

  std::vector<double> canvas = low_frequency_field(S, rng);
  for (double& v : canvas) v = config.background_level + config.background_amplitude * v;

  Scene scene;
  scene.multi_instance = doubled >= 0;
  scene.truth.image_id = static_cast<int>(index);
  char name[32];
  std::snprintf(name, sizeof(name), "img_%05zu.pgm", index);
  scene.truth.file = name;
  scene.truth.labels.assign(C, 0);
  scene.truth.boxes.assign(C, {});

  std::vector<double> own(S * S);
  for (const Placement& p : items) {
    double peak = -1.0;
    for (std::size_t x = 0; x < S; ++x) {
      for (std::size_t y = 0; y < S; ++y) {
        const double v = pattern_value(p.shape, static_cast<double>(x) - p.cx,
                                       static_cast<double>(y) - p.cy);
        own[x * S + y] = v;
        peak = std::max(peak, v);
      }
    }
    PlantedInstance inst;
    inst.cls = p.cls;
    inst.center_x = p.cx;
    inst.center_y = p.cy;
    inst.amplitude = config.amplitude * p.amplitude * (p.shape.family == PatternFamily::kSpeckle ? kSpeckleGain : 1.0);
    int x0 = static_cast<int>(S), y0 = static_cast<int>(S), x1 = -1, y1 = -1;
    double best = -1.0;
    for (std::size_t x = 0; x < S; ++x) {
      for (std::size_t y = 0; y < S; ++y) {
        const double v = own[x * S + y];
        canvas[x * S + y] += inst.amplitude * v / peak;
        if (v > best) {
          best = v;
          inst.peak_x = x;
          inst.peak_y = y;
        }
        if (v >= 0.5 * peak) {
          x0 = std::min(x0, static_cast<int>(x));
          y0 = std::min(y0, static_cast<int>(y));
          x1 = std::max(x1, static_cast<int>(x));
          y1 = std::max(y1, static_cast<int>(y));
        }
      }
    }
    inst.box = Rect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
    scene.truth.labels[p.cls] = 1;
    scene.truth.boxes[p.cls].push_back(inst.box);
    scene.instances.push_back(inst);
  }

  scene.image.width = S;
  scene.image.height = S;
  scene.image.pixels.resize(S * S);
  for (std::size_t i = 0; i < S * S; ++i) {
    const double v = std::clamp(canvas[i] + config.pixel_noise * rng.normal(), 0.0, 1.0);
    scene.image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return scene;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t count,
                         double multi_instance_fraction, const SceneConfig& config) {
  if (count == 0) throw std::invalid_argument("generate_dataset: count must be >= 1");
  Dataset out;
  out.scenes.resize(count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) {
    out.scenes[i] = generate_scene(seed, i, multi_instance_fraction, config);
  }
  for (const Scene& s : out.scenes) {
    out.images.push_back(s.image);
    out.truth[s.truth.image_id] = s.truth;
  }
  return out;
}

std::vector<double> pattern_template(PatternFamily family, std::size_t size) {
  const Shape shape{family, false};
  const double c = static_cast<double>(size / 2);
  std::vector<double> t(size * size);
  double peak = 0.0;
  for (std::size_t x = 0; x < size; ++x) {
    for (std::size_t y = 0; y < size; ++y) {
      t[x * size + y] = pattern_value(shape, x - c, y - c);
      peak = std::max(peak, t[x * size + y]);
    }
  }
  for (double& v : t) v /= peak;
  return t;
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("pearson_correlation: size mismatch");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

FeatureMap images_to_batch(std::span<const GrayImage> images) {
  std::vector<std::size_t> all(images.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return images_to_batch(images, all);
}

FeatureMap images_to_batch(std::span<const GrayImage> images,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("images_to_batch: empty batch");
  const GrayImage& first = images[indices[0]];
  FeatureMap out(Shape4{indices.size(), first.width, first.height, 1});
  double* dst = out.values().data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const GrayImage& img = images[indices[k]];
    if (img.width != first.width || img.height != first.height) {
      throw ShapeError("images_to_batch: image sizes differ");
    }
    for (std::uint8_t p : img.pixels) *dst++ = (p / 255.0 - kInputMean) / kInputScale;
  }
  return out;
}

}  // namespace amine
