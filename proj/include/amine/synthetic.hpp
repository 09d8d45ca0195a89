#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amine/feature_map.hpp"
#include "amine/localization.hpp"

namespace amine {

// 8-bit grayscale image, x-major like every other 2D map here.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[x * height + y]; }
};

enum class PatternFamily { kBlob, kRing, kBar, kSpeckle };

const char* to_string(PatternFamily family);

struct SceneConfig {
  std::size_t image_size = 64;
  std::size_t num_classes = 4;  // at most 4; class c uses family c
  double class_probability = 0.4;
  double amplitude = 0.6;
  double second_instance_ratio = 0.7;
  double background_level = 0.2;
  double background_amplitude = 0.05;  // low-frequency field
  double pixel_noise = 0.02;

  void validate() const;
};

struct PlantedInstance {
  int cls = 0;
  double center_x = 0.0;
  double center_y = 0.0;
  double amplitude = 0.0;
  Rect box;
  // Brightest pixel of the instance's own pattern (before background).
  std::size_t peak_x = 0;
  std::size_t peak_y = 0;
};

struct Scene {
  GrayImage image;
  ImageTruth truth;
  std::vector<PlantedInstance> instances;
  bool multi_instance = false;
};

// Renders scene `index` of the dataset seeded with `seed`; independent of
// every other index.
Scene generate_scene(std::uint64_t seed, std::size_t index,
                     double multi_instance_fraction, const SceneConfig& config);

struct Dataset {
  std::vector<GrayImage> images;
  TruthSet truth;
  std::vector<Scene> scenes;
};

Dataset generate_dataset(std::uint64_t seed, std::size_t count,
                         double multi_instance_fraction,
                         const SceneConfig& config = {});

// Unit-peak pattern template of `family` centred on a size x size canvas.
std::vector<double> pattern_template(PatternFamily family, std::size_t size);
double pearson_correlation(std::span<const double> a, std::span<const double> b);

// Stacks images into an (N, W, H, 1) map of standardized intensities
// (pixel / 255 - 0.25) / 0.1.
FeatureMap images_to_batch(std::span<const GrayImage> images);
FeatureMap images_to_batch(std::span<const GrayImage> images,
                           std::span<const std::size_t> indices);

}  // namespace amine
