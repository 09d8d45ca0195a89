#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amine/mining.hpp"

namespace amine {

// Half-open pixel rectangle [x, x + w) x [y, y + h), origin top-left.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
  long area() const { return static_cast<long>(w) * h; }
  bool operator==(const Rect&) const = default;
};

struct BBox {
  int image_id = 0;
  int cls = 0;
  Rect rect;
  double score = 0.0;  // mean heatmap intensity inside the box
};

double iou(const Rect& a, const Rect& b);
inline double iou(const BBox& a, const BBox& b) { return iou(a.rect, b.rect); }

enum class BoxPolicy {
  // One box per threshold: the component holding the global maximum.
  kMaxComponent,
  // As kMaxComponent, but when a second region of (H >= lowest tau) peaks at
  // or above the second threshold, the second box is that region's component
  // at half its own peak.
  kSecondaryRegion,
};

const char* to_string(BoxPolicy policy);
BoxPolicy parse_box_policy(const std::string& text);

struct EvalConfig {
  std::vector<double> iou_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<double> bbox_thresholds{0.75, 0.5, 0.25};  // strictly decreasing
  std::size_t boxes_per_image = 3;
  // Per-class AFP ceiling; missing entries mean "use the whole pool".
  std::vector<double> afp_upper_bound;
  // Score Acc per ground-truth box instead of per image.
  bool per_box_accuracy = false;
  int connectivity = 8;
  BoxPolicy box_policy = BoxPolicy::kMaxComponent;

  void validate() const;
  double bound_for(std::size_t cls) const;
};

struct BoxExtraction {
  std::vector<BBox> boxes;  // ranked by score, highest first
  bool degenerate = false;
};

// Walks bbox_thresholds from high to low and takes the tight box of the
// component of (H >= tau * max) holding the global maximum; see BoxPolicy.
// Identical boxes collapse; the result is ranked by score. `heatmap` must be
// normalized to [0, 1].
BoxExtraction extract_bboxes(const Heatmap& heatmap, const EvalConfig& config,
                             int image_id = 0, int cls = 0);

// Rank-major pool: every image's rank-1 box (image order), then rank-2, ...
std::vector<BBox> build_pool(std::span<const std::vector<BBox>> ranked_per_image);

// Ground truth for one image: labels and boxes per class.
struct ImageTruth {
  int image_id = 0;
  std::string file;
  std::vector<int> labels;
  std::vector<std::vector<Rect>> boxes;  // [class][instance], strongest first
};

using TruthSet = std::map<int, ImageTruth>;

struct ReportRow {
  int cls = 0;
  double t_iou = 0.0;
  double acc = 0.0;
  double afp = 0.0;
  std::size_t boxes_used = 0;
};

// Walks `pool` in order; a box hits when its IoU with some same-class GT box
// in its image reaches t_iou. Consumption stops before the first miss that
// would lift AFP = misses / evaluated_images above `afp_bound`. Returns
// nullopt when no image carries ground truth for `cls`.
std::optional<ReportRow> evaluate(std::span<const BBox> pool, const TruthSet& truth,
                                  int cls, double t_iou, double afp_bound,
                                  bool per_box_accuracy = false);

struct LocalizationReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> notices;
};

// Groups predictions by class, re-ranks each image's boxes by score, builds
// the pool and evaluates every class at every IoU threshold.
LocalizationReport evaluate_all(std::span<const BBox> predictions,
                                const TruthSet& truth, std::size_t num_classes,
                                const EvalConfig& config);

std::string report_csv(const LocalizationReport& report);

}  // namespace amine
