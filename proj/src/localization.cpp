#include "amine/localization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

namespace amine {

double iou(const Rect& a, const Rect& b) {
  const long ix = std::max(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const long iy = std::max(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const long inter = ix * iy;
  const long uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw std::invalid_argument("eval: no IoU thresholds");
  for (double t : iou_thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("eval: IoU threshold outside (0, 1]");
  }
  if (bbox_thresholds.empty()) throw std::invalid_argument("eval: no bbox thresholds");
  for (std::size_t i = 0; i < bbox_thresholds.size(); ++i) {
    const double t = bbox_thresholds[i];
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("eval: bbox threshold outside (0, 1]");
    if (i > 0 && !(t < bbox_thresholds[i - 1])) {
      throw std::invalid_argument("eval: bbox thresholds must be strictly decreasing");
    }
  }
  if (boxes_per_image != bbox_thresholds.size()) {
    throw std::invalid_argument("eval: boxes_per_image must equal the number of bbox thresholds");
  }
  for (double b : afp_upper_bound) {
    if (!(b >= 0.0)) throw std::invalid_argument("eval: AFP bounds must be >= 0");
  }
  if (connectivity != 4 && connectivity != 8) {
    throw std::invalid_argument("eval: connectivity must be 4 or 8");
  }
}

double EvalConfig::bound_for(std::size_t cls) const {
  return cls < afp_upper_bound.size() ? afp_upper_bound[cls]
                                      : std::numeric_limits<double>::infinity();
}

const char* to_string(BoxPolicy policy) {
  return policy == BoxPolicy::kMaxComponent ? "max_component" : "secondary_region";
}

BoxPolicy parse_box_policy(const std::string& text) {
  if (text == "max_component") return BoxPolicy::kMaxComponent;
  if (text == "secondary_region") return BoxPolicy::kSecondaryRegion;
  throw std::invalid_argument("unknown box policy '" + text + "' (max_component, secondary_region)");
}

namespace {

struct Component {
  Rect rect{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  double peak = -1.0;
  std::size_t peak_index = 0;
};

// Components of (H >= threshold) with their tight boxes and peaks; `labels`
// receives the 1-based label map.
std::vector<Component> components_above(const Heatmap& heatmap, double threshold,
                                        int connectivity, std::vector<std::uint32_t>& labels) {
  const std::size_t W = heatmap.width;
  const std::size_t H = heatmap.height;
  std::vector<std::uint8_t> cells(W * H);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = heatmap.values[i] >= threshold;
  const std::size_t count = label_components(W, H, cells, connectivity, labels);
  std::vector<Component> comps(count);
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) {
      const std::uint32_t l = labels[x * H + y];
      if (!l) continue;
      Component& c = comps[l - 1];
      // w, h temporarily hold the max corner.
      c.rect.x = std::min(c.rect.x, static_cast<int>(x));
      c.rect.y = std::min(c.rect.y, static_cast<int>(y));
      c.rect.w = std::max(c.rect.w, static_cast<int>(x));
      c.rect.h = std::max(c.rect.h, static_cast<int>(y));
      if (heatmap.values[x * H + y] > c.peak) {
        c.peak = heatmap.values[x * H + y];
        c.peak_index = x * H + y;
      }
    }
  }
  for (Component& c : comps) {
    c.rect.w = c.rect.w - c.rect.x + 1;
    c.rect.h = c.rect.h - c.rect.y + 1;
  }
  return comps;
}

}  // namespace

BoxExtraction extract_bboxes(const Heatmap& heatmap, const EvalConfig& config,
                             int image_id, int cls) {
  BoxExtraction out;
  if (heatmap.values.empty()) {
    out.degenerate = true;
    return out;
  }
  for (double v : heatmap.values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("extract_bboxes: heatmap must be normalized to [0, 1]");
    }
  }
  if (!(heatmap.max() > heatmap.min())) {
    out.degenerate = true;
    return out;
  }

  const std::size_t H = heatmap.height;
  auto mean_inside = [&](const Rect& r) {
    double sum = 0.0;
    for (int x = r.x; x < r.x + r.w; ++x) {
      for (int y = r.y; y < r.y + r.h; ++y) sum += heatmap.at(x, y);
    }
    return sum / static_cast<double>(r.area());
  };

  // Global maximum, first in row-major order.
  std::size_t peak = 0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < heatmap.width; ++x) {
      if (heatmap.at(x, y) > heatmap.values[peak]) peak = x * H + y;
    }
  }
  const double top = heatmap.values[peak];

  std::vector<Rect> picks;
  std::vector<std::uint32_t> labels;
  for (double tau : config.bbox_thresholds) {
    const auto comps = components_above(heatmap, tau * top, config.connectivity, labels);
    picks.push_back(comps[labels[peak] - 1].rect);
  }

  const auto& taus = config.bbox_thresholds;
  if (config.box_policy == BoxPolicy::kSecondaryRegion && taus.size() >= 2) {
    const auto regions = components_above(heatmap, taus.back() * top, config.connectivity, labels);
    const std::uint32_t primary = labels[peak];
    const Component* second = nullptr;
    for (std::size_t k = 0; k < regions.size(); ++k) {
      if (k + 1 == primary || regions[k].peak < taus[1] * top) continue;
      if (!second || regions[k].peak > second->peak) second = &regions[k];
    }
    if (second) {
      const double level = std::max(0.5 * second->peak, taus.back() * top);
      const auto comps = components_above(heatmap, level, config.connectivity, labels);
      picks[1] = comps[labels[second->peak_index] - 1].rect;
    }
  }

  std::vector<BBox> chosen;
  for (const Rect& r : picks) {
    const bool seen = std::any_of(chosen.begin(), chosen.end(),
                                  [&](const BBox& b) { return b.rect == r; });
    if (!seen) chosen.push_back(BBox{image_id, cls, r, mean_inside(r)});
  }
  std::stable_sort(chosen.begin(), chosen.end(),
                   [](const BBox& a, const BBox& b) { return a.score > b.score; });
  out.boxes = std::move(chosen);
  return out;
}

std::vector<BBox> build_pool(std::span<const std::vector<BBox>> ranked_per_image) {
  std::vector<BBox> pool;
  std::size_t depth = 0;
  for (const auto& boxes : ranked_per_image) depth = std::max(depth, boxes.size());
  for (std::size_t rank = 0; rank < depth; ++rank) {
    for (const auto& boxes : ranked_per_image) {
      if (rank < boxes.size()) pool.push_back(boxes[rank]);
    }
  }
  return pool;
}

std::optional<ReportRow> evaluate(std::span<const BBox> pool, const TruthSet& truth,
                                  int cls, double t_iou, double afp_bound,
                                  bool per_box_accuracy) {
  auto gt_boxes = [&](int image_id) -> const std::vector<Rect>* {
    auto it = truth.find(image_id);
    if (it == truth.end()) return nullptr;
    const ImageTruth& t = it->second;
    if (cls < 0 || static_cast<std::size_t>(cls) >= t.boxes.size()) return nullptr;
    if (static_cast<std::size_t>(cls) < t.labels.size() && t.labels[cls] != 1) return nullptr;
    const auto& b = t.boxes[cls];
    return b.empty() ? nullptr : &b;
  };

  std::size_t images = 0;
  std::size_t gt_total = 0;
  for (const auto& [id, t] : truth) {
    if (const auto* b = gt_boxes(id)) {
      ++images;
      gt_total += b->size();
    }
  }
  if (images == 0) return std::nullopt;

  const double denom = static_cast<double>(images);
  std::set<int> hit_images;
  std::set<std::pair<int, std::size_t>> matched_gt;
  std::size_t misses = 0;
  std::size_t used = 0;
  for (const BBox& box : pool) {
    if (box.cls != cls) continue;
    const auto* gt = gt_boxes(box.image_id);
    bool hit = false;
    if (gt) {
      for (std::size_t g = 0; g < gt->size(); ++g) {
        if (iou(box.rect, (*gt)[g]) >= t_iou) {
          hit = true;
          if (per_box_accuracy) matched_gt.insert({box.image_id, g});
        }
      }
    }
    if (!hit) {
      if (static_cast<double>(misses + 1) / denom > afp_bound) break;
      ++misses;
    } else {
      hit_images.insert(box.image_id);
    }
    ++used;
  }

  ReportRow row;
  row.cls = cls;
  row.t_iou = t_iou;
  row.acc = per_box_accuracy
                ? static_cast<double>(matched_gt.size()) / static_cast<double>(gt_total)
                : static_cast<double>(hit_images.size()) / denom;
  row.afp = static_cast<double>(misses) / denom;
  row.boxes_used = used;
  return row;
}

LocalizationReport evaluate_all(std::span<const BBox> predictions,
                                const TruthSet& truth, std::size_t num_classes,
                                const EvalConfig& config) {
  config.validate();
  LocalizationReport report;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::map<int, std::vector<BBox>> per_image;
    for (const BBox& b : predictions) {
      if (b.cls == static_cast<int>(c)) per_image[b.image_id].push_back(b);
    }
    std::vector<std::vector<BBox>> ranked;
    for (auto& [id, boxes] : per_image) {
      std::stable_sort(boxes.begin(), boxes.end(),
                       [](const BBox& a, const BBox& b) { return a.score > b.score; });
      ranked.push_back(std::move(boxes));
    }
    const std::vector<BBox> pool = build_pool(ranked);
    for (double t : config.iou_thresholds) {
      auto row = evaluate(pool, truth, static_cast<int>(c), t, config.bound_for(c),
                          config.per_box_accuracy);
      if (!row) {
        report.notices.push_back("class " + std::to_string(c) +
                                 ": no ground truth, omitted from report");
        break;
      }
      report.rows.push_back(*row);
    }
  }
  return report;
}

std::string report_csv(const LocalizationReport& report) {
  std::string out = "class,t_iou,acc,afp,boxes_used\n";
  char line[128];
  for (const ReportRow& r : report.rows) {
    std::snprintf(line, sizeof(line), "%d,%.2f,%.6f,%.6f,%zu\n", r.cls, r.t_iou,
                  r.acc, r.afp, r.boxes_used);
    out += line;
  }
  return out;
}

}  // namespace amine
