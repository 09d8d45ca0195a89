#include "amine/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "amine/io.hpp"
#include "amine/ops.hpp"
#include "amine/rng.hpp"

namespace amine {
namespace {

using nlohmann::json;

constexpr std::size_t kChunk = 32;

const char* to_string(KpNorm n) { return n == KpNorm::kStacked ? "stacked" : "per_sample"; }

KpNorm parse_norm(const std::string& s) {
  if (s == "stacked") return KpNorm::kStacked;
  if (s == "per_sample") return KpNorm::kPerSample;
  throw ToolError("config", "kp.norm must be stacked or per_sample, got '" + s + "'");
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ToolError("config", where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ToolError("config", where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<std::size_t> iota(std::size_t first, std::size_t last) {
  std::vector<std::size_t> v;
  for (std::size_t i = first; i < last; ++i) v.push_back(i);
  return v;
}

std::vector<GrayImage> images_of(std::span<const Scene> scenes) {
  std::vector<GrayImage> out;
  out.reserve(scenes.size());
  for (const Scene& s : scenes) out.push_back(s.image);
  return out;
}

// v <- mu v + g; theta <- theta - lr v
class Optimizer {
 public:
  Optimizer(const NetworkParams& net, double lr, double momentum)
      : velocity_(NetworkParams::zeros(net.config)), lr_(lr), momentum_(momentum) {}

  void step(NetworkParams& net, const NetworkParams& grads) {
    if (momentum_ == 0.0) {
      net.add_scaled(grads, -lr_);
      return;
    }
    auto v = velocity_.tensors();
    const auto g = grads.tensors();
    for (std::size_t t = 0; t < v.size(); ++t) {
      for (std::size_t i = 0; i < v[t].values.size(); ++i) {
        v[t].values[i] = momentum_ * v[t].values[i] + g[t].values[i];
      }
    }
    net.add_scaled(velocity_, -lr_);
  }

 private:
  NetworkParams velocity_;
  double lr_;
  double momentum_;
};

double dataset_cls_loss(const NetworkParams& net, std::span<const GrayImage> images,
                        std::span<const Scene> scenes, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  const std::size_t C = net.config.num_classes;
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto part = indices.subspan(start, std::min(kChunk, indices.size() - start));
    const ForwardCache cache = forward(net, images_to_batch(images, part));
    const Shape4& xs = cache.features.shape();
    const FeatureMap ones = all_ones_masks(part.size(), xs.w, xs.h, C);
    total += classification_loss(cache.features, ones, labels_of(scenes, part, C), net.branches) *
             static_cast<double>(part.size());
  }
  return total / static_cast<double>(indices.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(am_lr > 0.0)) throw std::invalid_argument("train: learning rates must be > 0");
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("train: val_fraction must be in [0, 1)");
  }
}

void RunConfig::validate() const {
  backbone.validate();
  mining.validate();
  kp.validate(backbone);
  eval.validate();
  train.validate();
  data.scene.validate();
  if (data.scene.num_classes != backbone.num_classes) {
    throw std::invalid_argument("config: data.num_classes must equal backbone.num_classes");
  }
  if (data.scene.image_size % backbone.stride_product() != 0) {
    throw std::invalid_argument("config: image_size must be a multiple of the total stride");
  }
  if (data.train_count < 2 || data.eval_count < 1) {
    throw std::invalid_argument("config: need >= 2 train and >= 1 eval images");
  }
  if (!(data.multi_instance_fraction >= 0.0 && data.multi_instance_fraction <= 1.0)) {
    throw std::invalid_argument("config: multi_instance_fraction outside [0, 1]");
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["backbone"] = json::parse(backbone_to_json(c.backbone));
  j["mining"] = {{"steps", c.mining.steps},
                 {"binarize_threshold", c.mining.binarize_threshold},
                 {"connectivity", c.mining.connectivity}};
  j["kp"] = {{"mode", to_string(c.kp.mode)},
             {"am_fraction", c.kp.am_fraction},
             {"lambda", c.kp.lambda},
             {"layers", c.kp.layers},
             {"norm", to_string(c.kp.norm)}};
  j["eval"] = {{"iou_thresholds", c.eval.iou_thresholds},
               {"bbox_thresholds", c.eval.bbox_thresholds},
               {"boxes_per_image", c.eval.boxes_per_image},
               {"afp_upper_bound", c.eval.afp_upper_bound},
               {"per_box_accuracy", c.eval.per_box_accuracy},
               {"connectivity", c.eval.connectivity},
               {"box_policy", to_string(c.eval.box_policy)}};
  j["train"] = {{"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"patience", c.train.patience},
                {"val_fraction", c.train.val_fraction},
                {"am_epochs", c.train.am_epochs},
                {"am_lr", c.train.am_lr}};
  const SceneConfig& s = c.data.scene;
  j["data"] = {{"train_count", c.data.train_count},
               {"eval_count", c.data.eval_count},
               {"multi_instance_fraction", c.data.multi_instance_fraction},
               {"image_size", s.image_size},
               {"class_probability", s.class_probability},
               {"amplitude", s.amplitude},
               {"second_instance_ratio", s.second_instance_ratio},
               {"background_level", s.background_level},
               {"background_amplitude", s.background_amplitude},
               {"pixel_noise", s.pixel_noise}};
  j["paths"] = {{"data", c.paths.data}, {"checkpoint", c.paths.checkpoint}, {"out", c.paths.out}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(std::string_view text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ToolError("config", "config is not valid JSON");
  RunConfig c;
  try {
    reject_unknown(j, {"seed", "backbone", "mining", "kp", "eval", "train", "data", "paths"},
                   "config");
    read(j, "seed", c.seed);
    if (j.contains("backbone")) c.backbone = backbone_from_json(j["backbone"].dump());
    c.data.scene.num_classes = c.backbone.num_classes;
    if (j.contains("mining")) {
      const json& m = j["mining"];
      reject_unknown(m, {"steps", "binarize_threshold", "connectivity"}, "mining");
      read(m, "steps", c.mining.steps);
      read(m, "binarize_threshold", c.mining.binarize_threshold);
      read(m, "connectivity", c.mining.connectivity);
    }
    if (j.contains("kp")) {
      const json& k = j["kp"];
      reject_unknown(k, {"mode", "am_fraction", "lambda", "layers", "norm"}, "kp");
      if (k.contains("mode")) c.kp.mode = parse_kp_mode(k["mode"].get<std::string>());
      read(k, "am_fraction", c.kp.am_fraction);
      read(k, "lambda", c.kp.lambda);
      read(k, "layers", c.kp.layers);
      if (k.contains("norm")) c.kp.norm = parse_norm(k["norm"].get<std::string>());
    }
    if (j.contains("eval")) {
      const json& e = j["eval"];
      reject_unknown(e, {"iou_thresholds", "bbox_thresholds", "boxes_per_image", "afp_upper_bound",
                         "per_box_accuracy", "connectivity", "box_policy"},
                     "eval");
      read(e, "iou_thresholds", c.eval.iou_thresholds);
      read(e, "bbox_thresholds", c.eval.bbox_thresholds);
      read(e, "boxes_per_image", c.eval.boxes_per_image);
      read(e, "afp_upper_bound", c.eval.afp_upper_bound);
      read(e, "per_box_accuracy", c.eval.per_box_accuracy);
      read(e, "connectivity", c.eval.connectivity);
      if (e.contains("box_policy")) {
        c.eval.box_policy = parse_box_policy(e["box_policy"].get<std::string>());
      }
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      reject_unknown(t, {"lr", "momentum", "epochs", "batch_size", "patience", "val_fraction", "am_epochs", "am_lr"},
                     "train");
      read(t, "lr", c.train.lr);
      read(t, "momentum", c.train.momentum);
      read(t, "epochs", c.train.epochs);
      read(t, "batch_size", c.train.batch_size);
      read(t, "patience", c.train.patience);
      read(t, "val_fraction", c.train.val_fraction);
      read(t, "am_epochs", c.train.am_epochs);
      read(t, "am_lr", c.train.am_lr);
    }
    if (j.contains("data")) {
      const json& d = j["data"];
      reject_unknown(d, {"train_count", "eval_count", "multi_instance_fraction", "image_size",
                         "class_probability", "amplitude", "second_instance_ratio",
                         "background_level", "background_amplitude", "pixel_noise"},
                     "data");
      SceneConfig& s = c.data.scene;
      read(d, "train_count", c.data.train_count);
      read(d, "eval_count", c.data.eval_count);
      read(d, "multi_instance_fraction", c.data.multi_instance_fraction);
      read(d, "image_size", s.image_size);
      read(d, "class_probability", s.class_probability);
      read(d, "amplitude", s.amplitude);
      read(d, "second_instance_ratio", s.second_instance_ratio);
      read(d, "background_level", s.background_level);
      read(d, "background_amplitude", s.background_amplitude);
      read(d, "pixel_noise", s.pixel_noise);
    }
    if (j.contains("paths")) {
      const json& p = j["paths"];
      reject_unknown(p, {"data", "checkpoint", "out"}, "paths");
      read(p, "data", c.paths.data);
      read(p, "checkpoint", c.paths.checkpoint);
      read(p, "out", c.paths.out);
    }
  } catch (const json::exception& e) {
    throw ToolError("config", e.what());
  } catch (const std::invalid_argument& e) {
    throw ToolError("config", e.what());
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ToolError("config", e.what());
  }
  return c;
}

LabelMatrix labels_of(std::span<const Scene> scenes, std::span<const std::size_t> indices,
                      std::size_t num_classes) {
  LabelMatrix y(indices.size(), num_classes);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& labels = scenes[indices[i]].truth.labels;
    for (std::size_t c = 0; c < num_classes; ++c) y.at(i, c) = labels.at(c);
  }
  return y;
}

TruthSet truth_of(std::span<const Scene> scenes) {
  TruthSet t;
  for (const Scene& s : scenes) t[s.truth.image_id] = s.truth;
  return t;
}

double mean_auc(std::span<const double> scores, const LabelMatrix& labels) {
  if (scores.size() != labels.n * labels.c) throw std::invalid_argument("mean_auc: size mismatch");
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < labels.c; ++c) {
    double wins = 0.0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < labels.n; ++i) {
      if (labels.at(i, c)) ++pos; else ++neg;
    }
    if (pos == 0 || neg == 0) continue;
    for (std::size_t i = 0; i < labels.n; ++i) {
      if (!labels.at(i, c)) continue;
      for (std::size_t k = 0; k < labels.n; ++k) {
        if (labels.at(k, c)) continue;
        const double a = scores[i * labels.c + c];
        const double b = scores[k * labels.c + c];
        wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
      }
    }
    sum += wins / (static_cast<double>(pos) * static_cast<double>(neg));
    ++classes;
  }
  return classes ? sum / static_cast<double>(classes) : 0.0;
}

std::vector<double> predict_logits(const NetworkParams& net, std::span<const GrayImage> images,
                                   std::span<const std::size_t> indices) {
  std::vector<double> out;
  const std::size_t C = net.config.num_classes;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto part = indices.subspan(start, std::min(kChunk, indices.size() - start));
    const ForwardCache cache = forward(net, images_to_batch(images, part));
    std::vector<std::vector<double>> per_class(C);
    for (std::size_t c = 0; c < C; ++c) per_class[c] = branch_logits(cache.features, net.branches.row(c));
    for (std::size_t i = 0; i < part.size(); ++i) {
      for (std::size_t c = 0; c < C; ++c) out.push_back(per_class[c][i]);
    }
  }
  return out;
}

TrainResult train_baseline(NetworkParams& net, std::span<const Scene> scenes,
                           const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t total = scenes.size();
  const std::size_t val = static_cast<std::size_t>(std::floor(config.val_fraction * total));
  if (total - val < 1) throw std::invalid_argument("train_baseline: no training images");
  const std::vector<GrayImage> images = images_of(scenes);
  std::vector<std::size_t> order = iota(0, total - val);
  const std::vector<std::size_t> val_idx = iota(total - val, total);
  const std::size_t C = net.config.num_classes;
  KPConfig plain;
  plain.mode = KpMode::kOff;
  Rng rng(seed ^ 0x7472616e5f62617eULL);

  TrainResult result;
  EpochLog initial;
  initial.train_loss = dataset_cls_loss(net, images, scenes, order);
  initial.cls_loss = initial.train_loss;
  initial.val_loss = val ? dataset_cls_loss(net, images, scenes, val_idx) : initial.train_loss;
  result.log.push_back(initial);

  Optimizer opt(net, config.lr, config.momentum);
  NetworkParams best = net;
  double best_val = initial.val_loss;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(config.batch_size, order.size() - start));
      const FeatureMap x = images_to_batch(images, batch);
      const ForwardCache cache = forward(net, x);
      const Shape4& xs = cache.features.shape();
      const ObjectiveResult r =
          evaluate_objective(net, nullptr, x, all_ones_masks(batch.size(), xs.w, xs.h, C),
                             labels_of(scenes, batch, C), plain, 0, cache);
      opt.step(net, r.grads);
      loss_sum += r.loss * static_cast<double>(batch.size());
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(order.size());
    e.cls_loss = e.train_loss;
    e.val_loss = val ? dataset_cls_loss(net, images, scenes, val_idx) : e.train_loss;
    result.log.push_back(e);
    if (e.val_loss < best_val) {
      best_val = e.val_loss;
      best = net;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  net = best;
  const std::vector<std::size_t> train_idx = iota(0, total - val);
  result.train_auc = mean_auc(predict_logits(net, images, train_idx), labels_of(scenes, train_idx, C));
  return result;
}

FeatureMap mining_masks(const FeatureMap& features, const BranchParams& branches,
                        const LabelMatrix& labels, std::size_t am_count,
                        std::span<const std::size_t> steps, const MiningConfig& mining) {
  const Shape4& xs = features.shape();
  const std::size_t C = branches.num_classes;
  if (labels.n != xs.n || labels.c != C || am_count > xs.n || steps.size() < am_count) {
    throw std::invalid_argument("mining_masks: inconsistent batch");
  }
  FeatureMap masks = all_ones_masks(xs.n, xs.w, xs.h, C);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < am_count; ++i) {
    if (steps[i] == 0) continue;
    MiningConfig cfg = mining;
    cfg.steps = steps[i];
    for (std::size_t c = 0; c < C; ++c) {
      if (!labels.at(i, c)) continue;
      const MiningRun run = run_am(features, i, branches.row(c), cfg);
      const ErasureMask& m = run.masks.back();
      for (std::size_t x = 0; x < xs.w; ++x) {
        for (std::size_t y = 0; y < xs.h; ++y) masks.at(i, x, y, c) = m.at(x, y);
      }
    }
  }
  return masks;
}

TrainResult fine_tune_am(NetworkParams& net, const NetworkSnapshot& frozen,
                         std::span<const Scene> scenes, const TrainConfig& config,
                         const MiningConfig& mining, const KPConfig& kp, std::uint64_t seed) {
  config.validate();
  mining.validate();
  kp.validate(net.config);
  const std::vector<GrayImage> images = images_of(scenes);
  std::vector<std::size_t> order = iota(0, scenes.size());
  const std::size_t C = net.config.num_classes;
  Rng rng(seed ^ 0x616d5f66696e65ULL);
  std::size_t cursor = 0;
  Optimizer opt(net, config.am_lr, config.momentum);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.am_epochs; ++epoch) {
    rng.shuffle(order);
    double loss = 0.0, cls = 0.0, kpl = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(config.batch_size, order.size() - start));
      const std::size_t N = batch.size();
      const std::size_t am_count =
          kp.mode == KpMode::kOff ? N : am_sample_count(N, kp.am_fraction);
      std::vector<std::size_t> steps(am_count);
      for (auto& s : steps) s = cursor++ % mining.steps;
      const FeatureMap x = images_to_batch(images, batch);
      const LabelMatrix y = labels_of(scenes, batch, C);
      ForwardCache cache = forward(net, x);
      const FeatureMap masks = mining_masks(cache.features, net.branches, y, am_count, steps, mining);
      const ObjectiveResult r =
          evaluate_objective(net, &frozen, x, masks, y, kp, am_count, std::move(cache));
      opt.step(net, r.grads);
      loss += r.loss * N;
      cls += r.cls_loss * N;
      kpl += r.kp_loss * N;
      seen += N;
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss / static_cast<double>(seen);
    e.cls_loss = cls / static_cast<double>(seen);
    e.kp_loss = kpl / static_cast<double>(seen);
    e.val_loss = e.cls_loss;
    result.log.push_back(e);
  }
  result.best_epoch = config.am_epochs;
  const std::vector<std::size_t> all = iota(0, scenes.size());
  result.train_auc = mean_auc(predict_logits(net, images, all), labels_of(scenes, all, C));
  return result;
}

std::vector<MinedHeatmap> mine_scenes(const NetworkParams& net, std::span<const Scene> scenes,
                                      const MiningConfig& mining, const EvalConfig& eval) {
  mining.validate();
  eval.validate();
  const std::vector<GrayImage> images = images_of(scenes);
  const std::size_t C = net.config.num_classes;
  std::vector<std::vector<MinedHeatmap>> per_scene(scenes.size());
  for (std::size_t start = 0; start < scenes.size(); start += kChunk) {
    const std::vector<std::size_t> part = iota(start, std::min(start + kChunk, scenes.size()));
    const ForwardCache cache = forward(net, images_to_batch(images, part));
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < part.size(); ++k) {
      const Scene& scene = scenes[part[k]];
      for (std::size_t c = 0; c < C; ++c) {
        if (!scene.truth.labels.at(c)) continue;
        MinedHeatmap m;
        m.image_id = scene.truth.image_id;
        m.cls = static_cast<int>(c);
        m.run = run_am(cache.features, k, net.branches.row(c), mining);
        const auto normalized =
            normalize_heatmap(aggregate_final_heatmap(m.run.heatmaps, m.run.masks));
        if (!normalized) {
          m.degenerate = true;
          m.final_map = Heatmap(scene.image.width, scene.image.height);
        } else {
          const auto up = normalize_heatmap(
              upsample_heatmap(*normalized, scene.image.width, scene.image.height));
          m.final_map = up ? *up : Heatmap(scene.image.width, scene.image.height);
          const BoxExtraction ex = extract_bboxes(m.final_map, eval, m.image_id, m.cls);
          m.degenerate = ex.degenerate;
          m.boxes = ex.boxes;
        }
        per_scene[part[k]].push_back(std::move(m));
      }
    }
  }
  std::vector<MinedHeatmap> out;
  for (auto& v : per_scene) {
    for (auto& m : v) out.push_back(std::move(m));
  }
  return out;
}

std::vector<BBox> collect_boxes(std::span<const MinedHeatmap> mined) {
  std::vector<BBox> out;
  for (const MinedHeatmap& m : mined) out.insert(out.end(), m.boxes.begin(), m.boxes.end());
  return out;
}

std::vector<double> gap_drift(const NetworkParams& a, const NetworkParams& b,
                              std::span<const GrayImage> images,
                              std::span<const std::string> layers) {
  std::vector<double> drift(layers.size(), 0.0);
  const std::vector<std::size_t> all = iota(0, images.size());
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto part = std::span<const std::size_t>(all).subspan(start, std::min(kChunk, all.size() - start));
    const FeatureMap x = images_to_batch(images, part);
    const auto ga = layer_gap_features(a, forward(a, x), layers);
    const auto gb = layer_gap_features(b, forward(b, x), layers);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::size_t F = ga[l].shape().d;
      for (std::size_t n = 0; n < part.size(); ++n) {
        double s = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          const double d = ga[l].at(n, 0, 0, f) - gb[l].at(n, 0, 0, f);
          s += d * d;
        }
        drift[l] += std::sqrt(s);
      }
    }
  }
  for (double& d : drift) d /= static_cast<double>(images.size());
  return drift;
}

double instance_recall(std::span<const Scene> scenes, std::span<const BBox> boxes,
                       std::size_t rank, double t_iou) {
  std::map<std::pair<int, int>, std::vector<Rect>> by_key;
  for (const BBox& b : boxes) by_key[{b.image_id, b.cls}].push_back(b.rect);
  std::size_t total = 0, hit = 0;
  for (const Scene& s : scenes) {
    for (std::size_t c = 0; c < s.truth.boxes.size(); ++c) {
      if (s.truth.boxes[c].size() <= rank) continue;
      ++total;
      const Rect& gt = s.truth.boxes[c][rank];
      auto it = by_key.find({s.truth.image_id, static_cast<int>(c)});
      if (it == by_key.end()) continue;
      for (const Rect& r : it->second) {
        if (iou(r, gt) >= t_iou) {
          ++hit;
          break;
        }
      }
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

std::vector<AblationCell> run_ablation(const NetworkParams& baseline, const RunConfig& config,
                                       std::span<const Scene> train_scenes,
                                       std::span<const Scene> eval_scenes) {
  std::vector<AblationCell> cells;
  const TruthSet truth = truth_of(eval_scenes);
  for (KpMode mode : {KpMode::kOff, KpMode::kVanilla, KpMode::kFull}) {
    for (std::size_t t = 1; t <= 3; ++t) {
      NetworkParams net = baseline;
      const NetworkSnapshot frozen = NetworkSnapshot::capture(baseline);
      MiningConfig mining = config.mining;
      mining.steps = t;
      KPConfig kp = config.kp;
      kp.mode = mode;
      fine_tune_am(net, frozen, train_scenes, config.train, mining, kp, config.seed);
      const auto mined = mine_scenes(net, eval_scenes, mining, config.eval);
      const std::vector<BBox> boxes = collect_boxes(mined);
      cells.push_back({mode, t, evaluate_all(boxes, truth, config.backbone.num_classes, config.eval)});
    }
  }
  return cells;
}

std::string ablation_csv(std::span<const AblationCell> cells) {
  std::string out = "kp,am_steps,class,t_iou,acc,afp,boxes_used\n";
  char line[160];
  for (const AblationCell& cell : cells) {
    for (const ReportRow& r : cell.report.rows) {
      std::snprintf(line, sizeof(line), "%s,%zu,%d,%.2f,%.6f,%.6f,%zu\n", to_string(cell.mode),
                    cell.steps, r.cls, r.t_iou, r.acc, r.afp, r.boxes_used);
      out += line;
    }
  }
  return out;
}

}  // namespace amine
