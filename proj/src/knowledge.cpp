#include "amine/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "amine/ops.hpp"

namespace amine {
namespace {

struct LayerRef {
  enum Kind { kStage, kMsa, kLogits } kind;
  std::size_t stage = 0;  // 0-based
};

LayerRef resolve_layer(const std::string& name, const BackboneConfig& cfg) {
  if (name == "msa") {
    if (!cfg.msa) throw std::invalid_argument("KP layer 'msa' requires MSA to be enabled");
    return {LayerRef::kMsa};
  }
  if (name == "logits") return {LayerRef::kLogits};
  if (name.rfind("stage", 0) == 0 && name.size() > 5) {
    std::size_t idx = 0;
    try {
      idx = std::stoul(name.substr(5));
    } catch (const std::exception&) {
      throw std::invalid_argument("unknown KP layer '" + name + "'");
    }
    if (idx < 1 || idx > cfg.stage_count()) {
      throw std::invalid_argument("KP layer '" + name + "' outside 1.." +
                                  std::to_string(cfg.stage_count()));
    }
    return {LayerRef::kStage, idx - 1};
  }
  throw std::invalid_argument("unknown KP layer '" + name + "'");
}

// Unmasked branch logits as an (N, 1, 1, C) map.
FeatureMap logits_map(const NetworkParams& net, const FeatureMap& features) {
  const std::size_t N = features.shape().n;
  const std::size_t C = net.branches.num_classes;
  FeatureMap out({N, 1, 1, C});
  for (std::size_t c = 0; c < C; ++c) {
    const auto l = branch_logits(features, net.branches.row(c));
    for (std::size_t n = 0; n < N; ++n) out.at(n, 0, 0, c) = l[n];
  }
  return out;
}

// Places `part` at batch rows [offset, offset + part.n) of a zero map.
FeatureMap embed_rows(const FeatureMap& part, std::size_t total, std::size_t offset) {
  Shape4 s = part.shape();
  s.n = total;
  FeatureMap out(s);
  const std::size_t stride = s.w * s.h * s.d;
  std::copy(part.values().begin(), part.values().end(),
            out.values().begin() + offset * stride);
  return out;
}

void add_into(FeatureMap& into, const FeatureMap& extra, double scale) {
  if (into.size() == 0) {
    into = FeatureMap(extra.shape());
  }
  auto dst = into.values();
  auto src = extra.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

const char* to_string(KpMode mode) {
  switch (mode) {
    case KpMode::kOff: return "off";
    case KpMode::kVanilla: return "vanilla";
    case KpMode::kFull: return "full";
  }
  return "?";
}

KpMode parse_kp_mode(const std::string& text) {
  if (text == "off") return KpMode::kOff;
  if (text == "vanilla") return KpMode::kVanilla;
  if (text == "full") return KpMode::kFull;
  throw std::invalid_argument("KP mode must be off, vanilla or full, got '" + text + "'");
}

void KPConfig::validate(const BackboneConfig& backbone) const {
  if (!(am_fraction > 0.0 && am_fraction < 1.0)) {
    throw std::invalid_argument("kp: am_fraction must lie in (0, 1)");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("kp: lambda must be finite and >= 0");
  }
  if (mode == KpMode::kFull && layers.empty()) {
    throw std::invalid_argument("kp: full mode needs at least one layer");
  }
  for (const auto& name : layers) resolve_layer(name, backbone);
}

std::size_t am_sample_count(std::size_t batch, double am_fraction) {
  if (batch < 2) {
    throw std::invalid_argument("partition_batch: need at least 2 samples, got " +
                                std::to_string(batch));
  }
  const double raw = std::round(am_fraction * static_cast<double>(batch));
  const auto n = static_cast<std::size_t>(std::max(raw, 0.0));
  return std::clamp<std::size_t>(n, 1, batch - 1);
}

KpLayerLoss kp_layer_loss(const FeatureMap& frozen, const FeatureMap& updated,
                          KpNorm norm) {
  if (frozen.shape() != updated.shape()) {
    throw ShapeError("KP layer shapes differ: " + frozen.shape().str() + " vs " +
                     updated.shape().str());
  }
  const Shape4& s = updated.shape();
  const FeatureMap ga = gap(frozen);
  const FeatureMap gb = gap(updated);
  const double inv_m = 1.0 / static_cast<double>(s.n);
  FeatureMap d_gap({s.n, 1, 1, s.d});

  KpLayerLoss out;
  if (norm == KpNorm::kStacked) {
    double sq = 0.0;
    for (std::size_t i = 0; i < gb.size(); ++i) {
      const double diff = gb.values()[i] - ga.values()[i];
      sq += diff * diff;
    }
    const double dist = std::sqrt(sq);
    out.loss = dist * inv_m;
    if (dist > 0.0) {
      for (std::size_t i = 0; i < gb.size(); ++i) {
        d_gap.values()[i] = (gb.values()[i] - ga.values()[i]) / dist * inv_m;
      }
    }
  } else {
    for (std::size_t n = 0; n < s.n; ++n) {
      double sq = 0.0;
      for (std::size_t d = 0; d < s.d; ++d) {
        const double diff = gb.at(n, 0, 0, d) - ga.at(n, 0, 0, d);
        sq += diff * diff;
      }
      const double dist = std::sqrt(sq);
      out.loss += dist * inv_m;
      if (dist > 0.0) {
        for (std::size_t d = 0; d < s.d; ++d) {
          d_gap.at(n, 0, 0, d) = (gb.at(n, 0, 0, d) - ga.at(n, 0, 0, d)) / dist * inv_m;
        }
      }
    }
  }
  out.d_updated = gap_backward(s, d_gap);
  return out;
}

double kp_total_loss(std::span<const double> layer_losses) {
  if (layer_losses.empty()) throw std::invalid_argument("kp_total_loss: empty layer set");
  double sum = 0.0;
  for (double l : layer_losses) sum += l;
  return sum / static_cast<double>(layer_losses.size());
}

std::vector<FeatureMap> layer_gap_features(const NetworkParams& net,
                                           const ForwardCache& cache,
                                           std::span<const std::string> layers) {
  std::vector<FeatureMap> out;
  for (const auto& name : layers) {
    const LayerRef ref = resolve_layer(name, net.config);
    switch (ref.kind) {
      case LayerRef::kStage: out.push_back(gap(cache.stage_outputs[ref.stage])); break;
      case LayerRef::kMsa: out.push_back(gap(cache.features)); break;
      case LayerRef::kLogits: out.push_back(logits_map(net, cache.features)); break;
    }
  }
  return out;
}

ObjectiveResult evaluate_objective(const NetworkParams& net,
                                   const NetworkSnapshot* frozen,
                                   const FeatureMap& images,
                                   const FeatureMap& masks,
                                   const LabelMatrix& labels,
                                   const KPConfig& kp, std::size_t am_count,
                                   ForwardCache precomputed) {
  const std::size_t N = images.shape().n;
  const bool partitioned = kp.mode != KpMode::kOff;
  if (partitioned && (am_count == 0 || am_count >= N)) {
    throw std::invalid_argument("evaluate_objective: AM part of " +
                                std::to_string(am_count) + " samples in a batch of " +
                                std::to_string(N));
  }
  if (kp.mode == KpMode::kFull && frozen == nullptr) {
    throw std::invalid_argument("evaluate_objective: full KP needs the frozen snapshot");
  }

  ObjectiveResult out;
  out.cache = precomputed.features.size() != 0 ? std::move(precomputed)
                                               : forward(net, images);
  const FeatureMap& x = out.cache.features;
  const Shape4& xs = x.shape();
  if (masks.shape() != Shape4{N, xs.w, xs.h, net.branches.num_classes}) {
    throw ShapeError("masks " + masks.shape().str() + " vs features " + xs.str());
  }

  FeatureMap used_masks = masks;
  if (partitioned) {
    const std::size_t stride = xs.w * xs.h * net.branches.num_classes;
    std::fill(used_masks.values().begin() + am_count * stride,
              used_masks.values().end(), 1.0);
  }

  ClassificationResult cls = classification_forward(x, used_masks, labels, net.branches);
  out.cls_loss = cls.loss;
  std::vector<double> d_logits = cls.d_logits;
  FeatureMap d_features_extra;
  std::vector<FeatureMap> d_stage(net.config.stage_count());

  if (kp.mode == KpMode::kFull) {
    const std::size_t M = N - am_count;
    const ForwardCache ref = forward(frozen->params(), images.slice_batch(am_count, M));
    const double weight = kp.lambda / static_cast<double>(kp.layers.size());
    const bool backprop = kp.lambda != 0.0;
    const std::size_t C = net.branches.num_classes;
    for (const auto& name : kp.layers) {
      const LayerRef layer = resolve_layer(name, net.config);
      KpLayerLoss l;
      switch (layer.kind) {
        case LayerRef::kStage: {
          l = kp_layer_loss(ref.stage_outputs[layer.stage],
                            out.cache.stage_outputs[layer.stage].slice_batch(am_count, M),
                            kp.norm);
          if (backprop) add_into(d_stage[layer.stage], embed_rows(l.d_updated, N, am_count), weight);
          break;
        }
        case LayerRef::kMsa: {
          l = kp_layer_loss(ref.features, x.slice_batch(am_count, M), kp.norm);
          if (backprop) add_into(d_features_extra, embed_rows(l.d_updated, N, am_count), weight);
          break;
        }
        case LayerRef::kLogits: {
          FeatureMap updated({M, 1, 1, C});
          for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t c = 0; c < C; ++c) {
              updated.at(m, 0, 0, c) = cls.logits[(am_count + m) * C + c];
            }
          }
          l = kp_layer_loss(logits_map(frozen->params(), ref.features), updated, kp.norm);
          if (backprop) {
            for (std::size_t m = 0; m < M; ++m) {
              for (std::size_t c = 0; c < C; ++c) {
                d_logits[(am_count + m) * C + c] += weight * l.d_updated.at(m, 0, 0, c);
              }
            }
          }
          break;
        }
      }
      out.layer_losses.push_back(l.loss);
    }
    out.kp_loss = kp_total_loss(out.layer_losses);
  }
  out.loss = combined_loss(out.cls_loss, out.kp_loss,
                           kp.mode == KpMode::kFull ? kp.lambda : 0.0);

  BranchGrads branch = branch_backward(x, used_masks, net.branches, d_logits);
  if (d_features_extra.size() != 0) add_into(branch.d_features, d_features_extra, 1.0);
  bool any_stage = false;
  for (const auto& d : d_stage) any_stage = any_stage || d.size() != 0;
  out.grads = backbone_backward(net, out.cache, branch.d_features,
                                any_stage ? std::span<const FeatureMap>(d_stage)
                                          : std::span<const FeatureMap>());
  out.grads.branches = std::move(branch.d_branches);
  return out;
}

}  // namespace amine
