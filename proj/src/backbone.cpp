#include "amine/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "amine/ops.hpp"

namespace amine {

void BackboneConfig::validate() const {
  if (stage_channels.size() < 2 || stage_channels.size() != stage_strides.size()) {
    throw std::invalid_argument(
        "backbone: stage_channels and stage_strides must have the same length >= 2");
  }
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] == 0 || stage_strides[i] == 0) {
      throw std::invalid_argument("backbone: stage channels and strides must be >= 1");
    }
  }
  if (msa_reduced_channels.first == 0 || msa_reduced_channels.second == 0) {
    throw std::invalid_argument("backbone: MSA reduced channels must be >= 1");
  }
  if (num_classes == 0) throw std::invalid_argument("backbone: num_classes must be >= 1");
  if (input_channels == 0) throw std::invalid_argument("backbone: input_channels must be >= 1");
  if (msa && stage_strides.back() != 2) {
    throw std::invalid_argument("backbone: MSA needs the last stage to halve the resolution (stride 2)");
  }
}

std::size_t BackboneConfig::stride_product() const {
  std::size_t p = 1;
  for (auto s : stage_strides) p *= s;
  return p;
}

std::size_t BackboneConfig::feature_channels() const {
  return msa ? msa_reduced_channels.first + msa_reduced_channels.second
             : stage_channels.back();
}

std::size_t BackboneConfig::feature_stride() const {
  return msa ? stride_product() / stage_strides.back() : stride_product();
}

NetworkParams NetworkParams::zeros(const BackboneConfig& config) {
  config.validate();
  NetworkParams p;
  p.config = config;
  std::size_t in = config.input_channels;
  for (std::size_t c : config.stage_channels) {
    p.stages.push_back({ConvKernel(3, 3, in, c), std::vector<double>(c, 0.0)});
    in = c;
  }
  const std::size_t S = config.stage_count();
  if (config.msa) {
    p.reduce_deep = ConvKernel(1, 1, config.stage_channels[S - 1],
                               config.msa_reduced_channels.first);
    p.reduce_shallow = ConvKernel(1, 1, config.stage_channels[S - 2],
                                  config.msa_reduced_channels.second);
  } else {
    p.reduce_deep = ConvKernel(0, 0, 0, 0);
    p.reduce_shallow = ConvKernel(0, 0, 0, 0);
  }
  p.branches.num_classes = config.num_classes;
  p.branches.dim = config.feature_channels();
  p.branches.weights.assign(p.branches.num_classes * p.branches.dim, 0.0);
  return p;
}

NetworkParams NetworkParams::initialize(const BackboneConfig& config, Rng& rng) {
  NetworkParams p = zeros(config);
  auto init = [&rng](ConvKernel& k) {
    const double fan_in = static_cast<double>(k.kw * k.kh * k.d_in);
    const double s = std::sqrt(6.0 / fan_in);
    for (double& w : k.weights) w = rng.uniform(-s, s);
  };
  for (auto& layer : p.stages) init(layer.kernel);
  if (config.msa) {
    init(p.reduce_deep);
    init(p.reduce_shallow);
  }
  return p;
}

std::vector<NamedTensor> NetworkParams::tensors() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    auto& k = stages[i].kernel;
    const std::string prefix = "stage" + std::to_string(i + 1);
    out.push_back({prefix + ".kernel", {k.kw, k.kh, k.d_in, k.d_out}, k.weights});
    out.push_back({prefix + ".bias", {stages[i].bias.size()}, stages[i].bias});
  }
  if (config.msa) {
    out.push_back({"msa.reduce_deep",
                   {1, 1, reduce_deep.d_in, reduce_deep.d_out},
                   reduce_deep.weights});
    out.push_back({"msa.reduce_shallow",
                   {1, 1, reduce_shallow.d_in, reduce_shallow.d_out},
                   reduce_shallow.weights});
  }
  out.push_back({"branches", {branches.num_classes, branches.dim}, branches.weights});
  return out;
}

std::vector<NamedConstTensor> NetworkParams::tensors() const {
  std::vector<NamedConstTensor> out;
  for (auto& t : const_cast<NetworkParams*>(this)->tensors()) {
    out.push_back({t.name, t.shape, t.values});
  }
  return out;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.values.size();
  return n;
}

std::vector<double> NetworkParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& t : tensors()) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

void NetworkParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeError("assign: " + std::to_string(flat.size()) +
                     " values for " + std::to_string(parameter_count()) +
                     " parameters");
  }
  std::size_t off = 0;
  for (auto& t : tensors()) {
    std::copy_n(flat.begin() + off, t.values.size(), t.values.begin());
    off += t.values.size();
  }
}

void NetworkParams::add_scaled(const NetworkParams& other, double scale) {
  auto mine = tensors();
  auto theirs = other.tensors();
  if (mine.size() != theirs.size()) throw ShapeError("add_scaled: layout mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].values.size() != theirs[i].values.size()) {
      throw ShapeError("add_scaled: tensor " + mine[i].name + " size mismatch");
    }
    for (std::size_t j = 0; j < mine[i].values.size(); ++j) {
      mine[i].values[j] += scale * theirs[i].values[j];
    }
  }
}

namespace {

void check_input(const NetworkParams& params, const FeatureMap& image) {
  const auto& cfg = params.config;
  const Shape4& s = image.shape();
  if (s.d != cfg.input_channels) {
    throw ShapeError("image " + s.str() + " must have " +
                     std::to_string(cfg.input_channels) + " channel(s)");
  }
  const std::size_t div = cfg.stride_product();
  if (s.w % div != 0 || s.h % div != 0) {
    throw ShapeError("image " + s.str() + ": width and height must be divisible by " +
                     std::to_string(div));
  }
}

}  // namespace

ForwardCache forward(const NetworkParams& params, const FeatureMap& image) {
  check_input(params, image);
  const auto& cfg = params.config;
  ForwardCache cache;
  cache.input = image;
  const FeatureMap* in = &image;
  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    const auto& layer = params.stages[i];
    cache.stage_outputs.push_back(
        relu(convolve(*in, layer.kernel, cfg.stage_strides[i], layer.bias)));
    in = &cache.stage_outputs.back();
  }
  const std::size_t S = cfg.stage_count();
  if (cfg.msa) {
    cache.reduced_deep = convolve(cache.stage_outputs[S - 1], params.reduce_deep, 1);
    cache.features = concat_channels(
        bilinear_upsample2x(cache.reduced_deep),
        convolve(cache.stage_outputs[S - 2], params.reduce_shallow, 1));
  } else {
    cache.features = cache.stage_outputs[S - 1];
  }
  return cache;
}

StageOutputs forward_stages(const NetworkParams& params, const FeatureMap& image) {
  check_input(params, image);
  const auto& cfg = params.config;
  FeatureMap prev;
  FeatureMap cur = image;
  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    prev = std::move(cur);
    cur = relu(convolve(i == 0 ? image : prev, params.stages[i].kernel,
                        cfg.stage_strides[i], params.stages[i].bias));
  }
  return {std::move(prev), std::move(cur)};
}

FeatureMap msa_aggregate(const NetworkParams& params, const FeatureMap& deep,
                         const FeatureMap& shallow) {
  const Shape4& a = deep.shape();
  const Shape4& b = shallow.shape();
  if (a.n != b.n || 2 * a.w != b.w || 2 * a.h != b.h) {
    throw ShapeError("MSA needs X_k at half the resolution of X_{k-1}: " +
                     a.str() + " vs " + b.str());
  }
  return concat_channels(bilinear_upsample2x(convolve(deep, params.reduce_deep, 1)),
                         convolve(shallow, params.reduce_shallow, 1));
}

std::vector<double> branch_logits(const FeatureMap& erased,
                                  std::span<const double> w) {
  const Shape4& s = erased.shape();
  if (w.size() != s.d) {
    throw ShapeError("branch weights of length " + std::to_string(w.size()) +
                     " vs feature map " + s.str());
  }
  const FeatureMap g = gap(erased);
  std::vector<double> logits(s.n, 0.0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t d = 0; d < s.d; ++d) logits[n] += w[d] * g.at(n, 0, 0, d);
  }
  return logits;
}

FeatureMap all_ones_masks(std::size_t n, std::size_t w, std::size_t h,
                          std::size_t classes) {
  return FeatureMap({n, w, h, classes}, 1.0);
}

void require_binary(const FeatureMap& masks) {
  for (double v : masks.values()) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument("erasure mask holds non-binary value " +
                                  std::to_string(v));
    }
  }
}

FeatureMap erase_features(const FeatureMap& x, const FeatureMap& masks,
                          std::size_t c) {
  const Shape4& s = x.shape();
  const Shape4& m = masks.shape();
  if (m.n != s.n || m.w != s.w || m.h != s.h || c >= m.d) {
    throw ShapeError("masks " + m.str() + " incompatible with features " +
                     s.str() + " for class " + std::to_string(c));
  }
  FeatureMap out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t px = 0; px < s.w; ++px) {
      for (std::size_t py = 0; py < s.h; ++py) {
        const double keep = masks.at(n, px, py, c);
        const double* src = x.ptr(n, px, py);
        double* dst = out.ptr(n, px, py);
        for (std::size_t d = 0; d < s.d; ++d) dst[d] = src[d] * keep;
      }
    }
  }
  return out;
}

ClassificationResult classification_forward(const FeatureMap& x,
                                            const FeatureMap& masks,
                                            const LabelMatrix& labels,
                                            const BranchParams& branches) {
  require_binary(masks);
  const Shape4& s = x.shape();
  const std::size_t C = branches.num_classes;
  if (labels.n != s.n || labels.c != C) {
    throw ShapeError("labels (" + std::to_string(labels.n) + ", " +
                     std::to_string(labels.c) + ") vs features " + s.str() +
                     " with " + std::to_string(C) + " classes");
  }
  if (masks.shape().d != C) {
    throw ShapeError("masks " + masks.shape().str() + " need one channel per class (" +
                     std::to_string(C) + ")");
  }
  ClassificationResult r;
  r.logits.assign(s.n * C, 0.0);
  r.d_logits.assign(s.n * C, 0.0);
  const double scale = 1.0 / (static_cast<double>(s.n) * static_cast<double>(C));
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto logits = branch_logits(erase_features(x, masks, c), branches.row(c));
    double class_loss = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto bce = sigmoid_bce(logits[n], labels.at(n, c));
      r.logits[n * C + c] = logits[n];
      r.d_logits[n * C + c] = bce.d_logit * scale;
      class_loss += bce.loss;
    }
    total += class_loss / static_cast<double>(s.n);
  }
  r.loss = total / static_cast<double>(C);
  return r;
}

double classification_loss(const FeatureMap& x, const FeatureMap& masks,
                           const LabelMatrix& labels,
                           const BranchParams& branches) {
  return classification_forward(x, masks, labels, branches).loss;
}

BranchGrads branch_backward(const FeatureMap& x, const FeatureMap& masks,
                            const BranchParams& branches,
                            std::span<const double> d_logits) {
  const Shape4& s = x.shape();
  const std::size_t C = branches.num_classes;
  if (d_logits.size() != s.n * C) {
    throw ShapeError("logit gradient length " + std::to_string(d_logits.size()) +
                     " vs batch " + std::to_string(s.n) + " x " + std::to_string(C));
  }
  BranchGrads g;
  g.d_features = FeatureMap(s);
  g.d_branches = BranchParams{C, s.d, std::vector<double>(C * s.d, 0.0)};
  const double inv_area = 1.0 / static_cast<double>(s.spatial());
  for (std::size_t c = 0; c < C; ++c) {
    const FeatureMap pooled = gap(erase_features(x, masks, c));
    auto w = branches.row(c);
    auto dw = g.d_branches.row(c);
    for (std::size_t n = 0; n < s.n; ++n) {
      const double dl = d_logits[n * C + c];
      if (dl == 0.0) continue;
      for (std::size_t d = 0; d < s.d; ++d) dw[d] += dl * pooled.at(n, 0, 0, d);
      for (std::size_t px = 0; px < s.w; ++px) {
        for (std::size_t py = 0; py < s.h; ++py) {
          const double m = masks.at(n, px, py, c);
          if (m == 0.0) continue;
          double* dst = g.d_features.ptr(n, px, py);
          const double k = dl * m * inv_area;
          for (std::size_t d = 0; d < s.d; ++d) dst[d] += k * w[d];
        }
      }
    }
  }
  return g;
}

NetworkParams backbone_backward(const NetworkParams& params,
                                const ForwardCache& cache,
                                const FeatureMap& d_features,
                                std::span<const FeatureMap> d_stage_extra) {
  const auto& cfg = params.config;
  const std::size_t S = cfg.stage_count();
  if (d_features.shape() != cache.features.shape()) {
    throw ShapeError("feature gradient " + d_features.shape().str() +
                     " vs features " + cache.features.shape().str());
  }
  if (!d_stage_extra.empty() && d_stage_extra.size() != S) {
    throw ShapeError("expected " + std::to_string(S) + " stage gradient slots");
  }
  NetworkParams grads = NetworkParams::zeros(cfg);

  std::vector<FeatureMap> d_stage(S);
  if (cfg.msa) {
    auto [d_up, d_shallow_reduced] =
        split_channels(d_features, cfg.msa_reduced_channels.first);
    const FeatureMap d_reduced_deep =
        bilinear_upsample2x_backward(cache.reduced_deep.shape(), d_up);
    auto deep = convolve_backward(cache.stage_outputs[S - 1], params.reduce_deep,
                                  1, d_reduced_deep);
    auto shallow = convolve_backward(cache.stage_outputs[S - 2],
                                     params.reduce_shallow, 1, d_shallow_reduced);
    grads.reduce_deep = std::move(deep.d_kernel);
    grads.reduce_shallow = std::move(shallow.d_kernel);
    d_stage[S - 1] = std::move(deep.d_input);
    d_stage[S - 2] = std::move(shallow.d_input);
  } else {
    d_stage[S - 1] = d_features;
  }

  auto accumulate = [](FeatureMap& into, const FeatureMap& extra) {
    if (extra.size() == 0) return;
    if (into.size() == 0) {
      into = extra;
      return;
    }
    if (into.shape() != extra.shape()) {
      throw ShapeError("stage gradient " + extra.shape().str() + " vs " +
                       into.shape().str());
    }
    auto dst = into.values();
    auto src = extra.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  for (std::size_t i = 0; i < d_stage_extra.size(); ++i) {
    accumulate(d_stage[i], d_stage_extra[i]);
  }

  FeatureMap carry;
  for (std::size_t i = S; i-- > 0;) {
    accumulate(carry, d_stage[i]);
    if (carry.size() == 0) continue;
    const FeatureMap d_pre = relu_backward(cache.stage_outputs[i], carry);
    const FeatureMap& in = i == 0 ? cache.input : cache.stage_outputs[i - 1];
    auto g = convolve_backward(in, params.stages[i].kernel, cfg.stage_strides[i],
                               d_pre, /*need_input_grad=*/i > 0);
    grads.stages[i].kernel = std::move(g.d_kernel);
    grads.stages[i].bias = std::move(g.d_bias);
    carry = std::move(g.d_input);
  }
  return grads;
}

}  // namespace amine
