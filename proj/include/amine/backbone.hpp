#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amine/feature_map.hpp"
#include "amine/rng.hpp"

namespace amine {

struct BackboneConfig {
  std::vector<std::size_t> stage_channels{8, 16, 32, 64};
  std::vector<std::size_t> stage_strides{1, 2, 2, 2};
  // (deep, shallow): channels after the 1x1 reductions of X_k and X_{k-1}.
  std::pair<std::size_t, std::size_t> msa_reduced_channels{32, 16};
  std::size_t num_classes = 4;
  std::size_t input_channels = 1;
  // Without MSA the branches read the last stage output directly.
  bool msa = true;

  void validate() const;
  std::size_t stage_count() const { return stage_channels.size(); }
  std::size_t stride_product() const;
  // Channel count D of the feature map X the branches consume.
  std::size_t feature_channels() const;
  // Spatial stride of X relative to the input image.
  std::size_t feature_stride() const;
  bool operator==(const BackboneConfig&) const = default;
};

struct ConvLayer {
  ConvKernel kernel;
  std::vector<double> bias;
};

// Per-class branch weights w^c, stored row-major as (class, channel).
struct BranchParams {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;

  std::span<const double> row(std::size_t c) const {
    return std::span<const double>(weights).subspan(c * dim, dim);
  }
  std::span<double> row(std::size_t c) {
    return std::span<double>(weights).subspan(c * dim, dim);
  }
};

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> values;
};

struct NamedConstTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const double> values;
};

// All trainable state of the network. Also used as the gradient container.
struct NetworkParams {
  BackboneConfig config;
  std::vector<ConvLayer> stages;
  ConvKernel reduce_deep;     // 1x1 on X_k (MSA only)
  ConvKernel reduce_shallow;  // 1x1 on X_{k-1} (MSA only)
  BranchParams branches;

  // Same layout as `config` requires, every value zero.
  static NetworkParams zeros(const BackboneConfig& config);
  // Convolutions Uniform(-s, s) with s = sqrt(6 / fan_in); zero biases and
  // zero branch weights.
  static NetworkParams initialize(const BackboneConfig& config, Rng& rng);

  std::vector<NamedTensor> tensors();
  std::vector<NamedConstTensor> tensors() const;
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  void add_scaled(const NetworkParams& other, double scale);
};

// Label matrix y in {0,1}^{N x C}.
struct LabelMatrix {
  std::size_t n = 0;
  std::size_t c = 0;
  std::vector<int> values;

  LabelMatrix() = default;
  LabelMatrix(std::size_t n, std::size_t c) : n(n), c(c), values(n * c, 0) {}
  int& at(std::size_t i, std::size_t k) { return values[i * c + k]; }
  int at(std::size_t i, std::size_t k) const { return values[i * c + k]; }
};

struct ForwardCache {
  FeatureMap input;
  std::vector<FeatureMap> stage_outputs;  // post-ReLU, one per stage
  FeatureMap reduced_deep;                // 1x1(X_k) before upsampling
  FeatureMap features;                    // X
};

struct StageOutputs {
  FeatureMap shallow;  // X_{k-1}
  FeatureMap deep;     // X_k
};

StageOutputs forward_stages(const NetworkParams& params,
                            const FeatureMap& image);

// X = [upsample2x(1x1(X_k)), 1x1(X_{k-1})]
FeatureMap msa_aggregate(const NetworkParams& params, const FeatureMap& deep,
                         const FeatureMap& shallow);

ForwardCache forward(const NetworkParams& params, const FeatureMap& image);

// logit[n] = w . gap(x)[n]
std::vector<double> branch_logits(const FeatureMap& erased,
                                  std::span<const double> w);

// Masks are stored as a (N, W, H, C) map whose channel c holds M^c.
FeatureMap all_ones_masks(std::size_t n, std::size_t w, std::size_t h,
                          std::size_t classes);
void require_binary(const FeatureMap& masks);

// X^c = X (.) M^c with M^c replicated over channels.
FeatureMap erase_features(const FeatureMap& x, const FeatureMap& masks,
                          std::size_t c);

struct ClassificationResult {
  double loss = 0.0;
  std::vector<double> logits;    // (n, c) row-major
  std::vector<double> d_logits;  // dL_cls / dlogit
};

ClassificationResult classification_forward(const FeatureMap& x,
                                            const FeatureMap& masks,
                                            const LabelMatrix& labels,
                                            const BranchParams& branches);

// Mean over classes of the batch-mean sigmoid cross-entropy of each branch.
double classification_loss(const FeatureMap& x, const FeatureMap& masks,
                           const LabelMatrix& labels,
                           const BranchParams& branches);

struct BranchGrads {
  FeatureMap d_features;
  BranchParams d_branches;
};

// Pulls logit gradients back to X and w. Masks receive no gradient.
BranchGrads branch_backward(const FeatureMap& x, const FeatureMap& masks,
                            const BranchParams& branches,
                            std::span<const double> d_logits);

// Back-propagates into the backbone. `d_features` is dL/dX; `d_stage_extra`
// optionally adds gradients directly at stage outputs (empty entries skip).
// The returned branch gradient is left at zero.
NetworkParams backbone_backward(const NetworkParams& params,
                                const ForwardCache& cache,
                                const FeatureMap& d_features,
                                std::span<const FeatureMap> d_stage_extra = {});

}  // namespace amine
