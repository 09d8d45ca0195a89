#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "amine/backbone.hpp"
#include "amine/feature_map.hpp"

namespace amine {

enum class KpMode { kOff, kVanilla, kFull };

const char* to_string(KpMode mode);
KpMode parse_kp_mode(const std::string& text);

// How the GAP difference of a layer is reduced to a scalar.
enum class KpNorm {
  kStacked,    // || G_A - G_B ||_2 over the whole (batch x feature) block
  kPerSample,  // sum_i || G_A[i] - G_B[i] ||_2
};

struct KPConfig {
  KpMode mode = KpMode::kFull;
  double am_fraction = 0.125;
  double lambda = 0.5;
  // Layer names: "stageI" (1-based stage output), "msa", "logits".
  std::vector<std::string> layers{"stage3", "stage4", "msa", "logits"};
  KpNorm norm = KpNorm::kStacked;

  void validate(const BackboneConfig& backbone) const;
};

// n = round(fraction * N) clamped to [1, N - 1]; N must be >= 2.
std::size_t am_sample_count(std::size_t batch, double am_fraction);

template <typename T>
struct BatchPartition {
  std::vector<T> am_part;
  std::vector<T> kp_part;
};

template <typename T>
BatchPartition<T> partition_batch(std::span<const T> batch, double am_fraction) {
  const std::size_t n = am_sample_count(batch.size(), am_fraction);
  return {std::vector<T>(batch.begin(), batch.begin() + n),
          std::vector<T>(batch.begin() + n, batch.end())};
}

struct KpLayerLoss {
  double loss = 0.0;
  FeatureMap d_updated;  // dL^k / dX_B(k), same shape as the inputs
};

// L^k = (1 / M) * || gap(frozen) - gap(updated) ||_2 for a batch of M samples.
// The gradient at a zero difference is taken as 0.
KpLayerLoss kp_layer_loss(const FeatureMap& frozen, const FeatureMap& updated,
                          KpNorm norm = KpNorm::kStacked);

double kp_total_loss(std::span<const double> layer_losses);

inline double combined_loss(double cls, double kp, double lambda) {
  return cls + lambda * kp;
}

// Immutable copy of N_A taken when attention mining starts.
class NetworkSnapshot {
 public:
  static NetworkSnapshot capture(const NetworkParams& params) {
    return NetworkSnapshot(std::make_shared<const NetworkParams>(params));
  }
  const NetworkParams& params() const { return *params_; }

 private:
  explicit NetworkSnapshot(std::shared_ptr<const NetworkParams> p)
      : params_(std::move(p)) {}
  std::shared_ptr<const NetworkParams> params_;
};

struct ObjectiveResult {
  double loss = 0.0;      // L = L_cls + lambda * L_KP
  double cls_loss = 0.0;
  double kp_loss = 0.0;   // 0 unless mode is full
  std::vector<double> layer_losses;
  NetworkParams grads;
  ForwardCache cache;     // forward pass of the updating network
};

// Evaluates the training objective for one batch and its gradient with
// respect to `net`.
//  - off:     every sample uses its mask from `masks`; no KP term.
//  - vanilla: the first am_count samples use `masks`, the rest are unmasked.
//  - full:    as vanilla, plus lambda * L_KP over the unmasked samples against
//             the frozen snapshot, which receives no gradient.
// With lambda == 0 the KP term is still reported but contributes no gradient,
// so the update is bit-identical to vanilla. A non-empty `precomputed` cache
// (forward(net, images)) skips the forward pass.
ObjectiveResult evaluate_objective(const NetworkParams& net,
                                   const NetworkSnapshot* frozen,
                                   const FeatureMap& images,
                                   const FeatureMap& masks,
                                   const LabelMatrix& labels,
                                   const KPConfig& kp, std::size_t am_count,
                                   ForwardCache precomputed = {});

// GAP features of every named layer, one (N, 1, 1, F) map per name.
std::vector<FeatureMap> layer_gap_features(const NetworkParams& net,
                                           const ForwardCache& cache,
                                           std::span<const std::string> layers);

}  // namespace amine
