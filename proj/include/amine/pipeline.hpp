#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amine/backbone.hpp"
#include "amine/knowledge.hpp"
#include "amine/localization.hpp"
#include "amine/mining.hpp"
#include "amine/synthetic.hpp"

namespace amine {

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;          // heavy-ball; 0 gives plain SGD
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t patience = 4;       // epochs without a new best validation loss
  double val_fraction = 0.1;      // tail of the train split held out
  std::size_t am_epochs = 5;
  double am_lr = 0.05;

  void validate() const;
};

struct DataConfig {
  std::size_t train_count = 200;
  std::size_t eval_count = 50;
  double multi_instance_fraction = 0.5;
  SceneConfig scene;
};

// Empty entries fall back to command-line flags.
struct PathConfig {
  std::string data;
  std::string checkpoint;
  std::string out;
};

struct RunConfig {
  std::uint64_t seed = 42;
  BackboneConfig backbone;
  MiningConfig mining;
  KPConfig kp;
  EvalConfig eval;
  TrainConfig train;
  DataConfig data;
  PathConfig paths;

  void validate() const;
};

std::string run_config_to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(std::string_view text);

// Labels of the given scenes as an N x C matrix.
LabelMatrix labels_of(std::span<const Scene> scenes, std::span<const std::size_t> indices,
                      std::size_t num_classes);

// Mean over classes of the ROC AUC of `scores` (N x C row-major); classes
// with a single label value are skipped. Ties count one half.
double mean_auc(std::span<const double> scores, const LabelMatrix& labels);

// Logits with all-ones masks, evaluated in chunks.
std::vector<double> predict_logits(const NetworkParams& net, std::span<const GrayImage> images,
                                   std::span<const std::size_t> indices);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double cls_loss = 0.0;
  double kp_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  bool early_stopped = false;
  std::size_t best_epoch = 0;
  double train_auc = 0.0;
};

// Baseline training with all-ones masks; keeps the parameters of the epoch
// with the lowest validation loss.
TrainResult train_baseline(NetworkParams& net, std::span<const Scene> scenes,
                           const TrainConfig& config, std::uint64_t seed);

// Erasure masks for one batch: for sample i < am_count and each positive
// class, the mask after steps[i] mining steps on the current features; ones
// elsewhere. Shape (N, W, H, C) at feature resolution.
FeatureMap mining_masks(const FeatureMap& features, const BranchParams& branches,
                        const LabelMatrix& labels, std::size_t am_count,
                        std::span<const std::size_t> steps, const MiningConfig& mining);

// Fine-tunes `net` (N_B) from the frozen snapshot N_A on label-only
// supervision with erased features on the AM part of each batch.
TrainResult fine_tune_am(NetworkParams& net, const NetworkSnapshot& frozen,
                         std::span<const Scene> scenes, const TrainConfig& config,
                         const MiningConfig& mining, const KPConfig& kp, std::uint64_t seed);

struct MinedHeatmap {
  int image_id = 0;
  int cls = 0;
  MiningRun run;
  Heatmap final_map;  // normalized, image resolution
  bool degenerate = false;
  std::vector<BBox> boxes;
};

// Final heatmap and boxes for every positive class of every scene.
std::vector<MinedHeatmap> mine_scenes(const NetworkParams& net, std::span<const Scene> scenes,
                                      const MiningConfig& mining, const EvalConfig& eval);

std::vector<BBox> collect_boxes(std::span<const MinedHeatmap> mined);

// Mean over images of || g(X_A(k)) - g(X_B(k)) ||_2 for each layer.
std::vector<double> gap_drift(const NetworkParams& a, const NetworkParams& b,
                              std::span<const GrayImage> images,
                              std::span<const std::string> layers);

// Fraction of instances at position `rank` (0 = strongest) among the given
// class/instances that some box of the same image and class covers with
// IoU >= t_iou.
double instance_recall(std::span<const Scene> scenes, std::span<const BBox> boxes,
                       std::size_t rank, double t_iou);

struct AblationCell {
  KpMode mode = KpMode::kOff;
  std::size_t steps = 1;
  LocalizationReport report;
};

// {T = 1, 2, 3} x {off, vanilla, full}: fine-tune from `baseline` with each
// setting, mine `eval_scenes` and evaluate.
std::vector<AblationCell> run_ablation(const NetworkParams& baseline, const RunConfig& config,
                                       std::span<const Scene> train_scenes,
                                       std::span<const Scene> eval_scenes);
std::string ablation_csv(std::span<const AblationCell> cells);

TruthSet truth_of(std::span<const Scene> scenes);

}  // namespace amine
