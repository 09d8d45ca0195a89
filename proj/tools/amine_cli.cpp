#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "amine/io.hpp"
#include "amine/pipeline.hpp"

namespace {

using namespace amine;
using nlohmann::json;

constexpr const char* kToolVersion = "1.0.0";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string kp;
  std::optional<std::size_t> am_steps;
  std::string out;
  bool force = false;
  std::string data;
  std::string checkpoint;
  std::string predictions;
  std::string truth;
  bool ablation = false;
};

RunConfig load_config(const Options& o) {
  RunConfig c;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw ToolError("io", "config not found: " + o.config);
    c = run_config_from_json(read_file(o.config));
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.kp.empty()) {
    try {
      c.kp.mode = parse_kp_mode(o.kp);
    } catch (const std::invalid_argument& e) {
      throw ToolError("config", e.what());
    }
  }
  if (o.am_steps) c.mining.steps = *o.am_steps;
  if (!o.data.empty()) c.paths.data = o.data;
  if (!o.checkpoint.empty()) c.paths.checkpoint = o.checkpoint;
  if (!o.out.empty()) c.paths.out = o.out;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ToolError("config", e.what());
  }
  if (c.paths.out.empty()) throw ToolError("config", "no output directory (--out)");
  return c;
}

fs::path require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw ToolError("config", std::string("no ") + what + " given");
  if (!fs::is_directory(path)) throw ToolError("io", std::string(what) + " not found: " + path);
  return path;
}

fs::path require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ToolError("config", std::string("no ") + what + " given");
  if (!fs::is_regular_file(path)) throw ToolError("io", std::string(what) + " not found: " + path);
  return path;
}

// Collects every file a command writes so the manifest can list it.
class Writer {
 public:
  Writer(fs::path root, bool force) : root_(std::move(root)), force_(force) {}

  void refuse_existing(std::initializer_list<const char*> names) const {
    if (force_) return;
    for (const char* n : names) {
      if (fs::exists(root_ / n)) {
        throw ToolError("exists", (root_ / n).string() + " exists (use --force)");
      }
    }
  }

  void write(const fs::path& rel, std::string_view bytes) {
    const fs::path p = root_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw ToolError("io", "cannot create " + p.parent_path().string() + ": " + ec.message());
    atomic_write(p, bytes, force_);
    outputs_.push_back({{"path", rel.generic_string()}, {"fnv1a64", hex64(fnv1a64(bytes))}});
  }

  void manifest(const std::string& command, const RunConfig& config) {
    const std::string cfg = run_config_to_json(config);
    json m = {{"command", command},
              {"tool_version", kToolVersion},
              {"config_hash", hex64(fnv1a64(cfg))},
              {"seed", config.seed},
              {"compiler", __VERSION__},
              {"json_library", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"openmp", _OPENMP},
              {"config", json::parse(cfg)},
              {"outputs", outputs_}};
    const fs::path p = root_ / "manifest.json";
    atomic_write(p, m.dump(2) + "\n", true);
  }

 private:
  fs::path root_;
  bool force_;
  json outputs_ = json::array();
};

std::string file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05zu.pgm", index);
  return buf;
}

std::vector<Scene> load_split(const fs::path& dir, std::size_t classes) {
  const fs::path manifest = dir / "truth.jsonl";
  if (!fs::exists(manifest)) throw ToolError("io", "missing " + manifest.string());
  const TruthSet truth = decode_truth_jsonl(read_file(manifest), classes, manifest.string());
  std::vector<Scene> scenes;
  for (const auto& [id, t] : truth) {
    const fs::path img = dir / t.file;
    if (!fs::exists(img)) throw ToolError("io", "missing image " + img.string());
    Scene s;
    s.image = decode_pgm(read_file(img), img.string());
    s.truth = t;
    scenes.push_back(std::move(s));
  }
  if (scenes.empty()) throw ToolError("schema", manifest.string() + ": no images");
  return scenes;
}

std::string log_csv(const TrainResult& r) {
  std::string out = "epoch,train_loss,val_loss,cls_loss,kp_loss\n";
  char line[160];
  for (const EpochLog& e : r.log) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                  e.val_loss, e.cls_loss, e.kp_loss);
    out += line;
  }
  return out;
}

void write_split(Writer& w, const char* split, const Dataset& d) {
  TruthSet truth = d.truth;
  for (auto& [id, t] : truth) t.file = file_name(static_cast<std::size_t>(id));
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    w.write(fs::path(split) / file_name(i), encode_pgm(d.images[i]));
  }
  w.write(fs::path(split) / "truth.jsonl", encode_truth_jsonl(truth));
}

int cmd_gen_data(const Options& o) {
  const RunConfig c = load_config(o);
  Writer w(c.paths.out, o.force);
  w.refuse_existing({"train/truth.jsonl", "eval/truth.jsonl"});
  SceneConfig scene = c.data.scene;
  scene.num_classes = c.backbone.num_classes;
  const double frac = c.data.multi_instance_fraction;
  const Dataset train = generate_dataset(c.seed, c.data.train_count, frac, scene);
  const Dataset eval = generate_dataset(c.seed + 1, c.data.eval_count, frac, scene);
  write_split(w, "train", train);
  write_split(w, "eval", eval);
  w.write("config.json", run_config_to_json(c));
  w.manifest("gen-data", c);
  std::printf("wrote %zu train and %zu eval images to %s\n", train.images.size(),
              eval.images.size(), c.paths.out.c_str());
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = load_config(o);
  const fs::path data = require_dir(c.paths.data, "data directory (--data)");
  Writer w(c.paths.out, o.force);
  w.refuse_existing({"baseline.ckpt"});
  const auto scenes = load_split(data / "train", c.backbone.num_classes);
  Rng rng(c.seed);
  NetworkParams net = NetworkParams::initialize(c.backbone, rng);
  const TrainResult r = train_baseline(net, scenes, c.train, c.seed);
  w.write("baseline.ckpt", encode_checkpoint(net));
  w.write("train_log.csv", log_csv(r));
  w.write("config.json", run_config_to_json(c));
  w.manifest("train", c);
  std::printf("epochs %zu (best %zu%s), train AUC %.4f\n", r.log.size() - 1, r.best_epoch,
              r.early_stopped ? ", early stop" : "", r.train_auc);
  return 0;
}

std::string sidecar(const Heatmap& h) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "{\"min\": %.17g, \"max\": %.17g}\n", h.min(), h.max());
  return buf;
}

int cmd_mine(const Options& o) {
  const RunConfig c = load_config(o);
  const fs::path data = require_dir(c.paths.data, "data directory (--data)");
  const fs::path ckpt = require_file(c.paths.checkpoint, "checkpoint (--checkpoint)");
  Writer w(c.paths.out, o.force);
  w.refuse_existing({"mined.ckpt", "predictions.jsonl"});
  const NetworkParams baseline = decode_checkpoint(read_file(ckpt), ckpt.string());
  if (!(baseline.config == c.backbone)) {
    throw ToolError("checkpoint", ckpt.string() + ": backbone differs from the config");
  }
  const auto train = load_split(data / "train", c.backbone.num_classes);
  const auto eval = load_split(data / "eval", c.backbone.num_classes);

  NetworkParams net = baseline;
  const NetworkSnapshot frozen = NetworkSnapshot::capture(baseline);
  const TrainResult r = fine_tune_am(net, frozen, train, c.train, c.mining, c.kp, c.seed);
  const auto mined = mine_scenes(net, eval, c.mining, c.eval);

  w.write("mined.ckpt", encode_checkpoint(net));
  w.write("finetune_log.csv", log_csv(r));
  char stem[48];
  for (const MinedHeatmap& m : mined) {
    std::snprintf(stem, sizeof(stem), "img_%05d_c%d", m.image_id, m.cls);
    w.write(fs::path("heatmaps") / (std::string(stem) + ".pgm"), encode_heatmap_pgm(m.final_map));
    w.write(fs::path("heatmaps") / (std::string(stem) + ".json"), sidecar(m.final_map));
    for (std::size_t t = 0; t < m.run.masks.size(); ++t) {
      w.write(fs::path("masks") / (std::string(stem) + "_t" + std::to_string(t) + ".pgm"),
              encode_mask_pgm(m.run.masks[t]));
    }
  }
  const std::vector<BBox> boxes = collect_boxes(mined);
  w.write("predictions.jsonl", encode_predictions_jsonl(boxes));
  w.write("config.json", run_config_to_json(c));
  w.manifest("mine", c);
  std::printf("kp %s, T=%zu: %zu heatmaps, %zu boxes\n", to_string(c.kp.mode), c.mining.steps,
              mined.size(), boxes.size());
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig c = load_config(o);
  Writer w(c.paths.out, o.force);
  if (o.ablation) {
    w.refuse_existing({"ablation.csv"});
    const fs::path data = require_dir(c.paths.data, "data directory (--data)");
    const fs::path ckpt = require_file(c.paths.checkpoint, "checkpoint (--checkpoint)");
    const NetworkParams baseline = decode_checkpoint(read_file(ckpt), ckpt.string());
    const auto train = load_split(data / "train", c.backbone.num_classes);
    const auto eval = load_split(data / "eval", c.backbone.num_classes);
    const auto cells = run_ablation(baseline, c, train, eval);
    w.write("ablation.csv", ablation_csv(cells));
    w.manifest("eval --ablation", c);
    std::printf("ablation: %zu cells\n", cells.size());
    return 0;
  }
  w.refuse_existing({"report.csv"});
  const fs::path pred = require_file(o.predictions, "predictions (--predictions)");
  const fs::path gt = require_file(o.truth, "ground truth (--truth)");
  const auto boxes = decode_predictions_jsonl(read_file(pred), pred.string());
  const TruthSet truth = decode_truth_jsonl(read_file(gt), c.backbone.num_classes, gt.string());
  const LocalizationReport report = evaluate_all(boxes, truth, c.backbone.num_classes, c.eval);
  for (const std::string& n : report.notices) std::fprintf(stderr, "notice: %s\n", n.c_str());
  w.write("report.csv", report_csv(report));
  w.manifest("eval", c);
  std::printf("report: %zu rows\n", report.rows.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention mining with knowledge preservation on synthetic scenes"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Override the configured seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_flag("--force", o.force, "Overwrite existing outputs");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train and eval splits");
  common(gen);
  auto* train = app.add_subcommand("train", "Train the baseline network");
  common(train);
  train->add_option("--data", o.data, "Dataset directory written by gen-data");
  auto* mine = app.add_subcommand("mine", "AM fine-tuning, heatmaps and boxes");
  common(mine);
  mine->add_option("--data", o.data, "Dataset directory written by gen-data");
  mine->add_option("--checkpoint", o.checkpoint, "Baseline checkpoint");
  mine->add_option("--kp", o.kp, "Knowledge preservation mode")
      ->check(CLI::IsMember({"off", "vanilla", "full"}));
  mine->add_option("--am-steps", o.am_steps, "Mining steps T")->check(CLI::PositiveNumber);
  auto* eval = app.add_subcommand("eval", "Score predictions or run the ablation grid");
  common(eval);
  eval->add_option("--predictions", o.predictions, "Predictions JSON lines");
  eval->add_option("--truth", o.truth, "Ground-truth JSON lines");
  eval->add_flag("--ablation", o.ablation, "Run {off, vanilla, full} x {T=1,2,3}");
  eval->add_option("--data", o.data, "Dataset directory (ablation)");
  eval->add_option("--checkpoint", o.checkpoint, "Baseline checkpoint (ablation)");
  eval->add_option("--kp", o.kp, "Knowledge preservation mode")
      ->check(CLI::IsMember({"off", "vanilla", "full"}));
  eval->add_option("--am-steps", o.am_steps, "Mining steps T")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error[usage]: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (train->parsed()) return cmd_train(o);
    if (mine->parsed()) return cmd_mine(o);
    return cmd_eval(o);
  } catch (const ToolError& e) {
    std::fprintf(stderr, "error[%s]: %s\n", e.category().c_str(), e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
  }
  return 1;
}
