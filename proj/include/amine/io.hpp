#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amine/backbone.hpp"
#include "amine/localization.hpp"
#include "amine/mining.hpp"
#include "amine/synthetic.hpp"

namespace amine {

// Error with a short machine-readable category ("io", "schema", "exists",
// "checkpoint", "config").
class ToolError : public std::runtime_error {
 public:
  ToolError(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// Writes to a sibling temp file and renames it into place. Refuses to replace
// an existing file unless `overwrite`.
void atomic_write(const fs::path& path, std::string_view bytes, bool overwrite);
std::string read_file(const fs::path& path);

std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::string_view bytes, const std::string& origin);

// 16-bit PGM of a heatmap rescaled from [min, max]; the range is returned so
// a sidecar can record it.
std::string encode_heatmap_pgm(const Heatmap& heatmap);
std::string encode_mask_pgm(const ErasureMask& mask);

// Ground-truth manifest: one JSON object per line,
// {"image_id", "file", "labels", "class", "boxes": [[x, y, w, h], ...]}, one
// line per (image, class) with at least one box plus one line per image with
// no positive class ("class": -1).
std::string encode_truth_jsonl(const TruthSet& truth);
TruthSet decode_truth_jsonl(std::string_view text, std::size_t num_classes,
                            const std::string& origin);

// Predictions: {"image_id", "class", "x", "y", "w", "h", "score"} per line.
std::string encode_predictions_jsonl(std::span<const BBox> boxes);
std::vector<BBox> decode_predictions_jsonl(std::string_view text,
                                           const std::string& origin);

// Versioned binary checkpoint: magic, config JSON, then named float64 arrays.
std::string encode_checkpoint(const NetworkParams& params);
NetworkParams decode_checkpoint(std::string_view bytes, const std::string& origin);

std::string backbone_to_json(const BackboneConfig& config);
BackboneConfig backbone_from_json(std::string_view text);

}  // namespace amine
