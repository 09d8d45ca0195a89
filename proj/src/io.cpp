#include "amine/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

namespace amine {
namespace {

using nlohmann::json;

constexpr char kCheckpointMagic[8] = {'A', 'M', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

[[noreturn]] void schema_error(const std::string& origin, std::size_t line,
                               const std::string& what) {
  throw ToolError("schema", origin + ":" + std::to_string(line) + ": " + what);
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ToolError("checkpoint", origin_ + ": truncated checkpoint");
  }
  std::string_view bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line;
    std::string_view l = text.substr(start, end - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) fn(l, line);
    start = end + 1;
  }
}

json parse_line(std::string_view l, const std::string& origin, std::size_t line) {
  json j = json::parse(l, nullptr, false);
  if (j.is_discarded() || !j.is_object()) schema_error(origin, line, "not a JSON object");
  return j;
}

template <typename T>
T field(const json& j, const char* key, const std::string& origin, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) schema_error(origin, line, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    schema_error(origin, line, std::string("bad type for field '") + key + "'");
  }
}

Rect parse_rect(const json& b, const std::string& origin, std::size_t line) {
  if (!b.is_array() || b.size() != 4) schema_error(origin, line, "box must be [x, y, w, h]");
  Rect r;
  try {
    r = Rect{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
  } catch (const json::exception&) {
    schema_error(origin, line, "box entries must be integers");
  }
  if (r.w <= 0 || r.h <= 0) schema_error(origin, line, "box must have positive size");
  return r;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void atomic_write(const fs::path& path, std::string_view bytes, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw ToolError("exists", path.string() + ": already exists (use --force)");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ToolError("io", tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ToolError("io", tmp.string() + ": write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw ToolError("io", path.string() + ": rename failed: " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ToolError("io", path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  // PGM rasters are row-major.
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) out.push_back(static_cast<char>(image.at(x, y)));
  }
  return out;
}

GrayImage decode_pgm(std::string_view bytes, const std::string& origin) {
  std::size_t pos = 0;
  auto token = [&]() -> std::string_view {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  auto number = [&](const char* what) {
    const auto t = token();
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty()) {
      throw ToolError("schema", origin + ": bad PGM " + what);
    }
    return v;
  };
  if (token() != "P5") throw ToolError("schema", origin + ": not a binary PGM");
  GrayImage img;
  img.width = number("width");
  img.height = number("height");
  if (number("maxval") != 255) throw ToolError("schema", origin + ": expected 8-bit PGM");
  ++pos;
  if (img.width == 0 || img.height == 0 || bytes.size() - pos != img.width * img.height) {
    throw ToolError("schema", origin + ": PGM raster size mismatch");
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      img.pixels[x * img.height + y] = static_cast<std::uint8_t>(bytes[pos++]);
    }
  }
  return img;
}

std::string encode_heatmap_pgm(const Heatmap& heatmap) {
  const double lo = heatmap.min();
  const double hi = heatmap.max();
  const double span = hi > lo ? hi - lo : 1.0;
  std::string out = "P5\n" + std::to_string(heatmap.width) + " " +
                    std::to_string(heatmap.height) + "\n65535\n";
  for (std::size_t y = 0; y < heatmap.height; ++y) {
    for (std::size_t x = 0; x < heatmap.width; ++x) {
      const auto v = static_cast<std::uint16_t>(std::lround((heatmap.at(x, y) - lo) / span * 65535.0));
      out.push_back(static_cast<char>(v >> 8));
      out.push_back(static_cast<char>(v & 0xff));
    }
  }
  return out;
}

std::string encode_mask_pgm(const ErasureMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " +
                    std::to_string(mask.height) + "\n1\n";
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) out.push_back(static_cast<char>(mask.at(x, y)));
  }
  return out;
}

std::string encode_truth_jsonl(const TruthSet& truth) {
  std::string out;
  for (const auto& [id, t] : truth) {
    bool any = false;
    for (std::size_t c = 0; c < t.boxes.size(); ++c) {
      if (t.boxes[c].empty()) continue;
      any = true;
      json boxes = json::array();
      for (const Rect& r : t.boxes[c]) boxes.push_back({r.x, r.y, r.w, r.h});
      json j = {{"image_id", id}, {"file", t.file}, {"class", c},
                {"labels", t.labels}, {"boxes", boxes}};
      out += j.dump() + "\n";
    }
    if (!any) {
      json j = {{"image_id", id}, {"file", t.file}, {"class", -1},
                {"labels", t.labels}, {"boxes", json::array()}};
      out += j.dump() + "\n";
    }
  }
  return out;
}

TruthSet decode_truth_jsonl(std::string_view text, std::size_t num_classes,
                            const std::string& origin) {
  TruthSet truth;
  for_each_line(text, [&](std::string_view l, std::size_t line) {
    const json j = parse_line(l, origin, line);
    const int id = field<int>(j, "image_id", origin, line);
    const int cls = field<int>(j, "class", origin, line);
    const auto labels = field<std::vector<int>>(j, "labels", origin, line);
    if (labels.size() != num_classes) schema_error(origin, line, "labels length != classes");
    for (int v : labels) {
      if (v != 0 && v != 1) schema_error(origin, line, "labels must be 0/1");
    }
    if (cls < -1 || cls >= static_cast<int>(num_classes)) schema_error(origin, line, "class out of range");
    const json boxes = j.value("boxes", json::array());
    if (!boxes.is_array()) schema_error(origin, line, "boxes must be an array");

    auto [it, inserted] = truth.try_emplace(id);
    ImageTruth& t = it->second;
    if (inserted) {
      t.image_id = id;
      t.file = j.value("file", std::string());
      t.labels = labels;
      t.boxes.assign(num_classes, {});
    } else if (t.labels != labels) {
      schema_error(origin, line, "labels disagree with an earlier line for this image");
    }
    if (cls < 0) {
      if (!boxes.empty()) schema_error(origin, line, "class -1 cannot carry boxes");
      return;
    }
    if (labels[cls] != 1) schema_error(origin, line, "boxes given for a negative class");
    if (!t.boxes[cls].empty()) schema_error(origin, line, "duplicate line for this image and class");
    for (const json& b : boxes) t.boxes[cls].push_back(parse_rect(b, origin, line));
  });
  return truth;
}

std::string encode_predictions_jsonl(std::span<const BBox> boxes) {
  std::string out;
  char buf[256];
  for (const BBox& b : boxes) {
    // Fixed formatting keeps the file byte-stable.
    std::snprintf(buf, sizeof(buf),
                  "{\"image_id\":%d,\"class\":%d,\"x\":%d,\"y\":%d,\"w\":%d,\"h\":%d,\"score\":%.17g}\n",
                  b.image_id, b.cls, b.rect.x, b.rect.y, b.rect.w, b.rect.h, b.score);
    out += buf;
  }
  return out;
}

std::vector<BBox> decode_predictions_jsonl(std::string_view text, const std::string& origin) {
  std::vector<BBox> out;
  for_each_line(text, [&](std::string_view l, std::size_t line) {
    const json j = parse_line(l, origin, line);
    BBox b;
    b.image_id = field<int>(j, "image_id", origin, line);
    b.cls = field<int>(j, "class", origin, line);
    b.rect.x = field<int>(j, "x", origin, line);
    b.rect.y = field<int>(j, "y", origin, line);
    b.rect.w = field<int>(j, "w", origin, line);
    b.rect.h = field<int>(j, "h", origin, line);
    b.score = field<double>(j, "score", origin, line);
    if (b.cls < 0) schema_error(origin, line, "class must be >= 0");
    if (b.rect.w <= 0 || b.rect.h <= 0) schema_error(origin, line, "box must have positive size");
    if (!std::isfinite(b.score)) schema_error(origin, line, "score must be finite");
    out.push_back(b);
  });
  return out;
}

std::string backbone_to_json(const BackboneConfig& c) {
  json j = {{"stage_channels", c.stage_channels},
            {"stage_strides", c.stage_strides},
            {"msa_reduced_channels", {c.msa_reduced_channels.first, c.msa_reduced_channels.second}},
            {"num_classes", c.num_classes},
            {"input_channels", c.input_channels},
            {"msa", c.msa}};
  return j.dump();
}

BackboneConfig backbone_from_json(std::string_view text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ToolError("config", "backbone: not a JSON object");
  BackboneConfig c;
  try {
    c.stage_channels = j.value("stage_channels", c.stage_channels);
    c.stage_strides = j.value("stage_strides", c.stage_strides);
    if (j.contains("msa_reduced_channels")) {
      const auto v = j.at("msa_reduced_channels").get<std::vector<std::size_t>>();
      if (v.size() != 2) throw ToolError("config", "backbone: msa_reduced_channels needs 2 entries");
      c.msa_reduced_channels = {v[0], v[1]};
    }
    c.num_classes = j.value("num_classes", c.num_classes);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.msa = j.value("msa", c.msa);
  } catch (const json::exception& e) {
    throw ToolError("config", std::string("backbone: ") + e.what());
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ToolError("config", e.what());
  }
  return c;
}

std::string encode_checkpoint(const NetworkParams& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = backbone_to_json(params.config);
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  const auto tensors = params.tensors();
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint64_t>(out, t.name.size());
    out += t.name;
    put<std::uint64_t>(out, t.shape.size());
    for (std::size_t d : t.shape) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, t.values.size());
    for (double v : t.values) put<double>(out, v);
  }
  return out;
}

NetworkParams decode_checkpoint(std::string_view bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.take(sizeof(kCheckpointMagic)) != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw ToolError("checkpoint", origin + ": bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ToolError("checkpoint", origin + ": unsupported version " + std::to_string(version));
  }
  const auto cfg_len = r.get<std::uint64_t>();
  NetworkParams params = NetworkParams::zeros(backbone_from_json(r.take(cfg_len)));
  auto tensors = params.tensors();
  const auto count = r.get<std::uint64_t>();
  if (count != tensors.size()) throw ToolError("checkpoint", origin + ": tensor count mismatch");
  for (auto& t : tensors) {
    const auto name_len = r.get<std::uint64_t>();
    if (r.take(name_len) != t.name) throw ToolError("checkpoint", origin + ": expected tensor " + t.name);
    const auto rank = r.get<std::uint64_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != t.shape) throw ToolError("checkpoint", origin + ": shape mismatch for " + t.name);
    const auto n = r.get<std::uint64_t>();
    if (n != t.values.size()) throw ToolError("checkpoint", origin + ": size mismatch for " + t.name);
    for (double& v : t.values) v = r.get<double>();
  }
  if (!r.done()) throw ToolError("checkpoint", origin + ": trailing bytes");
  return params;
}

}  // namespace amine
