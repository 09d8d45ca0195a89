#include <gtest/gtest.h>

#include <functional>

#include "amine/io.hpp"
#include "amine/rng.hpp"

namespace amine {
namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("amine_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string category_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ToolError& e) {
    return e.category();
  }
  return "";
}

TEST(Fnv, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(AtomicWrite, RefusesOverwriteWithoutFlag) {
  const fs::path dir = scratch_dir("atomic");
  const fs::path f = dir / "out.txt";
  atomic_write(f, "one", false);
  EXPECT_EQ(category_of([&] { atomic_write(f, "two", false); }), "exists");
  EXPECT_EQ(read_file(f), "one");
  atomic_write(f, "two", true);
  EXPECT_EQ(read_file(f), "two");
  EXPECT_EQ(category_of([&] { read_file(dir / "missing"); }), "io");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
  EXPECT_EQ(entries, 1u);
  fs::remove_all(dir);
}

TEST(Pgm, RoundTrip) {
  Rng rng(1);
  GrayImage im{7, 5, std::vector<std::uint8_t>(35)};
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const GrayImage back = decode_pgm(encode_pgm(im), "mem");
  EXPECT_EQ(back.width, 7u);
  EXPECT_EQ(back.height, 5u);
  EXPECT_EQ(back.pixels, im.pixels);
  EXPECT_EQ(category_of([] { decode_pgm("P2\n1 1\n255\n0", "mem"); }), "schema");
  EXPECT_EQ(category_of([] { decode_pgm("P5\n2 2\n255\nab", "mem"); }), "schema");
}

TEST(Pgm, HeatmapAndMaskEncoding) {
  Heatmap h(2, 1);
  h.values = {0.25, 0.75};
  const std::string hp = encode_heatmap_pgm(h);
  const std::string header = "P5\n2 1\n65535\n";
  ASSERT_EQ(hp.size(), header.size() + 4);
  EXPECT_EQ(hp.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(hp[header.size()]), 0u);
  EXPECT_EQ(static_cast<unsigned char>(hp[header.size() + 2]), 0xffu);

  ErasureMask m{2, 2, {1, 0, 1, 1}, 1};
  const std::string mp = encode_mask_pgm(m);
  const std::string raster{'\1', '\1', '\0', '\1'};
  EXPECT_EQ(mp, "P5\n2 2\n1\n" + raster);
}

TruthSet sample_truth() {
  TruthSet t;
  t[0] = ImageTruth{0, "img_00000.pgm", {1, 0, 1}, {{Rect{1, 2, 3, 4}, Rect{9, 9, 2, 2}}, {}, {Rect{0, 0, 5, 5}}}};
  t[1] = ImageTruth{1, "img_00001.pgm", {0, 0, 0}, {{}, {}, {}}};
  t[4] = ImageTruth{4, "img_00004.pgm", {0, 1, 0}, {{}, {Rect{3, 3, 1, 1}}, {}}};
  return t;
}

TEST(TruthJsonl, RoundTrip) {
  const TruthSet t = sample_truth();
  const std::string text = encode_truth_jsonl(t);
  const TruthSet back = decode_truth_jsonl(text, 3, "truth.jsonl");
  ASSERT_EQ(back.size(), t.size());
  for (const auto& [id, it] : t) {
    ASSERT_TRUE(back.count(id));
    EXPECT_EQ(back.at(id).labels, it.labels);
    EXPECT_EQ(back.at(id).boxes, it.boxes);
    EXPECT_EQ(back.at(id).file, it.file);
  }
  EXPECT_EQ(encode_truth_jsonl(back), text);
}

TEST(TruthJsonl, SchemaErrorsCarryLineNumbers) {
  const std::string good =
      R"({"image_id":0,"file":"a.pgm","labels":[1,0],"class":0,"boxes":[[0,0,2,2]]})";
  const std::string bad =
      R"({"image_id":1,"file":"b.pgm","labels":[1,0],"class":0,"boxes":[[0,0,0,2]]})";
  try {
    decode_truth_jsonl(good + "\n" + bad + "\n", 2, "gt.jsonl");
    FAIL() << "expected ToolError";
  } catch (const ToolError& e) {
    EXPECT_EQ(e.category(), "schema");
    EXPECT_NE(std::string(e.what()).find("gt.jsonl:2"), std::string::npos) << e.what();
  }
  EXPECT_EQ(category_of([] { decode_truth_jsonl("{not json}\n", 2, "x"); }), "schema");
  EXPECT_EQ(category_of([&] { decode_truth_jsonl(good + "\n" + good + "\n", 2, "x"); }), "schema");
  const std::string negative =
      R"({"image_id":0,"file":"a.pgm","labels":[0,0],"class":1,"boxes":[[0,0,2,2]]})";
  EXPECT_EQ(category_of([&] { decode_truth_jsonl(negative, 2, "x"); }), "schema");
}

TEST(PredictionsJsonl, RoundTripIsExact) {
  const std::vector<BBox> boxes{BBox{3, 1, Rect{4, 5, 6, 7}, 0.1234567890123456789},
                                BBox{0, 0, Rect{0, 0, 1, 1}, 1.0 / 3.0}};
  const auto back = decode_predictions_jsonl(encode_predictions_jsonl(boxes), "p");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].image_id, boxes[i].image_id);
    EXPECT_EQ(back[i].cls, boxes[i].cls);
    EXPECT_EQ(back[i].rect, boxes[i].rect);
    EXPECT_EQ(back[i].score, boxes[i].score);
  }
  EXPECT_TRUE(decode_predictions_jsonl("", "p").empty());
  EXPECT_EQ(category_of([] { decode_predictions_jsonl(R"({"image_id":0})", "p"); }), "schema");
}

TEST(Checkpoint, ExactRoundTrip) {
  for (bool msa : {true, false}) {
    Rng rng(2);
    BackboneConfig cfg;
    cfg.msa = msa;
    NetworkParams p = NetworkParams::initialize(cfg, rng);
    for (double& w : p.branches.weights) w = rng.normal();
    const std::string bytes = encode_checkpoint(p);
    const NetworkParams back = decode_checkpoint(bytes, "ck");
    EXPECT_EQ(back.config, p.config);
    EXPECT_EQ(back.flatten(), p.flatten());
    EXPECT_EQ(encode_checkpoint(back), bytes);
    EXPECT_EQ(category_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 3), "ck"); }),
              "checkpoint");
    EXPECT_EQ(category_of([] { decode_checkpoint("garbage", "ck"); }), "checkpoint");
  }
}

TEST(BackboneJson, RoundTrip) {
  BackboneConfig c;
  c.stage_channels = {4, 6, 8};
  c.stage_strides = {1, 2, 2};
  c.num_classes = 3;
  c.msa = false;
  EXPECT_EQ(backbone_from_json(backbone_to_json(c)), c);
}

}  // namespace
}  // namespace amine
