// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "patchgraph/binary_io.hpp"
#include "patchgraph/dataio.hpp"
#include "patchgraph/losses.hpp"
#include "patchgraph/trainer.hpp"
#include "synth_fixture.hpp"
#include "test_util.hpp"

namespace {

using namespace pgtest;
namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("pg_dataio_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<std::uint8_t> slurp(const fs::path& p) { return io::read_file(p); }

// --- PGEM -------------------------------------------------------------------------

TEST(Embedding, WriteReadRoundTrip) {
  TempDir dir("emb");
  Rng rng(1);
  PatchEmbeddingGrid g = PatchEmbeddingGrid::make(3, 5, random_tensor(rng, 15, 7), 4, 12, 20);
  write_embedding(g, dir.path() / "a.pgem");
  PatchEmbeddingGrid back = read_embedding(dir.path() / "a.pgem");
  EXPECT_EQ(back.height_s, 3u);
  EXPECT_EQ(back.width_s, 5u);
  EXPECT_EQ(back.stride, 4u);
  EXPECT_EQ(back.image_height, 12u);
  EXPECT_EQ(back.image_width, 20u);
  EXPECT_LE(max_abs_diff(back.features, g.features), 1e-7);
  EXPECT_EQ(back.centres, g.centres);
  // the stored payload is exactly the f32 rounding of the normalized rows
  EmbeddingFile raw = decode_embedding(slurp(dir.path() / "a.pgem"));
  EXPECT_EQ(raw.header.flags & kEmbeddingNormalizedFlag, kEmbeddingNormalizedFlag);
  for (std::size_t i = 0; i < raw.features.size(); ++i)
    EXPECT_EQ(raw.features[i], static_cast<double>(static_cast<float>(g.features[i])));
}

TEST(Embedding, EncodeDecodeIsLossless) {
  Rng rng(2);
  EmbeddingHeader h{kEmbeddingVersion, 0, 2, 2, 3, 1, 2, 2};
  Tensor f(4, 3);
  for (double& v : f.data()) v = static_cast<float>(rng.uniform(-5, 5));
  auto bytes = encode_embedding(h, f);
  EXPECT_EQ(bytes.size(), embedding_file_size(2, 2, 3));
  EmbeddingFile back = decode_embedding(bytes);
  EXPECT_EQ(back.features, f);
  EXPECT_EQ(encode_embedding(back.header, back.features), bytes);
}

TEST(Embedding, ReadNormalizesRows) {
  EmbeddingHeader h{kEmbeddingVersion, 0, 1, 2, 2, 1, 1, 2};
  PatchEmbeddingGrid g = to_grid(decode_embedding(encode_embedding(h, Tensor::from_rows({{3, 4}, {0, 0}}))));
  EXPECT_DOUBLE_EQ(g.features(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g.features(0, 1), 0.8);
  EXPECT_EQ(g.features(1, 0), 0.0);  // zero rows stay zero
}

TEST(Embedding, FileSizeArithmetic) {
  // 30-byte header, then f32 payload
  EXPECT_EQ(embedding_file_size(128, 128, 768), 30u + 128u * 128u * 768u * 4u);
  EXPECT_EQ(kEmbeddingHeaderBytes, 4u + 2 + 2 + 4 + 4 + 4 + 2 + 4 + 4);
}

TEST(Embedding, TruncationReportsOffset) {
  EmbeddingHeader h{kEmbeddingVersion, 0, 2, 2, 3, 1, 2, 2};
  auto bytes = encode_embedding(h, Tensor(4, 3, 0.5));
  bytes.resize(kEmbeddingHeaderBytes + 10);
  try {
    decode_embedding(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), kEmbeddingHeaderBytes);
  }
  bytes.resize(11);  // inside the header: H_s field starts at 8
  try {
    decode_embedding(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
}

TEST(Embedding, BadMagicAndVersion) {
  EmbeddingHeader h{kEmbeddingVersion, 0, 1, 1, 1, 1, 1, 1};
  auto bytes = encode_embedding(h, Tensor(1, 1, 1.0));
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_embedding(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  try {
    decode_embedding(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  bytes.push_back(0);
  EXPECT_THROW(decode_embedding(bytes), FormatError);
}

// --- PGM ---------------------------------------------------------------------------

TEST(Pgm, RoundTripAndHeader) {
  Rng rng(3);
  Raster8 img(5, 7);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  auto bytes = encode_pgm(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 2), "P5");
  EXPECT_EQ(decode_pgm(bytes), img);
}

TEST(Pgm, AcceptsCommentsAndRejectsGarbage) {
  std::string text = "P5\n# comment\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(7);
  bytes.push_back(255);
  Raster8 r = decode_pgm(bytes);
  EXPECT_EQ(r.width, 2u);
  EXPECT_EQ(r.pixels[1], 255);
  bytes.pop_back();
  EXPECT_THROW(decode_pgm(bytes), FormatError);
  std::string p2 = "P2\n1 1\n255\n0";
  EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(p2.begin(), p2.end())), FormatError);
}

TEST(MaskValidation, LabelsBelowClassCountOrIgnore) {
  LabelMask m(1, 3);
  m.pixels = {0, 4, kIgnoreLabel};
  EXPECT_NO_THROW(validate_mask(m, 5));
  EXPECT_THROW(validate_mask(m, 4), DataError);
}

// --- manifest ------------------------------------------------------------------------

TEST(Manifest, ParseRoundTrip) {
  const std::string text =
      "embedding_path,mask_path,image_path,split\n"
      "e/a.pgem,m/a.pgm,i/a.pgm,train\n"
      "e/b.pgem,m/b.pgm,,val\n"
      "e/c.pgem,m/c.pgm,i/c.pgm,test\n";
  SplitManifest m = SplitManifest::parse(text, "/data");
  ASSERT_EQ(m.entries().size(), 3u);
  EXPECT_EQ(m.split(Split::val).size(), 1u);
  EXPECT_TRUE(m.entries()[1].image.empty());
  EXPECT_EQ(m.resolve(m.entries()[0].embedding), fs::path("/data/e/a.pgem"));
  EXPECT_EQ(m.to_csv(), text);
}

TEST(Manifest, RejectsOverlapAndMalformedLines) {
  const std::string head = "embedding_path,mask_path,image_path,split\n";
  EXPECT_THROW(SplitManifest::parse(head + "a.pgem,a.pgm,,train\na.pgem,b.pgm,,test\n"), DataError);
  EXPECT_NO_THROW(SplitManifest::parse(head + "a.pgem,a.pgm,,train\nb.pgem,a2.pgm,,train\n"));
  EXPECT_THROW(SplitManifest::parse(head + "a.pgem,a.pgm,train\n"), DataError);
  EXPECT_THROW(SplitManifest::parse(head + "a.pgem,a.pgm,,holdout\n"), DataError);
  EXPECT_THROW(SplitManifest::parse("path,mask\n"), DataError);
  EXPECT_THROW(SplitManifest::parse(""), DataError);
}

// --- node labels ----------------------------------------------------------------------

TEST(NodeLabels, UniformMask) {
  for (auto v : mask_to_node_labels(LabelMask(8, 12, 3), 4)) EXPECT_EQ(v, 3);
  EXPECT_EQ(mask_to_node_labels(LabelMask(8, 12, 3), 4).size(), 6u);
}

TEST(NodeLabels, IgnoreExcludedFromVote) {
  LabelMask m(2, 2, kIgnoreLabel);
  m.at(1, 1) = 2;
  EXPECT_EQ(mask_to_node_labels(m, 2), std::vector<std::uint8_t>{2});
  EXPECT_EQ(mask_to_node_labels(LabelMask(2, 2, kIgnoreLabel), 2), std::vector<std::uint8_t>{kIgnoreLabel});
}

TEST(NodeLabels, MatchesCountingOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    LabelMask m(8, 8);
    for (auto& v : m.pixels) v = rng.below(5) == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(3));
    auto got = mask_to_node_labels(m, 4);
    ASSERT_EQ(got.size(), 4u);
    for (std::size_t pr = 0; pr < 2; ++pr)
      for (std::size_t pc = 0; pc < 2; ++pc) {
        int counts[3] = {0, 0, 0};
        for (std::size_t r = 0; r < 4; ++r)
          for (std::size_t c = 0; c < 4; ++c) {
            auto v = m.at(pr * 4 + r, pc * 4 + c);
            if (v != kIgnoreLabel) ++counts[v];
          }
        int best = 0;
        for (int k = 1; k < 3; ++k)
          if (counts[k] > counts[best]) best = k;
        const std::uint8_t expect = counts[best] == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(best);
        EXPECT_EQ(got[pr * 2 + pc], expect);
      }
  }
}

TEST(NodeLabels, IndivisibleDimsRejected) {
  EXPECT_THROW(mask_to_node_labels(LabelMask(6, 8), 4), DimensionError);
}

// --- synthetic scenes -----------------------------------------------------------------------

TEST(Synth, SameSeedSameBytes) {
  TempDir a("synth_a"), b("synth_b");
  SynthConfig c = tiny_synth(5);
  synth_generate(c, a.path());
  synth_generate(c, b.path());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / fs::relative(e.path(), a.path()))) << e.path();
  }
  EXPECT_EQ(files, 3 * c.frames + 2);
  SplitManifest m = SplitManifest::read(a.path() / "manifest.csv");
  EXPECT_EQ(m.split(Split::train).size(), 4u);
  EXPECT_EQ(m.split(Split::test).size(), 2u);
  auto frames = load_split(m, Split::val);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[0].grid.num_nodes(), 64u);
  ASSERT_TRUE(frames[0].image.has_value());
  EXPECT_EQ(read_class_names(a.path() / "manifest.csv"), synth_class_names(c));
}

TEST(Synth, DifferentSeedsDiffer) {
  SynthConfig a = tiny_synth(1), b = tiny_synth(2);
  EXPECT_NE(synth_frame(a, synth_prototypes(a), 0).mask, synth_frame(b, synth_prototypes(b), 0).mask);
}

TEST(Synth, ThinClassShareAtMostTwoPercent) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    for (std::size_t classes : {4, 5, 6}) {
      SynthConfig c;
      c.seed = seed;
      c.num_classes = classes;
      c.frames = 4;
      c.val_frames = c.test_frames = 1;
      const Tensor proto = synth_prototypes(c);
      for (std::size_t i = 0; i < c.frames; ++i) {
        SynthFrame f = synth_frame(c, proto, i);
        std::size_t thin = 0;
        for (auto v : f.mask.pixels) thin += v >= 1 + c.blob_classes() && v != kIgnoreLabel;
        EXPECT_LE(static_cast<double>(thin) / f.mask.size(), 0.02) << seed << "/" << classes << "/" << i;
        EXPECT_GT(thin, 0u);
        EXPECT_EQ(f.embedding.header.height_s, c.image_size / c.stride);
        EXPECT_EQ(f.embedding.features.cols(), c.dim);
      }
    }
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig c;
  c.num_classes = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig{};
  c.image_size = 127;
  EXPECT_THROW(c.validate(), ConfigError);
}

// Softmax-regression probe on node features, scored by node accuracy on
// held-out frames.
double linear_probe_accuracy(const SynthConfig& c, std::size_t train_frames, std::size_t test_frames) {
  auto gather = [&](std::size_t first, std::size_t count) {
    auto frames = synth_frames(c, first, count);
    std::vector<double> x;
    std::vector<std::uint8_t> y;
    for (const auto& f : frames) {
      auto labels = mask_to_node_labels(f.mask, c.stride);
      for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] == kIgnoreLabel) continue;
        y.push_back(labels[n]);
        for (double v : f.grid.features.row(n)) x.push_back(v);
      }
    }
    LabelMask m(1, y.size());
    m.pixels = y;
    return std::pair{Tensor(y.size(), c.dim, std::move(x)), m};
  };
  auto [xtr, ytr] = gather(0, train_frames);
  auto [xte, yte] = gather(train_frames, test_frames);
  ParameterSet p;
  p.add("w", Tensor(c.dim, c.num_classes));
  p.add("b", Tensor(1, c.num_classes));
  AdamState adam = AdamState::zeros_like(p);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    BoundParameters bp(tape, p);
    Var probs = softmax_rows(add_bias(matmul(tape.constant(xtr), bp["w"]), bp["b"]));
    GradientMap g = tape.backward(ce_loss(probs, ytr, uniform_class_weights(c.num_classes)));
    std::vector<Tensor> grads{g[bp["w"]], g[bp["b"]]};
    adamw_step(p, grads, adam, 0.05, tc);
  }
  Tensor logits = dense::matmul(xte, p.at("w"));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c.num_classes; ++k)
      if (logits(i, k) + p.at("b")(0, k) > logits(i, best) + p.at("b")(0, best)) best = k;
    correct += best == yte.pixels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

TEST(Synth, LinearProbeLeavesHeadroom) {
  SynthConfig c;  // the default generator used by the end-to-end experiment
  const double acc = linear_probe_accuracy(c, 8, 4);
  RecordProperty("linear_probe_accuracy", std::to_string(acc));
  EXPECT_GE(acc, 0.55);
  EXPECT_LE(acc, 0.85);
}

}  // namespace
