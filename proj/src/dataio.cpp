// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#include "patchgraph/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "patchgraph/binary_io.hpp"
#include "patchgraph/errors.hpp"
#include "patchgraph/random.hpp"

namespace patchgraph {

namespace fs = std::filesystem;

// --- PGEM ----------------------------------------------------------------------

std::uint64_t embedding_file_size(std::uint64_t height_s, std::uint64_t width_s, std::uint64_t dim) {
  return kEmbeddingHeaderBytes + height_s * width_s * dim * 4;
}

std::vector<std::uint8_t> encode_embedding(const EmbeddingHeader& h, const Tensor& features) {
  const std::size_t n = static_cast<std::size_t>(h.height_s) * h.width_s;
  if (features.rows() != n || features.cols() != h.dim)
    throw DimensionError("embedding header says " + std::to_string(n) + "x" + std::to_string(h.dim) +
                         " but features are " + features.shape().str());
  io::ByteWriter w;
  w.bytes("PGEM");
  w.put<std::uint16_t>(h.version);
  w.put<std::uint16_t>(h.flags);
  w.put<std::uint32_t>(h.height_s);
  w.put<std::uint32_t>(h.width_s);
  w.put<std::uint32_t>(h.dim);
  w.put<std::uint16_t>(h.stride);
  w.put<std::uint32_t>(h.image_height);
  w.put<std::uint32_t>(h.image_width);
  for (double v : features.data()) w.put<float>(static_cast<float>(v));
  return w.take();
}

EmbeddingFile decode_embedding(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "PGEM");
  r.expect_magic("PGEM");
  EmbeddingFile f;
  EmbeddingHeader& h = f.header;
  const std::size_t version_at = r.offset();
  h.version = r.get<std::uint16_t>("version");
  if (h.version != kEmbeddingVersion)
    throw FormatError("PGEM: unsupported version " + std::to_string(h.version), version_at);
  h.flags = r.get<std::uint16_t>("flags");
  auto positive = [&](const char* what) {
    const std::size_t at = r.offset();
    const auto v = r.get<std::uint32_t>(what);
    if (v == 0) throw FormatError(std::string("PGEM: ") + what + " must be positive", at);
    return v;
  };
  h.height_s = positive("H_s");
  h.width_s = positive("W_s");
  h.dim = positive("D");
  const std::size_t stride_at = r.offset();
  h.stride = r.get<std::uint16_t>("stride");
  if (h.stride == 0) throw FormatError("PGEM: stride must be positive", stride_at);
  const std::size_t dims_at = r.offset();
  h.image_height = r.get<std::uint32_t>("image height");
  h.image_width = r.get<std::uint32_t>("image width");
  if (h.image_height < h.height_s || h.image_width < h.width_s)
    throw FormatError("PGEM: source image " + std::to_string(h.image_height) + "x" + std::to_string(h.image_width) +
                          " is smaller than the token grid",
                      dims_at);
  const std::uint64_t n = static_cast<std::uint64_t>(h.height_s) * h.width_s;
  const std::uint64_t payload = n * h.dim * 4;
  if (payload > std::numeric_limits<std::size_t>::max() / 2) r.fail("feature payload too large");
  r.need(static_cast<std::size_t>(payload), "features");
  f.features = Tensor(static_cast<std::size_t>(n), h.dim);
  for (double& v : f.features.data()) v = r.get<float>("feature");
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes after features");
  return f;
}

PatchEmbeddingGrid to_grid(const EmbeddingFile& file) {
  const auto& h = file.header;
  return PatchEmbeddingGrid::make(h.height_s, h.width_s, file.features, h.stride, h.image_height, h.image_width);
}

void write_embedding(const PatchEmbeddingGrid& grid, const fs::path& path) {
  EmbeddingHeader h;
  h.flags = kEmbeddingNormalizedFlag;
  h.height_s = static_cast<std::uint32_t>(grid.height_s);
  h.width_s = static_cast<std::uint32_t>(grid.width_s);
  h.dim = static_cast<std::uint32_t>(grid.dim());
  h.stride = static_cast<std::uint16_t>(grid.stride);
  h.image_height = static_cast<std::uint32_t>(grid.image_height);
  h.image_width = static_cast<std::uint32_t>(grid.image_width);
  io::write_file(path, encode_embedding(h, grid.features));
}

PatchEmbeddingGrid read_embedding(const fs::path& path) {
  try {
    return to_grid(decode_embedding(io::read_file(path)));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

// --- manifests -------------------------------------------------------------------

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

namespace {

constexpr std::string_view kManifestHeader = "embedding_path,mask_path,image_path,split";

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

SplitManifest SplitManifest::parse(std::string_view text, const fs::path& base_dir) {
  SplitManifest m;
  m.base_dir_ = base_dir;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader)
        throw DataError("manifest line " + std::to_string(line_no) + ": expected header '" +
                        std::string(kManifestHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 4)
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 4 fields, got " +
                      std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty())
      throw DataError("manifest line " + std::to_string(line_no) + ": embedding and mask paths are required");
    ManifestEntry e{fields[0], fields[1], fields[2], parse_split(fields[3])};
    try {
      m.add(std::move(e));
    } catch (const DataError& err) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  if (!header_seen) throw DataError("manifest is empty");
  return m;
}

SplitManifest SplitManifest::read(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path.parent_path());
}

std::string SplitManifest::to_csv() const {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& e : entries_) {
    out += e.embedding.generic_string() + ',' + e.mask.generic_string() + ',' + e.image.generic_string() + ',' +
           std::string(to_string(e.split)) + '\n';
  }
  return out;
}

void SplitManifest::write(const fs::path& path) const {
  const std::string csv = to_csv();
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

fs::path SplitManifest::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return (base_dir_ / p).lexically_normal();
}

void SplitManifest::check_overlap(const ManifestEntry& entry) const {
  for (const fs::path* p : {&entry.embedding, &entry.mask, &entry.image}) {
    if (p->empty()) continue;
    if (p->string().find(',') != std::string::npos) throw DataError("path contains a comma: " + p->string());
    const fs::path mine = resolve(*p);
    for (const auto& other : entries_) {
      if (other.split == entry.split) continue;
      for (const fs::path* q : {&other.embedding, &other.mask, &other.image})
        if (!q->empty() && resolve(*q) == mine)
          throw DataError("'" + p->generic_string() + "' appears in both " + std::string(to_string(other.split)) +
                          " and " + std::string(to_string(entry.split)));
    }
  }
}

void SplitManifest::add(ManifestEntry entry) {
  check_overlap(entry);
  entries_.push_back(std::move(entry));
}

std::vector<ManifestEntry> SplitManifest::split(Split which) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries_)
    if (e.split == which) out.push_back(e);
  return out;
}

std::vector<Frame> load_split(const SplitManifest& manifest, Split which) {
  std::vector<Frame> frames;
  for (const auto& e : manifest.split(which)) {
    Frame f;
    f.name = e.embedding.stem().string();
    f.grid = read_embedding(manifest.resolve(e.embedding));
    const fs::path mask_path = manifest.resolve(e.mask);
    f.mask = read_pgm(mask_path);
    if (f.mask.height != f.grid.image_height || f.mask.width != f.grid.image_width)
      throw DataError(mask_path.string() + ": mask is " + std::to_string(f.mask.height) + "x" +
                      std::to_string(f.mask.width) + " but the embedding describes a " +
                      std::to_string(f.grid.image_height) + "x" + std::to_string(f.grid.image_width) + " image");
    if (!e.image.empty()) {
      const fs::path image_path = manifest.resolve(e.image);
      f.image = read_pgm(image_path);
      if (f.image->height != f.mask.height || f.image->width != f.mask.width)
        throw DataError(image_path.string() + ": image size differs from its mask");
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<std::string> read_class_names(const fs::path& manifest_path) {
  const fs::path p = manifest_path.parent_path() / "classes.txt";
  std::vector<std::string> names;
  std::ifstream in(p);
  if (!in) return names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

std::vector<std::uint64_t> class_histogram(std::span<const Frame> frames, std::size_t num_classes) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (const auto& f : frames) {
    validate_mask(f.mask, num_classes);
    for (auto v : f.mask.pixels)
      if (v != kIgnoreLabel) ++counts[v];
  }
  return counts;
}

std::vector<std::uint8_t> mask_to_node_labels(const LabelMask& mask, std::size_t stride) {
  if (stride == 0 || mask.height % stride != 0 || mask.width % stride != 0)
    throw DimensionError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " is not divisible by stride " + std::to_string(stride));
  const std::size_t gh = mask.height / stride, gw = mask.width / stride;
  std::vector<std::uint8_t> labels(gh * gw, kIgnoreLabel);
  std::array<std::uint32_t, 256> counts{};
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c) {
      counts.fill(0);
      for (std::size_t y = r * stride; y < (r + 1) * stride; ++y)
        for (std::size_t x = c * stride; x < (c + 1) * stride; ++x) ++counts[mask.at(y, x)];
      std::uint32_t best = 0;
      for (std::size_t k = 0; k < kIgnoreLabel; ++k)
        if (counts[k] > best) {
          best = counts[k];
          labels[r * gw + c] = static_cast<std::uint8_t>(k);
        }
    }
  return labels;
}

// --- synthetic scenes ---------------------------------------------------------------

void SynthConfig::validate() const {
  if (num_classes < 4 || num_classes > 6)
    throw ConfigError("synthetic scenes support 4 to 6 classes, got " + std::to_string(num_classes));
  if (stride == 0 || image_size == 0 || image_size % stride != 0)
    throw ConfigError("image_size " + std::to_string(image_size) + " must be a positive multiple of stride " +
                      std::to_string(stride));
  if (image_size / stride < 2) throw ConfigError("token grid must be at least 2x2");
  if (dim == 0) throw ConfigError("feature dimension must be positive");
  if (frames < val_frames + test_frames + 1)
    throw ConfigError("need at least one training frame besides " + std::to_string(val_frames) + " val and " +
                      std::to_string(test_frames) + " test frames");
  if (!(noise >= 0.0) || !(thin_gain > 0.0) || !(thin_width > 0.0))
    throw ConfigError("noise must be >= 0, thin_gain and thin_width > 0");
  if (!(max_thin_share > 0.0 && max_thin_share < 1.0)) throw ConfigError("max_thin_share must lie in (0, 1)");
}

std::vector<std::string> synth_class_names(const SynthConfig& config) {
  std::vector<std::string> names{"background"};
  for (std::size_t b = 0; b < config.blob_classes(); ++b) names.push_back("blob_" + std::to_string(b + 1));
  for (std::size_t t = 0; t < config.thin_classes(); ++t) names.push_back("thin_" + std::to_string(t + 1));
  return names;
}

Tensor synth_prototypes(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed, 0);
  Tensor p(config.num_classes, config.dim);
  for (std::size_t c = 0; c < config.num_classes; ++c) {
    double norm = 0.0;
    for (double& v : p.row(c)) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : p.row(c)) v /= norm;
  }
  return p;
}

namespace {

void paint_blob(LabelMask& mask, std::uint8_t label, Rng& rng) {
  const double s = static_cast<double>(mask.height);
  const double cy = rng.uniform(0.15 * s, 0.85 * s);
  const double cx = rng.uniform(0.15 * s, 0.85 * s);
  const double radius = rng.uniform(0.19 * s, 0.31 * s);
  const double a2 = rng.uniform(-0.15, 0.15), a3 = rng.uniform(-0.15, 0.15);
  const double p2 = rng.uniform(0.0, 2.0 * std::numbers::pi), p3 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
      const double th = std::atan2(dy, dx);
      const double rr = radius * (1.0 + a2 * std::cos(2.0 * th + p2) + a3 * std::cos(3.0 * th + p3));
      if (std::hypot(dy, dx) < rr) mask.at(y, x) = label;
    }
}

// Cubic Bezier of the given width, truncated until it covers at most `budget` pixels.
void paint_curve(LabelMask& mask, std::uint8_t label, double width, double budget, Rng& rng) {
  const double s = static_cast<double>(mask.height);
  std::array<double, 8> ctrl{};
  for (double& v : ctrl) v = rng.uniform(0.08 * s, 0.92 * s);
  constexpr std::size_t kSamples = 400;
  const double r = 0.5 * width;
  // first_cover[p]: lowest sample index whose disc covers pixel p.
  std::vector<std::size_t> first_cover(mask.size(), kSamples);
  for (std::size_t k = 0; k < kSamples; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(kSamples - 1), u = 1.0 - t;
    const double b0 = u * u * u, b1 = 3 * u * u * t, b2 = 3 * u * t * t, b3 = t * t * t;
    const double py = b0 * ctrl[0] + b1 * ctrl[2] + b2 * ctrl[4] + b3 * ctrl[6];
    const double px = b0 * ctrl[1] + b1 * ctrl[3] + b2 * ctrl[5] + b3 * ctrl[7];
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(py - r)), y1 = static_cast<std::ptrdiff_t>(std::ceil(py + r));
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(px - r)), x1 = static_cast<std::ptrdiff_t>(std::ceil(px + r));
    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(y0, 0); y <= y1 && y < static_cast<std::ptrdiff_t>(mask.height); ++y)
      for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(x0, 0); x <= x1 && x < static_cast<std::ptrdiff_t>(mask.width);
           ++x) {
        const double dy = static_cast<double>(y) + 0.5 - py, dx = static_cast<double>(x) + 0.5 - px;
        const std::size_t p = static_cast<std::size_t>(y) * mask.width + static_cast<std::size_t>(x);
        if (dy * dy + dx * dx <= r * r && first_cover[p] == kSamples) first_cover[p] = k;
      }
  }
  std::size_t n = kSamples;
  for (; n > kSamples / 20; n -= kSamples / 20) {
    const auto covered =
        std::count_if(first_cover.begin(), first_cover.end(), [n](std::size_t k) { return k < n; });
    if (static_cast<double>(covered) <= budget) break;
  }
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (first_cover[p] < n) mask.pixels[p] = label;
}

}  // namespace

SynthFrame synth_frame(const SynthConfig& config, const Tensor& prototypes, std::size_t index) {
  config.validate();
  if (prototypes.rows() != config.num_classes || prototypes.cols() != config.dim)
    throw DimensionError("prototype table does not match the synthetic configuration");
  Rng rng(config.seed, index + 1);
  const std::size_t s = config.image_size, c_count = config.num_classes;
  SynthFrame f;
  f.mask = LabelMask(s, s, 0);
  const std::size_t blobs = config.blob_classes();
  for (std::size_t b = 0; b < blobs; ++b) paint_blob(f.mask, static_cast<std::uint8_t>(b + 1), rng);
  const double budget = config.max_thin_share * static_cast<double>(s * s) / static_cast<double>(config.thin_classes());
  for (std::size_t t = 0; t < config.thin_classes(); ++t)
    paint_curve(f.mask, static_cast<std::uint8_t>(blobs + 1 + t), config.thin_width, budget, rng);

  // Grey image: one intensity level per class plus sensor noise.
  f.image = GrayImage(s, s);
  for (std::size_t p = 0; p < f.mask.size(); ++p) {
    const double level = 40.0 + 180.0 * static_cast<double>(f.mask.pixels[p]) / static_cast<double>(c_count - 1);
    const double v = std::round(level + 10.0 * rng.normal());
    f.image.pixels[p] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }

  // Token descriptors: class-composition-weighted prototypes plus noise.
  const std::size_t g = s / config.stride, d = config.dim;
  std::vector<double> gain(c_count, 1.0);
  for (std::size_t c = blobs + 1; c < c_count; ++c) gain[c] = config.thin_gain;
  Tensor features(g * g, d);
  std::vector<double> frac(c_count);
  const double inv_area = 1.0 / static_cast<double>(config.stride * config.stride);
  for (std::size_t r = 0; r < g; ++r)
    for (std::size_t c = 0; c < g; ++c) {
      std::fill(frac.begin(), frac.end(), 0.0);
      for (std::size_t y = r * config.stride; y < (r + 1) * config.stride; ++y)
        for (std::size_t x = c * config.stride; x < (c + 1) * config.stride; ++x) frac[f.mask.at(y, x)] += inv_area;
      auto row = features.row(r * g + c);
      for (std::size_t k = 0; k < c_count; ++k) {
        if (frac[k] == 0.0) continue;
        auto proto = prototypes.row(k);
        for (std::size_t j = 0; j < d; ++j) row[j] += frac[k] * gain[k] * proto[j];
      }
      for (std::size_t j = 0; j < d; ++j) row[j] += config.noise * rng.normal();
    }
  EmbeddingHeader& h = f.embedding.header;
  h.height_s = h.width_s = static_cast<std::uint32_t>(g);
  h.dim = static_cast<std::uint32_t>(d);
  h.stride = static_cast<std::uint16_t>(config.stride);
  h.image_height = h.image_width = static_cast<std::uint32_t>(s);
  f.embedding.features = std::move(features);
  return f;
}

fs::path synth_generate(const SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  const Tensor prototypes = synth_prototypes(config);
  SplitManifest manifest;
  const std::size_t train_count = config.frames - config.val_frames - config.test_frames;
  for (std::size_t i = 0; i < config.frames; ++i) {
    const SynthFrame f = synth_frame(config, prototypes, i);
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%03zu", i);
    const fs::path emb = fs::path("embeddings") / (std::string(stem) + ".pgem");
    const fs::path mask = fs::path("masks") / (std::string(stem) + ".pgm");
    const fs::path image = fs::path("images") / (std::string(stem) + ".pgm");
    io::write_file(out_dir / emb, encode_embedding(f.embedding.header, f.embedding.features));
    write_pgm(f.mask, out_dir / mask);
    write_pgm(f.image, out_dir / image);
    const Split split = i < train_count ? Split::train : i < train_count + config.val_frames ? Split::val : Split::test;
    manifest.add({emb, mask, image, split});
  }
  const fs::path manifest_path = out_dir / "manifest.csv";
  manifest.write(manifest_path);
  std::string names;
  for (const auto& n : synth_class_names(config)) names += n + '\n';
  io::write_file(out_dir / "classes.txt", std::span(reinterpret_cast<const std::uint8_t*>(names.data()), names.size()));
  return manifest_path;
}

}  // namespace patchgraph
