// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchgraph/graphbuild.hpp"
#include "patchgraph/image.hpp"

namespace patchgraph {

// --- embedding files (PGEM) ------------------------------------------------------
//
// offset  size  field
//      0     4  magic "PGEM"
//      4     2  version (1)
//      6     2  flags (bit 0: features already L2-normalized)
//      8     4  H_s
//     12     4  W_s
//     16     4  D
//     20     2  stride
//     22     4  source image height
//     26     4  source image width
//     30        f32 features, N x D row-major
// All integers little-endian.

inline constexpr std::size_t kEmbeddingHeaderBytes = 30;
inline constexpr std::uint16_t kEmbeddingVersion = 1;
inline constexpr std::uint16_t kEmbeddingNormalizedFlag = 1;

struct EmbeddingHeader {
  std::uint16_t version = kEmbeddingVersion;
  std::uint16_t flags = 0;
  std::uint32_t height_s = 0;
  std::uint32_t width_s = 0;
  std::uint32_t dim = 0;
  std::uint16_t stride = 0;
  std::uint32_t image_height = 0;
  std::uint32_t image_width = 0;
};

std::uint64_t embedding_file_size(std::uint64_t height_s, std::uint64_t width_s, std::uint64_t dim);

/// Raw features as stored (not normalized), plus the header.
struct EmbeddingFile {
  EmbeddingHeader header;
  Tensor features;
};

std::vector<std::uint8_t> encode_embedding(const EmbeddingHeader& header, const Tensor& features);
EmbeddingFile decode_embedding(std::span<const std::uint8_t> bytes);

/// Writes the grid's features (flagged as normalized).
void write_embedding(const PatchEmbeddingGrid& grid, const std::filesystem::path& path);
/// Reads and L2-normalizes. FormatError with the byte offset on any defect.
PatchEmbeddingGrid read_embedding(const std::filesystem::path& path);
PatchEmbeddingGrid to_grid(const EmbeddingFile& file);

// --- split manifests --------------------------------------------------------------

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::filesystem::path embedding;
  std::filesystem::path mask;
  std::filesystem::path image;  // may be empty
  Split split = Split::train;
};

/// CSV "embedding_path,mask_path,image_path,split". Relative paths resolve
/// against the manifest's directory. No path may appear in two splits.
class SplitManifest {
 public:
  static SplitManifest parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static SplitManifest read(const std::filesystem::path& path);

  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;

  void add(ManifestEntry entry);
  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
  std::vector<ManifestEntry> split(Split which) const;
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }
  std::filesystem::path resolve(const std::filesystem::path& p) const;

 private:
  void check_overlap(const ManifestEntry& entry) const;

  std::filesystem::path base_dir_;
  std::vector<ManifestEntry> entries_;
};

/// One loaded sample: the token grid, its pixel mask and (optionally) the
/// grey image used for boundary affinities.
struct Frame {
  std::string name;
  PatchEmbeddingGrid grid;
  LabelMask mask;
  std::optional<GrayImage> image;
};

/// Loads the entries of one split in manifest order. Mask and image sizes
/// must match the embedding header's source image size.
std::vector<Frame> load_split(const SplitManifest& manifest, Split which);

/// Class names from "classes.txt" beside the manifest (one per line), or
/// empty when the file does not exist.
std::vector<std::string> read_class_names(const std::filesystem::path& manifest_path);

/// Pixel counts per class over the masks (ignore pixels skipped).
std::vector<std::uint64_t> class_histogram(std::span<const Frame> frames, std::size_t num_classes);

/// Majority label per stride x stride patch, ties to the lowest index,
/// kIgnoreLabel for patches with no scored pixel.
std::vector<std::uint8_t> mask_to_node_labels(const LabelMask& mask, std::size_t stride);

// --- synthetic scenes -------------------------------------------------------------

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t frames = 64;
  std::size_t image_size = 128;
  std::size_t num_classes = 5;  // 4..6: background, 2-3 blob classes, 1-2 thin classes
  std::size_t stride = 2;
  std::size_t dim = 32;
  double noise = 0.5;          // per-coordinate feature noise
  double thin_gain = 1.5;      // descriptor strength of thin classes
  double thin_width = 4.0;     // pixels
  double max_thin_share = 0.02;
  std::size_t val_frames = 8;
  std::size_t test_frames = 8;

  void validate() const;
  std::size_t thin_classes() const { return num_classes >= 6 ? 2 : 1; }
  std::size_t blob_classes() const { return num_classes - 1 - thin_classes(); }
};

struct SynthFrame {
  GrayImage image;
  LabelMask mask;
  EmbeddingFile embedding;
};

/// Per-class texture descriptors shared by every frame of a dataset.
Tensor synth_prototypes(const SynthConfig& config);

/// Frame `index` of the dataset described by `config`.
SynthFrame synth_frame(const SynthConfig& config, const Tensor& prototypes, std::size_t index);

std::vector<std::string> synth_class_names(const SynthConfig& config);

/// Writes images/, masks/, embeddings/, manifest.csv and classes.txt under
/// `out_dir`; returns the manifest path. Frames are split train / val / test
/// in index order.
std::filesystem::path synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace patchgraph
