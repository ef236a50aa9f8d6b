// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

// In-memory synthetic frames prepared for training.

#pragma once

#include <string>
#include <vector>

#include "patchgraph/dataio.hpp"
#include "patchgraph/trainer.hpp"

namespace pgtest {

using namespace patchgraph;

inline std::vector<Frame> synth_frames(const SynthConfig& config, std::size_t first, std::size_t count) {
  const Tensor prototypes = synth_prototypes(config);
  std::vector<Frame> frames;
  for (std::size_t i = first; i < first + count; ++i) {
    SynthFrame s = synth_frame(config, prototypes, i);
    frames.push_back({"frame_" + std::to_string(i), to_grid(s.embedding), s.mask, s.image});
  }
  return frames;
}

inline std::vector<PreparedFrame> prepare_all(const std::vector<Frame>& frames, const Model& model,
                                              const GraphConfig& graph = {}) {
  std::vector<PreparedFrame> out;
  for (const auto& f : frames)
    out.push_back(prepare_frame(f, frame_graph(f, graph), model.graph_normalization(), model));
  return out;
}

/// Small fast scene set: 32x32 images, stride 4 (8x8 token grid).
inline SynthConfig tiny_synth(std::uint64_t seed = 1) {
  SynthConfig c;
  c.seed = seed;
  c.frames = 8;
  c.image_size = 32;
  c.stride = 4;
  c.dim = 16;
  c.val_frames = 2;
  c.test_frames = 2;
  return c;
}

}  // namespace pgtest
