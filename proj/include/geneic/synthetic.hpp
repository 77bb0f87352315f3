#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "geneic/rng.hpp"
#include "geneic/types.hpp"

namespace geneic {

/// Desk-scale stand-in for a single-domain photo corpus: each image holds one
/// roughly centred blob (the "main object") on a dim, noisy background. Blob
/// size and per-channel colour depend on a latent class (i % classes) plus
/// jitter, so the corpus has cluster structure.
inline std::vector<ImageSample> synth_corpus(int n, int height, int width, int channels,
                                             std::uint64_t seed, int classes = 4) {
  std::vector<ImageSample> out;
  const SplitMix64 root(seed);
  const SplitMix64 class_stream = root.split(0xC1A55);
  std::vector<std::vector<double>> class_color;
  std::vector<double> class_radius;
  {
    SplitMix64 g = class_stream;
    for (int k = 0; k < classes; ++k) {
      std::vector<double> col;
      for (int c = 0; c < channels; ++c) col.push_back(0.35 + 0.6 * g.uniform());
      class_color.push_back(col);
      class_radius.push_back((0.12 + 0.18 * g.uniform()) * std::min(height, width));
    }
  }
  for (int i = 0; i < n; ++i) {
    SplitMix64 g = root.split(static_cast<std::uint64_t>(i) + 1);
    const int k = i % classes;
    ImageSample img("img" + std::to_string(i), height, width, channels);
    const double cy = 0.5 * (height - 1) + 0.1 * height * (g.uniform() - 0.5);
    const double cx = 0.5 * (width - 1) + 0.1 * width * (g.uniform() - 0.5);
    const double r = class_radius[static_cast<std::size_t>(k)] * (0.85 + 0.3 * g.uniform());
    const double bg = 0.05 + 0.1 * g.uniform();
    std::vector<double> col = class_color[static_cast<std::size_t>(k)];
    for (auto& c : col) c = std::clamp(c + 0.08 * (g.uniform() - 0.5), 0.0, 1.0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        const double blob = std::exp(-d2 / (2.0 * r * r));
        for (int c = 0; c < channels; ++c)
          // 8-bit levels so the PNG written by `synth` reloads exactly.
          img.at(y, x, c) = std::round(255.0 * std::clamp(bg + (col[static_cast<std::size_t>(c)] - bg) * blob +
                                                              0.02 * g.normal(),
                                                          0.0, 1.0)) /
                            255.0;
      }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace geneic
