#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "geneic/errors.hpp"

namespace geneic {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// An image as an H x W x C grid of intensities in [0, 1], stored row-major
/// with channels innermost.
struct ImageSample {
  std::string id;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  ImageSample() = default;
  ImageSample(std::string id_, int h, int w, int c)
      : id(std::move(id_)), height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, 0.0) {}

  std::size_t size() const { return pixels.size(); }
  double& at(int y, int x, int ch) { return pixels[index(y, x, ch)]; }
  double at(int y, int x, int ch) const { return pixels[index(y, x, ch)]; }

  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + ch;
  }

  void validate() const {
    if (height <= 0 || width <= 0 || channels <= 0)
      throw ShapeError("image '" + id + "' has non-positive dimensions");
    if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
      throw ShapeError("image '" + id + "' pixel count does not match its shape");
    for (double p : pixels)
      if (!std::isfinite(p) || p < 0.0 || p > 1.0)
        throw ContractError("image '" + id + "' has a pixel outside [0, 1]");
  }

  Eigen::Map<const Vector> flat() const {
    return {pixels.data(), static_cast<Eigen::Index>(pixels.size())};
  }
};

/// Latent l x w x c grid. Channel k across all cells is one feature map.
struct FeatureMapSet {
  int rows = 0;  // l
  int cols = 0;  // w
  int channels = 0;  // c
  std::vector<double> grid;

  FeatureMapSet() = default;
  FeatureMapSet(int l, int w, int c)
      : rows(l), cols(w), channels(c),
        grid(static_cast<std::size_t>(l) * w * c, 0.0) {}

  double& at(int u, int v, int k) { return grid[index(u, v, k)]; }
  double at(int u, int v, int k) const { return grid[index(u, v, k)]; }
  std::size_t index(int u, int v, int k) const {
    return (static_cast<std::size_t>(u) * cols + v) * channels + k;
  }

  bool same_shape(const FeatureMapSet& o) const {
    return rows == o.rows && cols == o.cols && channels == o.channels;
  }

  void validate() const {
    if (rows <= 0 || cols <= 0 || channels <= 0)
      throw ShapeError("feature map set has non-positive dimensions");
    if (grid.size() != static_cast<std::size_t>(rows) * cols * channels)
      throw ShapeError("feature map grid size does not match its shape");
    for (double g : grid)
      if (!std::isfinite(g)) throw ContractError("feature map has a non-finite entry");
  }

  friend bool operator==(const FeatureMapSet&, const FeatureMapSet&) = default;
};

/// q visual slots already projected into the decoder's embedding space.
struct VisualEmbedding {
  Matrix tokens;  // q x d_dec
};

struct TokenSeq {
  std::vector<int> tokens;
  bool eos_terminated = false;

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

enum class DecodeMode { kGreedy, kSampled };

struct CaptionSample {
  TokenSeq seq;
  std::string text;
  std::vector<double> logprobs;
  DecodeMode mode = DecodeMode::kGreedy;

  double total_logprob() const {
    double s = 0.0;
    for (double lp : logprobs) s += lp;
    return s;
  }

  friend bool operator==(const CaptionSample&, const CaptionSample&) = default;
};

struct JointEmbedding {
  Vector vec;
  bool normalized = false;

  int dim() const { return static_cast<int>(vec.size()); }
};

inline JointEmbedding normalize(const JointEmbedding& e) {
  const double n = e.vec.norm();
  if (!(n > 0.0)) throw ContractError("cannot normalize a zero-norm embedding");
  return {e.vec / n, true};
}

/// Decoder input: visual slots followed by a prompt block.
struct ComposedInput {
  Matrix slots;  // (q + M) x d_dec
  int prompt_begin = 0;
  int prompt_end = 0;

  int prompt_length() const { return prompt_end - prompt_begin; }
};

}  // namespace geneic
