#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "geneic/backend.hpp"

namespace geneic {

struct ChannelScores {
  std::vector<double> scores;
  std::vector<int> ranking;  // channels by descending score, ties to lower index
};

struct TransferPlan {
  std::vector<int> channels;  // ascending
  int count = 0;              // c_r
  double fraction = 0.0;
};

inline constexpr double kScoreEps = 1e-8;

// Centred Gaussian over the l x w lattice with sigma = l / 4.
inline double center_weight(int u, int v, int rows, int cols) {
  const double cu = 0.5 * (rows - 1), cv = 0.5 * (cols - 1);
  const double sigma = rows / 4.0;
  const double du = u - cu, dv = v - cv;
  return std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
}

/// Centre-weighted share of each channel's absolute activation. Channels that
/// concentrate their energy near the middle of the grid, where the main object
/// usually sits, score highest.
inline ChannelScores score_channels(const FeatureMapSet& fmap) {
  fmap.validate();
  ChannelScores out;
  out.scores.assign(static_cast<std::size_t>(fmap.channels), 0.0);
  for (int k = 0; k < fmap.channels; ++k) {
    double num = 0.0, den = 0.0;
    for (int u = 0; u < fmap.rows; ++u)
      for (int v = 0; v < fmap.cols; ++v) {
        const double a = std::abs(fmap.at(u, v, k));
        num += center_weight(u, v, fmap.rows, fmap.cols) * a;
        den += a;
      }
    out.scores[static_cast<std::size_t>(k)] = num / (den + kScoreEps);
  }
  out.ranking.resize(out.scores.size());
  std::iota(out.ranking.begin(), out.ranking.end(), 0);
  std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](int a, int b) {
    return out.scores[static_cast<std::size_t>(a)] > out.scores[static_cast<std::size_t>(b)];
  });
  return out;
}

inline TransferPlan plan_transfer(const ChannelScores& scores, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ContractError("plan_transfer: fraction must lie in [0, 1]");
  const int c = static_cast<int>(scores.ranking.size());
  TransferPlan plan;
  plan.fraction = fraction;
  plan.count = static_cast<int>(std::lround(fraction * c));
  plan.channels.assign(scores.ranking.begin(), scores.ranking.begin() + plan.count);
  std::sort(plan.channels.begin(), plan.channels.end());
  return plan;
}

/// Copy of f_i whose planned channels are taken from f_j.
inline FeatureMapSet apply_transfer(const FeatureMapSet& f_i, const FeatureMapSet& f_j,
                                    const TransferPlan& plan) {
  if (!f_i.same_shape(f_j)) throw ShapeError("apply_transfer: feature map shapes differ");
  FeatureMapSet out = f_i;
  for (int k : plan.channels) {
    if (k < 0 || k >= f_i.channels) throw ContractError("apply_transfer: channel out of range");
    for (int u = 0; u < f_i.rows; ++u)
      for (int v = 0; v < f_i.cols; ++v) out.at(u, v, k) = f_j.at(u, v, k);
  }
  return out;
}

struct TransferResult {
  ImageSample image;
  TransferPlan plan;
};

inline TransferResult transfer_with_plan(const ImageSample& x_i, const ImageSample& x_j,
                                         const BackendBundle& bundle, double fraction) {
  const FeatureMapSet f_i = ae_encode(x_i, bundle);
  const FeatureMapSet f_j = ae_encode(x_j, bundle);
  TransferPlan plan = plan_transfer(score_channels(f_i), fraction);
  ImageSample img = ae_decode(apply_transfer(f_i, f_j, plan), bundle);
  img.id = x_i.id + "~" + x_j.id;
  return {std::move(img), std::move(plan)};
}

/// Attribute-transferred variant of x_i: its main-object channels replaced by
/// those of x_j, decoded back to an image.
inline ImageSample make_transferred_image(const ImageSample& x_i, const ImageSample& x_j,
                                          const BackendBundle& bundle, double fraction) {
  return transfer_with_plan(x_i, x_j, bundle, fraction).image;
}

}  // namespace geneic
