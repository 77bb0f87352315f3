#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "geneic/types.hpp"

namespace geneic {

inline constexpr double kDegenerateDelta = 1e-6;
inline constexpr double kDefaultBeta = 0.5;

/// a.b / (|a||b|), clamped to [-1, 1] against rounding.
inline double reward(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("reward: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw ContractError("reward: zero-norm vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// Change directions between an original and a transferred example, in image
/// space (dV) and caption space (dS), each side L2-normalised first.
struct DeltaPair {
  Vector dV;
  Vector dS;
  bool image_degenerate = false;
  bool caption_degenerate = false;

  bool degenerate() const { return image_degenerate || caption_degenerate; }
};

inline DeltaPair delta_pair(const JointEmbedding& v, const JointEmbedding& v_prime,
                            const JointEmbedding& s, const JointEmbedding& s_prime) {
  const int d = v.dim();
  if (v_prime.dim() != d || s.dim() != d || s_prime.dim() != d)
    throw ShapeError("delta_pair: embeddings differ in dimension");
  DeltaPair p;
  p.dV = normalize(v).vec - normalize(v_prime).vec;
  p.dS = normalize(s).vec - normalize(s_prime).vec;
  p.image_degenerate = p.dV.norm() < kDegenerateDelta;
  p.caption_degenerate = p.dS.norm() < kDegenerateDelta;
  return p;
}

struct AttributeLoss {
  double value = 0.0;
  int used = 0;
  int skipped = 0;
};

/// Mean of 1 - cos(dV, dS) over the non-degenerate pairs.
inline AttributeLoss attribute_loss(std::span<const DeltaPair> pairs) {
  AttributeLoss out;
  double sum = 0.0;
  for (const auto& p : pairs) {
    if (p.degenerate()) {
      ++out.skipped;
      continue;
    }
    sum += 1.0 - reward(p.dV, p.dS);
    ++out.used;
  }
  if (out.used == 0) throw DegenerateBatchError("attribute_loss: every pair is degenerate");
  out.value = sum / out.used;
  return out;
}

inline double semantic_loss(std::span<const JointEmbedding> images,
                            std::span<const JointEmbedding> captions) {
  if (images.size() != captions.size() || images.empty())
    throw ContractError("semantic_loss: need equal, non-empty batches");
  double sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) sum += 1.0 - reward(images[i].vec, captions[i].vec);
  return sum / static_cast<double>(images.size());
}

inline double total_loss(double l_attr, double l_sem, double beta) {
  if (beta < 0.0) throw ContractError("total_loss: beta must be >= 0");
  return l_attr + beta * l_sem;
}

struct RewardReport {
  double r_attr = 0.0;
  double r_sem = 0.0;
  double combined = 0.0;
};

/// Rewards of one captioned pair. When the two captions embed identically
/// (dS = 0) the attribute cosine is undefined and contributes 0, so the reward
/// stays a well-defined function of the sampled captions.
inline RewardReport make_reward(const DeltaPair& delta, const JointEmbedding& image,
                                const JointEmbedding& caption, double beta) {
  if (delta.image_degenerate) throw ContractError("make_reward: image pair is degenerate");
  RewardReport r;
  r.r_attr = delta.caption_degenerate ? 0.0 : reward(delta.dV, delta.dS);
  r.r_sem = reward(image.vec, caption.vec);
  r.combined = r.r_attr + beta * r.r_sem;
  return r;
}

struct AdvantageBatch {
  std::vector<double> advantages;
  std::vector<RewardReport> sampled;
  std::vector<RewardReport> greedy;

  double mean() const {
    if (advantages.empty()) return 0.0;
    double s = 0.0;
    for (double a : advantages) s += a;
    return s / static_cast<double>(advantages.size());
  }
};

/// Self-critical advantages: sampled reward minus greedy reward, per term.
inline AdvantageBatch scst_advantages(std::span<const RewardReport> sampled,
                                      std::span<const RewardReport> greedy, double beta) {
  if (sampled.size() != greedy.size())
    throw ContractError("scst_advantages: sampled and greedy batches differ in length");
  AdvantageBatch out;
  out.sampled.assign(sampled.begin(), sampled.end());
  out.greedy.assign(greedy.begin(), greedy.end());
  for (std::size_t i = 0; i < sampled.size(); ++i)
    out.advantages.push_back((sampled[i].r_attr - greedy[i].r_attr) +
                             beta * (sampled[i].r_sem - greedy[i].r_sem));
  return out;
}

}  // namespace geneic
