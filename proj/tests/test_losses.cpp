#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace geneic;
using namespace geneic::testing;

namespace {

JointEmbedding je(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) x(i++) = a;
  return {x, false};
}

DeltaPair raw_pair(const Vector& dv, const Vector& ds) {
  DeltaPair p;
  p.dV = dv;
  p.dS = ds;
  return p;
}

}  // namespace

TEST(Reward, ClosedForms) {
  const Vector x = je({0.3, -1.2, 2.0}).vec;
  EXPECT_DOUBLE_EQ(reward(x, x), 1.0);
  EXPECT_DOUBLE_EQ(reward(x, -x), -1.0);
  EXPECT_NEAR(reward(je({1, 0}).vec, je({1, 1}).vec), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(reward(je({0, 0}).vec, je({1, 0}).vec), ContractError);
}

TEST(DeltaPair, DefinitionsAndDegeneracy) {
  const auto same = delta_pair(je({1, 2, 3}), je({1, 2, 3}), je({1, 0, 0}), je({0, 1, 0}));
  EXPECT_EQ(same.dV.norm(), 0.0);
  EXPECT_TRUE(same.image_degenerate);

  const auto axes = delta_pair(je({1, 0, 0}), je({0, 1, 0}), je({1, 0, 0}), je({0, 0, 1}));
  EXPECT_EQ(axes.dV, je({1, -1, 0}).vec);
  EXPECT_FALSE(axes.degenerate());

  const auto scaled = delta_pair(je({10, 0, 0}), je({0, 1, 0}), je({1, 0, 0}), je({0, 0, 1}));
  EXPECT_LT((scaled.dV - axes.dV).norm(), 1e-15);
  EXPECT_THROW(delta_pair(je({0, 0, 0}), je({0, 1, 0}), je({1, 0, 0}), je({0, 0, 1})), ContractError);
}

TEST(AttributeLoss, ClosedForms) {
  const Vector dv = je({1, 0}).vec;
  std::vector<DeltaPair> aligned{raw_pair(dv, dv)};
  EXPECT_NEAR(attribute_loss(aligned).value, 0.0, 1e-15);
  std::vector<DeltaPair> opposite{raw_pair(dv, -dv)};
  EXPECT_NEAR(attribute_loss(opposite).value, 2.0, 1e-15);
  std::vector<DeltaPair> diag{raw_pair(dv, je({1, 1}).vec / std::sqrt(2.0))};
  EXPECT_NEAR(attribute_loss(diag).value, 1.0 - 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(AttributeLoss, DegeneratePairsSkippedAllDegenerateRaises) {
  auto degenerate = raw_pair(je({1, 0}).vec, je({0, 0}).vec);
  degenerate.caption_degenerate = true;
  std::vector<DeltaPair> mixed{degenerate, raw_pair(je({1, 0}).vec, je({1, 0}).vec)};
  const auto l = attribute_loss(mixed);
  EXPECT_EQ(l.used, 1);
  EXPECT_EQ(l.skipped, 1);
  EXPECT_NEAR(l.value, 0.0, 1e-15);
  std::vector<DeltaPair> only{degenerate};
  EXPECT_THROW(attribute_loss(only), DegenerateBatchError);
}

TEST(SemanticLoss, ClosedForms) {
  std::vector<JointEmbedding> img{je({1, 2}), je({1, 0})};
  std::vector<JointEmbedding> same{je({1, 2}), je({1, 0})};
  std::vector<JointEmbedding> mixed{je({2, 4}), je({0, 3})};
  EXPECT_NEAR(semantic_loss(std::span(img).first(1), std::span(same).first(1)), 0.0, 1e-15);
  EXPECT_NEAR(semantic_loss(std::span(img).last(1), std::span(mixed).last(1)), 1.0, 1e-15);
  EXPECT_NEAR(semantic_loss(img, mixed), 0.5, 1e-15);
  EXPECT_THROW(semantic_loss(img, std::span(mixed).first(1)), ContractError);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_EQ(kDefaultBeta, 0.5);
  EXPECT_DOUBLE_EQ(total_loss(0.4, 0.2, 0.0), 0.4);
  EXPECT_DOUBLE_EQ(total_loss(0.4, 0.2, 0.5), 0.5);
}

TEST(Advantages, Arithmetic) {
  const RewardReport s{0.9, 0.7, 0.0}, gr{0.5, 0.7, 0.0};
  const auto a = scst_advantages(std::vector<RewardReport>{s}, std::vector<RewardReport>{gr}, 0.5);
  EXPECT_NEAR(a.advantages[0], 0.4, 1e-15);
  const auto zero = scst_advantages(std::vector<RewardReport>{s, gr}, std::vector<RewardReport>{s, gr}, 0.5);
  EXPECT_EQ(zero.advantages, (std::vector<double>{0.0, 0.0}));
  const RewardReport worse{0.1, 0.2, 0.0};
  EXPECT_LT(scst_advantages(std::vector<RewardReport>{worse}, std::vector<RewardReport>{gr}, 0.5).advantages[0], 0.0);
}

TEST(MakeReward, CaptionDegenerateGivesZeroAttribute) {
  const auto d = delta_pair(je({1, 0}), je({0, 1}), je({1, 1}), je({2, 2}));
  EXPECT_TRUE(d.caption_degenerate);
  const auto r = make_reward(d, je({1, 0}), je({1, 1}), 0.5);
  EXPECT_EQ(r.r_attr, 0.0);
  EXPECT_NEAR(r.combined, 0.5 / std::sqrt(2.0), 1e-15);
}

TEST(LossAlgebra, RandomizedRangesScaleInvarianceAndDuality) {
  std::mt19937_64 g(7);
  std::uniform_real_distribution<double> alpha_dist(0.01, 100.0);
  std::uniform_int_distribution<int> dim_dist(2, 8), batch_dist(1, 6);
  for (int t = 0; t < 10000; ++t) {
    const int d = dim_dist(g), n = batch_dist(g);
    std::vector<JointEmbedding> v, vp, s, sp;
    for (int i = 0; i < n; ++i) {
      v.push_back({random_vector(g, d), false});
      vp.push_back({random_vector(g, d), false});
      s.push_back({random_vector(g, d), false});
      sp.push_back({random_vector(g, d), false});
    }
    std::vector<DeltaPair> deltas, scaled;
    std::vector<double> r_attr;
    for (int i = 0; i < n; ++i) {
      const double a = alpha_dist(g);
      deltas.push_back(delta_pair(v[i], vp[i], s[i], sp[i]));
      scaled.push_back(delta_pair({a * v[i].vec, false}, {alpha_dist(g) * vp[i].vec, false},
                                  {alpha_dist(g) * s[i].vec, false}, {a * sp[i].vec, false}));
      r_attr.push_back(reward(deltas.back().dV, deltas.back().dS));
      ASSERT_GE(r_attr.back(), -1.0);
      ASSERT_LE(r_attr.back(), 1.0);
    }
    const double la = attribute_loss(deltas).value;
    ASSERT_GE(la, 0.0);
    ASSERT_LE(la, 2.0);
    ASSERT_NEAR(la, attribute_loss(scaled).value, 1e-9);
    double dual = 0.0;
    for (double r : r_attr) dual += 1.0 - r;
    ASSERT_NEAR(la, dual / n, 1e-9);

    const double ls = semantic_loss(v, s);
    ASSERT_GE(ls, 0.0);
    ASSERT_LE(ls, 2.0);
    std::vector<JointEmbedding> sv;
    for (const auto& e : s) sv.push_back({alpha_dist(g) * e.vec, false});
    ASSERT_NEAR(ls, semantic_loss(v, sv), 1e-9);

    const auto rs = make_reward(deltas[0], v[0], s[0], 0.5);
    const auto rs2 = make_reward(scaled[0], {alpha_dist(g) * v[0].vec, false}, {alpha_dist(g) * s[0].vec, false}, 0.5);
    ASSERT_NEAR(rs.r_attr, rs2.r_attr, 1e-9);
    ASSERT_NEAR(rs.r_sem, rs2.r_sem, 1e-9);
    ASSERT_GE(rs.r_sem, -1.0);
    ASSERT_LE(rs.r_sem, 1.0);
  }
}
