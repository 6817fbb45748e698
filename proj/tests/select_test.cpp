#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "glim/select.hpp"
#include "test_support.hpp"

namespace glim {
namespace {

// Independent route to the condition number: eigenvalues of M^T M.
double condition_via_gram(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.transpose() * m);
  const auto& ev = eig.eigenvalues();
  return std::sqrt(ev(ev.size() - 1) / ev(0));
}

double worst_condition_oracle(const Eigen::MatrixXd& h, const LedMapping& m) {
  double worst = 0.0;
  for (std::uint32_t phi = 0; phi < (1u << m.n_pairs()); ++phi) {
    Eigen::MatrixXd sub(h.rows(), m.n_pairs());
    for (int l = 0; l < m.n_pairs(); ++l) sub.col(l) = h.col(((phi >> l) & 1u) ? m[l].second : m[l].first);
    worst = std::max(worst, condition_via_gram(sub));
  }
  return worst;
}

bool contains_pair(const LedMapping& m, int a, int b) {
  for (const auto& p : m.pairs())
    if ((p.first == a && p.second == b) || (p.first == b && p.second == a)) return true;
  return false;
}

Eigen::MatrixXd block_channel() {
  return (Eigen::MatrixXd(4, 4) << 4, 3, 1, .5,  //
          3, 4, .5, 1,                         //
          1, .5, 4, 3,                         //
          .5, 1, 3, 4)
      .finished();
}

TEST(ColumnCosine, Examples) {
  const ChannelMatrix same((Eigen::MatrixXd(2, 2) << 1, 1, 2, 2).finished());
  EXPECT_NEAR(column_cosine(same, 0, 1), 1.0, 1e-15);
  const ChannelMatrix eye(Eigen::MatrixXd::Identity(2, 2));
  EXPECT_EQ(column_cosine(eye, 0, 1), 0.0);
  const ChannelMatrix h((Eigen::MatrixXd(2, 2) << 1, 2, 2, 1).finished());
  EXPECT_NEAR(column_cosine(h, 0, 1), 4.0 / (std::sqrt(5.0) * std::sqrt(5.0)), 1e-15);
  EXPECT_NEAR(column_cosine(h, 1, 0), 0.8, 1e-15);
  EXPECT_THROW(column_cosine(h, 1, 1), ContractError);
}

TEST(ColumnCosine, SymmetricAndBounded) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const ChannelMatrix h(testing::random_nonnegative(rng, 5, 6, 0.0, 1.0));
    for (int a = 0; a < 6; ++a)
      for (int b = a + 1; b < 6; ++b) {
        const double c = column_cosine(h, a, b);
        EXPECT_EQ(c, column_cosine(h, b, a));
        EXPECT_GE(c, 0.0);
        EXPECT_LE(c, 1.0 + 1e-15);
      }
  }
}

TEST(ConditionNumber, Examples) {
  EXPECT_NEAR(condition_number(Eigen::MatrixXd::Identity(3, 3)), 1.0, 1e-15);
  EXPECT_NEAR(condition_number((Eigen::MatrixXd(2, 2) << 2, 0, 0, 1).finished()), 2.0, 1e-15);
  const Eigen::MatrixXd shear = (Eigen::MatrixXd(2, 2) << 1, 1, 0, 1).finished();
  EXPECT_NEAR(condition_number(shear), (3 + std::sqrt(5.0)) / 2, 1e-12);
  EXPECT_NEAR(condition_number(shear), condition_via_gram(shear), 1e-12);
}

TEST(ConditionNumber, RankDeficientIsInfinite) {
  EXPECT_EQ(condition_number((Eigen::MatrixXd(3, 2) << 1, 2, 2, 4, 3, 6).finished()),
            std::numeric_limits<double>::infinity());
  EXPECT_EQ(condition_number(Eigen::MatrixXd::Zero(2, 2)), std::numeric_limits<double>::infinity());
  EXPECT_THROW(condition_number(Eigen::MatrixXd::Ones(1, 2)), ContractError);
}

TEST(ConditionNumber, ScaleInvariantAndAgreesWithGram) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd m = testing::random_nonnegative(rng, 6, 3);
    const double c = condition_number(m);
    EXPECT_GE(c, 1.0);
    EXPECT_NEAR(condition_number(7.5 * m), c, 1e-10 * c);
    EXPECT_NEAR(condition_via_gram(m), c, 1e-7 * c);
  }
}

TEST(EnumerateCandidates, FourLeds) {
  const auto c = enumerate_candidates(4);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].to_string(), "1-2|3-4");
  EXPECT_EQ(c[1].to_string(), "1-3|2-4");
  EXPECT_EQ(c[2].to_string(), "1-4|2-3");
}

TEST(EnumerateCandidates, ForbiddenPairDropsItsMatchings) {
  const auto c = enumerate_candidates(4, {{0, 1}});
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].to_string(), "1-3|2-4");
  EXPECT_EQ(c[1].to_string(), "1-4|2-3");
  EXPECT_TRUE(enumerate_candidates(4, {{0, 1}, {0, 2}, {0, 3}}).empty());
}

TEST(EnumerateCandidates, CountIsDoubleFactorialAndAllDistinctCanonical) {
  std::uint64_t expected = 1;
  for (int n = 2; n <= 12; n += 2) {
    expected *= static_cast<std::uint64_t>(n - 1);
    const auto c = enumerate_candidates(n);
    EXPECT_EQ(c.size(), expected) << n;
    std::set<std::string> seen;
    for (const auto& m : c) {
      EXPECT_EQ(m.canonical(), m);
      EXPECT_EQ(m[0].first, 0);
      seen.insert(m.to_string());
    }
    EXPECT_EQ(seen.size(), c.size());
  }
  EXPECT_EQ(enumerate_candidates(8).size(), 105u);
}

TEST(SelectMapping, BlockCorrelatedFourByFour) {
  const ChannelMatrix h(block_channel());
  const auto report = select_mapping_report(h);
  const auto& chosen = report.selected();
  EXPECT_FALSE(contains_pair(chosen, 0, 1));
  EXPECT_FALSE(contains_pair(chosen, 2, 3));
  EXPECT_FALSE(report.fallback);

  // Exhaustive oracle over all three candidates, independent condition numbers.
  double best = std::numeric_limits<double>::infinity();
  std::string best_name;
  for (const auto& cand : enumerate_candidates(4)) {
    if (contains_pair(cand, 0, 1) || contains_pair(cand, 2, 3)) continue;  // most correlated, filtered
    const double mu = worst_condition_oracle(block_channel(), cand);
    if (mu < best * (1 - 1e-9)) best = mu, best_name = cand.to_string();
  }
  EXPECT_EQ(chosen.to_string(), best_name);
}

TEST(SelectMapping, IdentityFallsBackToFirstCandidate) {
  const ChannelMatrix eye(Eigen::MatrixXd::Identity(4, 4));
  const auto report = select_mapping_report(eye);
  EXPECT_TRUE(report.fallback);
  EXPECT_EQ(report.selected().to_string(), "1-2|3-4");
  for (const auto& c : report.ranked) EXPECT_NEAR(c.worst_condition, 1.0, 1e-12);
}

TEST(SelectMapping, DefaultRoom) {
  const ChannelMatrix h = build_lambertian_channel(default_geometry()).normalized();
  const auto report = select_mapping_report(h);
  // Whatever the numbering, no maximally correlated pair may survive.
  for (const auto& p : report.selected().pairs())
    EXPECT_FALSE(report.removed.contains(make_unordered(p.first, p.second)));
  EXPECT_EQ(report.selected().to_string(), "1-3|2-4|5-7|6-8");
  // Corner-to-adjacent-midpoint pairs are the most correlated ones.
  EXPECT_EQ(report.removed.size(), 8u);
  EXPECT_TRUE(report.removed.contains({0, 1}));
  EXPECT_TRUE(report.removed.contains({6, 7}));
}

TEST(SelectMapping, SelectedIsBestSurvivor) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = trial % 2 ? 6 : 8;
    const ChannelMatrix h(testing::random_nonnegative(rng, n, n));
    const auto report = select_mapping_report(h);
    const auto& chosen = report.selected();
    EXPECT_EQ(chosen.n_tx(), n);
    EXPECT_EQ(chosen[0].first, 0);
    const double mu = report.ranked.front().worst_condition;
    EXPECT_NEAR(mu, worst_condition_oracle(h.gains(), chosen), 1e-6 * mu);
    for (const auto& c : report.ranked) EXPECT_LE(mu, c.worst_condition * (1 + 1e-9));
    for (const auto& p : chosen.pairs()) EXPECT_FALSE(report.removed.contains(make_unordered(p.first, p.second)));
  }
}

TEST(SelectMapping, ScaleInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = trial % 2 ? 4 : 6;
    const Eigen::MatrixXd g = testing::random_nonnegative(rng, n, n);
    const double c = std::uniform_real_distribution<double>(1e-3, 1e3)(rng);
    EXPECT_EQ(select_mapping(ChannelMatrix(g)), select_mapping(ChannelMatrix(c * g)));
  }
}

TEST(SelectMapping, PermutationEquivariant) {
  std::mt19937_64 rng(5);
  int unique = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = trial % 2 ? 6 : 8;
    const Eigen::MatrixXd g = testing::random_nonnegative(rng, n, n);
    const auto perm = testing::random_permutation(rng, n);
    Eigen::MatrixXd permuted(n, n);
    for (int i = 0; i < n; ++i) permuted.col(perm[static_cast<std::size_t>(i)]) = g.col(i);

    const auto original = select_mapping(ChannelMatrix(g));
    std::vector<LedPair> image;
    for (const auto& p : original.pairs())
      image.push_back({perm[static_cast<std::size_t>(p.first)], perm[static_cast<std::size_t>(p.second)]});
    // Relabelled pairs may not start at LED 1 yet; canonicalise by hand.
    for (auto& p : image)
      if (p.first > p.second) std::swap(p.first, p.second);
    std::sort(image.begin(), image.end(), [](auto& a, auto& b) { return a.first < b.first; });
    const LedMapping relabelled(image);

    // Distinct matchings often share their worst lit subset, so exact ties
    // are common; the relabelled choice must be one of the co-optimal ones.
    const auto report = select_mapping_report(ChannelMatrix(permuted));
    const double best = report.ranked.front().worst_condition;
    std::vector<std::string> optimal;
    for (const auto& c : report.ranked)
      if (c.worst_condition <= best * (1 + kSelectionTieTolerance)) optimal.push_back(c.mapping.to_string());
    EXPECT_NE(std::find(optimal.begin(), optimal.end(), relabelled.to_string()), optimal.end()) << "trial " << trial;
    if (optimal.size() == 1) {
      EXPECT_EQ(report.selected().to_string(), relabelled.to_string()) << "trial " << trial;
    }
    unique += optimal.size() == 1;
  }
  EXPECT_GT(unique, 0);
}

}  // namespace
}  // namespace glim
