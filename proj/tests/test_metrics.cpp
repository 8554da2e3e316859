#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hsiseg/metrics.hpp"
#include "oracles.hpp"

using namespace hsiseg;
using namespace hsiseg::metrics;

namespace {

struct Reference {
  std::vector<int> truth, pred;
  double h, c, v, ars, rs, v_half;
};

// Values produced once by scikit-learn 1.x and frozen here.
const std::vector<Reference>& references() {
  static const std::vector<Reference> refs{
      {{0, 0, 0, 1, 1, 1, 2, 2, 2}, {0, 0, 1, 1, 1, 2, 2, 2, 2}, 0.5793801642856953, 0.6000000000000001,
       0.589509827447305, 0.35714285714285715, 0.75, 0.5860941448298663},
      {{1, 1, 2, 2, 3, 3, 3, 4}, {5, 5, 5, 6, 6, 7, 7, 7}, 0.5073978624039234, 0.6193113011326309, 0.5577965290899926,
       0.15789473684210525, 0.7142857142857143, 0.5399201842977721},
      {{0, 0, 1, 1}, {0, 1, 0, 1}, 0.0, 0.0, 0.0, -0.5, 0.3333333333333333, 0.0},
      {{1, 2, 3, 4, 5, 6}, {1, 1, 1, 2, 2, 2}, 0.3868528072345413, 0.9999999999999993, 0.5578858913022592, 0.0, 0.6,
       0.4862295731793666},
  };
  return refs;
}

}  // namespace

TEST(Contingency, CountsFollowSortedLabels) {
  const std::vector<int> t{2, 2, 1, 1, 1};
  const std::vector<int> p{9, 3, 3, 3, 9};
  const auto table = contingency(t, p);
  ASSERT_EQ(table.counts.rows(), 2u);
  ASSERT_EQ(table.counts.cols(), 2u);
  EXPECT_EQ(table.counts(0, 0), 2);  // class 1, cluster 3
  EXPECT_EQ(table.counts(0, 1), 1);
  EXPECT_EQ(table.counts(1, 0), 1);
  EXPECT_EQ(table.counts(1, 1), 1);
  EXPECT_EQ(table.n, 5);
}

TEST(Contingency, RejectsMismatchedOrEmptyInput) {
  EXPECT_THROW(contingency(std::vector<int>{1, 2}, std::vector<int>{1}), Error);
  EXPECT_THROW(contingency(std::vector<int>{}, std::vector<int>{}), Error);
}

TEST(Metrics, MatchFrozenReferenceValues) {
  for (const auto& r : references()) {
    const auto t = contingency(r.truth, r.pred);
    EXPECT_NEAR(homogeneity(t), r.h, 1e-12);
    EXPECT_NEAR(completeness(t), r.c, 1e-12);
    EXPECT_NEAR(v_measure(homogeneity(t), completeness(t)), r.v, 1e-12);
    EXPECT_NEAR(v_measure(homogeneity(t), completeness(t), 0.5), r.v_half, 1e-12);
    EXPECT_NEAR(adjusted_rand(t), r.ars, 1e-12);
    EXPECT_NEAR(rand_score(t), r.rs, 1e-12);
  }
}

TEST(Metrics, IdenticalPartitionsScoreOne) {
  const std::vector<int> x{3, 3, 1, 1, 2, 2, 2};
  const auto rep = evaluate(x, x);
  EXPECT_DOUBLE_EQ(rep.homogeneity, 1.0);
  EXPECT_DOUBLE_EQ(rep.completeness, 1.0);
  EXPECT_DOUBLE_EQ(rep.ars, 1.0);
  EXPECT_DOUBLE_EQ(rep.rand_score, 1.0);
}

TEST(Metrics, RelabellingDoesNotMatter) {
  const std::vector<int> t{0, 0, 1, 1, 2, 2};
  const std::vector<int> p{7, 7, 5, 5, 9, 9};
  const auto rep = evaluate(t, p);
  EXPECT_DOUBLE_EQ(rep.ars, 1.0);
  EXPECT_DOUBLE_EQ(rep.homogeneity, 1.0);
}

TEST(Metrics, SingleClusterPrediction) {
  const std::vector<int> t{1, 1, 2, 2, 3, 3};
  const std::vector<int> p(6, 0);
  const auto rep = evaluate(t, p);
  EXPECT_DOUBLE_EQ(rep.homogeneity, 0.0);
  EXPECT_DOUBLE_EQ(rep.completeness, 1.0);
  EXPECT_DOUBLE_EQ(rep.ars, 0.0);
}

TEST(Metrics, AllSingletonsAreHomogeneous) {
  const std::vector<int> t{1, 1, 2, 2};
  const std::vector<int> p{0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(homogeneity(contingency(t, p)), 1.0);
  EXPECT_LT(completeness(contingency(t, p)), 1.0);
}

TEST(Metrics, RandScoreNeedsTwoSamples) {
  const auto t = contingency(std::vector<int>{1}, std::vector<int>{1});
  EXPECT_THROW(rand_score(t), Error);
  EXPECT_THROW(adjusted_rand(t), Error);
}

TEST(VMeasure, Identity) {
  for (double x : {0.0, 0.1, 0.37, 0.5, 0.99, 1.0})
    for (double beta : {0.0, 0.25, 0.5, 1.0})
      if (x > 0.0) {
        EXPECT_NEAR(v_measure(x, x, beta), x, 1e-12);
      }
  EXPECT_EQ(v_measure(0.0, 0.0, 0.5), 0.0);
}

TEST(VMeasure, BetaZeroIsHomogeneity) { EXPECT_DOUBLE_EQ(v_measure(0.3, 0.8, 0.0), 0.3); }

TEST(VMeasure, RejectsBetaOutsideUnitInterval) {
  EXPECT_THROW(v_measure(0.5, 0.5, -0.01), Error);
  EXPECT_THROW(v_measure(0.5, 0.5, 1.01), Error);
  EXPECT_THROW(v_measure(0.5, 0.5, std::nan("")), Error);
}

TEST(MetricsProperty, PairCountsMatchEnumeration) {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(11);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.below(4));
      p[i] = static_cast<int>(rng.below(5));
    }
    const auto pc = pair_counts(contingency(t, p));
    const auto ref = oracle::enumerate_pairs(t, p);
    EXPECT_EQ(pc.total, ref.total);
    EXPECT_EQ(pc.same_both, ref.same_both);
    EXPECT_EQ(pc.same_true, ref.same_true);
    EXPECT_EQ(pc.same_pred, ref.same_pred);
    EXPECT_EQ(rand_score(contingency(t, p)), oracle::rand_by_pairs(t, p));
    EXPECT_EQ(adjusted_rand(contingency(t, p)), oracle::ars_by_pairs(t, p));
  }
}

TEST(MetricsProperty, HomogeneityCompletenessDuality) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(29);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.below(5));
      p[i] = static_cast<int>(rng.below(6));
    }
    EXPECT_EQ(homogeneity(contingency(t, p)), completeness(contingency(p, t)));
    EXPECT_EQ(completeness(contingency(t, p)), homogeneity(contingency(p, t)));
    const auto rep = evaluate(t, p);
    EXPECT_GE(rep.homogeneity, 0.0);
    EXPECT_LE(rep.homogeneity, 1.0);
    EXPECT_GE(rep.completeness, 0.0);
    EXPECT_LE(rep.completeness, 1.0);
    EXPECT_LE(rep.ars, 1.0);
    EXPECT_GE(rep.rand_score, 0.0);
    EXPECT_LE(rep.rand_score, 1.0);
  }
}

TEST(MetricsProperty, EntropyScoresMatchDirectFormula) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(25);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.below(4));
      p[i] = static_cast<int>(rng.below(4));
    }
    const auto [h, c] = oracle::homogeneity_completeness(t, p);
    const auto table = contingency(t, p);
    EXPECT_NEAR(homogeneity(table), h, 1e-12);
    EXPECT_NEAR(completeness(table), c, 1e-12);
  }
}

TEST(Distances, EuclideanAndSpectralAngle) {
  const std::vector<double> x{1, 2, 3};
  const std::vector<double> y{2, 4, 6};
  EXPECT_DOUBLE_EQ(euclidean(x, x), 0.0);
  EXPECT_NEAR(euclidean(x, y), std::sqrt(14.0), 1e-12);
  EXPECT_NEAR(spectral_angle(x, y), 0.0, 1e-7);
  EXPECT_NEAR(spectral_angle(std::vector<double>{1, 0}, std::vector<double>{0, 1}), M_PI / 2, 1e-12);
  EXPECT_NEAR(spectral_angle(std::vector<double>{1, 0}, std::vector<double>{-1, 0}), M_PI, 1e-12);
  EXPECT_THROW(spectral_angle(std::vector<double>{0, 0}, std::vector<double>{1, 0}), Error);
  EXPECT_THROW(euclidean(std::vector<double>{0}, std::vector<double>{1, 0}), Error);
}

TEST(Report, CsvAndJsonSchema) {
  const ClusteringReport r{0.5, 0.25, 0.125, 1.0};
  EXPECT_EQ(report_csv(r), "homogeneity,completeness,ars,rand_score\n0.5,0.25,0.125,1\n");
  EXPECT_EQ(report_json(r), "{\"homogeneity\": 0.5, \"completeness\": 0.25, \"ars\": 0.125, \"rand_score\": 1}");
}
