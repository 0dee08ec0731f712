#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cliffm/analytics.hpp"
#include "cliffm/anomaly.hpp"
#include "test_support.hpp"

using namespace cliffm;
using namespace cliffm::testing;

namespace {

// Standard-normal 2-D blob plus `frac` uniform points far from it.
std::pair<Eigen::MatrixXd, std::vector<std::uint8_t>> blob_with_outliers(std::size_t n, double frac,
                                                                        std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> radius(6.0, 10.0), angle(0.0, 2 * M_PI);
  const auto n_out = static_cast<std::size_t>(frac * static_cast<double>(n));
  Eigen::MatrixXd X(n + n_out, 2);
  std::vector<std::uint8_t> truth(n + n_out, 0);
  for (std::size_t i = 0; i < n; ++i) X.row(i) << nd(rng), nd(rng);
  for (std::size_t i = n; i < n + n_out; ++i) {
    double r = radius(rng), a = angle(rng);
    X.row(i) << r * std::cos(a), r * std::sin(a);
    truth[i] = 1;
  }
  return {X, truth};
}

}  // namespace

TEST(PathNormalizer, HarmonicAndC) {
  EXPECT_EQ(harmonic(0), 0.0);
  EXPECT_DOUBLE_EQ(harmonic(4), 1 + 0.5 + 1.0 / 3 + 0.25);
  EXPECT_EQ(average_path_c(0), 0.0);
  EXPECT_EQ(average_path_c(1), 0.0);
  EXPECT_NEAR(average_path_c(5), 2 * harmonic(4) - 2.0 * 4 / 5, 1e-15);
  EXPECT_NEAR(average_path_c(5), 2.5667, 1e-4);
}

TEST(PathLength, HandBuiltTrees) {
  IsoTree leaf{{IsoNode{-1, 0, -1, -1, 1}}};
  std::vector<double> x{0.0};
  EXPECT_EQ(path_length(leaf, x), 0.0);

  // Depth-3 chain on dim 0, always going left for x = 0.
  IsoTree chain;
  chain.nodes = {{0, 1.0, 1, 2, 0}, {0, 0.5, 3, 4, 0}, {-1, 0, -1, -1, 1}, {0, 0.2, 5, 6, 0},
                 {-1, 0, -1, -1, 1}, {-1, 0, -1, -1, 1}, {-1, 0, -1, -1, 5}};
  EXPECT_EQ(path_length(chain, x), 3.0);
  // Depth 2 leaf holding 5 points.
  IsoTree two;
  two.nodes = {{0, 1.0, 1, 2, 0}, {0, 0.5, 3, 4, 0}, {-1, 0, -1, -1, 1}, {-1, 0, -1, -1, 5},
               {-1, 0, -1, -1, 1}};
  EXPECT_NEAR(path_length(two, x), 2 + average_path_c(5), 1e-15);
  EXPECT_NEAR(path_length(two, x), 4.567, 1e-3);
}

TEST(Score, Formula) {
  const double c = average_path_c(256);
  EXPECT_EQ(score_from_mean_path(c, c), 0.5);
  EXPECT_EQ(score_from_mean_path(2 * c, c), 0.25);
  EXPECT_NEAR(score_from_mean_path(1e-12, c), 1.0, 1e-12);
}

TEST(Forest, FitErrorsAndDeterminism) {
  EXPECT_THROW(fit_forest(Eigen::MatrixXd::Zero(1, 2)), IntegrityError);
  EXPECT_EQ(ForestOptions{}.n_trees, 100u);
  auto [X, truth] = blob_with_outliers(300, 0.05, 1);
  AnomalyForest a = fit_forest(X, {50, 64, 7}), b = fit_forest(X, {50, 64, 7});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.trees.size(), 50u);
  EXPECT_EQ(a.height_limit, 6u);
  EXPECT_NE(fit_forest(X, {50, 64, 8}), a);
  EXPECT_EQ(forest_from_json(forest_to_json(a)), a);
}

TEST(Forest, PsiLargerThanDataIsClamped) {
  Eigen::MatrixXd X(10, 1);
  for (int i = 0; i < 10; ++i) X(i, 0) = i;
  AnomalyForest f = fit_forest(X, {10, 256, 1});
  EXPECT_EQ(f.psi, 10u);
  for (double s : anomaly_scores(f, X)) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Forest, SeparatesBlobFromFarOutliers) {
  auto [X, truth] = blob_with_outliers(2000, 0.05, 3);
  AnomalyForest f = fit_forest(X, {100, 256, 11});
  auto scores = anomaly_scores(f, X);
  for (double s : scores) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  EXPECT_GE(roc_auc(scores, truth), 0.9);
}

TEST(Forest, ScoreGrowsWithDistanceOnALine) {
  Rng rng(5);
  std::normal_distribution<double> nd(0.0, 0.5);
  Eigen::MatrixXd X(500, 1);
  for (int i = 0; i < 500; ++i) X(i, 0) = nd(rng);
  AnomalyForest f = fit_forest(X, {100, 256, 2});
  std::vector<double> dist, score;
  for (int k = 0; k < 100; ++k) {
    double x = 0.015 * k;
    dist.push_back(x);
    score.push_back(anomaly_score(f, std::span<const double>(&x, 1)));
  }
  // Spearman on untied distances: correlation of the score ranks with 0..99.
  std::vector<std::size_t> order(100);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });
  std::vector<double> rank(100);
  for (std::size_t i = 0; i < 100;) {
    std::size_t j = i;
    while (j + 1 < 100 && score[order[j + 1]] == score[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  Eigen::Map<Eigen::VectorXd> r(rank.data(), 100);
  Eigen::VectorXd idx = Eigen::VectorXd::LinSpaced(100, 0, 99);
  Eigen::VectorXd rc = r.array() - r.mean(), ic = idx.array() - idx.mean();
  EXPECT_GE(rc.dot(ic) / (rc.norm() * ic.norm()), 0.95);
}

TEST(Labels, StrictThresholdAndContamination) {
  std::vector<double> s{0.4, 0.5, 0.6};
  EXPECT_EQ(label_outliers(s), (std::vector<bool>{false, false, true}));
  EXPECT_EQ(label_outliers(s, 0.0), (std::vector<bool>{true, true, true}));
  std::vector<double> train(1000);
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.3, 0.7);
  for (auto& x : train) x = u(rng);
  double t = contamination_threshold(train, 0.096);
  auto flags = label_outliers(train, t);
  double frac = std::count(flags.begin(), flags.end(), true) / 1000.0;
  EXPECT_NEAR(frac, 0.096, 0.002);
}

TEST(ScoresCsv, RoundTrip) {
  TempDir dir;
  std::vector<ScoreRow> rows{{"H1", 0.41, false}, {"H2", 0.73, true}};
  write_scores_csv(rows, dir / "s.csv", "prov");
  auto back = read_scores_csv(dir / "s.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].hospitalization_id, "H2");
  EXPECT_EQ(back[1].score, 0.73);
  EXPECT_TRUE(back[1].outlier);
}
