#ifndef CLIFFM_TESTS_ORACLES_HPP
#define CLIFFM_TESTS_ORACLES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "cliffm/analytics.hpp"

// Independent reference implementations used to check the library.
namespace cliffm::testing {

// O(n_pos * n_neg) pair counting, ties worth one half.
inline double brute_force_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

inline Eigen::VectorXd logit_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& b) {
  Eigen::VectorXd p = (-(X * b).array()).exp().unaryExpr([](double e) { return 1.0 / (1.0 + e); });
  return X.transpose() * (y - p);
}

// Maximises the log-likelihood by gradient ascent with Armijo backtracking;
// no second-order information, so it shares nothing with Newton-Raphson.
inline Eigen::VectorXd gradient_ascent_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             double tol = 1e-10, int max_iter = 2000000) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(X.cols());
  auto ll = [&](const Eigen::VectorXd& v) { return logit_log_likelihood(X, y, v); };
  double step = 1.0;
  double cur = ll(b);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd g = logit_gradient(X, y, b);
    const double gn2 = g.squaredNorm();
    if (std::sqrt(gn2) < tol) break;
    step *= 2.0;
    while (true) {
      Eigen::VectorXd cand = b + step * g;
      const double next = ll(cand);
      if (next >= cur + 1e-4 * step * gn2) {
        b = cand;
        cur = next;
        break;
      }
      step *= 0.5;
      if (step < 1e-20) return b;
    }
  }
  return b;
}

// Fixed 200-row, 3-covariate dataset with an intercept column.
struct LogitData {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

inline LogitData logit_dataset_200(std::uint64_t seed = 2024) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LogitData d{Eigen::MatrixXd(200, 4), Eigen::VectorXd(200)};
  const double beta[4] = {-0.4, 0.9, -0.6, 0.3};
  for (int i = 0; i < 200; ++i) {
    d.X(i, 0) = 1.0;
    for (int k = 1; k < 4; ++k) d.X(i, k) = n(rng);
    double eta = 0;
    for (int k = 0; k < 4; ++k) eta += beta[k] * d.X(i, k);
    d.y(i) = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  return d;
}

// Trajectories whose mortality depends on an injected jump in representation
// space; everything else is noise.
struct PlantedCohort {
  std::vector<TrajectoryFeatures> features;
  std::map<std::string, OutcomeLabels> outcomes;
};

inline PlantedCohort planted_jump_cohort(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, 0.05);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(5, 40);
  PlantedCohort c;
  for (std::size_t i = 0; i < n; ++i) {
    const int T = len(rng);
    Eigen::MatrixXd H(T, 8);
    H.row(0).setZero();
    for (int t = 1; t < T; ++t)
      for (int k = 0; k < 8; ++k) H(t, k) = H(t - 1, k) + step(rng);
    double jump = 0.0;
    if (u(rng) < 0.4) {
      jump = 0.5 + 3.0 * u(rng);
      const int at = 1 + static_cast<int>(u(rng) * (T - 1));
      for (int t = at; t < T; ++t) H(t, 0) += jump;
    }
    TrajectoryStats s = trajectory_stats(H);
    TrajectoryFeatures f{"S" + std::to_string(i), s.path_length, s.max_jump, 0.3 + 0.4 * u(rng)};
    OutcomeLabels l;
    l.hospitalization_id = f.hospitalization_id;
    l.same_admission_death = u(rng) < 1.0 / (1.0 + std::exp(2.0 - 1.2 * jump));
    c.outcomes[f.hospitalization_id] = l;
    c.features.push_back(f);
  }
  return c;
}

}  // namespace cliffm::testing

#endif  // CLIFFM_TESTS_ORACLES_HPP
