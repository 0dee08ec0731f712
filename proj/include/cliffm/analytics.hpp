#ifndef CLIFFM_ANALYTICS_HPP
#define CLIFFM_ANALYTICS_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cliffm/clif.hpp"
#include "cliffm/tokenizer.hpp"

namespace cliffm {

struct TrajectoryStats {
  double path_length = 0.0;
  double max_jump = 0.0;
};

// Sum and maximum of the L2 steps between consecutive rows.
TrajectoryStats trajectory_stats(const Eigen::MatrixXd& H);

struct TrajectoryFeatures {
  std::string hospitalization_id;
  double path_length = 0.0;
  double max_jump = 0.0;
  double anomaly_score = 0.0;
};

struct LogitOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;
  double separation_limit = 50.0;
  double l2 = 0.0;  // ridge penalty 0.5*l2*|beta|^2 on non-intercept terms
};

struct LogitFit {
  std::vector<std::string> names;
  Eigen::VectorXd coef, se, z, p_value, ci_low, ci_high;
  double log_likelihood = 0.0;
  double ll_null = 0.0;
  double pseudo_r2 = 0.0;
  double llr = 0.0;
  double llr_p_value = 0.0;
  std::size_t n_obs = 0;
  std::size_t df_model = 0;
  std::size_t df_resid = 0;
  int iterations = 0;
  bool converged = false;

  double predict(const Eigen::VectorXd& x) const;  // x includes the intercept entry
};

double normal_two_sided_p(double z);
double chi2_survival(double x, double df);

// Unpenalized logistic MLE by Newton-Raphson with step halving. X carries its
// own intercept column. Throws IntegrityError (single class / shape),
// SingularMatrixError, SeparationError.
LogitFit fit_logit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       std::vector<std::string> names = {}, const LogitOptions& options = {});

double logit_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& beta);

// "4.839e-05, z=18.748, p=0.000"
std::string format_coef_row(double coef, double z, double p);
std::string render_logit_table(const LogitFit& fit, const std::string& dep_var);
std::string logit_table_csv(const LogitFit& fit);

// Design [1, path_length, max_jump, anomaly_score]; stays whose outcome is
// excluded by the 24-hour restriction are dropped.
LogitFit dynamics_regression(const std::vector<TrajectoryFeatures>& features,
                             const std::map<std::string, OutcomeLabels>& outcomes,
                             Outcome outcome);

// Mann-Whitney AUC, ties count one half. Throws IntegrityError when a class
// is missing.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
std::optional<double> try_roc_auc(std::span<const double> scores,
                                  std::span<const std::uint8_t> labels);

struct AucCell {
  std::optional<double> auc;  // nullopt when the subset has one class
  std::size_t n = 0;
  std::size_t positives = 0;
};

// cells[subset][outcome]
struct AucGrid {
  std::string site;
  std::array<std::array<AucCell, 4>, 3> cells{};
};

// One outcome column of the grid. `labels` nullopt entries are excluded.
std::array<AucCell, 3> subgroup_report(std::span<const double> predictions,
                                       std::span<const std::optional<bool>> labels,
                                       const std::vector<bool>& outlier_flags);

std::string auc_grids_csv(const std::vector<AucGrid>& grids, const std::string& provenance);
std::string auc_grid_json(const AucGrid& grid);

struct Pca2d {
  Eigen::MatrixXd projections;   // n x 2
  Eigen::MatrixXd components;    // d x 2, unit columns
  Eigen::Vector2d explained_variance;
  Eigen::Vector2d explained_ratio;
  Eigen::VectorXd mean;
};

Pca2d pca_2d(const Eigen::MatrixXd& M);

struct CurvePoint {
  int mortality = 0;
  std::size_t token_index = 0;  // prefix length, 1-based
  std::size_t n_stays = 0;
  double mean = 0.0;
  double q025 = 0.0;
  double median = 0.0;
  double q975 = 0.0;
};

struct CurveTable {
  std::string model;
  std::vector<CurvePoint> points;
  std::vector<std::string> sampled_ids;
  std::vector<std::string> warnings;
};

// predictor(t) returns one probability per prefix length 1..t.size().
using PrefixPredictor = std::function<std::vector<double>(const TokenTimeline&)>;

CurveTable realtime_curves(const PrefixPredictor& predictor,
                           const std::vector<TokenTimeline>& timelines,
                           std::size_t n_per_class, std::uint64_t seed);

std::string curves_csv(const std::vector<CurveTable>& tables, const std::string& provenance);

}  // namespace cliffm

#endif  // CLIFFM_ANALYTICS_HPP
