#ifndef CLIFFM_ANOMALY_HPP
#define CLIFFM_ANOMALY_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cliffm {

// Isolation forest. A node with split_dim < 0 is a leaf holding `size`
// subsample points.
struct IsoNode {
  int split_dim = -1;
  double split_value = 0.0;
  int left = -1;
  int right = -1;
  std::size_t size = 0;

  bool is_leaf() const { return split_dim < 0; }
  bool operator==(const IsoNode&) const = default;
};

struct IsoTree {
  std::vector<IsoNode> nodes;  // nodes[0] is the root
  bool operator==(const IsoTree&) const = default;
};

struct ForestOptions {
  std::size_t n_trees = 100;
  std::size_t psi = 256;
  std::uint64_t seed = 0;
};

struct AnomalyForest {
  std::size_t psi = 0;
  std::size_t dims = 0;
  std::size_t height_limit = 0;
  double c_psi = 0.0;
  std::uint64_t seed = 0;
  std::vector<IsoTree> trees;

  bool fitted() const { return !trees.empty(); }
  bool operator==(const AnomalyForest&) const = default;
};

// H(k) = 1 + 1/2 + ... + 1/k, H(0) = 0.
double harmonic(std::size_t k);
// Average unsuccessful-search path length of a BST on n points; c(0) = c(1) = 0.
double average_path_c(std::size_t n);

// Rows of X are points. Throws IntegrityError on fewer than 2 rows.
AnomalyForest fit_forest(const Eigen::MatrixXd& X, const ForestOptions& options = {});

double path_length(const IsoTree& tree, std::span<const double> x);

double score_from_mean_path(double mean_path, double c);
double anomaly_score(const AnomalyForest& forest, std::span<const double> x);
std::vector<double> anomaly_scores(const AnomalyForest& forest, const Eigen::MatrixXd& X);

// Flag = score > threshold.
std::vector<bool> label_outliers(std::span<const double> scores, double threshold = 0.5);
// Threshold flagging about `contamination` of `train_scores`.
double contamination_threshold(std::span<const double> train_scores, double contamination);

std::string forest_to_json(const AnomalyForest& forest);
AnomalyForest forest_from_json(const std::string& text);

struct ScoreRow {
  std::string hospitalization_id;
  double score = 0.0;
  bool outlier = false;
};

void write_scores_csv(const std::vector<ScoreRow>& rows, const std::filesystem::path& path,
                      const std::string& provenance = "");
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

}  // namespace cliffm

#endif  // CLIFFM_ANOMALY_HPP
