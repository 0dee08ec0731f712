#include "cliffm/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cliffm/common.hpp"
#include "cliffm/csv.hpp"
#include "cliffm/tokenizer.hpp"
#include "json.hpp"

namespace cliffm {

namespace fs = std::filesystem;

double harmonic(std::size_t k) {
  double h = 0.0;
  for (std::size_t j = k; j >= 1; --j) h += 1.0 / static_cast<double>(j);
  return h;
}

double average_path_c(std::size_t n) {
  if (n <= 1) return 0.0;
  const double m = static_cast<double>(n);
  return 2.0 * harmonic(n - 1) - 2.0 * (m - 1.0) / m;
}

namespace {

struct TreeBuilder {
  const Eigen::MatrixXd& X;
  std::size_t height_limit;
  Rng& rng;
  IsoTree tree;

  int build(std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end,
            std::size_t depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(IsoNode{});
    tree.nodes[id].size = end - begin;
    if (depth >= height_limit || end - begin <= 1) return id;

    std::vector<int> candidates;
    std::vector<std::pair<double, double>> ranges(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index d = 0; d < X.cols(); ++d) {
      double lo = X(idx[begin], d), hi = lo;
      for (std::size_t i = begin + 1; i < end; ++i) {
        lo = std::min(lo, X(idx[i], d));
        hi = std::max(hi, X(idx[i], d));
      }
      ranges[static_cast<std::size_t>(d)] = {lo, hi};
      if (hi > lo) candidates.push_back(static_cast<int>(d));
    }
    if (candidates.empty()) return id;

    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const int dim = candidates[pick(rng)];
    const auto [lo, hi] = ranges[static_cast<std::size_t>(dim)];
    std::uniform_real_distribution<double> uniform(lo, hi);
    double split = uniform(rng);
    while (!(split > lo && split < hi)) split = uniform(rng);

    auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                              idx.begin() + static_cast<std::ptrdiff_t>(end),
                              [&](Eigen::Index r) { return X(r, dim) < split; });
    const auto m = static_cast<std::size_t>(mid - idx.begin());
    const int left = build(idx, begin, m, depth + 1);
    const int right = build(idx, m, end, depth + 1);
    IsoNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.split_dim = dim;
    node.split_value = split;
    node.left = left;
    node.right = right;
    return id;
  }
};

}  // namespace

AnomalyForest fit_forest(const Eigen::MatrixXd& X, const ForestOptions& options) {
  if (X.rows() < 2)
    throw IntegrityError("isolation forest needs at least 2 rows, got " +
                         std::to_string(X.rows()));
  if (options.n_trees < 1) throw ConfigError("isolation forest: n_trees must be >= 1");
  if (options.psi < 2) throw ConfigError("isolation forest: psi must be >= 2");
  if (!X.allFinite()) throw NumericError("isolation forest: non-finite input");

  AnomalyForest f;
  f.psi = std::min<std::size_t>(options.psi, static_cast<std::size_t>(X.rows()));
  f.dims = static_cast<std::size_t>(X.cols());
  f.height_limit = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(f.psi))));
  f.c_psi = average_path_c(f.psi);
  f.seed = options.seed;

  std::vector<Eigen::Index> all(static_cast<std::size_t>(X.rows()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  for (std::size_t t = 0; t < options.n_trees; ++t) {
    Rng rng(derive_seed(options.seed, t));
    // Partial Fisher-Yates: the first psi entries are a uniform subsample.
    std::vector<Eigen::Index> idx = all;
    for (std::size_t i = 0; i < f.psi; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(f.psi);
    TreeBuilder b{X, f.height_limit, rng, {}};
    b.build(idx, 0, idx.size(), 0);
    f.trees.push_back(std::move(b.tree));
  }
  return f;
}

double path_length(const IsoTree& tree, std::span<const double> x) {
  if (tree.nodes.empty()) throw IntegrityError("path_length: empty tree");
  std::size_t node = 0;
  double depth = 0.0;
  while (!tree.nodes[node].is_leaf()) {
    const IsoNode& n = tree.nodes[node];
    if (static_cast<std::size_t>(n.split_dim) >= x.size())
      throw IntegrityError("path_length: point has " + std::to_string(x.size()) +
                           " dimensions, tree splits on dimension " +
                           std::to_string(n.split_dim));
    node = static_cast<std::size_t>(x[static_cast<std::size_t>(n.split_dim)] < n.split_value
                                        ? n.left
                                        : n.right);
    depth += 1.0;
  }
  return depth + average_path_c(tree.nodes[node].size);
}

double score_from_mean_path(double mean_path, double c) {
  return std::exp2(-mean_path / c);
}

double anomaly_score(const AnomalyForest& forest, std::span<const double> x) {
  if (!forest.fitted()) throw IntegrityError("anomaly_score: forest is not fitted");
  if (x.size() != forest.dims)
    throw IntegrityError("anomaly_score: expected " + std::to_string(forest.dims) +
                         " dimensions, got " + std::to_string(x.size()));
  double total = 0.0;
  for (const auto& t : forest.trees) total += path_length(t, x);
  return score_from_mean_path(total / static_cast<double>(forest.trees.size()), forest.c_psi);
}

std::vector<double> anomaly_scores(const AnomalyForest& forest, const Eigen::MatrixXd& X) {
  std::vector<double> out(static_cast<std::size_t>(X.rows()));
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index d = 0; d < X.cols(); ++d) row[static_cast<std::size_t>(d)] = X(i, d);
    out[static_cast<std::size_t>(i)] = anomaly_score(forest, row);
  }
  return out;
}

std::vector<bool> label_outliers(std::span<const double> scores, double threshold) {
  std::vector<bool> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > threshold;
  return out;
}

double contamination_threshold(std::span<const double> train_scores, double contamination) {
  if (train_scores.empty()) throw IntegrityError("contamination threshold: no scores");
  if (!(contamination >= 0.0 && contamination <= 1.0))
    throw ConfigError("contamination must be in [0, 1]");
  std::vector<double> sorted(train_scores.begin(), train_scores.end());
  std::sort(sorted.begin(), sorted.end());
  return empirical_quantile(sorted, 1.0 - contamination);
}

std::string forest_to_json(const AnomalyForest& f) {
  nlohmann::ordered_json j;
  j["psi"] = f.psi;
  j["dims"] = f.dims;
  j["height_limit"] = f.height_limit;
  j["c_psi"] = f.c_psi;
  j["seed"] = f.seed;
  j["trees"] = nlohmann::ordered_json::array();
  for (const auto& t : f.trees) {
    nlohmann::ordered_json jt;
    std::vector<int> dim, left, right;
    std::vector<double> value;
    std::vector<std::size_t> size;
    for (const auto& n : t.nodes) {
      dim.push_back(n.split_dim);
      value.push_back(n.split_value);
      left.push_back(n.left);
      right.push_back(n.right);
      size.push_back(n.size);
    }
    jt["split_dim"] = dim;
    jt["split_value"] = value;
    jt["left"] = left;
    jt["right"] = right;
    jt["size"] = size;
    j["trees"].push_back(std::move(jt));
  }
  return j.dump();
}

AnomalyForest forest_from_json(const std::string& text) {
  AnomalyForest f;
  try {
    auto j = nlohmann::json::parse(text);
    f.psi = j.at("psi").get<std::size_t>();
    f.dims = j.at("dims").get<std::size_t>();
    f.height_limit = j.at("height_limit").get<std::size_t>();
    f.c_psi = j.at("c_psi").get<double>();
    f.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jt : j.at("trees")) {
      auto dim = jt.at("split_dim").get<std::vector<int>>();
      auto value = jt.at("split_value").get<std::vector<double>>();
      auto left = jt.at("left").get<std::vector<int>>();
      auto right = jt.at("right").get<std::vector<int>>();
      auto size = jt.at("size").get<std::vector<std::size_t>>();
      if (value.size() != dim.size() || left.size() != dim.size() ||
          right.size() != dim.size() || size.size() != dim.size())
        throw ParseError("forest: ragged node arrays");
      IsoTree t;
      for (std::size_t i = 0; i < dim.size(); ++i)
        t.nodes.push_back({dim[i], value[i], left[i], right[i], size[i]});
      f.trees.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("forest: ") + e.what());
  }
  return f;
}

void write_scores_csv(const std::vector<ScoreRow>& rows, const fs::path& path,
                      const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  if (!provenance.empty()) out << "# " << provenance << '\n';
  write_csv_row(out, {"hospitalization_id", "score", "flag"});
  for (const auto& r : rows)
    write_csv_row(out, {r.hospitalization_id, format_double(r.score), r.outlier ? "1" : "0"});
}

std::vector<ScoreRow> read_scores_csv(const fs::path& path) {
  CsvTable t = read_csv(path);
  const std::string ctx = path.string();
  auto id = t.column("hospitalization_id", ctx), sc = t.column("score", ctx),
       fl = t.column("flag", ctx);
  std::vector<ScoreRow> out;
  for (const auto& r : t.rows) out.push_back({r[id], parse_double(r[sc]), r[fl] == "1"});
  return out;
}

}  // namespace cliffm
