#include "cliffm/analytics.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cliffm/csv.hpp"
#include "json.hpp"

namespace cliffm {

TrajectoryStats trajectory_stats(const Eigen::MatrixXd& H) {
  if (H.rows() == 0) throw IntegrityError("trajectory_stats: empty trajectory");
  TrajectoryStats s;
  for (Eigen::Index t = 1; t < H.rows(); ++t) {
    double step = (H.row(t) - H.row(t - 1)).norm();
    s.path_length += step;
    s.max_jump = std::max(s.max_jump, step);
  }
  return s;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double chi2_survival(double x, double df) {
  if (df <= 0) return std::numeric_limits<double>::quiet_NaN();
  if (x <= 0) return 1.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

namespace {

double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

void check_conditioning(const Eigen::MatrixXd& A, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  double hi = ev.cwiseAbs().maxCoeff();
  if (!(hi > 0) || ev.minCoeff() <= 1e-12 * hi)
    throw SingularMatrixError(std::string(what) + " is singular (eigenvalue ratio " +
                              format_double(hi > 0 ? ev.minCoeff() / hi : 0.0) + ")");
}

}  // namespace

double logit_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    ll += y(i) * log_sigmoid(eta(i)) + (1.0 - y(i)) * log_sigmoid(-eta(i));
  return ll;
}

double LogitFit::predict(const Eigen::VectorXd& x) const { return sigmoid(x.dot(coef)); }

LogitFit fit_logit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       std::vector<std::string> names, const LogitOptions& options) {
  const Eigen::Index n = X.rows(), k = X.cols();
  if (n == 0 || k == 0) throw IntegrityError("logit: empty design");
  if (y.size() != n) throw IntegrityError("logit: design and response lengths differ");
  if (!X.allFinite()) throw NumericError("logit: non-finite design entry");
  for (Eigen::Index i = 0; i < n; ++i)
    if (y(i) != 0.0 && y(i) != 1.0) throw IntegrityError("logit: response must be 0/1");
  const double ybar = y.mean();
  if (ybar == 0.0 || ybar == 1.0)
    throw IntegrityError("logit: response has a single class");
  if (names.empty())
    for (Eigen::Index j = 0; j < k; ++j) names.push_back(j == 0 ? "const" : "x" + std::to_string(j));
  if (static_cast<Eigen::Index>(names.size()) != k)
    throw IntegrityError("logit: name count differs from column count");

  Eigen::Index intercept = -1;
  for (Eigen::Index j = 0; j < k; ++j) {
    const bool constant = (X.col(j).array() == X(0, j)).all();
    if (constant && X(0, j) == 1.0 && intercept < 0) {
      intercept = j;
    } else if (constant) {
      throw SingularMatrixError("logit: column '" + names[static_cast<std::size_t>(j)] +
                                "' has zero variance");
    }
  }

  if (options.l2 < 0) throw ConfigError("logit: l2 penalty must be non-negative");
  // Ridge weight per coefficient; the intercept is never penalized.
  Eigen::VectorXd pen = Eigen::VectorXd::Constant(k, options.l2);
  if (intercept >= 0) pen(intercept) = 0.0;
  {
    Eigen::MatrixXd xtx = X.transpose() * X;
    xtx.diagonal() += pen;
    check_conditioning(xtx, "logit: design cross-product");
  }
  auto objective = [&](const Eigen::VectorXd& b) {
    return logit_log_likelihood(X, y, b) - 0.5 * b.cwiseProduct(pen).dot(b);
  };

  LogitFit fit;
  fit.names = std::move(names);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  double ll = objective(beta);
  Eigen::MatrixXd info(k, k);
  for (int iter = 0;; ++iter) {
    Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd p = eta.unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd w = (p.array() * (1.0 - p.array())).matrix();
    Eigen::VectorXd grad = X.transpose() * (y - p) - pen.cwiseProduct(beta);
    info.noalias() = X.transpose() * w.asDiagonal() * X;
    info.diagonal() += pen;
    fit.iterations = iter;
    if (grad.norm() < options.grad_tol) {
      fit.converged = true;
      break;
    }
    if (iter >= options.max_iter) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw SingularMatrixError("logit: information matrix is singular");
    Eigen::VectorXd step = ldlt.solve(grad);
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double ll_next = objective(next);
    int halvings = 0;
    while (!(ll_next >= ll) && halvings < 40) {
      t *= 0.5;
      next = beta + t * step;
      ll_next = objective(next);
      ++halvings;
    }
    if (!(ll_next >= ll)) {
      // No representable ascent left: the iterate is at the optimum to
      // machine precision.
      fit.converged = grad.norm() < 1e-6;
      break;
    }
    const bool stalled = (next - beta).norm() <= 1e-15 * (1.0 + beta.norm());
    beta = next;
    ll = ll_next;
    if (beta.cwiseAbs().maxCoeff() > options.separation_limit)
      throw SeparationError("logit: coefficient exceeded " + format_double(options.separation_limit) +
                            " (perfect or quasi-complete separation)");
    if (stalled) {
      fit.converged = true;
      fit.iterations = iter + 1;
      Eigen::VectorXd pf = (X * beta).unaryExpr([](double v) { return sigmoid(v); });
      info.noalias() = X.transpose() * (pf.array() * (1.0 - pf.array())).matrix().asDiagonal() * X;
      info.diagonal() += pen;
      break;
    }
  }
  check_conditioning(info, "logit: information matrix");

  Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  fit.coef = beta;
  fit.se = cov.diagonal().cwiseSqrt();
  fit.z = beta.cwiseQuotient(fit.se);
  fit.p_value = fit.z.unaryExpr([](double v) { return normal_two_sided_p(v); });
  constexpr double kZ975 = 1.959963984540054;
  fit.ci_low = beta - kZ975 * fit.se;
  fit.ci_high = beta + kZ975 * fit.se;
  fit.log_likelihood = logit_log_likelihood(X, y, beta);
  const double nd = static_cast<double>(n);
  fit.ll_null = nd * (ybar * std::log(ybar) + (1.0 - ybar) * std::log1p(-ybar));
  fit.pseudo_r2 = 1.0 - fit.log_likelihood / fit.ll_null;
  fit.n_obs = static_cast<std::size_t>(n);
  fit.df_model = static_cast<std::size_t>(k - (intercept >= 0 ? 1 : 0));
  fit.df_resid = static_cast<std::size_t>(n - k);
  fit.llr = 2.0 * (fit.log_likelihood - fit.ll_null);
  fit.llr_p_value = chi2_survival(fit.llr, static_cast<double>(fit.df_model));
  return fit;
}

std::string format_coef_row(double coef, double z, double p) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.3e, z=%.3f, p=%.3f", coef, z, p);
  return buf;
}

std::string render_logit_table(const LogitFit& f, const std::string& dep_var) {
  const std::string rule(78, '=');
  const std::string thin(78, '-');
  std::ostringstream o;
  char buf[160];
  auto line = [&](const char* lk, const std::string& lv, const char* rk, const std::string& rv) {
    std::snprintf(buf, sizeof buf, "%-16s%22s   %-18s%20s\n", lk, lv.c_str(), rk, rv.c_str());
    o << buf;
  };
  auto num = [](const char* fmt, double v) {
    char b[48];
    std::snprintf(b, sizeof b, fmt, v);
    return std::string(b);
  };
  o << "                           Logit Regression Results\n" << rule << '\n';
  line("Dep. Variable:", dep_var, "No. Observations:", std::to_string(f.n_obs));
  line("Model:", "Logit", "Df Residuals:", std::to_string(f.df_resid));
  line("Method:", "MLE", "Df Model:", std::to_string(f.df_model));
  line("", "", "Pseudo R-squ.:", num("%.5f", f.pseudo_r2));
  line("", "", "Log-Likelihood:", num("%.5g", f.log_likelihood));
  line("converged:", f.converged ? "True" : "False", "LL-Null:", num("%.5g", f.ll_null));
  line("", "", "LLR p-value:", num("%.4g", f.llr_p_value));
  o << rule << '\n';
  std::snprintf(buf, sizeof buf, "%-20s%11s%11s%10s%9s%9s%9s\n", "", "coef", "std err", "z",
                "P>|z|", "[0.025", "0.975]");
  o << buf << thin << '\n';
  for (Eigen::Index j = 0; j < f.coef.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%-20s%11.3e%11.3e%10.3f%9.3f%9.3g%9.3g\n",
                  f.names[static_cast<std::size_t>(j)].c_str(), f.coef(j), f.se(j), f.z(j),
                  f.p_value(j), f.ci_low(j), f.ci_high(j));
    o << buf;
  }
  o << rule << '\n';
  return o.str();
}

std::string logit_table_csv(const LogitFit& f) {
  std::ostringstream o;
  write_csv_row(o, {"term", "coef", "std_err", "z", "p_value", "ci_low", "ci_high", "summary"});
  for (Eigen::Index j = 0; j < f.coef.size(); ++j)
    write_csv_row(o, {f.names[static_cast<std::size_t>(j)], format_double(f.coef(j)),
                      format_double(f.se(j)), format_double(f.z(j)), format_double(f.p_value(j)),
                      format_double(f.ci_low(j)), format_double(f.ci_high(j)),
                      format_coef_row(f.coef(j), f.z(j), f.p_value(j))});
  return o.str();
}

LogitFit dynamics_regression(const std::vector<TrajectoryFeatures>& features,
                             const std::map<std::string, OutcomeLabels>& outcomes,
                             Outcome outcome) {
  std::vector<const TrajectoryFeatures*> rows;
  std::vector<double> ys;
  for (const auto& f : features) {
    auto it = outcomes.find(f.hospitalization_id);
    if (it == outcomes.end())
      throw IntegrityError("dynamics: no outcome labels for " + f.hospitalization_id);
    auto label = outcome_label(it->second, outcome);
    if (!label) continue;
    rows.push_back(&f);
    ys.push_back(*label ? 1.0 : 0.0);
  }
  if (rows.empty())
    throw IntegrityError(std::string("dynamics: no observations remain for ") +
                         outcome_display_name(outcome) + " after the 24-hour restriction");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    X(r, 0) = 1.0;
    X(r, 1) = rows[i]->path_length;
    X(r, 2) = rows[i]->max_jump;
    X(r, 3) = rows[i]->anomaly_score;
  }
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return fit_logit_mle(X, y, {"Intercept", "Trajectory Length", "Maximum Jump", "Anomaly Score"});
}

std::optional<double> try_roc_auc(std::span<const double> scores,
                                  std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw IntegrityError("roc_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U, kept integral until the final division.
  std::uint64_t u2 = 0, neg_below = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? gp : gn) += 1;
      ++j;
    }
    u2 += gp * (2 * neg_below + gn);
    neg_below += gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return static_cast<double>(u2) / static_cast<double>(2 * pos * neg);
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  auto a = try_roc_auc(scores, labels);
  if (!a) throw IntegrityError("roc_auc: labels contain a single class");
  return *a;
}

std::array<AucCell, 3> subgroup_report(std::span<const double> predictions,
                                       std::span<const std::optional<bool>> labels,
                                       const std::vector<bool>& outlier_flags) {
  if (predictions.size() != labels.size() || labels.size() != outlier_flags.size())
    throw IntegrityError("subgroup_report: misaligned inputs");
  std::array<AucCell, 3> out;
  for (Subset s : kAllSubsets) {
    std::vector<double> sc;
    std::vector<std::uint8_t> lb;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (!labels[i]) continue;
      if (s == Subset::kInliers && outlier_flags[i]) continue;
      if (s == Subset::kOutliers && !outlier_flags[i]) continue;
      sc.push_back(predictions[i]);
      lb.push_back(*labels[i] ? 1 : 0);
    }
    AucCell& c = out[static_cast<std::size_t>(s)];
    c.n = sc.size();
    c.positives = static_cast<std::size_t>(std::count(lb.begin(), lb.end(), 1));
    c.auc = try_roc_auc(sc, lb);
  }
  return out;
}

std::string auc_grids_csv(const std::vector<AucGrid>& grids, const std::string& provenance) {
  std::ostringstream o;
  if (!provenance.empty()) o << "# " << provenance << '\n';
  write_csv_row(o, {"site", "subset", "outcome", "auc", "n", "positives"});
  for (const auto& g : grids)
    for (Subset s : kAllSubsets)
      for (Outcome oc : kAllOutcomes) {
        const AucCell& c = g.cells[static_cast<std::size_t>(s)][static_cast<std::size_t>(oc)];
        write_csv_row(o, {g.site, subset_name(s), outcome_display_name(oc),
                          c.auc ? format_double(*c.auc) : "undefined", std::to_string(c.n),
                          std::to_string(c.positives)});
      }
  return o.str();
}

std::string auc_grid_json(const AucGrid& g) {
  nlohmann::ordered_json j;
  j["site"] = g.site;
  for (Subset s : kAllSubsets) {
    nlohmann::ordered_json row;
    for (Outcome oc : kAllOutcomes) {
      const AucCell& c = g.cells[static_cast<std::size_t>(s)][static_cast<std::size_t>(oc)];
      row[outcome_display_name(oc)] = c.auc ? nlohmann::ordered_json(*c.auc) : nullptr;
    }
    j[subset_name(s)] = row;
  }
  return j.dump(2);
}

Pca2d pca_2d(const Eigen::MatrixXd& M) {
  if (M.rows() < 2 || M.cols() < 2)
    throw IntegrityError("pca: need at least 2 rows and 2 columns");
  Pca2d out;
  out.mean = M.colwise().mean().transpose();
  Eigen::MatrixXd C = M.rowwise() - out.mean.transpose();
  Eigen::MatrixXd cov = (C.transpose() * C) / static_cast<double>(M.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");
  const auto& ev = es.eigenvalues();  // ascending
  const Eigen::Index d = ev.size();
  if (!(ev(d - 1) > 0)) throw NumericError("pca: input has rank 0");
  out.components.resize(M.cols(), 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components.col(c) = v;
    out.explained_variance(c) = std::max(0.0, ev(d - 1 - c));
  }
  out.explained_ratio = out.explained_variance / ev.cwiseMax(0.0).sum();
  out.projections = C * out.components;
  return out;
}

CurveTable realtime_curves(const PrefixPredictor& predictor,
                           const std::vector<TokenTimeline>& timelines,
                           std::size_t n_per_class, std::uint64_t seed) {
  CurveTable table;
  Rng rng(seed);
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < timelines.size(); ++i)
      if (static_cast<int>(timelines[i].labels.same_admission_death) == cls && timelines[i].size() > 0)
        pool.push_back(i);
    if (pool.size() < n_per_class)
      table.warnings.push_back("mortality=" + std::to_string(cls) + ": only " +
                               std::to_string(pool.size()) + " stays available, using all");
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), n_per_class));
    std::sort(pool.begin(), pool.end());

    std::vector<std::vector<double>> by_index;
    for (std::size_t i : pool) {
      table.sampled_ids.push_back(timelines[i].hospitalization_id);
      std::vector<double> probs = predictor(timelines[i]);
      if (probs.size() != timelines[i].size())
        throw IntegrityError("realtime_curves: predictor returned " + std::to_string(probs.size()) +
                             " values for a timeline of " + std::to_string(timelines[i].size()));
      if (by_index.size() < probs.size()) by_index.resize(probs.size());
      for (std::size_t t = 0; t < probs.size(); ++t) by_index[t].push_back(probs[t]);
    }
    for (std::size_t t = 0; t < by_index.size(); ++t) {
      auto& v = by_index[t];
      std::sort(v.begin(), v.end());
      CurvePoint p;
      p.mortality = cls;
      p.token_index = t + 1;
      p.n_stays = v.size();
      p.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      p.q025 = empirical_quantile(v, 0.025);
      p.median = empirical_quantile(v, 0.5);
      p.q975 = empirical_quantile(v, 0.975);
      table.points.push_back(p);
    }
  }
  return table;
}

std::string curves_csv(const std::vector<CurveTable>& tables, const std::string& provenance) {
  std::ostringstream o;
  if (!provenance.empty()) o << "# " << provenance << '\n';
  write_csv_row(o, {"model", "mortality", "token_index", "n_stays", "mean", "q025", "median", "q975"});
  for (const auto& t : tables)
    for (const auto& p : t.points)
      write_csv_row(o, {t.model, std::to_string(p.mortality), std::to_string(p.token_index),
                        std::to_string(p.n_stays), format_double(p.mean), format_double(p.q025),
                        format_double(p.median), format_double(p.q975)});
  return o.str();
}

}  // namespace cliffm
