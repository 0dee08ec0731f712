#include "cliffm/seqmodel.hpp"

#include <cmath>
#include <numbers>

#include "json.hpp"

namespace cliffm {

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("model: vocab_size must be positive");
  if (d_model < 1 || n_layers < 0 || n_heads < 1 || d_ff < 1 || max_context < 1)
    throw ConfigError("model: non-positive dimension");
  if (d_model % n_heads != 0)
    throw ConfigError("model: d_model (" + std::to_string(d_model) +
                      ") not divisible by n_heads (" + std::to_string(n_heads) +
                      ")");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError("model: dropout must be in [0, 1)");
  if (positions != "learned" && positions != "alibi")
    throw ConfigError("model: positions must be \"learned\" or \"alibi\", got \"" + positions + "\"");
}

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["max_context"] = c.max_context;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["positions"] = c.positions;
  j["tie_embeddings"] = c.tie_embeddings;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_context = j.value("max_context", c.max_context);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  c.positions = j.value("positions", c.positions);
  c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
  return c;
}

template <typename S>
std::size_t ModelParams<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename S>
ModelParams<S> init_model(const ModelConfig& config) {
  config.validate();
  ModelParams<S> p;
  p.config = config;
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int d = config.d_model;
  auto gaussian = [&](int rows, int cols, double std) {
    Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<S>(std * normal(rng));
    return m;
  };
  auto ones = [](int cols) { return Matrix<S>::Ones(1, cols).eval(); };
  auto add = [&](std::string name, Matrix<S> m) {
    p.names.push_back(std::move(name));
    p.tensors.push_back(std::move(m));
  };
  const double proj_std = 0.02 / std::sqrt(2.0 * std::max(1, config.n_layers));
  add("token_embedding", gaussian(config.vocab_size, d, 0.02));
  // ALiBi keeps an empty position table so tensor indices stay fixed.
  add("position_embedding", gaussian(config.alibi() ? 0 : config.max_context, d, 0.02));
  for (int l = 0; l < config.n_layers; ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    add(pre + "attn_norm", ones(d));
    add(pre + "wq", gaussian(d, d, 0.02));
    add(pre + "wk", gaussian(d, d, 0.02));
    add(pre + "wv", gaussian(d, d, 0.02));
    add(pre + "wo", gaussian(d, d, proj_std));
    add(pre + "mlp_norm", ones(d));
    add(pre + "w1", gaussian(d, config.d_ff, 0.02));
    add(pre + "w2", gaussian(config.d_ff, d, proj_std));
  }
  add("final_norm", ones(d));
  add("output", gaussian(config.tie_embeddings ? 0 : config.vocab_size, d, 0.02));
  return p;
}

template <typename S>
void add_classification_head(ModelParams<S>& p) {
  if (p.has_head()) return;
  p.names.push_back("head_w");
  p.tensors.push_back(Matrix<S>::Zero(1, p.config.d_model));
  p.names.push_back("head_b");
  p.tensors.push_back(Matrix<S>::Zero(1, 1));
}

template <typename S>
Gradients<S> zero_gradients(const ModelParams<S>& params) {
  Gradients<S> g;
  g.reserve(params.tensors.size());
  for (const auto& t : params.tensors)
    g.push_back(Matrix<S>::Zero(t.rows(), t.cols()));
  return g;
}

namespace {

constexpr double kNormEps = 1e-5;

template <typename S>
using ColVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct LayerCache {
  Matrix<S> x_in, n1;
  ColVector<S> r1;
  Matrix<S> q, k, v;
  std::vector<Matrix<S>> probs;
  Matrix<S> cat, attn_drop;
  Matrix<S> h, n2;
  ColVector<S> r2;
  Matrix<S> u, g, mlp_drop;
};

template <typename S>
struct SequenceCache {
  std::vector<TokenId> tokens;
  std::vector<LayerCache<S>> layers;
  Matrix<S> x_final;
  ColVector<S> r_final;
  Matrix<S> hidden;
};

// Geometric head slopes 2^(-8(h+1)/H).
double alibi_slope(int head, int heads) {
  return std::exp2(-8.0 * (head + 1) / heads);
}

template <typename S>
Matrix<S> rms_norm(const Matrix<S>& x, const Matrix<S>& gain, ColVector<S>& r) {
  const S d = static_cast<S>(x.cols());
  r = ((x.rowwise().squaredNorm() / d).array() + static_cast<S>(kNormEps))
          .rsqrt()
          .matrix();
  Matrix<S> y = r.asDiagonal() * x;
  y = y * gain.row(0).asDiagonal();
  return y;
}

// Accumulates d(gain) into dgain, returns d(x).
template <typename S>
Matrix<S> rms_norm_backward(const Matrix<S>& x, const Matrix<S>& gain,
                            const ColVector<S>& r, const Matrix<S>& dy,
                            Matrix<S>& dgain) {
  const S d = static_cast<S>(x.cols());
  Matrix<S> xr = r.asDiagonal() * x;
  dgain += dy.cwiseProduct(xr).colwise().sum();
  Matrix<S> gdy = dy * gain.row(0).asDiagonal();
  ColVector<S> dot = gdy.cwiseProduct(x).rowwise().sum();
  ColVector<S> coef = (r.array().cube() * dot.array() / d).matrix();
  return r.asDiagonal() * gdy - coef.asDiagonal() * x;
}

template <typename S>
S gelu(S x) {
  const S k = static_cast<S>(std::sqrt(2.0 / std::numbers::pi));
  const S c = static_cast<S>(0.044715);
  return static_cast<S>(0.5) * x * (S(1) + std::tanh(k * (x + c * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  const S k = static_cast<S>(std::sqrt(2.0 / std::numbers::pi));
  const S c = static_cast<S>(0.044715);
  S t = std::tanh(k * (x + c * x * x * x));
  return static_cast<S>(0.5) * (S(1) + t) +
         static_cast<S>(0.5) * x * (S(1) - t * t) * k * (S(1) + S(3) * c * x * x);
}

template <typename S>
Matrix<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                       Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix<S> m(rows, cols);
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = keep(rng) ? scale : S(0);
  return m;
}

template <typename S>
SequenceCache<S> forward_sequence(const ModelParams<S>& p,
                                  std::span<const TokenId> tokens,
                                  Rng* dropout_rng) {
  const ModelConfig& cfg = p.config;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  if (n > cfg.max_context)
    throw ConfigError("sequence of length " + std::to_string(n) +
                      " exceeds max_context " + std::to_string(cfg.max_context));
  const bool use_dropout = dropout_rng && cfg.dropout > 0.0;

  SequenceCache<S> c;
  c.tokens.assign(tokens.begin(), tokens.end());
  Matrix<S> x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    TokenId t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= cfg.vocab_size)
      throw ConfigError("token id " + std::to_string(t) + " out of range");
    x.row(i) = p.tensors[0].row(t);
    if (!cfg.alibi()) x.row(i) += p.tensors[1].row(i);
  }

  c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& L = c.layers[static_cast<std::size_t>(l)];
    auto W = [&](typename ModelParams<S>::LayerSlot s) -> const Matrix<S>& {
      return p.tensors[p.layer_index(l, s)];
    };
    L.x_in = std::move(x);
    L.n1 = rms_norm(L.x_in, W(ModelParams<S>::kAttnNorm), L.r1);
    L.q.noalias() = L.n1 * W(ModelParams<S>::kWq);
    L.k.noalias() = L.n1 * W(ModelParams<S>::kWk);
    L.v.noalias() = L.n1 * W(ModelParams<S>::kWv);
    L.cat.resize(n, d);
    L.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Matrix<S> scores;
      scores.noalias() = L.q.middleCols(h * dh, dh) *
                         L.k.middleCols(h * dh, dh).transpose();
      scores *= scale;
      const S slope = cfg.alibi() ? static_cast<S>(alibi_slope(h, heads)) : S(0);
      for (Eigen::Index i = 0; i < n; ++i) {
        auto row = scores.row(i);
        if (cfg.alibi())
          for (Eigen::Index j = 0; j < i; ++j) row(j) -= slope * static_cast<S>(i - j);
        S mx = row.head(i + 1).maxCoeff();
        S sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          S e = std::exp(row(j) - mx);
          row(j) = e;
          sum += e;
        }
        row.head(i + 1) /= sum;
        row.tail(n - i - 1).setZero();
      }
      L.cat.middleCols(h * dh, dh).noalias() = scores * L.v.middleCols(h * dh, dh);
      L.probs[static_cast<std::size_t>(h)] = std::move(scores);
    }
    Matrix<S> a;
    a.noalias() = L.cat * W(ModelParams<S>::kWo);
    if (use_dropout) {
      L.attn_drop = dropout_mask<S>(n, d, cfg.dropout, *dropout_rng);
      a = a.cwiseProduct(L.attn_drop);
    }
    L.h = L.x_in + a;
    L.n2 = rms_norm(L.h, W(ModelParams<S>::kMlpNorm), L.r2);
    L.u.noalias() = L.n2 * W(ModelParams<S>::kW1);
    L.g = L.u.unaryExpr([](S v) { return gelu(v); });
    Matrix<S> m;
    m.noalias() = L.g * W(ModelParams<S>::kW2);
    if (use_dropout) {
      L.mlp_drop = dropout_mask<S>(n, d, cfg.dropout, *dropout_rng);
      m = m.cwiseProduct(L.mlp_drop);
    }
    x = L.h + m;
  }
  c.x_final = std::move(x);
  c.hidden = rms_norm(c.x_final, p.tensors[p.final_norm_index()], c.r_final);
  return c;
}

template <typename S>
void backward_sequence(const ModelParams<S>& p, const SequenceCache<S>& c,
                       const Matrix<S>& d_hidden, Gradients<S>& g) {
  const ModelConfig& cfg = p.config;
  const auto n = static_cast<Eigen::Index>(c.tokens.size());
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Matrix<S> dx = rms_norm_backward(c.x_final, p.tensors[p.final_norm_index()],
                                   c.r_final, d_hidden,
                                   g[p.final_norm_index()]);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& L = c.layers[static_cast<std::size_t>(l)];
    auto idx = [&](typename ModelParams<S>::LayerSlot s) {
      return p.layer_index(l, s);
    };
    const auto& W1 = p.tensors[idx(ModelParams<S>::kW1)];
    const auto& W2 = p.tensors[idx(ModelParams<S>::kW2)];
    const auto& Wo = p.tensors[idx(ModelParams<S>::kWo)];

    // MLP branch.
    Matrix<S> dm = L.mlp_drop.size() ? dx.cwiseProduct(L.mlp_drop) : dx;
    g[idx(ModelParams<S>::kW2)].noalias() += L.g.transpose() * dm;
    Matrix<S> dgact;
    dgact.noalias() = dm * W2.transpose();
    Matrix<S> du = dgact.cwiseProduct(L.u.unaryExpr([](S v) { return gelu_grad(v); }));
    g[idx(ModelParams<S>::kW1)].noalias() += L.n2.transpose() * du;
    Matrix<S> dn2;
    dn2.noalias() = du * W1.transpose();
    Matrix<S> dh_total = dx + rms_norm_backward(L.h, p.tensors[idx(ModelParams<S>::kMlpNorm)],
                                                L.r2, dn2,
                                                g[idx(ModelParams<S>::kMlpNorm)]);

    // Attention branch.
    Matrix<S> da = L.attn_drop.size() ? dh_total.cwiseProduct(L.attn_drop) : dh_total;
    g[idx(ModelParams<S>::kWo)].noalias() += L.cat.transpose() * da;
    Matrix<S> dcat;
    dcat.noalias() = da * Wo.transpose();
    Matrix<S> dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix<S>& P = L.probs[static_cast<std::size_t>(h)];
      auto dO = dcat.middleCols(h * dh, dh);
      Matrix<S> dP;
      dP.noalias() = dO * L.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = P.transpose() * dO;
      ColVector<S> rowdot = P.cwiseProduct(dP).rowwise().sum();
      Matrix<S> dS = P.cwiseProduct(dP - rowdot.replicate(1, n));
      dq.middleCols(h * dh, dh).noalias() = scale * (dS * L.k.middleCols(h * dh, dh));
      dk.middleCols(h * dh, dh).noalias() =
          scale * (dS.transpose() * L.q.middleCols(h * dh, dh));
    }
    g[idx(ModelParams<S>::kWq)].noalias() += L.n1.transpose() * dq;
    g[idx(ModelParams<S>::kWk)].noalias() += L.n1.transpose() * dk;
    g[idx(ModelParams<S>::kWv)].noalias() += L.n1.transpose() * dv;
    Matrix<S> dn1;
    dn1.noalias() = dq * p.tensors[idx(ModelParams<S>::kWq)].transpose();
    dn1.noalias() += dk * p.tensors[idx(ModelParams<S>::kWk)].transpose();
    dn1.noalias() += dv * p.tensors[idx(ModelParams<S>::kWv)].transpose();
    dx = dh_total + rms_norm_backward(L.x_in, p.tensors[idx(ModelParams<S>::kAttnNorm)],
                                      L.r1, dn1, g[idx(ModelParams<S>::kAttnNorm)]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    g[0].row(c.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    if (!cfg.alibi()) g[1].row(i) += dx.row(i);
  }
}

// First column of the real-token window of row r (leading mask-0 run).
std::size_t first_real(const Batch& b, std::size_t r) {
  std::size_t c = 0;
  while (c < b.cols && b.mask[r * b.cols + c] == 0) ++c;
  return c;
}

std::span<const TokenId> row_window(const Batch& b, std::size_t r,
                                    std::size_t start) {
  return std::span<const TokenId>(b.tokens.data() + r * b.cols + start,
                                  b.cols - start);
}

template <typename S>
double softplus(S z) {
  double x = static_cast<double>(z);
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

void check_head(bool has_head) {
  if (!has_head) throw ConfigError("model has no classification head");
}

}  // namespace

template <typename S>
Matrix<S> hidden_states(const ModelParams<S>& params,
                        std::span<const TokenId> tokens) {
  return forward_sequence(params, tokens, nullptr).hidden;
}

template <typename S>
ForwardOutput<S> forward(const ModelParams<S>& params, const Batch& batch) {
  ForwardOutput<S> out;
  const auto V = params.config.vocab_size;
  const auto d = params.config.d_model;
  const auto& Wout = params.tensors[params.projection_index()];
  for (std::size_t r = 0; r < batch.rows; ++r) {
    Matrix<S> logits = Matrix<S>::Zero(static_cast<Eigen::Index>(batch.cols), V);
    Matrix<S> hidden = Matrix<S>::Zero(static_cast<Eigen::Index>(batch.cols), d);
    std::size_t start = first_real(batch, r);
    if (start < batch.cols) {
      auto c = forward_sequence(params, row_window(batch, r, start), nullptr);
      const auto len = static_cast<Eigen::Index>(batch.cols - start);
      hidden.bottomRows(len) = c.hidden;
      logits.bottomRows(len).noalias() = c.hidden * Wout.transpose();
    }
    out.logits.push_back(std::move(logits));
    out.hidden.push_back(std::move(hidden));
  }
  return out;
}

template <typename S>
double nll_loss(const std::vector<Matrix<S>>& logits,
                const std::vector<TokenId>& targets,
                const std::vector<std::uint8_t>& loss_mask, std::size_t cols) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t k = r * cols + c;
      if (!loss_mask[k]) continue;
      auto row = logits[r].row(static_cast<Eigen::Index>(c)).template cast<double>();
      double mx = row.maxCoeff();
      double lse = mx + std::log((row.array() - mx).exp().sum());
      total += lse - row(targets[k]);
      ++count;
    }
  }
  if (count == 0) throw NumericError("nll_loss: every position is masked");
  return total / static_cast<double>(count);
}

template <typename S>
LossAndGradients<S> loss_and_gradients(const ModelParams<S>& params,
                                       const Batch& batch, Rng* dropout_rng) {
  LossAndGradients<S> out;
  out.grads = zero_gradients(params);
  auto& g = out.grads;

  if (batch.kind == BatchKind::kPacked) {
    std::size_t count = 0;
    for (auto m : batch.loss_mask) count += m;
    if (count == 0) throw NumericError("loss: every position is masked");
    const S inv = static_cast<S>(1.0 / static_cast<double>(count));
    const auto& Wout = params.tensors[params.projection_index()];
    double total = 0.0;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      std::size_t start = first_real(batch, r);
      bool any = false;
      for (std::size_t c = start; c < batch.cols; ++c)
        any |= batch.loss_mask[r * batch.cols + c] != 0;
      if (!any) continue;
      auto cache = forward_sequence(params, row_window(batch, r, start), dropout_rng);
      Matrix<S> logits;
      logits.noalias() = cache.hidden * Wout.transpose();
      Matrix<S> dlogits = Matrix<S>::Zero(logits.rows(), logits.cols());
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        std::size_t k = r * batch.cols + start + static_cast<std::size_t>(i);
        if (!batch.loss_mask[k]) continue;
        auto row = logits.row(i);
        S mx = row.maxCoeff();
        RowVector<S> e = (row.array() - mx).exp().matrix();
        S sum = e.sum();
        total += static_cast<double>(mx) + std::log(static_cast<double>(sum)) -
                 static_cast<double>(row(batch.targets[k]));
        dlogits.row(i) = e * (inv / sum);
        dlogits(i, batch.targets[k]) -= inv;
      }
      g[params.projection_index()].noalias() += dlogits.transpose() * cache.hidden;
      Matrix<S> dhidden;
      dhidden.noalias() = dlogits * Wout;
      backward_sequence(params, cache, dhidden, g);
    }
    out.loss = total / static_cast<double>(count);
  } else {
    check_head(params.has_head());
    std::size_t labelled = 0;
    for (auto y : batch.labels) labelled += y >= 0;
    if (labelled == 0) throw NumericError("loss: batch has no labelled rows");
    const S inv = static_cast<S>(1.0 / static_cast<double>(labelled));
    const auto& w = params.tensors[params.head_w_index()];
    const S bias = params.tensors[params.head_b_index()](0, 0);
    double total = 0.0;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      if (batch.labels[r] < 0) continue;
      std::size_t start = first_real(batch, r);
      if (start == batch.cols) throw NumericError("loss: empty labelled row");
      auto cache = forward_sequence(params, row_window(batch, r, start), dropout_rng);
      const Eigen::Index last = cache.hidden.rows() - 1;
      const S z = cache.hidden.row(last).dot(w.row(0)) + bias;
      const double y = batch.labels[r];
      total += softplus(z) - y * static_cast<double>(z);
      const S dz = static_cast<S>(sigmoid(static_cast<double>(z)) - y) * inv;
      g[params.head_w_index()] += dz * cache.hidden.row(last);
      g[params.head_b_index()](0, 0) += dz;
      Matrix<S> dhidden = Matrix<S>::Zero(cache.hidden.rows(), cache.hidden.cols());
      dhidden.row(last) = dz * w.row(0);
      backward_sequence(params, cache, dhidden, g);
    }
    out.loss = total / static_cast<double>(labelled);
  }
  return out;
}

template <typename S>
double batch_loss(const ModelParams<S>& params, const Batch& batch) {
  if (batch.kind == BatchKind::kPacked) {
    auto out = forward(params, batch);
    return nll_loss(out.logits, batch.targets, batch.loss_mask, batch.cols);
  }
  check_head(params.has_head());
  double total = 0.0;
  std::size_t labelled = 0;
  const auto& w = params.tensors[params.head_w_index()];
  const double bias = static_cast<double>(params.tensors[params.head_b_index()](0, 0));
  for (std::size_t r = 0; r < batch.rows; ++r) {
    if (batch.labels[r] < 0) continue;
    std::size_t start = first_real(batch, r);
    Matrix<S> h = hidden_states(params, row_window(batch, r, start));
    double z = static_cast<double>(h.row(h.rows() - 1).dot(w.row(0))) + bias;
    total += softplus(z) - batch.labels[r] * z;
    ++labelled;
  }
  if (labelled == 0) throw NumericError("loss: batch has no labelled rows");
  return total / static_cast<double>(labelled);
}

double AdamOptions::lr_at(std::size_t step) const {
  if (schedule == LrSchedule::kConstant) return lr;
  if (warmup_steps > 0 && step < warmup_steps)
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return lr;
  double progress = static_cast<double>(step - warmup_steps) /
                    static_cast<double>(total_steps - warmup_steps);
  progress = std::min(progress, 1.0);
  double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return lr * (min_lr_ratio + (1.0 - min_lr_ratio) * cosine);
}

template <typename S>
OptimState<S> init_optim(const ModelParams<S>& params, AdamOptions options) {
  OptimState<S> s;
  s.options = options;
  s.m = zero_gradients(params);
  s.v = zero_gradients(params);
  s.dropout_seed = derive_seed(params.config.seed, 0xD20);
  return s;
}

template <typename S>
double train_step(ModelParams<S>& params, OptimState<S>& opt,
                  const Batch& batch) {
  while (opt.m.size() < params.tensors.size()) {
    const auto& t = params.tensors[opt.m.size()];
    opt.m.push_back(Matrix<S>::Zero(t.rows(), t.cols()));
    opt.v.push_back(Matrix<S>::Zero(t.rows(), t.cols()));
  }
  Rng dropout_rng(derive_seed(opt.dropout_seed, opt.step));
  auto lg = loss_and_gradients(params, batch,
                               params.config.dropout > 0 ? &dropout_rng : nullptr);
  if (!std::isfinite(lg.loss))
    throw NumericError("non-finite loss at step " + std::to_string(opt.step));

  const AdamOptions& o = opt.options;
  double norm2 = 0.0;
  for (const auto& gt : lg.grads) norm2 += static_cast<double>(gt.squaredNorm());
  if (!std::isfinite(norm2))
    throw NumericError("non-finite gradient at step " + std::to_string(opt.step));
  double clip = 1.0;
  if (o.clip_norm > 0 && std::sqrt(norm2) > o.clip_norm)
    clip = o.clip_norm / std::sqrt(norm2);

  const double lr = o.lr_at(opt.step);
  ++opt.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(opt.step));
  if (lr == 0.0) {
    // Moments still advance; parameters do not move.
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    Matrix<S> gi = lg.grads[i] * static_cast<S>(clip);
    opt.m[i] = static_cast<S>(o.beta1) * opt.m[i] + static_cast<S>(1 - o.beta1) * gi;
    opt.v[i] = static_cast<S>(o.beta2) * opt.v[i] +
               static_cast<S>(1 - o.beta2) * gi.cwiseProduct(gi);
    if (lr == 0.0) continue;
    auto mhat = opt.m[i].array() / static_cast<S>(bc1);
    auto vhat = opt.v[i].array() / static_cast<S>(bc2);
    params.tensors[i].array() -=
        static_cast<S>(lr) * mhat / (vhat.sqrt() + static_cast<S>(o.eps));
  }
  return lg.loss;
}

template <typename S>
Matrix<S> extract_trajectory(const ModelParams<S>& params,
                             const TokenTimeline& timeline) {
  if (timeline.tokens.empty()) throw IntegrityError("extract: empty timeline");
  return hidden_states(params, std::span<const TokenId>(timeline.tokens));
}

template <typename S>
RowVector<S> extract_representation(const ModelParams<S>& params,
                                    const TokenTimeline& timeline) {
  Matrix<S> h = extract_trajectory(params, timeline);
  return h.row(h.rows() - 1);
}

template <typename S>
std::vector<double> predict_prefixes(const ModelParams<S>& params,
                                     std::span<const TokenId> tokens) {
  check_head(params.has_head());
  if (tokens.empty()) throw IntegrityError("predict: empty prefix");
  Matrix<S> h = hidden_states(params, tokens);
  const auto& w = params.tensors[params.head_w_index()];
  const double bias = static_cast<double>(params.tensors[params.head_b_index()](0, 0));
  std::vector<double> out(static_cast<std::size_t>(h.rows()));
  for (Eigen::Index i = 0; i < h.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        sigmoid(static_cast<double>(h.row(i).dot(w.row(0))) + bias);
  return out;
}

template <typename S>
double predict_outcome(const ModelParams<S>& params,
                       std::span<const TokenId> prefix) {
  check_head(params.has_head());
  if (prefix.empty()) throw IntegrityError("predict: empty prefix");
  Matrix<S> h = hidden_states(params, prefix);
  const auto& w = params.tensors[params.head_w_index()];
  const double bias = static_cast<double>(params.tensors[params.head_b_index()](0, 0));
  return sigmoid(static_cast<double>(h.row(h.rows() - 1).dot(w.row(0))) + bias);
}

#define CLIFFM_INSTANTIATE(S)                                                   \
  template struct ModelParams<S>;                                              \
  template ModelParams<S> init_model<S>(const ModelConfig&);                   \
  template void add_classification_head<S>(ModelParams<S>&);                   \
  template Gradients<S> zero_gradients<S>(const ModelParams<S>&);              \
  template ForwardOutput<S> forward<S>(const ModelParams<S>&, const Batch&);   \
  template Matrix<S> hidden_states<S>(const ModelParams<S>&,                   \
                                      std::span<const TokenId>);               \
  template double nll_loss<S>(const std::vector<Matrix<S>>&,                   \
                              const std::vector<TokenId>&,                     \
                              const std::vector<std::uint8_t>&, std::size_t);  \
  template LossAndGradients<S> loss_and_gradients<S>(const ModelParams<S>&,    \
                                                     const Batch&, Rng*);      \
  template double batch_loss<S>(const ModelParams<S>&, const Batch&);          \
  template OptimState<S> init_optim<S>(const ModelParams<S>&, AdamOptions);    \
  template double train_step<S>(ModelParams<S>&, OptimState<S>&, const Batch&); \
  template RowVector<S> extract_representation<S>(const ModelParams<S>&,       \
                                                  const TokenTimeline&);       \
  template Matrix<S> extract_trajectory<S>(const ModelParams<S>&,              \
                                           const TokenTimeline&);              \
  template double predict_outcome<S>(const ModelParams<S>&,                    \
                                     std::span<const TokenId>);                \
  template std::vector<double> predict_prefixes<S>(const ModelParams<S>&,      \
                                                   std::span<const TokenId>);

CLIFFM_INSTANTIATE(float)
CLIFFM_INSTANTIATE(double)

#undef CLIFFM_INSTANTIATE

}  // namespace cliffm
