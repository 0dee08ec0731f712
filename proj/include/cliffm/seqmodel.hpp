#ifndef CLIFFM_SEQMODEL_HPP
#define CLIFFM_SEQMODEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cliffm/common.hpp"
#include "cliffm/tokenizer.hpp"

namespace cliffm {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

// Pre-norm decoder-only transformer: learned token and position embeddings,
// RMSNorm, causal multi-head attention, GELU MLP, output projection that is
// either its own matrix or the token embedding (tie_embeddings).
struct ModelConfig {
  int vocab_size = 0;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 64;
  int max_context = 1024;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  // "learned" absolute embeddings or "alibi" linear attention biases, which
  // extrapolate to sequences longer than those seen in training.
  std::string positions = "learned";
  bool tie_embeddings = false;

  bool alibi() const { return positions == "alibi"; }

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

// Named tensors. Order: token_embedding, position_embedding, then per layer
// {attn_norm, wq, wk, wv, wo, mlp_norm, w1, w2}, final_norm, output (0 rows
// when tied), and optionally head_w (1 x d_model), head_b (1 x 1).
template <typename S>
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Matrix<S>> tensors;

  static constexpr int kPerLayer = 8;
  enum LayerSlot { kAttnNorm, kWq, kWk, kWv, kWo, kMlpNorm, kW1, kW2 };

  std::size_t layer_index(int layer, LayerSlot slot) const {
    return 2 + static_cast<std::size_t>(layer * kPerLayer + slot);
  }
  std::size_t final_norm_index() const {
    return 2 + static_cast<std::size_t>(config.n_layers * kPerLayer);
  }
  std::size_t output_index() const { return final_norm_index() + 1; }
  // Tensor holding the vocabulary projection, and where its gradient goes.
  std::size_t projection_index() const { return config.tie_embeddings ? 0 : output_index(); }
  std::size_t head_w_index() const { return final_norm_index() + 2; }
  std::size_t head_b_index() const { return final_norm_index() + 3; }
  bool has_head() const { return tensors.size() == head_b_index() + 1; }

  const Matrix<S>& token_embedding() const { return tensors[0]; }
  const Matrix<S>& position_embedding() const { return tensors[1]; }
  std::size_t parameter_count() const;
};

template <typename S>
using Gradients = std::vector<Matrix<S>>;

// Deterministic in config.seed. No classification head.
template <typename S>
ModelParams<S> init_model(const ModelConfig& config);

// Appends a zero-initialised head (no-op if one exists).
template <typename S>
void add_classification_head(ModelParams<S>& params);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.config = p.config;
  out.names = p.names;
  for (const auto& t : p.tensors) out.tensors.push_back(t.template cast<To>());
  return out;
}

template <typename S>
Gradients<S> zero_gradients(const ModelParams<S>& params);

// Per-row results. Leading PAD positions (mask 0 before the first real token)
// are excluded from the computation and their rows are zero; positions are
// numbered from the first real token.
template <typename S>
struct ForwardOutput {
  std::vector<Matrix<S>> logits;  // rows x (cols x vocab)
  std::vector<Matrix<S>> hidden;  // rows x (cols x d_model)
};

template <typename S>
ForwardOutput<S> forward(const ModelParams<S>& params, const Batch& batch);

// Hidden states (final layer, post final norm) of one unpadded sequence.
template <typename S>
Matrix<S> hidden_states(const ModelParams<S>& params,
                        std::span<const TokenId> tokens);

// Mean cross-entropy over positions with loss_mask 1.
template <typename S>
double nll_loss(const std::vector<Matrix<S>>& logits,
                const std::vector<TokenId>& targets,
                const std::vector<std::uint8_t>& loss_mask, std::size_t cols);

template <typename S>
struct LossAndGradients {
  double loss = 0.0;
  Gradients<S> grads;
};

// Packed batches: mean next-token NLL. Left-padded batches: mean binary
// cross-entropy of the head at the last real token over labelled rows.
// `dropout_rng` enables dropout when config.dropout > 0.
template <typename S>
LossAndGradients<S> loss_and_gradients(const ModelParams<S>& params,
                                       const Batch& batch,
                                       Rng* dropout_rng = nullptr);

template <typename S>
double batch_loss(const ModelParams<S>& params, const Batch& batch);

enum class LrSchedule { kConstant, kWarmupCosine };

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  LrSchedule schedule = LrSchedule::kWarmupCosine;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;
  double min_lr_ratio = 0.1;

  double lr_at(std::size_t step) const;
};

template <typename S>
struct OptimState {
  std::size_t step = 0;
  AdamOptions options;
  Gradients<S> m;
  Gradients<S> v;
  std::uint64_t dropout_seed = 0;
};

template <typename S>
OptimState<S> init_optim(const ModelParams<S>& params, AdamOptions options);

// One Adam step; returns the loss before the update. Throws NumericError on
// a non-finite loss. Resizes moments if a head was added since init.
template <typename S>
double train_step(ModelParams<S>& params, OptimState<S>& opt,
                  const Batch& batch);

// Last hidden state of a non-empty 24-hour timeline.
template <typename S>
RowVector<S> extract_representation(const ModelParams<S>& params,
                                    const TokenTimeline& timeline_24h);

// Row t: hidden state after consuming tokens 1..t+1.
template <typename S>
Matrix<S> extract_trajectory(const ModelParams<S>& params,
                             const TokenTimeline& timeline_24h);

// Head probability for the whole prefix.
template <typename S>
double predict_outcome(const ModelParams<S>& params,
                       std::span<const TokenId> prefix);

// Probability for every prefix length 1..n in one causal pass.
template <typename S>
std::vector<double> predict_prefixes(const ModelParams<S>& params,
                                     std::span<const TokenId> tokens);

}  // namespace cliffm

#endif  // CLIFFM_SEQMODEL_HPP
