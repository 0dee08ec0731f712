#ifndef CLIFFM_TRAINING_HPP
#define CLIFFM_TRAINING_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cliffm/seqmodel.hpp"

namespace cliffm {

struct TrainLogRow {
  std::size_t step = 0;
  double lr = 0.0;
  double train_nll = 0.0;
  std::optional<double> val_nll;
};

struct PretrainOptions {
  std::size_t steps = 1000;
  std::size_t block_len = 256;
  std::size_t pad_gap_max = 4;
  std::size_t rows_per_batch = 8;
  double lr = 3e-4;
  std::size_t warmup_steps = 50;
  double min_lr_ratio = 0.1;
  double clip_norm = 1.0;
  std::size_t eval_every = 100;
  std::size_t val_max_batches = 8;
  std::size_t checkpoint_every = 0;  // 0: no intermediate checkpoints
  std::filesystem::path checkpoint_dir;
  std::uint64_t seed = 0;
};

template <typename S>
struct PretrainResult {
  ModelParams<S> params;
  std::vector<TrainLogRow> log;
  std::optional<double> final_val_nll;
  std::vector<std::filesystem::path> checkpoints;
};

// Next-token pretraining on packed blocks, re-packed every pass over the
// corpus. Zero steps returns `init` unchanged.
template <typename S>
PretrainResult<S> pretrain(ModelParams<S> init, const std::vector<TokenTimeline>& train,
                           const std::vector<TokenTimeline>& val, const PretrainOptions& options);

// Token-weighted mean NLL over a packed stream built with a fixed seed.
template <typename S>
double packed_nll(const ModelParams<S>& params, const std::vector<TokenTimeline>& timelines,
                  std::size_t block_len, std::size_t pad_gap_max, std::uint64_t seed,
                  std::size_t max_batches = 0);

std::string train_log_csv(const std::vector<TrainLogRow>& log, const std::string& provenance = "");

enum class FinetuneMode { kPlain, kUrt };

struct FinetuneOptions {
  FinetuneMode mode = FinetuneMode::kPlain;
  double lr = 2e-5;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

template <typename S>
struct FinetuneResult {
  ModelParams<S> params;
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
};

// Adds a head if missing and trains every weight with binary cross-entropy
// at the last real token. Stays excluded for `outcome` are skipped.
// `on_epoch(e, params)` runs after epoch e (1-based).
template <typename S>
FinetuneResult<S> finetune_classifier(
    ModelParams<S> params, const std::vector<TokenTimeline>& train, Outcome outcome,
    const FinetuneOptions& options,
    const std::function<void(std::size_t, const ModelParams<S>&)>& on_epoch = {});

// Head probability at the last token of each timeline.
template <typename S>
std::vector<double> predict_timelines(const ModelParams<S>& params,
                                      const std::vector<TokenTimeline>& timelines);

// Validation AUC for `outcome`; nullopt when validation has one class.
template <typename S>
std::optional<double> validation_auc(const ModelParams<S>& params,
                                     const std::vector<TokenTimeline>& val, Outcome outcome);

struct LocalCandidate {
  double lr = 0.0;
  std::size_t epochs = 0;
  std::optional<double> val_auc;
};

template <typename S>
struct LocalFinetuneResult {
  ModelParams<S> params;
  LocalCandidate chosen;
  std::vector<LocalCandidate> candidates;
  std::vector<std::string> warnings;
};

// Grid over (lr, epochs); epochs = 0 stands for the starting model. Picks the
// candidate with the highest validation AUC, earliest on ties.
template <typename S>
LocalFinetuneResult<S> local_finetune(const ModelParams<S>& params,
                                      const std::vector<TokenTimeline>& train,
                                      const std::vector<TokenTimeline>& val, Outcome outcome,
                                      const std::vector<LocalCandidate>& search_space,
                                      const FinetuneOptions& base);

}  // namespace cliffm

#endif  // CLIFFM_TRAINING_HPP
