#include "cliffm/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "cliffm/analytics.hpp"
#include "cliffm/checkpoint.hpp"
#include "cliffm/csv.hpp"

namespace cliffm {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kValStream = 0x7661;
constexpr TokenId kPad = 0;

std::size_t loss_count(const Batch& b) {
  return static_cast<std::size_t>(std::count(b.loss_mask.begin(), b.loss_mask.end(), 1));
}

}  // namespace

template <typename S>
double packed_nll(const ModelParams<S>& params, const std::vector<TokenTimeline>& timelines,
                  std::size_t block_len, std::size_t pad_gap_max, std::uint64_t seed,
                  std::size_t max_batches) {
  Rng rng(seed);
  auto batches = pack_sequences(timelines, kPad, block_len, pad_gap_max, rng);
  if (max_batches > 0 && batches.size() > max_batches) batches.resize(max_batches);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& b : batches) {
    std::size_t n = loss_count(b);
    if (n == 0) continue;
    total += batch_loss(params, b) * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw NumericError("packed_nll: no scored positions");
  return total / static_cast<double>(count);
}

template <typename S>
PretrainResult<S> pretrain(ModelParams<S> init, const std::vector<TokenTimeline>& train,
                           const std::vector<TokenTimeline>& val, const PretrainOptions& o) {
  if (train.empty()) throw IntegrityError("pretrain: empty training corpus");
  PretrainResult<S> out;
  out.params = std::move(init);
  if (o.steps == 0) return out;

  AdamOptions adam;
  adam.lr = o.lr;
  adam.schedule = LrSchedule::kWarmupCosine;
  adam.warmup_steps = o.warmup_steps;
  adam.total_steps = o.steps;
  adam.min_lr_ratio = o.min_lr_ratio;
  adam.clip_norm = o.clip_norm;
  OptimState<S> opt = init_optim(out.params, adam);

  auto val_nll = [&]() -> std::optional<double> {
    if (val.empty()) return std::nullopt;
    return packed_nll(out.params, val, o.block_len, o.pad_gap_max,
                      derive_seed(o.seed, kValStream), o.val_max_batches);
  };
  auto write_ckpt = [&](std::size_t step) {
    if (o.checkpoint_dir.empty()) return;
    fs::create_directories(o.checkpoint_dir);
    char name[32];
    std::snprintf(name, sizeof name, "step_%06zu.ckpt", step);
    fs::path p = o.checkpoint_dir / name;
    std::ostringstream meta;
    meta << "{\"step\":" << step << ",\"seed\":" << o.seed << "}";
    save_checkpoint(cast_params<float>(out.params), p, meta.str());
    out.checkpoints.push_back(p);
  };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Batch> batches;
  std::size_t cursor = 0, pass = 0;
  double running = 0.0;
  std::size_t running_n = 0;
  while (opt.step < o.steps) {
    if (cursor == batches.size()) {
      Rng rng(derive_seed(o.seed, pass++));
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<TokenTimeline> shuffled;
      shuffled.reserve(train.size());
      for (auto i : order) shuffled.push_back(train[i]);
      batches = pack_sequences(shuffled, kPad, o.block_len, o.pad_gap_max, rng, o.rows_per_batch);
      cursor = 0;
    }
    const Batch& b = batches[cursor++];
    if (loss_count(b) == 0) continue;
    const double lr = adam.lr_at(opt.step);
    running += train_step(out.params, opt, b);
    ++running_n;
    const bool last = opt.step == o.steps;
    if ((o.eval_every > 0 && opt.step % o.eval_every == 0) || last) {
      TrainLogRow row{opt.step, lr, running / static_cast<double>(running_n), val_nll()};
      out.log.push_back(row);
      running = 0.0;
      running_n = 0;
      if (last) out.final_val_nll = row.val_nll;
    }
    if (o.checkpoint_every > 0 && (opt.step % o.checkpoint_every == 0 || last)) write_ckpt(opt.step);
  }
  return out;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log, const std::string& provenance) {
  std::ostringstream o;
  if (!provenance.empty()) o << "# " << provenance << '\n';
  write_csv_row(o, {"step", "lr", "train_nll", "val_nll"});
  for (const auto& r : log)
    write_csv_row(o, {std::to_string(r.step), format_double(r.lr), format_double(r.train_nll),
                      r.val_nll ? format_double(*r.val_nll) : ""});
  return o.str();
}

template <typename S>
FinetuneResult<S> finetune_classifier(
    ModelParams<S> params, const std::vector<TokenTimeline>& train, Outcome outcome,
    const FinetuneOptions& o,
    const std::function<void(std::size_t, const ModelParams<S>&)>& on_epoch) {
  FinetuneResult<S> out;
  add_classification_head(params);
  out.params = std::move(params);
  if (o.batch_size == 0) throw ConfigError("finetune: batch_size must be positive");

  std::vector<const TokenTimeline*> labelled;
  std::size_t positives = 0;
  for (const auto& t : train) {
    if (t.tokens.empty()) continue;
    if (auto y = outcome_label(t.labels, outcome)) {
      labelled.push_back(&t);
      positives += *y;
    }
  }
  if (labelled.empty())
    throw IntegrityError(std::string("finetune: no labelled stays for ") + outcome_display_name(outcome));
  if (positives == 0 || positives == labelled.size())
    out.warnings.push_back(std::string("finetune: training labels for ") +
                           outcome_display_name(outcome) +
                           " have a single class; AUC is undefined downstream");

  AdamOptions adam;
  adam.lr = o.lr;
  adam.schedule = LrSchedule::kConstant;
  adam.clip_norm = o.clip_norm;
  OptimState<S> opt = init_optim(out.params, adam);
  opt.dropout_seed = derive_seed(o.seed, 0xD20);

  std::vector<std::size_t> order(labelled.size());
  for (std::size_t epoch = 1; epoch <= o.epochs; ++epoch) {
    Rng rng(derive_seed(o.seed, epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += o.batch_size) {
      std::vector<TokenTimeline> rows;
      std::size_t width = 0;
      for (std::size_t k = start; k < std::min(order.size(), start + o.batch_size); ++k) {
        const TokenTimeline& t = *labelled[order[k]];
        rows.push_back(o.mode == FinetuneMode::kUrt ? uniform_random_truncate(t, rng) : t);
        width = std::max(width, rows.back().size());
      }
      Batch b = left_pad_batch(rows, kPad, width, outcome);
      total += train_step(out.params, opt, b);
      ++batches;
    }
    out.epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(1, batches)));
    if (on_epoch) on_epoch(epoch, out.params);
  }
  return out;
}

template <typename S>
std::vector<double> predict_timelines(const ModelParams<S>& params,
                                      const std::vector<TokenTimeline>& timelines) {
  std::vector<double> out;
  out.reserve(timelines.size());
  for (const auto& t : timelines) out.push_back(predict_outcome(params, std::span<const TokenId>(t.tokens)));
  return out;
}

template <typename S>
std::optional<double> validation_auc(const ModelParams<S>& params,
                                     const std::vector<TokenTimeline>& val, Outcome outcome) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const auto& t : val) {
    auto y = outcome_label(t.labels, outcome);
    if (!y || t.tokens.empty()) continue;
    scores.push_back(predict_outcome(params, std::span<const TokenId>(t.tokens)));
    labels.push_back(*y ? 1 : 0);
  }
  return try_roc_auc(scores, labels);
}

template <typename S>
LocalFinetuneResult<S> local_finetune(const ModelParams<S>& params,
                                      const std::vector<TokenTimeline>& train,
                                      const std::vector<TokenTimeline>& val, Outcome outcome,
                                      const std::vector<LocalCandidate>& search_space,
                                      const FinetuneOptions& base) {
  if (search_space.empty()) throw ConfigError("local_finetune: empty search space");
  LocalFinetuneResult<S> out;
  ModelParams<S> start = params;
  add_classification_head(start);
  out.candidates = search_space;
  std::vector<std::optional<ModelParams<S>>> snapshots(search_space.size());

  // One run per learning rate; each epoch count in the grid is a snapshot of
  // that run, which is identical to training for that many epochs.
  std::map<double, std::size_t> max_epochs;
  for (const auto& c : search_space) {
    if (!(c.lr >= 0.0)) throw ConfigError("local_finetune: negative learning rate");
    if (c.epochs == 0) continue;
    auto& m = max_epochs[c.lr];
    m = std::max(m, c.epochs);
  }
  std::optional<double> start_auc;
  bool start_done = false;
  for (std::size_t i = 0; i < search_space.size(); ++i) {
    if (search_space[i].epochs != 0) continue;
    if (!start_done) {
      start_auc = validation_auc(start, val, outcome);
      start_done = true;
    }
    out.candidates[i].val_auc = start_auc;
    snapshots[i] = start;
  }
  for (const auto& [lr, epochs] : max_epochs) {
    FinetuneOptions o = base;
    o.lr = lr;
    o.epochs = epochs;
    auto res = finetune_classifier<S>(start, train, outcome, o,
                                      [&](std::size_t e, const ModelParams<S>& p) {
                                        for (std::size_t i = 0; i < search_space.size(); ++i) {
                                          if (search_space[i].lr != lr || search_space[i].epochs != e)
                                            continue;
                                          out.candidates[i].val_auc = validation_auc(p, val, outcome);
                                          snapshots[i] = p;
                                        }
                                      });
    for (auto& w : res.warnings)
      if (std::find(out.warnings.begin(), out.warnings.end(), w) == out.warnings.end())
        out.warnings.push_back(w);
  }

  std::size_t best = 0;
  bool any = false;
  for (std::size_t i = 0; i < out.candidates.size(); ++i) {
    const auto& a = out.candidates[i].val_auc;
    if (!a) continue;
    if (!any || *a > *out.candidates[best].val_auc) {
      best = i;
      any = true;
    }
  }
  if (!any) out.warnings.push_back("local_finetune: validation AUC undefined for every candidate");
  out.chosen = out.candidates[best];
  out.params = std::move(*snapshots[best]);
  return out;
}

#define CLIFFM_INSTANTIATE(S)                                                                   \
  template double packed_nll<S>(const ModelParams<S>&, const std::vector<TokenTimeline>&,      \
                                std::size_t, std::size_t, std::uint64_t, std::size_t);         \
  template PretrainResult<S> pretrain<S>(ModelParams<S>, const std::vector<TokenTimeline>&,    \
                                         const std::vector<TokenTimeline>&,                    \
                                         const PretrainOptions&);                              \
  template FinetuneResult<S> finetune_classifier<S>(                                           \
      ModelParams<S>, const std::vector<TokenTimeline>&, Outcome, const FinetuneOptions&,      \
      const std::function<void(std::size_t, const ModelParams<S>&)>&);                         \
  template std::vector<double> predict_timelines<S>(const ModelParams<S>&,                     \
                                                    const std::vector<TokenTimeline>&);        \
  template std::optional<double> validation_auc<S>(const ModelParams<S>&,                      \
                                                   const std::vector<TokenTimeline>&, Outcome); \
  template LocalFinetuneResult<S> local_finetune<S>(                                           \
      const ModelParams<S>&, const std::vector<TokenTimeline>&,                                \
      const std::vector<TokenTimeline>&, Outcome, const std::vector<LocalCandidate>&,          \
      const FinetuneOptions&);

CLIFFM_INSTANTIATE(float)
CLIFFM_INSTANTIATE(double)

#undef CLIFFM_INSTANTIATE

}  // namespace cliffm
