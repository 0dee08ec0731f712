#include <gtest/gtest.h>

#include "cliffm/training.hpp"
#include "test_support.hpp"

using namespace cliffm;
using namespace cliffm::testing;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_context = 32;
  c.seed = 1;
  c.positions = "alibi";
  return c;
}

// Label is carried by the final token (5 positive, 6 negative); the rest is
// noise from tokens 7..19.
std::vector<TokenTimeline> separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<TokenId> noise(7, 19);
  std::uniform_int_distribution<std::size_t> len(3, 12);
  std::vector<TokenTimeline> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenTimeline t;
    t.hospitalization_id = "H" + std::to_string(seed) + "_" + std::to_string(i);
    t.tokens.push_back(1);
    for (std::size_t k = len(rng); k > 0; --k) t.tokens.push_back(noise(rng));
    const bool y = i % 2 == 0;
    t.tokens.push_back(y ? 5 : 6);
    t.event_time.assign(t.tokens.size(), 0);
    t.labels.hospitalization_id = t.hospitalization_id;
    t.labels.same_admission_death = y;
    out.push_back(std::move(t));
  }
  return out;
}

PretrainOptions quick_pretrain(std::size_t steps) {
  PretrainOptions o;
  o.steps = steps;
  o.block_len = 16;
  o.rows_per_batch = 4;
  o.lr = 3e-3;
  o.warmup_steps = 2;
  o.eval_every = 5;
  o.seed = 11;
  return o;
}

}  // namespace

TEST(Pretrain, ZeroStepsReturnsInit) {
  auto init = init_model<double>(small_model());
  auto r = pretrain(init, separable(10, 1), {}, quick_pretrain(0));
  for (std::size_t i = 0; i < init.tensors.size(); ++i) EXPECT_EQ(r.params.tensors[i], init.tensors[i]);
  EXPECT_THROW(pretrain(init, {}, {}, quick_pretrain(1)), IntegrityError);
}

TEST(Pretrain, DeterministicAndImproves) {
  auto init = init_model<double>(small_model());
  auto train = separable(40, 2), val = separable(10, 3);
  auto a = pretrain(init, train, val, quick_pretrain(30));
  auto b = pretrain(init, train, val, quick_pretrain(30));
  for (std::size_t i = 0; i < a.params.tensors.size(); ++i)
    EXPECT_EQ(a.params.tensors[i], b.params.tensors[i]);
  ASSERT_TRUE(a.final_val_nll);
  EXPECT_LT(*a.final_val_nll, packed_nll(init, val, 16, 4, 0));
  EXPECT_FALSE(a.log.empty());
  EXPECT_NE(train_log_csv(a.log).find("step"), std::string::npos);
}

TEST(Finetune, SeparableOutcomeReachesPerfectAuc) {
  auto init = init_model<double>(small_model());
  FinetuneOptions o;
  o.lr = 3e-3;
  o.epochs = 6;
  o.batch_size = 8;
  o.seed = 4;
  std::size_t epochs_seen = 0;
  std::function<void(std::size_t, const ModelParams<double>&)> on_epoch =
      [&](std::size_t e, const ModelParams<double>&) { epochs_seen = e; };
  auto r = finetune_classifier(init, separable(64, 5), Outcome::kMortality, o, on_epoch);
  EXPECT_EQ(epochs_seen, 6u);
  EXPECT_EQ(r.epoch_loss.size(), 6u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  auto auc = validation_auc(r.params, separable(40, 6), Outcome::kMortality);
  ASSERT_TRUE(auc);
  EXPECT_GT(*auc, 0.99);
}

TEST(Finetune, UrtModeRunsAndIsDeterministic) {
  auto init = init_model<double>(small_model());
  FinetuneOptions o;
  o.mode = FinetuneMode::kUrt;
  o.lr = 1e-3;
  o.epochs = 2;
  o.seed = 9;
  auto a = finetune_classifier(init, separable(20, 7), Outcome::kMortality, o);
  auto b = finetune_classifier(init, separable(20, 7), Outcome::kMortality, o);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  o.batch_size = 0;
  EXPECT_THROW(finetune_classifier(init, separable(20, 7), Outcome::kMortality, o), ConfigError);
}

TEST(Finetune, NoLabelledStaysIsError) {
  auto data = separable(10, 8);
  for (auto& t : data) t.labels.icu_within_24h = t.labels.icu_any = true;
  FinetuneOptions o;
  EXPECT_THROW(finetune_classifier(init_model<double>(small_model()), data, Outcome::kIcuAdmission, o),
               IntegrityError);
}

TEST(LocalFinetune, PicksBestValidationAuc) {
  auto init = init_model<double>(small_model());
  auto train = separable(48, 10), val = separable(30, 11);
  FinetuneOptions base;
  base.batch_size = 8;
  base.seed = 3;
  std::vector<LocalCandidate> grid{{0.0, 0}, {3e-3, 4}, {1e-5, 1}};
  auto r = local_finetune(init, train, val, Outcome::kMortality, grid, base);
  ASSERT_EQ(r.candidates.size(), 3u);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i)
    if (*r.candidates[i].val_auc > *r.candidates[best].val_auc) best = i;
  EXPECT_EQ(r.chosen.lr, r.candidates[best].lr);
  EXPECT_EQ(r.chosen.epochs, r.candidates[best].epochs);
  EXPECT_EQ(r.chosen.epochs, 4u);
  EXPECT_NEAR(*validation_auc(r.params, val, Outcome::kMortality), *r.chosen.val_auc, 1e-12);
}

TEST(LocalFinetune, SingleCandidateAndErrors) {
  auto init = init_model<double>(small_model());
  add_classification_head(init);
  auto train = separable(10, 12), val = separable(10, 13);
  FinetuneOptions base;
  auto r = local_finetune(init, train, val, Outcome::kMortality, {{0.0, 0}}, base);
  EXPECT_EQ(r.chosen.epochs, 0u);
  for (std::size_t i = 0; i < init.tensors.size(); ++i) EXPECT_EQ(r.params.tensors[i], init.tensors[i]);
  EXPECT_THROW(local_finetune(init, train, val, Outcome::kMortality, {}, base), ConfigError);
  EXPECT_THROW(local_finetune(init, train, val, Outcome::kMortality, {{-1.0, 2}}, base), ConfigError);
}
