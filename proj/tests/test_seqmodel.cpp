#include <gtest/gtest.h>

#include <cmath>

#include "cliffm/checkpoint.hpp"
#include "cliffm/seqmodel.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace cliffm;
using namespace cliffm::testing;

namespace {

ModelConfig tiny(const std::string& positions = "learned") {
  ModelConfig c;
  c.vocab_size = 30;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 32;
  c.max_context = 16;
  c.seed = 3;
  c.positions = positions;
  return c;
}

Batch left_padded(std::vector<std::vector<TokenId>> rows, std::size_t cols,
                  std::vector<std::int8_t> labels) {
  std::vector<TokenTimeline> ts;
  for (auto& r : rows) {
    TokenTimeline t;
    t.tokens = r;
    t.event_time.assign(r.size(), 0);
    ts.push_back(t);
  }
  Batch b = left_pad_batch(ts, 0, cols);
  b.labels = std::move(labels);
  return b;
}

}  // namespace

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c = tiny();
  c.validate();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(init_model<double>(c), ConfigError);
  c = tiny();
  c.positions = "rotary";
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny("alibi");
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
}

TEST(Init, DeterministicInSeed) {
  auto a = init_model<double>(tiny()), b = init_model<double>(tiny());
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i], b.tensors[i]);
  ModelConfig other = tiny();
  other.seed = 4;
  EXPECT_NE(init_model<double>(other).tensors[0], a.tensors[0]);
  EXPECT_FALSE(a.has_head());
  EXPECT_EQ(a.position_embedding().rows(), 16);
  EXPECT_EQ(init_model<double>(tiny("alibi")).position_embedding().rows(), 0);
}

// Changing a later token must not move earlier hidden states.
TEST(Forward, Causal) {
  for (const char* pos : {"learned", "alibi"}) {
    auto p = init_model<double>(tiny(pos));
    std::vector<TokenId> a{1, 5, 7, 9, 11}, b{1, 5, 7, 9, 20};
    Matrix<double> ha = hidden_states(p, a), hb = hidden_states(p, b);
    EXPECT_LT((ha.topRows(4) - hb.topRows(4)).norm(), 1e-12) << pos;
    EXPECT_GT((ha.row(4) - hb.row(4)).norm(), 1e-6) << pos;
  }
}

TEST(Forward, IdenticalRowsAndLeadingPad) {
  auto p = init_model<double>(tiny());
  Batch b = left_padded({{4, 5, 6}, {4, 5, 6}, {4, 5, 6, 7, 8}}, 6, {0, 0, 0});
  auto out = forward(p, b);
  EXPECT_EQ(out.hidden[0], out.hidden[1]);
  EXPECT_TRUE(out.hidden[0].topRows(3).isZero());
  std::vector<TokenId> plain{4, 5, 6};
  EXPECT_LT((out.hidden[0].bottomRows(3) - hidden_states(p, plain)).norm(), 1e-12);
}

TEST(Loss, ZeroOutputGivesLogVocab) {
  auto p = init_model<double>(tiny());
  p.tensors[p.output_index()].setZero();
  Rng rng(1);
  Batch b = random_packed_batch(30, 2, 8, rng);
  EXPECT_NEAR(batch_loss(p, b), std::log(30.0), 1e-12);
}

TEST(Gradients, FiniteDifferenceLearnedPositions) {
  auto p = init_model<double>(tiny());
  Rng rng(5);
  jitter(p, 0.3, rng);
  Batch b = random_packed_batch(30, 2, 8, rng, {0, 5});
  EXPECT_LT(max_gradient_error(p, b), 1e-6);
}

TEST(Gradients, FiniteDifferenceAlibiAndHead) {
  auto p = init_model<double>(tiny("alibi"));
  Rng rng(6);
  jitter(p, 0.3, rng);
  EXPECT_LT(max_gradient_error(p, random_packed_batch(30, 2, 8, rng, {3})), 1e-6);
  add_classification_head(p);
  jitter(p, 0.3, rng);
  Batch cls = left_padded({{3, 4, 5, 6}, {7, 8, 9, 10, 11, 12}}, 6, {1, 0});
  EXPECT_LT(max_gradient_error(p, cls), 1e-6);
}

TEST(Gradients, FiniteDifferenceTiedEmbeddings) {
  ModelConfig c = tiny("alibi");
  c.tie_embeddings = true;
  auto p = init_model<double>(c);
  EXPECT_EQ(p.tensors[p.output_index()].rows(), 0);
  EXPECT_EQ(p.projection_index(), 0u);
  Rng rng(8);
  jitter(p, 0.3, rng);
  EXPECT_LT(max_gradient_error(p, random_packed_batch(30, 2, 8, rng, {2})), 1e-6);
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
}

TEST(Training, ZeroLearningRateLeavesWeights) {
  auto p = init_model<double>(tiny());
  auto before = p.tensors;
  AdamOptions o;
  o.lr = 0;
  o.schedule = LrSchedule::kConstant;
  auto opt = init_optim(p, o);
  Rng rng(2);
  train_step(p, opt, random_packed_batch(30, 2, 8, rng));
  for (std::size_t i = 0; i < p.tensors.size(); ++i) EXPECT_EQ(p.tensors[i], before[i]);
}

TEST(Training, RepeatedBatchLossDecreases) {
  auto p = init_model<double>(tiny());
  AdamOptions o;
  o.lr = 1e-2;
  o.schedule = LrSchedule::kConstant;
  auto opt = init_optim(p, o);
  Rng rng(2);
  Batch b = random_packed_batch(30, 2, 8, rng);
  double first = train_step(p, opt, b);
  for (int i = 0; i < 30; ++i) train_step(p, opt, b);
  EXPECT_LT(batch_loss(p, b), 0.5 * first);
}

TEST(Training, WarmupCosineSchedule) {
  AdamOptions o;
  o.lr = 1.0;
  o.warmup_steps = 10;
  o.total_steps = 110;
  o.min_lr_ratio = 0.1;
  EXPECT_NEAR(o.lr_at(4), 0.5, 1e-12);
  EXPECT_NEAR(o.lr_at(9), 1.0, 1e-12);
  EXPECT_NEAR(o.lr_at(109), 0.1, 1e-2);
  for (std::size_t s = 10; s < 109; ++s) EXPECT_GE(o.lr_at(s), o.lr_at(s + 1));
}

TEST(Extraction, RepresentationMatchesTrajectoryAndHiddenStates) {
  auto p = init_model<double>(tiny("alibi"));
  TokenTimeline t;
  t.tokens = {1, 4, 9, 2, 6, 6, 8};
  t.event_time.assign(7, 0);
  Matrix<double> traj = extract_trajectory(p, t);
  ASSERT_EQ(traj.rows(), 7);
  EXPECT_LT((extract_representation(p, t) - traj.row(6)).norm(), 1e-12);
  EXPECT_LT((traj - hidden_states(p, t.tokens)).norm(), 1e-12);
  t.tokens.assign(17, 5);
  t.event_time.assign(17, 0);
  EXPECT_THROW(extract_trajectory(p, t), ConfigError);
}

TEST(Predict, ZeroHeadIsHalfAndPrefixesAgree) {
  auto p = init_model<double>(tiny());
  add_classification_head(p);
  std::vector<TokenId> toks{1, 4, 9, 2, 6};
  EXPECT_DOUBLE_EQ(predict_outcome(p, toks), 0.5);
  Rng rng(9);
  jitter(p, 0.2, rng);
  auto all = predict_prefixes(p, toks);
  ASSERT_EQ(all.size(), 5u);
  for (std::size_t i = 1; i <= 5; ++i)
    EXPECT_NEAR(all[i - 1], predict_outcome(p, std::span(toks).first(i)), 1e-12);
}

TEST(Checkpoint, RoundTrip) {
  auto p = init_model<float>(tiny("alibi"));
  add_classification_head(p);
  TempDir dir;
  save_checkpoint(p, dir / "m.ckpt", R"({"step": 7})");
  LoadedCheckpoint back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.params.config, p.config);
  EXPECT_EQ(back.params.names, p.names);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) EXPECT_EQ(back.params.tensors[i], p.tensors[i]);
  EXPECT_EQ(nlohmann::json::parse(back.metadata_json)["step"], 7);
  spit(dir / "bad.ckpt", "NOTACKPT");
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), ArtifactError);
}
