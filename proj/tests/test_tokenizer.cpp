#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "cliffm/synth.hpp"
#include "cliffm/tokenizer.hpp"
#include "test_support.hpp"

using namespace cliffm;
using namespace cliffm::testing;

namespace {

// One adult stay with no events beyond the ones the caller adds.
BundleBuilder one_stay(double los_hours = 48) {
  BundleBuilder bb;
  bb.patient("P1").stay("H1", "P1", kT0, los_hours);
  return bb;
}

struct Fitted {
  Vocabulary vocab;
  DecileBinner binner;
};

Fitted fit(const ClifBundle& b) { return {learn_vocab(b), fit_deciles(b)}; }

TokenTimeline make_timeline(const Vocabulary& v, std::vector<TokenId> tokens) {
  TokenTimeline t;
  t.hospitalization_id = "H";
  t.tokens = std::move(tokens);
  t.event_time.assign(t.tokens.size(), 0);
  (void)v;
  return t;
}

std::vector<TokenId> valid_prefix(const Vocabulary& v) {
  return {v.tl_start(), *v.find("race:white"), *v.find("ethnicity:non_hispanic"),
          *v.find("sex:female"), v.decile(4), *v.find("admission_type:ed")};
}

}  // namespace

TEST(Vocabulary, LayoutAndCounting) {
  BundleBuilder bb = one_stay();
  for (const char* c : {"heart_rate", "sbp", "temp_c"}) bb.vital("H1", kT0 + hours(1), c, 1);
  for (const char* c : {"sodium", "potassium", "lactate", "bun", "wbc"})
    bb.lab("H1", kT0 + hours(1), c, 1);
  Vocabulary v = learn_vocab(bb.b, {.include_builtin = false});
  EXPECT_EQ(v.string_of(v.pad()), "PAD");
  EXPECT_EQ(v.string_of(v.tl_start()), "TL_START");
  EXPECT_EQ(v.string_of(v.tl_end()), "TL_END");
  EXPECT_EQ(v.count_of_kind(TokenKind::kDecile), 10u);
  for (int d = 0; d < 10; ++d) EXPECT_EQ(v.string_of(v.decile(d)), "D" + std::to_string(d));
  // Observed categories plus the explicit unknown bucket.
  EXPECT_EQ(v.count_of_kind(TokenKind::kVital), 3u + 1u);
  EXPECT_EQ(v.count_of_kind(TokenKind::kLab), 5u + 1u);
  ASSERT_TRUE(v.find("vitals:temp_c"));
  EXPECT_EQ(v.kind_of(*v.find("vitals:temp_c")), TokenKind::kVital);
  for (std::size_t i = 0; i < v.size(); ++i)
    EXPECT_EQ(*v.find(v.string_of(static_cast<TokenId>(i))), static_cast<TokenId>(i));
  EXPECT_EQ(v.category(TokenKind::kLab, "troponin"), *v.find("labs:unknown"));
}

TEST(Vocabulary, DeterministicAndSorted) {
  ClifBundle b = synth_cohort({site_profile("A"), 40}, 3);
  Vocabulary v1 = learn_vocab(b), v2 = learn_vocab(b);
  EXPECT_EQ(v1, v2);
  for (std::size_t i = 14; i < v1.size(); ++i)
    EXPECT_LT(v1.string_of(static_cast<TokenId>(i - 1)), v1.string_of(static_cast<TokenId>(i)));
  EXPECT_EQ(Vocabulary::from_json(v1.to_json()), v1);
  EXPECT_THROW(learn_vocab(ClifBundle{}), IntegrityError);
}

TEST(DecileBinner, OneToHundredCuts) {
  BundleBuilder bb = one_stay(200);
  for (int i = 1; i <= 100; ++i) bb.lab("H1", kT0 + hours(1), "sodium", i);
  DecileBinner d = fit_deciles(bb.b);
  const auto* e = d.find("labs:sodium");
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->samples, 100u);
  EXPECT_FALSE(e->degenerate);
  for (int k = 0; k < 9; ++k) EXPECT_NEAR(e->cuts[k], 10.9 + 9.9 * k, 1e-9) << k;
  EXPECT_EQ(d.bin("labs:sodium", 5), 0);
  EXPECT_EQ(d.bin("labs:sodium", 10.9), 1);  // ties go up
  EXPECT_EQ(d.bin("labs:sodium", -1e9), 0);
  EXPECT_EQ(d.bin("labs:sodium", 1e9), 9);
  EXPECT_EQ(d.bin("labs:never_seen", 3), 0);
  DecileBinner back = DecileBinner::from_json(d.to_json());
  EXPECT_EQ(back.find("labs:sodium")->cuts, e->cuts);
}

TEST(DecileBinner, ConstantCategoryIsDegenerate) {
  BundleBuilder bb = one_stay();
  for (int i = 0; i < 50; ++i) bb.vital("H1", kT0 + hours(1), "weight_kg", 80);
  DecileBinner d = fit_deciles(bb.b);
  EXPECT_TRUE(d.find("vitals:weight_kg")->degenerate);
  EXPECT_EQ(d.bin("vitals:weight_kg", 80), 0);
}

TEST(DecileBinner, QuantileOracle) {
  std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(empirical_quantile(v, 0.0), 1);
  EXPECT_DOUBLE_EQ(empirical_quantile(v, 1.0), 4);
  EXPECT_DOUBLE_EQ(empirical_quantile(v, 0.5), 2.5);
  EXPECT_THROW(empirical_quantile({}, 0.5), NumericError);
}

TEST(Tokenize, EmptyStayIsEightTokens) {
  BundleBuilder bb = one_stay();
  auto [v, d] = fit(bb.b);
  TokenTimeline t = tokenize_hospitalization(bb.b, v, d, "H1");
  ASSERT_EQ(t.size(), 8u);
  EXPECT_EQ(t.tokens[0], v.tl_start());
  EXPECT_EQ(v.kind_of(t.tokens[1]), TokenKind::kRace);
  EXPECT_EQ(v.kind_of(t.tokens[2]), TokenKind::kEthnicity);
  EXPECT_EQ(v.kind_of(t.tokens[3]), TokenKind::kSex);
  EXPECT_TRUE(v.is_decile(t.tokens[4]));
  EXPECT_EQ(v.kind_of(t.tokens[5]), TokenKind::kAdmissionType);
  EXPECT_EQ(t.tokens[6], *v.find("discharge:home"));
  EXPECT_EQ(t.tokens[7], v.tl_end());
  EXPECT_EQ(t.event_time[7], hours(48));
  EXPECT_TRUE(validate_grammar(t, v).ok);
  EXPECT_THROW(tokenize_hospitalization(bb.b, v, d, "nope"), IntegrityError);
}

TEST(Tokenize, LabIsCategoryDecilePair) {
  BundleBuilder bb = one_stay();
  bb.lab("H1", kT0 + hours(2), "lactate", 2.0);
  auto [v, d] = fit(bb.b);
  TokenTimeline t = tokenize_hospitalization(bb.b, v, d, "H1");
  ASSERT_EQ(t.size(), 10u);
  EXPECT_EQ(t.tokens[6], *v.find("labs:lactate"));
  EXPECT_TRUE(v.is_decile(t.tokens[7]));
  EXPECT_EQ(t.event_time[6], hours(2));
}

TEST(Tokenize, ChronologicalAndRespiratory) {
  BundleBuilder bb = one_stay();
  bb.vital("H1", kT0 + hours(3), "sbp", 120).vital("H1", kT0 + hours(1), "heart_rate", 90);
  bb.resp("H1", kT0 + hours(2), "ac_vc", "imv", true).adt("H1", kT0 + hours(4), "icu");
  auto [v, d] = fit(bb.b);
  TokenTimeline t = tokenize_hospitalization(bb.b, v, d, "H1");
  std::vector<TokenId> events(t.tokens.begin() + 6, t.tokens.end() - 2);
  std::vector<TokenId> want = {*v.find("vitals:heart_rate"), events[1],
                               *v.find("resp_mode:ac_vc"), *v.find("resp_device:imv"),
                               *v.find("prone:yes"), *v.find("vitals:sbp"), events[6],
                               *v.find("adt:icu")};
  EXPECT_EQ(events, want);
  EXPECT_TRUE(std::is_sorted(t.event_time.begin(), t.event_time.end()));
  EXPECT_TRUE(validate_grammar(t, v).ok) << validate_grammar(t, v).message;
}

TEST(Tokenize, SyntheticTimelinesAreGrammatical) {
  ClifBundle b = filter_cohort(synth_cohort({site_profile("B"), 60}, 4));
  auto [v, d] = fit(b);
  for (const auto& t : tokenize_all(b, v, d)) {
    auto r = validate_grammar(t, v);
    ASSERT_TRUE(r.ok) << t.hospitalization_id << ": " << r.message;
    auto r24 = validate_grammar(truncate_24h(t, v), v);
    EXPECT_TRUE(r24.ok) << r24.message;
  }
}

TEST(Truncate24h, Cases) {
  BundleBuilder bb = one_stay(72);
  bb.vital("H1", kT0 + hours(1), "heart_rate", 80).vital("H1", kT0 + hours(24), "sbp", 110);
  bb.vital("H1", kT0 + hours(24) + 1, "map", 70);
  auto [v, d] = fit(bb.b);
  TokenTimeline full = tokenize_hospitalization(bb.b, v, d, "H1");
  TokenTimeline t = truncate_24h(full, v);
  ASSERT_EQ(t.size(), 10u);
  EXPECT_EQ(t.tokens[8], *v.find("vitals:sbp"));
  EXPECT_EQ(t.labels, full.labels);
  EXPECT_EQ(truncate_24h(t, v), t);
  // Cap lands between category and decile: both dropped.
  EXPECT_EQ(truncate_24h(full, v, 9).size(), 8u);
  EXPECT_EQ(truncate_24h(full, v, 8).size(), 8u);
}

TEST(Truncate24h, LongTimelineCapsAt1024) {
  BundleBuilder bb = one_stay(48);
  for (int i = 0; i < 1000; ++i) bb.lab("H1", kT0 + i * 60000, "glucose_serum", i);
  auto [v, d] = fit(bb.b);
  TokenTimeline t = truncate_24h(tokenize_hospitalization(bb.b, v, d, "H1"), v);
  // 6 prefix tokens + pairs: the cut at 1024 falls after a decile.
  EXPECT_EQ(t.size(), 1024u);
  EXPECT_TRUE(validate_grammar(t, v).ok);
  TokenTimeline odd = truncate_24h(tokenize_hospitalization(bb.b, v, d, "H1"), v, 1023);
  EXPECT_EQ(odd.size(), 1022u);
  EXPECT_EQ(truncate_24h(t, v), t);
}

TEST(UniformRandomTruncate, UniformOverPrefixLengths) {
  Vocabulary v = learn_vocab(one_stay().b);
  TokenTimeline t = make_timeline(v, valid_prefix(v));
  t.tokens.resize(4);
  t.event_time.resize(4);
  Rng rng(7);
  std::array<int, 5> counts{};
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[uniform_random_truncate(t, rng).size()];
  double chi2 = 0;
  for (int k = 1; k <= 4; ++k) {
    EXPECT_NEAR(counts[k] / double(n), 0.25, 0.01);
    chi2 += std::pow(counts[k] - n / 4.0, 2) / (n / 4.0);
  }
  EXPECT_LT(chi2, 16.27);  // chi-square, 3 df, p = 0.001
  t.tokens.resize(1);
  t.event_time.resize(1);
  EXPECT_EQ(uniform_random_truncate(t, rng).size(), 1u);
  Rng a(5), b(5);
  EXPECT_EQ(uniform_random_truncate(t, a), uniform_random_truncate(t, b));
  EXPECT_THROW(uniform_random_truncate(TokenTimeline{}, rng), IntegrityError);
}

namespace {
TokenTimeline seq(std::size_t n, TokenId start) {
  TokenTimeline t;
  for (std::size_t i = 0; i < n; ++i) t.tokens.push_back(start + static_cast<TokenId>(i));
  t.event_time.assign(n, 0);
  return t;
}
}  // namespace

TEST(PackSequences, SingleBlockEqualsTimeline) {
  Rng rng(1);
  auto batches = pack_sequences({seq(10, 1)}, 0, 10, 0, rng);
  ASSERT_EQ(batches.size(), 1u);
  ASSERT_EQ(batches[0].rows, 1u);
  EXPECT_EQ(batches[0].tokens, seq(10, 1).tokens);
  for (std::size_t c = 0; c + 1 < 10; ++c) EXPECT_EQ(batches[0].targets[c], static_cast<TokenId>(c + 2));
  EXPECT_EQ(batches[0].loss_mask[9], 0);
}

TEST(PackSequences, RemainderPaddedAndNoGaps) {
  Rng rng(1);
  auto batches = pack_sequences({seq(12, 1), seq(13, 20)}, 0, 10, 0, rng, 8);
  ASSERT_EQ(batches.size(), 1u);
  const Batch& b = batches[0];
  EXPECT_EQ(b.rows, 3u);
  EXPECT_EQ(b.token(1, 1), 1 + 11);
  EXPECT_EQ(b.token(1, 2), 20);  // no PAD between timelines
  EXPECT_EQ(b.token(2, 4), 32);
  EXPECT_EQ(b.token(2, 5), 0);
  EXPECT_EQ(b.boundaries, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 2}}));
  EXPECT_THROW(pack_sequences({seq(3, 1)}, 0, 1, 0, rng), ConfigError);
}

// Loss mask excludes PAD inputs and each block's last position.
TEST(PackSequences, MaskProperties) {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<TokenTimeline> ts;
    std::size_t total = 0;
    for (int i = 0; i < 7; ++i) {
      ts.push_back(seq(len(rng), 1));
      total += ts.back().size();
    }
    std::size_t block = 2 + trial % 17;
    std::size_t non_pad = 0, unmasked = 0, blocks = 0, last_real = 0;
    for (const Batch& b : pack_sequences(ts, 0, block, 4, rng, 3)) {
      blocks += b.rows;
      for (std::size_t k = 0; k < b.tokens.size(); ++k) {
        EXPECT_EQ(b.mask[k], b.tokens[k] != 0);
        non_pad += b.tokens[k] != 0;
        unmasked += b.loss_mask[k];
        if (b.loss_mask[k]) EXPECT_NE(b.tokens[k], 0);
      }
      for (std::size_t r = 0; r < b.rows; ++r) last_real += b.token(r, block - 1) != 0;
    }
    EXPECT_EQ(non_pad, total);
    EXPECT_EQ(unmasked, non_pad - last_real);
    EXPECT_LE(non_pad - blocks, unmasked);
  }
}

TEST(LeftPadBatch, Layout) {
  TokenTimeline a = seq(3, 5), b = seq(5, 5);
  a.labels.same_admission_death = true;
  Batch batch = left_pad_batch({a, b}, 0, 5, Outcome::kMortality);
  EXPECT_EQ(batch.token(0, 0), 0);
  EXPECT_EQ(batch.token(0, 1), 0);
  EXPECT_EQ(batch.token(0, 2), 5);
  EXPECT_EQ(batch.mask[1], 0);
  EXPECT_EQ(batch.mask[2], 1);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(batch.mask[5 + c], 1);
  EXPECT_EQ(batch.labels, (std::vector<std::int8_t>{1, 0}));
  a.labels.icu_within_24h = a.labels.icu_any = true;
  EXPECT_EQ(left_pad_batch({a}, 0, 5, Outcome::kIcuAdmission).labels[0], -1);
  Batch empty = left_pad_batch({}, 0, 5);
  EXPECT_EQ(empty.rows, 0u);
  EXPECT_THROW(left_pad_batch({seq(6, 1)}, 0, 5), IntegrityError);
}

TEST(Grammar, Violations) {
  Vocabulary v = learn_vocab(one_stay().b);
  auto check = [&](std::vector<TokenId> toks, const std::string& msg, std::size_t pos) {
    auto r = validate_grammar(make_timeline(v, std::move(toks)), v);
    EXPECT_FALSE(r.ok);
    EXPECT_EQ(r.message, msg);
    EXPECT_EQ(r.position, pos);
  };
  check({v.decile(0)}, "decile without category", 0);
  auto p = valid_prefix(v);
  auto with = [&](std::vector<TokenId> tail) {
    auto t = p;
    t.insert(t.end(), tail.begin(), tail.end());
    return t;
  };
  check(with({v.tl_end()}), "TL_END before discharge token", 6);
  check(with({*v.find("labs:sodium"), *v.find("discharge:home")}), "category without decile", 6);
  check(with({*v.find("adt:icu"), v.decile(2)}), "decile without category", 7);
  check(with({*v.find("resp_device:imv")}), "respiratory device without mode", 6);
  check(with({*v.find("discharge:home"), v.tl_end(), v.tl_end()}), "tokens after TL_END", 7);
  check(with({v.pad()}), "PAD inside timeline", 6);
  EXPECT_TRUE(validate_grammar(make_timeline(v, with({*v.find("discharge:home"), v.tl_end()})), v).ok);
  TokenTimeline back = make_timeline(v, p);
  back.event_time[3] = 5;
  EXPECT_FALSE(validate_grammar(back, v).ok);
}

TEST(Timelines, JsonLinesRoundTrip) {
  ClifBundle b = filter_cohort(synth_cohort({site_profile("A"), 20}, 9));
  auto [v, d] = fit(b);
  auto ts = tokenize_all(b, v, d);
  TempDir dir;
  write_timelines(ts, dir / "t.jsonl", "cliffm test");
  EXPECT_EQ(read_timelines(dir / "t.jsonl"), ts);
}

TEST(Properties, MonotoneBinningAndDecileMass) {
  ClifBundle b = filter_cohort(synth_cohort({site_profile("A"), 300}, 21));
  DecileBinner d = fit_deciles(b);
  std::map<std::string, std::vector<double>> values;
  for (const auto& m : b.vitals) values["vitals:" + m.category].push_back(m.value);
  for (const auto& m : b.labs) values["labs:" + m.category].push_back(m.value);
  std::size_t checked = 0;
  for (auto& [key, vals] : values) {
    std::sort(vals.begin(), vals.end());
    int prev = 0;
    std::array<std::size_t, 10> mass{};
    for (double x : vals) {
      int k = d.bin(key, x);
      EXPECT_GE(k, prev) << key;
      prev = k;
      ++mass[k];
    }
    if (vals.size() < 1000 || d.find(key)->degenerate) continue;
    ++checked;
    for (int k = 0; k < 10; ++k)
      EXPECT_NEAR(mass[k] / double(vals.size()), 0.1, 0.02) << key << " D" << k;
  }
  EXPECT_GT(checked, 3u);
}

TEST(Properties, SiteTimelineLengths) {
  auto mean_len = [](const char* site) {
    ClifBundle b = filter_cohort(synth_cohort({site_profile(site), 1000}, 17));
    auto [v, d] = fit(b);
    BundleIndex index(b);
    double sum = 0;
    for (const auto& h : b.hospitalizations)
      sum += static_cast<double>(
          truncate_24h(tokenize_hospitalization(index, v, d, h.hospitalization_id), v).size());
    return sum / static_cast<double>(b.hospitalizations.size());
  };
  double a = mean_len("A");
  EXPECT_GE(a, 96.9);
  EXPECT_LE(a, 101.7);
  double b = mean_len("B");
  EXPECT_GE(b, 380.0);
  EXPECT_LE(b, 420.0);
}
