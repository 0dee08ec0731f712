#ifndef CLIFFM_TOKENIZER_HPP
#define CLIFFM_TOKENIZER_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cliffm/clif.hpp"

namespace cliffm {

using TokenId = std::int32_t;

enum class TokenKind : std::uint8_t {
  kSpecial,
  kDecile,
  kRace,
  kEthnicity,
  kSex,
  kAdmissionType,
  kLocation,
  kVital,
  kLab,
  kMed,
  kAssessment,
  kRespMode,
  kRespDevice,
  kProne,
  kDischarge,
};

// Category tokens of these kinds are always followed by a decile token.
bool takes_value(TokenKind kind);
// Token-string prefix of a kind, e.g. "vitals" for kVital.
const char* kind_prefix(TokenKind kind);

inline constexpr int kNumDeciles = 10;

// Dense token registry. Layout: PAD, TL_START, TL_END, D0..D9, then every
// category token sorted by (table prefix, category name).
class Vocabulary {
 public:
  struct Options {
    bool include_builtin = true;
  };

  Vocabulary() = default;

  TokenId pad() const { return 0; }
  TokenId tl_start() const { return 1; }
  TokenId tl_end() const { return 2; }
  TokenId decile(int d) const { return 3 + d; }
  bool is_decile(TokenId id) const { return id >= 3 && id < 3 + kNumDeciles; }

  std::size_t size() const { return strings_.size(); }
  const std::string& string_of(TokenId id) const { return strings_.at(id); }
  TokenKind kind_of(TokenId id) const { return kinds_.at(id); }
  std::optional<TokenId> find(const std::string& token) const;
  // Category token for (kind, category); falls back to the kind's "unknown"
  // token when the category was never registered.
  TokenId category(TokenKind kind, const std::string& category) const;
  std::size_t count_of_kind(TokenKind kind) const;
  const std::string& categories_version() const { return version_; }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);

  bool operator==(const Vocabulary& o) const {
    return strings_ == o.strings_ && kinds_ == o.kinds_;
  }

  friend Vocabulary learn_vocab(const ClifBundle&, Vocabulary::Options);

 private:
  void add(TokenKind kind, const std::string& token);
  std::vector<std::string> strings_;
  std::vector<TokenKind> kinds_;
  std::unordered_map<std::string, TokenId> index_;
  std::string version_;
};

Vocabulary learn_vocab(const ClifBundle& train_bundle,
                       Vocabulary::Options options = {});

// Per-category decile cut points learned on training values.
class DecileBinner {
 public:
  struct Entry {
    std::array<double, 9> cuts{};
    std::size_t samples = 0;
    std::size_t distinct = 0;
    bool degenerate = false;
  };

  // Key used for age deciles.
  static constexpr const char* kAgeKey = "age";

  void set(const std::string& key, Entry e) { entries_[key] = e; }
  const Entry* find(const std::string& key) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  // Left-closed bins: largest d with value >= cuts[d-1], clamped to [0, 9].
  // Degenerate categories use strict '>' so a constant category maps to D0.
  // Keys without an entry map to 0.
  int bin(const std::string& key, double value) const;

  std::string to_json() const;
  static DecileBinner from_json(const std::string& text);

 private:
  std::map<std::string, Entry> entries_;
};

// Keys are "<table prefix>:<category>" plus "age".
DecileBinner fit_deciles(const ClifBundle& train_bundle);

// Linear-interpolated empirical quantile of sorted values (p in [0, 1]).
double empirical_quantile(const std::vector<double>& sorted, double p);

struct TokenTimeline {
  std::string hospitalization_id;
  std::vector<TokenId> tokens;
  std::vector<TimeMs> event_time;  // offset from admission
  OutcomeLabels labels;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const TokenTimeline&) const = default;
};

// Row lookup for one bundle; build once when tokenizing many stays.
class BundleIndex {
 public:
  explicit BundleIndex(const ClifBundle& bundle);
  const ClifBundle& bundle() const { return *bundle_; }
  const HospitalizationRow* stay(const std::string& id) const;
  const PatientRow* patient(const std::string& id) const;

  struct Rows {
    std::vector<std::size_t> adt, vitals, labs, meds, respiratory, assessments;
  };
  const Rows& rows(const std::string& hospitalization_id) const;

 private:
  const ClifBundle* bundle_;
  std::unordered_map<std::string, std::size_t> stays_;
  std::unordered_map<std::string, std::size_t> patients_;
  std::unordered_map<std::string, Rows> rows_;
  Rows empty_;
};

TokenTimeline tokenize_hospitalization(const BundleIndex& index,
                                       const Vocabulary& vocab,
                                       const DecileBinner& binner,
                                       const std::string& hospitalization_id);
TokenTimeline tokenize_hospitalization(const ClifBundle& bundle,
                                       const Vocabulary& vocab,
                                       const DecileBinner& binner,
                                       const std::string& hospitalization_id);
// Every stay in bundle order.
std::vector<TokenTimeline> tokenize_all(const ClifBundle& bundle,
                                        const Vocabulary& vocab,
                                        const DecileBinner& binner);

inline constexpr std::size_t kDefaultMaxLen = 1024;

// Tokens with event_time <= 24 h, without discharge/TL_END, capped at
// max_len without splitting a (category, decile) pair.
TokenTimeline truncate_24h(const TokenTimeline& timeline, const Vocabulary& vocab,
                           std::size_t max_len = kDefaultMaxLen);

// First i tokens, i ~ Uniform{1..n}. May split pairs.
TokenTimeline uniform_random_truncate(const TokenTimeline& timeline, Rng& rng);

enum class BatchKind { kPacked, kLeftPadded };

// Row-major token matrix. mask is 0 exactly on PAD positions. Packed batches
// carry next-token targets and a loss mask; left-padded batches carry one
// label per row (-1 when the row has no label).
struct Batch {
  BatchKind kind = BatchKind::kPacked;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> loss_mask;
  std::vector<std::int8_t> labels;
  // (row, col) where a timeline starts inside a packed block.
  std::vector<std::pair<std::size_t, std::size_t>> boundaries;

  TokenId token(std::size_t r, std::size_t c) const { return tokens[r * cols + c]; }
};

// Concatenate timelines with g ~ Uniform{0..pad_gap_max} PAD tokens between
// consecutive timelines, cut into blocks of block_len (the last one PAD
// filled), and group up to rows_per_batch blocks per Batch. Position t's
// target is token t+1 of the same block; the loss mask is 1 where the input
// token is not PAD and a target exists.
std::vector<Batch> pack_sequences(const std::vector<TokenTimeline>& timelines,
                                  TokenId pad, std::size_t block_len,
                                  std::size_t pad_gap_max, Rng& rng,
                                  std::size_t rows_per_batch = 8);

// Rows are [PAD x (max_len - n), tokens]. label taken from `outcome` when set.
Batch left_pad_batch(const std::vector<TokenTimeline>& timelines, TokenId pad,
                     std::size_t max_len,
                     std::optional<Outcome> outcome = std::nullopt);

struct GrammarReport {
  bool ok = true;
  std::optional<std::size_t> position;
  std::string message;
};

GrammarReport validate_grammar(const TokenTimeline& timeline,
                               const Vocabulary& vocab);

// JSON-lines: {"id", "tokens", "times_ms", "labels"}, optionally preceded
// by a "# provenance" line.
std::string timeline_to_json(const TokenTimeline& t);
TokenTimeline timeline_from_json(const std::string& line);
void write_timelines(const std::vector<TokenTimeline>& timelines,
                     const std::filesystem::path& path,
                     const std::string& provenance = "");
std::vector<TokenTimeline> read_timelines(const std::filesystem::path& path);

}  // namespace cliffm

#endif  // CLIFFM_TOKENIZER_HPP
