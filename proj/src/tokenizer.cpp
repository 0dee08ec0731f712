#include "cliffm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "cliffm/clif_categories.hpp"
#include "json.hpp"

namespace cliffm {
namespace cc = clif_categories;
using json = nlohmann::json;

bool takes_value(TokenKind kind) {
  return kind == TokenKind::kVital || kind == TokenKind::kLab ||
         kind == TokenKind::kMed || kind == TokenKind::kAssessment;
}

const char* kind_prefix(TokenKind kind) {
  switch (kind) {
    case TokenKind::kSpecial: return "special";
    case TokenKind::kDecile: return "decile";
    case TokenKind::kRace: return "race";
    case TokenKind::kEthnicity: return "ethnicity";
    case TokenKind::kSex: return "sex";
    case TokenKind::kAdmissionType: return "admission_type";
    case TokenKind::kLocation: return "adt";
    case TokenKind::kVital: return "vitals";
    case TokenKind::kLab: return "labs";
    case TokenKind::kMed: return "meds";
    case TokenKind::kAssessment: return "assessments";
    case TokenKind::kRespMode: return "resp_mode";
    case TokenKind::kRespDevice: return "resp_device";
    case TokenKind::kProne: return "prone";
    case TokenKind::kDischarge: return "discharge";
  }
  return "?";
}

namespace {

constexpr std::array<TokenKind, 15> kAllKinds = {
    TokenKind::kSpecial,    TokenKind::kDecile,     TokenKind::kRace,
    TokenKind::kEthnicity,  TokenKind::kSex,        TokenKind::kAdmissionType,
    TokenKind::kLocation,   TokenKind::kVital,      TokenKind::kLab,
    TokenKind::kMed,        TokenKind::kAssessment, TokenKind::kRespMode,
    TokenKind::kRespDevice, TokenKind::kProne,      TokenKind::kDischarge};

TokenKind kind_from_prefix(std::string_view p) {
  for (TokenKind k : kAllKinds)
    if (p == kind_prefix(k)) return k;
  throw ParseError("unknown token kind '" + std::string(p) + "'");
}

std::string token_string(TokenKind kind, std::string_view category) {
  return std::string(kind_prefix(kind)) + ":" + std::string(category);
}

constexpr const char* kProneCategory = "yes";

}  // namespace

void Vocabulary::add(TokenKind kind, const std::string& token) {
  index_.emplace(token, static_cast<TokenId>(strings_.size()));
  strings_.push_back(token);
  kinds_.push_back(kind);
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::category(TokenKind kind, const std::string& cat) const {
  if (auto id = find(token_string(kind, cat))) return *id;
  if (auto id = find(token_string(kind, cc::kUnknown))) return *id;
  throw IntegrityError("vocabulary has no token for " +
                       token_string(kind, cat));
}

std::size_t Vocabulary::count_of_kind(TokenKind kind) const {
  return static_cast<std::size_t>(std::count(kinds_.begin(), kinds_.end(), kind));
}

Vocabulary learn_vocab(const ClifBundle& b, Vocabulary::Options options) {
  if (b.hospitalizations.empty())
    throw IntegrityError("learn_vocab: empty bundle");

  std::set<std::pair<std::string, std::string>> cats;  // (prefix, category)
  auto add = [&](TokenKind k, std::string_view c) {
    cats.emplace(kind_prefix(k), std::string(c));
  };
  auto add_all = [&](TokenKind k, const auto& list) {
    for (auto c : list) add(k, c);
  };

  for (TokenKind k : {TokenKind::kRace, TokenKind::kEthnicity, TokenKind::kSex,
                      TokenKind::kAdmissionType, TokenKind::kLocation,
                      TokenKind::kVital, TokenKind::kLab, TokenKind::kMed,
                      TokenKind::kAssessment, TokenKind::kRespMode,
                      TokenKind::kRespDevice, TokenKind::kDischarge})
    add(k, cc::kUnknown);
  add(TokenKind::kProne, kProneCategory);

  if (options.include_builtin) {
    add_all(TokenKind::kRace, cc::kRace);
    add_all(TokenKind::kEthnicity, cc::kEthnicity);
    add_all(TokenKind::kSex, cc::kSex);
    add_all(TokenKind::kAdmissionType, cc::kAdmissionType);
    add_all(TokenKind::kLocation, cc::kLocation);
    add_all(TokenKind::kVital, cc::kVital);
    add_all(TokenKind::kLab, cc::kLab);
    add_all(TokenKind::kMed, cc::kMed);
    add_all(TokenKind::kAssessment, cc::kAssessment);
    add_all(TokenKind::kRespMode, cc::kRespMode);
    add_all(TokenKind::kRespDevice, cc::kRespDevice);
    add_all(TokenKind::kDischarge, cc::kDischarge);
  }
  for (const auto& p : b.patients) {
    add(TokenKind::kRace, p.race_category);
    add(TokenKind::kEthnicity, p.ethnicity_category);
    add(TokenKind::kSex, p.sex_category);
  }
  for (const auto& h : b.hospitalizations) {
    add(TokenKind::kAdmissionType, h.admission_type_category);
    add(TokenKind::kDischarge, h.discharge_category);
  }
  for (const auto& a : b.adt) add(TokenKind::kLocation, a.location_category);
  for (const auto& m : b.vitals) add(TokenKind::kVital, m.category);
  for (const auto& m : b.labs) add(TokenKind::kLab, m.category);
  for (const auto& m : b.meds) add(TokenKind::kMed, m.category);
  for (const auto& m : b.assessments) add(TokenKind::kAssessment, m.category);
  for (const auto& r : b.respiratory) {
    add(TokenKind::kRespMode, r.mode_category);
    add(TokenKind::kRespDevice, r.device_category);
  }

  Vocabulary v;
  v.version_ = std::string(cc::kVersion);
  v.add(TokenKind::kSpecial, "PAD");
  v.add(TokenKind::kSpecial, "TL_START");
  v.add(TokenKind::kSpecial, "TL_END");
  for (int d = 0; d < kNumDeciles; ++d)
    v.add(TokenKind::kDecile, "D" + std::to_string(d));
  for (const auto& [prefix, cat] : cats)
    v.add(kind_from_prefix(prefix), prefix + ":" + cat);
  return v;
}

std::string Vocabulary::to_json() const {
  json j;
  j["metadata"] = {{"categories_version", version_}, {"size", strings_.size()}};
  json tokens = json::object();
  json kinds = json::array();
  for (std::size_t i = 0; i < strings_.size(); ++i) {
    tokens[strings_[i]] = i;
    kinds.push_back(kind_prefix(kinds_[i]));
  }
  j["tokens"] = tokens;
  j["kinds"] = kinds;
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  json j = json::parse(text);
  Vocabulary v;
  v.version_ = j.at("metadata").at("categories_version").get<std::string>();
  const auto& tokens = j.at("tokens");
  const auto& kinds = j.at("kinds");
  std::vector<std::string> by_id(tokens.size());
  for (auto it = tokens.begin(); it != tokens.end(); ++it) {
    auto id = it.value().get<std::size_t>();
    if (id >= by_id.size() || !by_id[id].empty())
      throw ParseError("vocabulary ids are not dense");
    by_id[id] = it.key();
  }
  if (kinds.size() != by_id.size()) throw ParseError("vocabulary kinds size");
  for (std::size_t i = 0; i < by_id.size(); ++i)
    v.add(kind_from_prefix(kinds[i].get<std::string>()), by_id[i]);
  return v;
}

double empirical_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw NumericError("quantile of empty sample");
  double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

const DecileBinner::Entry* DecileBinner::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

int DecileBinner::bin(const std::string& key, double value) const {
  const Entry* e = find(key);
  if (!e) return 0;
  int d = 0;
  for (double c : e->cuts) {
    if (e->degenerate ? value > c : value >= c) ++d;
  }
  return std::clamp(d, 0, kNumDeciles - 1);
}

DecileBinner fit_deciles(const ClifBundle& b) {
  std::map<std::string, std::vector<double>> values;
  auto collect = [&](TokenKind k, const std::vector<MeasurementRow>& rows) {
    for (const auto& m : rows) values[token_string(k, m.category)].push_back(m.value);
  };
  collect(TokenKind::kVital, b.vitals);
  collect(TokenKind::kLab, b.labs);
  collect(TokenKind::kMed, b.meds);
  collect(TokenKind::kAssessment, b.assessments);
  auto& ages = values[DecileBinner::kAgeKey];
  for (const auto& h : b.hospitalizations) ages.push_back(h.age_at_admission);
  if (ages.empty()) values.erase(DecileBinner::kAgeKey);

  DecileBinner binner;
  for (auto& [key, v] : values) {
    std::sort(v.begin(), v.end());
    DecileBinner::Entry e;
    e.samples = v.size();
    const std::vector<double>& sorted = v;
    e.distinct = sorted.empty() ? 0 : 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
      e.distinct += sorted[i] != sorted[i - 1];
    e.degenerate = e.distinct < static_cast<std::size_t>(kNumDeciles);
    for (int k = 0; k < 9; ++k)
      e.cuts[k] = empirical_quantile(sorted, (k + 1) / 10.0);
    binner.set(key, e);
  }
  return binner;
}

std::string DecileBinner::to_json() const {
  json j = json::object();
  for (const auto& [key, e] : entries_) {
    j[key] = {{"cuts", e.cuts},
              {"samples", e.samples},
              {"distinct", e.distinct},
              {"degenerate", e.degenerate}};
  }
  return j.dump(1);
}

DecileBinner DecileBinner::from_json(const std::string& text) {
  json j = json::parse(text);
  DecileBinner b;
  for (auto it = j.begin(); it != j.end(); ++it) {
    Entry e;
    e.cuts = it.value().at("cuts").get<std::array<double, 9>>();
    e.samples = it.value().at("samples").get<std::size_t>();
    e.distinct = it.value().at("distinct").get<std::size_t>();
    e.degenerate = it.value().at("degenerate").get<bool>();
    b.set(it.key(), e);
  }
  return b;
}

BundleIndex::BundleIndex(const ClifBundle& bundle) : bundle_(&bundle) {
  for (std::size_t i = 0; i < bundle.hospitalizations.size(); ++i) {
    stays_[bundle.hospitalizations[i].hospitalization_id] = i;
    rows_[bundle.hospitalizations[i].hospitalization_id];
  }
  for (std::size_t i = 0; i < bundle.patients.size(); ++i)
    patients_[bundle.patients[i].patient_id] = i;
  auto index = [&](const auto& rows, auto member) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto it = rows_.find(rows[i].hospitalization_id);
      if (it != rows_.end()) (it->second.*member).push_back(i);
    }
  };
  index(bundle.adt, &Rows::adt);
  index(bundle.vitals, &Rows::vitals);
  index(bundle.labs, &Rows::labs);
  index(bundle.meds, &Rows::meds);
  index(bundle.respiratory, &Rows::respiratory);
  index(bundle.assessments, &Rows::assessments);
}

const HospitalizationRow* BundleIndex::stay(const std::string& id) const {
  auto it = stays_.find(id);
  return it == stays_.end() ? nullptr : &bundle_->hospitalizations[it->second];
}

const PatientRow* BundleIndex::patient(const std::string& id) const {
  auto it = patients_.find(id);
  return it == patients_.end() ? nullptr : &bundle_->patients[it->second];
}

const BundleIndex::Rows& BundleIndex::rows(const std::string& id) const {
  auto it = rows_.find(id);
  return it == rows_.end() ? empty_ : it->second;
}

namespace {

struct Event {
  TimeMs time;
  int table_rank;
  std::string_view category;
  double value;
  std::array<TokenId, 3> tokens;
  int n_tokens;
};

OutcomeLabels labels_for(const BundleIndex& index, const HospitalizationRow& h) {
  const ClifBundle& b = index.bundle();
  const auto& rows = index.rows(h.hospitalization_id);
  OutcomeLabels l;
  l.hospitalization_id = h.hospitalization_id;
  l.same_admission_death = h.discharge_category == cc::kExpired;
  l.long_length_of_stay = h.discharge_dttm - h.admission_dttm >= kLongStayMs;
  for (auto i : rows.adt) {
    if (b.adt[i].location_category != cc::kIcu) continue;
    l.icu_any = true;
    if (b.adt[i].in_dttm - h.admission_dttm <= kWindowMs) l.icu_within_24h = true;
  }
  for (auto i : rows.respiratory) {
    if (b.respiratory[i].device_category != cc::kImv) continue;
    l.imv_any = true;
    if (b.respiratory[i].start_dttm - h.admission_dttm <= kWindowMs)
      l.imv_within_24h = true;
  }
  return l;
}

}  // namespace

TokenTimeline tokenize_hospitalization(const BundleIndex& index,
                                       const Vocabulary& vocab,
                                       const DecileBinner& binner,
                                       const std::string& hid) {
  const HospitalizationRow* h = index.stay(hid);
  if (!h) throw IntegrityError("unknown hospitalization_id '" + hid + "'");
  const PatientRow* p = index.patient(h->patient_id);
  if (!p) throw IntegrityError("unknown patient_id '" + h->patient_id + "'");
  const ClifBundle& b = index.bundle();
  const auto& rows = index.rows(hid);

  TokenTimeline t;
  t.hospitalization_id = hid;
  t.labels = labels_for(index, *h);
  auto push = [&](TokenId id, TimeMs offset) {
    t.tokens.push_back(id);
    t.event_time.push_back(offset);
  };
  push(vocab.tl_start(), 0);
  push(vocab.category(TokenKind::kRace, p->race_category), 0);
  push(vocab.category(TokenKind::kEthnicity, p->ethnicity_category), 0);
  push(vocab.category(TokenKind::kSex, p->sex_category), 0);
  push(vocab.decile(binner.bin(DecileBinner::kAgeKey, h->age_at_admission)), 0);
  push(vocab.category(TokenKind::kAdmissionType, h->admission_type_category), 0);

  std::vector<Event> events;
  events.reserve(rows.adt.size() + rows.vitals.size() + rows.labs.size() +
                 rows.meds.size() + rows.assessments.size() +
                 rows.respiratory.size());
  for (auto i : rows.adt) {
    const auto& a = b.adt[i];
    events.push_back({a.in_dttm, 0, a.location_category, 0.0,
                      {vocab.category(TokenKind::kLocation, a.location_category)},
                      1});
  }
  auto add_measurements = [&](TokenKind kind, int rank,
                              const std::vector<MeasurementRow>& table,
                              const std::vector<std::size_t>& idx) {
    for (auto i : idx) {
      const auto& m = table[i];
      TokenId cat = vocab.category(kind, m.category);
      // Bin by the category's own deciles, or by the unknown bucket's
      // (absent, hence D0) when the category fell back to unknown.
      const std::string& key = vocab.string_of(cat);
      events.push_back({m.time, rank, m.category, m.value,
                        {cat, vocab.decile(binner.bin(key, m.value))}, 2});
    }
  };
  add_measurements(TokenKind::kLab, 1, b.labs, rows.labs);
  add_measurements(TokenKind::kVital, 2, b.vitals, rows.vitals);
  add_measurements(TokenKind::kMed, 3, b.meds, rows.meds);
  add_measurements(TokenKind::kAssessment, 4, b.assessments, rows.assessments);
  const TokenId prone = vocab.category(TokenKind::kProne, kProneCategory);
  for (auto i : rows.respiratory) {
    const auto& r = b.respiratory[i];
    Event e{r.start_dttm, 5, r.device_category, r.prone_flag ? 1.0 : 0.0,
            {vocab.category(TokenKind::kRespMode, r.mode_category),
             vocab.category(TokenKind::kRespDevice, r.device_category), prone},
            r.prone_flag ? 3 : 2};
    events.push_back(e);
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& c) {
    return std::tie(a.time, a.table_rank, a.category, a.value, a.tokens) <
           std::tie(c.time, c.table_rank, c.category, c.value, c.tokens);
  });
  for (const auto& e : events)
    for (int k = 0; k < e.n_tokens; ++k)
      push(e.tokens[k], e.time - h->admission_dttm);

  const TimeMs los = h->discharge_dttm - h->admission_dttm;
  push(vocab.category(TokenKind::kDischarge, h->discharge_category), los);
  push(vocab.tl_end(), los);
  return t;
}

TokenTimeline tokenize_hospitalization(const ClifBundle& bundle,
                                       const Vocabulary& vocab,
                                       const DecileBinner& binner,
                                       const std::string& hid) {
  BundleIndex index(bundle);
  return tokenize_hospitalization(index, vocab, binner, hid);
}

std::vector<TokenTimeline> tokenize_all(const ClifBundle& bundle,
                                        const Vocabulary& vocab,
                                        const DecileBinner& binner) {
  BundleIndex index(bundle);
  std::vector<TokenTimeline> out;
  out.reserve(bundle.hospitalizations.size());
  for (const auto& h : bundle.hospitalizations)
    out.push_back(tokenize_hospitalization(index, vocab, binner,
                                           h.hospitalization_id));
  return out;
}

TokenTimeline truncate_24h(const TokenTimeline& timeline,
                           const Vocabulary& vocab, std::size_t max_len) {
  TokenTimeline out;
  out.hospitalization_id = timeline.hospitalization_id;
  out.labels = timeline.labels;
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    if (timeline.event_time[i] > kWindowMs) break;
    TokenId id = timeline.tokens[i];
    TokenKind k = vocab.kind_of(id);
    if (k == TokenKind::kDischarge || id == vocab.tl_end()) continue;
    out.tokens.push_back(id);
    out.event_time.push_back(timeline.event_time[i]);
  }
  if (out.tokens.size() > max_len) {
    std::size_t cut = max_len;
    if (cut > 0 && takes_value(vocab.kind_of(out.tokens[cut - 1]))) --cut;
    out.tokens.resize(cut);
    out.event_time.resize(cut);
  }
  return out;
}

TokenTimeline uniform_random_truncate(const TokenTimeline& timeline, Rng& rng) {
  if (timeline.tokens.empty())
    throw IntegrityError("uniform_random_truncate: empty timeline");
  std::uniform_int_distribution<std::size_t> d(1, timeline.size());
  std::size_t i = d(rng);
  TokenTimeline out = timeline;
  out.tokens.resize(i);
  out.event_time.resize(i);
  return out;
}

std::vector<Batch> pack_sequences(const std::vector<TokenTimeline>& timelines,
                                  TokenId pad, std::size_t block_len,
                                  std::size_t pad_gap_max, Rng& rng,
                                  std::size_t rows_per_batch) {
  if (block_len < 2) throw ConfigError("pack_sequences: block_len < 2");
  if (rows_per_batch == 0) throw ConfigError("pack_sequences: rows_per_batch = 0");
  std::vector<TokenId> stream;
  std::vector<std::size_t> starts;
  std::uniform_int_distribution<std::size_t> gap(0, pad_gap_max);
  for (std::size_t i = 0; i < timelines.size(); ++i) {
    if (i > 0) stream.insert(stream.end(), gap(rng), pad);
    starts.push_back(stream.size());
    stream.insert(stream.end(), timelines[i].tokens.begin(),
                  timelines[i].tokens.end());
  }
  const std::size_t n_blocks = (stream.size() + block_len - 1) / block_len;
  stream.resize(n_blocks * block_len, pad);

  std::vector<Batch> out;
  std::size_t next_start = 0;
  for (std::size_t first = 0; first < n_blocks; first += rows_per_batch) {
    Batch b;
    b.kind = BatchKind::kPacked;
    b.rows = std::min(rows_per_batch, n_blocks - first);
    b.cols = block_len;
    const std::size_t n = b.rows * b.cols;
    b.tokens.assign(stream.begin() + static_cast<std::ptrdiff_t>(first * block_len),
                    stream.begin() + static_cast<std::ptrdiff_t>(first * block_len + n));
    b.mask.resize(n);
    b.targets.assign(n, pad);
    b.loss_mask.assign(n, 0);
    for (std::size_t r = 0; r < b.rows; ++r) {
      for (std::size_t c = 0; c < block_len; ++c) {
        std::size_t k = r * block_len + c;
        b.mask[k] = b.tokens[k] != pad;
        if (c + 1 < block_len) {
          b.targets[k] = b.tokens[k + 1];
          b.loss_mask[k] = b.tokens[k] != pad;
        }
      }
    }
    const std::size_t lo = first * block_len, hi = lo + n;
    while (next_start < starts.size() && starts[next_start] < hi) {
      if (starts[next_start] >= lo) {
        std::size_t off = starts[next_start] - lo;
        b.boundaries.emplace_back(off / block_len, off % block_len);
      }
      ++next_start;
    }
    out.push_back(std::move(b));
  }
  return out;
}

Batch left_pad_batch(const std::vector<TokenTimeline>& timelines, TokenId pad,
                     std::size_t max_len, std::optional<Outcome> outcome) {
  Batch b;
  b.kind = BatchKind::kLeftPadded;
  b.rows = timelines.size();
  b.cols = max_len;
  b.tokens.assign(b.rows * b.cols, pad);
  b.mask.assign(b.rows * b.cols, 0);
  b.labels.assign(b.rows, -1);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto& t = timelines[r];
    if (t.size() > max_len)
      throw IntegrityError("left_pad_batch: timeline " + t.hospitalization_id +
                           " longer than max_len");
    std::size_t offset = max_len - t.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
      b.tokens[r * max_len + offset + i] = t.tokens[i];
      b.mask[r * max_len + offset + i] = 1;
    }
    if (outcome) {
      if (auto y = outcome_label(t.labels, *outcome)) b.labels[r] = *y ? 1 : 0;
    }
  }
  return b;
}

GrammarReport validate_grammar(const TokenTimeline& t, const Vocabulary& vocab) {
  auto fail = [](std::size_t pos, std::string msg) {
    return GrammarReport{false, pos, std::move(msg)};
  };
  const std::size_t n = t.tokens.size();
  if (t.event_time.size() != n) return fail(0, "event_time length mismatch");
  if (n == 0) return fail(0, "empty timeline");
  for (std::size_t i = 0; i < n; ++i)
    if (t.tokens[i] < 0 || static_cast<std::size_t>(t.tokens[i]) >= vocab.size())
      return fail(i, "token id out of range");
  auto kind = [&](std::size_t i) { return vocab.kind_of(t.tokens[i]); };

  if (vocab.is_decile(t.tokens[0])) return fail(0, "decile without category");
  if (t.tokens[0] != vocab.tl_start()) return fail(0, "timeline must begin with TL_START");
  const std::array<TokenKind, 5> prefix = {TokenKind::kRace, TokenKind::kEthnicity,
                                           TokenKind::kSex, TokenKind::kDecile,
                                           TokenKind::kAdmissionType};
  static const char* kPrefixNames[] = {"race", "ethnicity", "sex", "age decile",
                                       "admission type"};
  for (std::size_t i = 1; i < std::min<std::size_t>(n, 6); ++i)
    if (kind(i) != prefix[i - 1])
      return fail(i, std::string("expected ") + kPrefixNames[i - 1] + " token");

  for (std::size_t i = 6; i < n; ++i) {
    TokenId id = t.tokens[i];
    TokenKind k = kind(i);
    if (id == vocab.pad()) return fail(i, "PAD inside timeline");
    if (id == vocab.tl_start()) return fail(i, "TL_START after position 0");
    if (vocab.is_decile(id)) {
      if (!takes_value(kind(i - 1)) || i == 6)
        return fail(i, "decile without category");
      continue;
    }
    if (takes_value(k) && (i + 1 >= n || !vocab.is_decile(t.tokens[i + 1])))
      return fail(i, "category without decile");
    if (k == TokenKind::kRespMode &&
        (i + 1 >= n || kind(i + 1) != TokenKind::kRespDevice))
      return fail(i, "respiratory mode without device");
    if (k == TokenKind::kRespDevice && kind(i - 1) != TokenKind::kRespMode)
      return fail(i, "respiratory device without mode");
    if (k == TokenKind::kProne && kind(i - 1) != TokenKind::kRespDevice)
      return fail(i, "prone token outside respiratory event");
    if (id == vocab.tl_end()) {
      if (kind(i - 1) != TokenKind::kDischarge)
        return fail(i, "TL_END before discharge token");
      if (i + 1 != n) return fail(i, "tokens after TL_END");
    }
    if (k == TokenKind::kDischarge) {
      if (i + 1 < n && t.tokens[i + 1] != vocab.tl_end())
        return fail(i, "discharge token not followed by TL_END");
    }
  }
  for (std::size_t i = 1; i < n; ++i)
    if (t.event_time[i] < t.event_time[i - 1])
      return fail(i, "event_time decreases");
  return {};
}

std::string timeline_to_json(const TokenTimeline& t) {
  json j;
  j["id"] = t.hospitalization_id;
  j["tokens"] = t.tokens;
  j["times_ms"] = t.event_time;
  j["labels"] = {{"same_admission_death", t.labels.same_admission_death},
                 {"long_length_of_stay", t.labels.long_length_of_stay},
                 {"icu_within_24h", t.labels.icu_within_24h},
                 {"icu_any", t.labels.icu_any},
                 {"imv_within_24h", t.labels.imv_within_24h},
                 {"imv_any", t.labels.imv_any}};
  return j.dump();
}

TokenTimeline timeline_from_json(const std::string& line) {
  json j = json::parse(line);
  TokenTimeline t;
  t.hospitalization_id = j.at("id").get<std::string>();
  t.tokens = j.at("tokens").get<std::vector<TokenId>>();
  t.event_time = j.at("times_ms").get<std::vector<TimeMs>>();
  const auto& l = j.at("labels");
  t.labels.hospitalization_id = t.hospitalization_id;
  t.labels.same_admission_death = l.at("same_admission_death").get<bool>();
  t.labels.long_length_of_stay = l.at("long_length_of_stay").get<bool>();
  t.labels.icu_within_24h = l.at("icu_within_24h").get<bool>();
  t.labels.icu_any = l.at("icu_any").get<bool>();
  t.labels.imv_within_24h = l.at("imv_within_24h").get<bool>();
  t.labels.imv_any = l.at("imv_any").get<bool>();
  return t;
}

void write_timelines(const std::vector<TokenTimeline>& timelines,
                     const std::filesystem::path& path,
                     const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  if (!provenance.empty()) out << "# " << provenance << '\n';
  for (const auto& t : timelines) out << timeline_to_json(t) << '\n';
}

std::vector<TokenTimeline> read_timelines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::vector<TokenTimeline> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(timeline_from_json(line));
  return out;
}

}  // namespace cliffm
