#include "cliffm/clif.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "cliffm/clif_categories.hpp"
#include "cliffm/csv.hpp"
#include "json.hpp"

namespace cliffm {
namespace fs = std::filesystem;

const MeasurementSchema& table_schema(MeasurementTable table) {
  static const MeasurementSchema kSchemas[] = {
      {"vitals.csv", "recorded_dttm", "vital_category", "value"},
      {"labs.csv", "result_available_dttm", "lab_category", "value"},
      {"medication_admin_continuous.csv", "admin_dttm", "med_category", "dose"},
      {"patient_assessments.csv", "recorded_dttm", "assessment_category",
       "value"},
  };
  return kSchemas[static_cast<int>(table)];
}

namespace {

std::vector<MeasurementRow>& measurement_rows(ClifBundle& b,
                                              MeasurementTable t) {
  switch (t) {
    case MeasurementTable::kVitals: return b.vitals;
    case MeasurementTable::kLabs: return b.labs;
    case MeasurementTable::kMeds: return b.meds;
    case MeasurementTable::kAssessments: return b.assessments;
  }
  throw Error("bad table");
}

const std::vector<MeasurementRow>& measurement_rows(const ClifBundle& b,
                                                    MeasurementTable t) {
  return measurement_rows(const_cast<ClifBundle&>(b), t);
}

constexpr std::array<MeasurementTable, 4> kMeasurementTables = {
    MeasurementTable::kVitals, MeasurementTable::kLabs,
    MeasurementTable::kMeds, MeasurementTable::kAssessments};

CsvTable load_table(const fs::path& dir, const char* file) {
  fs::path p = dir / file;
  if (!fs::exists(p)) throw ParseError("missing table file: " + p.string());
  return read_csv(p);
}

std::string where(const char* file, std::size_t line) {
  return std::string(file) + " line " + std::to_string(line);
}

template <typename Fn>
auto with_location(const char* file, std::size_t line, Fn&& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    throw ParseError(where(file, line) + ": " + e.what());
  }
}

bool parse_bool(std::string_view s) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "True") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "False" || s.empty())
    return false;
  throw ParseError("not a boolean: '" + std::string(s) + "'");
}

}  // namespace

ClifBundle parse_bundle(const fs::path& directory) {
  ClifBundle b;
  {
    const char* f = "patient.csv";
    CsvTable t = load_table(directory, f);
    auto id = t.column("patient_id", f), race = t.column("race_category", f),
         eth = t.column("ethnicity_category", f),
         sex = t.column("sex_category", f);
    for (const auto& r : t.rows)
      b.patients.push_back({r[id], r[race], r[eth], r[sex]});
  }
  {
    const char* f = "hospitalization.csv";
    CsvTable t = load_table(directory, f);
    auto hid = t.column("hospitalization_id", f),
         pid = t.column("patient_id", f),
         adm = t.column("admission_dttm", f),
         dis = t.column("discharge_dttm", f),
         age = t.column("age_at_admission", f),
         at = t.column("admission_type_category", f),
         dc = t.column("discharge_category", f);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& r = t.rows[i];
      b.hospitalizations.push_back(with_location(f, t.lines[i], [&] {
        return HospitalizationRow{r[hid], r[pid], parse_iso8601(r[adm]),
                                  parse_iso8601(r[dis]), parse_double(r[age]),
                                  r[at], r[dc]};
      }));
    }
  }
  {
    const char* f = "adt.csv";
    CsvTable t = load_table(directory, f);
    auto hid = t.column("hospitalization_id", f),
         tm = t.column("in_dttm", f), loc = t.column("location_category", f);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& r = t.rows[i];
      b.adt.push_back(with_location(f, t.lines[i], [&] {
        return AdtRow{r[hid], parse_iso8601(r[tm]), r[loc]};
      }));
    }
  }
  for (MeasurementTable mt : kMeasurementTables) {
    const MeasurementSchema& s = table_schema(mt);
    CsvTable t = load_table(directory, s.file);
    auto hid = t.column("hospitalization_id", s.file),
         tm = t.column(s.time_column, s.file),
         cat = t.column(s.category_column, s.file),
         val = t.column(s.value_column, s.file);
    auto& rows = measurement_rows(b, mt);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& r = t.rows[i];
      rows.push_back(with_location(s.file, t.lines[i], [&] {
        return MeasurementRow{r[hid], parse_iso8601(r[tm]), r[cat],
                              parse_double(r[val])};
      }));
    }
  }
  {
    const char* f = "respiratory_support.csv";
    CsvTable t = load_table(directory, f);
    auto hid = t.column("hospitalization_id", f),
         tm = t.column("start_dttm", f), mode = t.column("mode_category", f),
         dev = t.column("device_category", f),
         prone = t.column("prone_flag", f);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& r = t.rows[i];
      b.respiratory.push_back(with_location(f, t.lines[i], [&] {
        return RespiratoryRow{r[hid], parse_iso8601(r[tm]), r[mode], r[dev],
                              parse_bool(r[prone])};
      }));
    }
  }
  validate(b);
  return b;
}

void write_bundle(const ClifBundle& b, const fs::path& directory) {
  fs::create_directories(directory);
  auto open = [&](const char* file) {
    std::ofstream out(directory / file, std::ios::binary);
    if (!out) throw ArtifactError("cannot write " + (directory / file).string());
    return out;
  };
  {
    auto out = open("patient.csv");
    write_csv_row(out, {"patient_id", "race_category", "ethnicity_category",
                        "sex_category"});
    for (const auto& p : b.patients)
      write_csv_row(out, {p.patient_id, p.race_category, p.ethnicity_category,
                          p.sex_category});
  }
  {
    auto out = open("hospitalization.csv");
    write_csv_row(out, {"hospitalization_id", "patient_id", "admission_dttm",
                        "discharge_dttm", "age_at_admission",
                        "admission_type_category", "discharge_category"});
    for (const auto& h : b.hospitalizations)
      write_csv_row(out, {h.hospitalization_id, h.patient_id,
                          format_iso8601(h.admission_dttm),
                          format_iso8601(h.discharge_dttm),
                          format_double(h.age_at_admission),
                          h.admission_type_category, h.discharge_category});
  }
  {
    auto out = open("adt.csv");
    write_csv_row(out, {"hospitalization_id", "in_dttm", "location_category"});
    for (const auto& a : b.adt)
      write_csv_row(out, {a.hospitalization_id, format_iso8601(a.in_dttm),
                          a.location_category});
  }
  for (MeasurementTable mt : kMeasurementTables) {
    const MeasurementSchema& s = table_schema(mt);
    auto out = open(s.file);
    write_csv_row(out, {"hospitalization_id", s.time_column, s.category_column,
                        s.value_column});
    for (const auto& m : measurement_rows(b, mt))
      write_csv_row(out, {m.hospitalization_id, format_iso8601(m.time),
                          m.category, format_double(m.value)});
  }
  {
    auto out = open("respiratory_support.csv");
    write_csv_row(out, {"hospitalization_id", "start_dttm", "mode_category",
                        "device_category", "prone_flag"});
    for (const auto& r : b.respiratory)
      write_csv_row(out, {r.hospitalization_id, format_iso8601(r.start_dttm),
                          r.mode_category, r.device_category,
                          r.prone_flag ? "1" : "0"});
  }
}

void validate(const ClifBundle& b) {
  std::unordered_set<std::string> patients;
  for (std::size_t i = 0; i < b.patients.size(); ++i) {
    if (!patients.insert(b.patients[i].patient_id).second)
      throw IntegrityError("patient row " + std::to_string(i + 1) +
                           ": duplicate patient_id '" +
                           b.patients[i].patient_id + "'");
  }
  std::unordered_map<std::string, const HospitalizationRow*> stays;
  for (std::size_t i = 0; i < b.hospitalizations.size(); ++i) {
    const auto& h = b.hospitalizations[i];
    std::string row = "hospitalization row " + std::to_string(i + 1);
    if (!patients.count(h.patient_id))
      throw IntegrityError(row + ": unknown patient_id '" + h.patient_id + "'");
    if (!(h.admission_dttm < h.discharge_dttm))
      throw IntegrityError(row + ": admission_dttm not before discharge_dttm (" +
                           h.hospitalization_id + ")");
    if (!stays.emplace(h.hospitalization_id, &h).second)
      throw IntegrityError(row + ": duplicate hospitalization_id '" +
                           h.hospitalization_id + "'");
  }
  auto check_event = [&](const char* table, std::size_t i,
                         const std::string& hid, TimeMs t) {
    std::string row = std::string(table) + " row " + std::to_string(i + 1);
    auto it = stays.find(hid);
    if (it == stays.end())
      throw IntegrityError(row + ": unknown hospitalization_id '" + hid + "'");
    if (t < it->second->admission_dttm || t > it->second->discharge_dttm)
      throw IntegrityError(row + ": timestamp " + format_iso8601(t) +
                           " outside stay " + hid);
  };
  for (std::size_t i = 0; i < b.adt.size(); ++i)
    check_event("adt", i, b.adt[i].hospitalization_id, b.adt[i].in_dttm);
  for (MeasurementTable mt : kMeasurementTables) {
    const auto& rows = measurement_rows(b, mt);
    std::string name = table_schema(mt).file;
    name.resize(name.size() - 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check_event(name.c_str(), i, rows[i].hospitalization_id, rows[i].time);
      if (!std::isfinite(rows[i].value))
        throw IntegrityError(name + " row " + std::to_string(i + 1) +
                             ": non-finite value");
    }
  }
  for (std::size_t i = 0; i < b.respiratory.size(); ++i)
    check_event("respiratory_support", i, b.respiratory[i].hospitalization_id,
                b.respiratory[i].start_dttm);
}

namespace {

// Keeps the given stays, their patients, and their events.
ClifBundle keep_stays(const ClifBundle& b,
                      const std::function<bool(const HospitalizationRow&)>& pred) {
  ClifBundle out;
  std::unordered_set<std::string> kept_stays;
  std::unordered_set<std::string> kept_patients;
  for (const auto& h : b.hospitalizations) {
    if (pred(h)) {
      out.hospitalizations.push_back(h);
      kept_stays.insert(h.hospitalization_id);
      kept_patients.insert(h.patient_id);
    }
  }
  for (const auto& p : b.patients)
    if (kept_patients.count(p.patient_id)) out.patients.push_back(p);
  auto keep = [&](const auto& rows, auto& dst) {
    for (const auto& r : rows)
      if (kept_stays.count(r.hospitalization_id)) dst.push_back(r);
  };
  keep(b.adt, out.adt);
  keep(b.vitals, out.vitals);
  keep(b.labs, out.labs);
  keep(b.meds, out.meds);
  keep(b.respiratory, out.respiratory);
  keep(b.assessments, out.assessments);
  return out;
}

}  // namespace

ClifBundle filter_cohort(const ClifBundle& b) {
  return keep_stays(b, [](const HospitalizationRow& h) {
    return h.age_at_admission >= 18.0 && h.discharge_dttm - h.admission_dttm >= kWindowMs;
  });
}

ClifBundle restrict_to_split(const ClifBundle& b, const SplitAssignment& splits, Split s) {
  return keep_stays(b, [&](const HospitalizationRow& h) {
    return splits.of_patient(h.patient_id) == s;
  });
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ParseError("unknown split '" + std::string(name) + "'");
}

Split SplitAssignment::of_patient(const std::string& patient_id) const {
  auto it = patient_split.find(patient_id);
  if (it == patient_split.end())
    throw IntegrityError("patient '" + patient_id + "' has no split");
  return it->second;
}

std::size_t SplitAssignment::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(patient_split.begin(), patient_split.end(),
                    [s](const auto& kv) { return kv.second == s; }));
}

SplitAssignment assign_splits(const ClifBundle& b, SplitRatios ratios) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double x : r)
    if (!(x >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  std::map<std::string, TimeMs> first;
  for (const auto& h : b.hospitalizations) {
    auto [it, fresh] = first.emplace(h.patient_id, h.admission_dttm);
    if (!fresh) it->second = std::min(it->second, h.admission_dttm);
  }
  if (first.empty()) throw IntegrityError("empty cohort: no hospitalizations");
  for (const auto& p : b.patients)
    if (!first.count(p.patient_id))
      throw IntegrityError("patient '" + p.patient_id +
                           "' has no hospitalization");

  std::vector<std::pair<TimeMs, std::string>> order;
  order.reserve(first.size());
  for (const auto& [pid, t] : first) order.emplace_back(t, pid);
  std::sort(order.begin(), order.end());

  // Largest remainder apportionment.
  const std::size_t n = order.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    double exact = r[k] * static_cast<double>(n);
    double fl = std::floor(exact + 1e-9);
    counts[k] = static_cast<std::size_t>(fl);
    frac[k] = exact - fl;
    assigned += counts[k];
  }
  std::array<int, 3> by_frac = {0, 1, 2};
  std::stable_sort(by_frac.begin(), by_frac.end(),
                   [&](int a, int c) { return frac[a] > frac[c] + 1e-12; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned)
    ++counts[by_frac[i % 3]];

  SplitAssignment out;
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < counts[k]; ++j, ++pos) {
      out.patient_split[order[pos].second] = static_cast<Split>(k);
      auto& range = out.first_admission_range[k];
      if (!range) range = std::make_pair(order[pos].first, order[pos].first);
      range->second = order[pos].first;
    }
  }
  return out;
}

std::map<std::string, OutcomeLabels> derive_outcomes(const ClifBundle& b) {
  namespace cc = clif_categories;
  std::map<std::string, OutcomeLabels> out;
  std::unordered_map<std::string, TimeMs> admission;
  for (const auto& h : b.hospitalizations) {
    OutcomeLabels l;
    l.hospitalization_id = h.hospitalization_id;
    l.same_admission_death = h.discharge_category == cc::kExpired;
    l.long_length_of_stay = h.discharge_dttm - h.admission_dttm >= kLongStayMs;
    out[h.hospitalization_id] = l;
    admission[h.hospitalization_id] = h.admission_dttm;
  }
  for (const auto& a : b.adt) {
    if (a.location_category != cc::kIcu) continue;
    auto it = out.find(a.hospitalization_id);
    if (it == out.end()) continue;
    it->second.icu_any = true;
    if (a.in_dttm - admission[a.hospitalization_id] <= kWindowMs)
      it->second.icu_within_24h = true;
  }
  for (const auto& r : b.respiratory) {
    if (r.device_category != cc::kImv) continue;
    auto it = out.find(r.hospitalization_id);
    if (it == out.end()) continue;
    it->second.imv_any = true;
    if (r.start_dttm - admission[r.hospitalization_id] <= kWindowMs)
      it->second.imv_within_24h = true;
  }
  return out;
}

const char* outcome_key(Outcome o) {
  switch (o) {
    case Outcome::kMortality: return "same_admission_death";
    case Outcome::kLongStay: return "long_length_of_stay";
    case Outcome::kIcuAdmission: return "icu_admission";
    case Outcome::kImvEvent: return "imv_event";
  }
  return "?";
}

const char* outcome_display_name(Outcome o) {
  switch (o) {
    case Outcome::kMortality: return "same admission death";
    case Outcome::kLongStay: return "long length of stay";
    case Outcome::kIcuAdmission: return "ICU admission";
    case Outcome::kImvEvent: return "IMV event";
  }
  return "?";
}

Outcome parse_outcome(std::string_view key) {
  for (Outcome o : kAllOutcomes)
    if (key == outcome_key(o)) return o;
  throw ConfigError("unknown outcome '" + std::string(key) + "'");
}

std::optional<bool> outcome_label(const OutcomeLabels& l, Outcome o) {
  switch (o) {
    case Outcome::kMortality: return l.same_admission_death;
    case Outcome::kLongStay: return l.long_length_of_stay;
    case Outcome::kIcuAdmission:
      if (l.icu_within_24h) return std::nullopt;
      return l.icu_any;
    case Outcome::kImvEvent:
      if (l.imv_within_24h) return std::nullopt;
      return l.imv_any;
  }
  return std::nullopt;
}

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::kInliers: return "inliers";
    case Subset::kOutliers: return "outliers";
    case Subset::kOverall: return "overall";
  }
  return "?";
}

CohortSummary summarize_cohort(
    const ClifBundle& b, const SplitAssignment& splits,
    const std::map<std::string, OutcomeLabels>& outcomes,
    const std::map<std::string, bool>* outlier_flags,
    const std::map<std::string, std::size_t>* timeline_len_24h) {
  std::unordered_map<std::string, const PatientRow*> patients;
  for (const auto& p : b.patients) patients[p.patient_id] = &p;

  struct Acc {
    std::size_t n = 0;
    double len = 0, age = 0, female = 0, hisp = 0;
    std::size_t len_n = 0;
    std::map<std::string, double> race;
    std::array<double, 6> o{};
  };
  std::array<std::array<Acc, 3>, 3> acc;

  for (const auto& h : b.hospitalizations) {
    auto pit = patients.find(h.patient_id);
    if (pit == patients.end())
      throw IntegrityError("unknown patient '" + h.patient_id + "'");
    auto oit = outcomes.find(h.hospitalization_id);
    if (oit == outcomes.end())
      throw IntegrityError("no outcomes for '" + h.hospitalization_id + "'");
    int split = static_cast<int>(splits.of_patient(h.patient_id));
    std::vector<int> subsets = {static_cast<int>(Subset::kOverall)};
    if (outlier_flags) {
      auto fit = outlier_flags->find(h.hospitalization_id);
      if (fit == outlier_flags->end())
        throw IntegrityError("no outlier flag for '" + h.hospitalization_id +
                             "'");
      subsets.push_back(static_cast<int>(fit->second ? Subset::kOutliers
                                                     : Subset::kInliers));
    }
    const OutcomeLabels& l = oit->second;
    for (int s : subsets) {
      Acc& a = acc[split][s];
      ++a.n;
      a.age += h.age_at_admission;
      a.female += pit->second->sex_category == "female";
      a.hisp += pit->second->ethnicity_category == "hispanic";
      a.race[pit->second->race_category] += 1;
      a.o[0] += l.same_admission_death;
      a.o[1] += l.long_length_of_stay;
      a.o[2] += l.icu_within_24h;
      a.o[3] += l.icu_any;
      a.o[4] += l.imv_within_24h;
      a.o[5] += l.imv_any;
      if (timeline_len_24h) {
        auto lit = timeline_len_24h->find(h.hospitalization_id);
        if (lit != timeline_len_24h->end()) {
          a.len += static_cast<double>(lit->second);
          ++a.len_n;
        }
      }
    }
  }

  CohortSummary out;
  for (int split = 0; split < 3; ++split) {
    for (int s = 0; s < 3; ++s) {
      if (!outlier_flags && s != static_cast<int>(Subset::kOverall)) continue;
      const Acc& a = acc[split][s];
      SummaryCell c;
      c.count = a.n;
      double n = a.n ? static_cast<double>(a.n) : 1.0;
      if (a.len_n) c.mean_timeline_len_24h = a.len / static_cast<double>(a.len_n);
      c.mean_age = a.age / n;
      c.fraction_female = a.female / n;
      c.fraction_hispanic = a.hisp / n;
      for (const auto& [race, k] : a.race) c.race_fraction[race] = k / n;
      c.mortality = a.o[0] / n;
      c.long_length_of_stay = a.o[1] / n;
      c.icu_within_24h = a.o[2] / n;
      c.icu_any = a.o[3] / n;
      c.imv_within_24h = a.o[4] / n;
      c.imv_any = a.o[5] / n;
      out.cells[split][s] = std::move(c);
    }
  }
  return out;
}

std::string summary_to_json(const CohortSummary& summary, int indent) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (int split = 0; split < 3; ++split) {
    nlohmann::ordered_json js = nlohmann::ordered_json::object();
    for (int s = 0; s < 3; ++s) {
      const auto& cell = summary.cells[split][s];
      if (!cell) continue;
      nlohmann::ordered_json c;
      c["count"] = cell->count;
      c["timeline_len_24h"] = cell->mean_timeline_len_24h
                                  ? nlohmann::ordered_json(*cell->mean_timeline_len_24h)
                                  : nlohmann::ordered_json(nullptr);
      c["age_mean"] = cell->mean_age;
      c["fraction_female"] = cell->fraction_female;
      nlohmann::ordered_json race = nlohmann::ordered_json::object();
      for (const auto& [k, v] : cell->race_fraction) race[k] = v;
      c["race"] = race;
      c["hispanic"] = cell->fraction_hispanic;
      c["inhospital_mortality"] = cell->mortality;
      c["long_length_of_stay"] = cell->long_length_of_stay;
      c["icu_within_24h"] = cell->icu_within_24h;
      c["icu_any"] = cell->icu_any;
      c["imv_within_24h"] = cell->imv_within_24h;
      c["imv_any"] = cell->imv_any;
      js[subset_name(static_cast<Subset>(s))] = c;
    }
    j[split_name(static_cast<Split>(split))] = js;
  }
  return j.dump(indent);
}

void write_splits_csv(const SplitAssignment& splits, const fs::path& path,
                      const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  if (!provenance.empty()) out << "# " << provenance << '\n';
  write_csv_row(out, {"patient_id", "split"});
  for (const auto& [pid, s] : splits.patient_split)
    write_csv_row(out, {pid, split_name(s)});
}

SplitAssignment read_splits_csv(const fs::path& path) {
  CsvTable t = read_csv(path);
  auto pid = t.column("patient_id", path.string()),
       sp = t.column("split", path.string());
  SplitAssignment out;
  for (const auto& r : t.rows) out.patient_split[r[pid]] = parse_split(r[sp]);
  return out;
}

void write_outcomes_csv(const std::map<std::string, OutcomeLabels>& outcomes,
                        const fs::path& path, const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  if (!provenance.empty()) out << "# " << provenance << '\n';
  write_csv_row(out, {"hospitalization_id", "same_admission_death",
                      "long_length_of_stay", "icu_within_24h", "icu_any",
                      "imv_within_24h", "imv_any"});
  auto b = [](bool v) { return std::string(v ? "1" : "0"); };
  for (const auto& [id, l] : outcomes)
    write_csv_row(out, {id, b(l.same_admission_death), b(l.long_length_of_stay),
                        b(l.icu_within_24h), b(l.icu_any), b(l.imv_within_24h),
                        b(l.imv_any)});
}

std::map<std::string, OutcomeLabels> read_outcomes_csv(const fs::path& path) {
  CsvTable t = read_csv(path);
  std::string ctx = path.string();
  std::array<std::size_t, 7> c = {
      t.column("hospitalization_id", ctx), t.column("same_admission_death", ctx),
      t.column("long_length_of_stay", ctx), t.column("icu_within_24h", ctx),
      t.column("icu_any", ctx), t.column("imv_within_24h", ctx),
      t.column("imv_any", ctx)};
  std::map<std::string, OutcomeLabels> out;
  for (const auto& r : t.rows) {
    OutcomeLabels l;
    l.hospitalization_id = r[c[0]];
    l.same_admission_death = r[c[1]] == "1";
    l.long_length_of_stay = r[c[2]] == "1";
    l.icu_within_24h = r[c[3]] == "1";
    l.icu_any = r[c[4]] == "1";
    l.imv_within_24h = r[c[5]] == "1";
    l.imv_any = r[c[6]] == "1";
    out[l.hospitalization_id] = l;
  }
  return out;
}

}  // namespace cliffm
