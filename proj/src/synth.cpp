#include "cliffm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "cliffm/clif_categories.hpp"

namespace cliffm {
namespace {

// value = base * exp(sigma * z), z = sev*s + resp*r + 0.4*stay_level + 0.4*noise.
// Rows sharing a panel id are charted together and their noise shares a draw.
struct Physiology {
  const char* category;
  double weight;
  double base;
  double sigma;
  double sev;
  double resp;
  double lo;  // clamp after rounding; lo == hi means unclamped
  double hi;
  bool integer;
  int panel = -1;
};

constexpr Physiology kVitals[] = {
    {"heart_rate", 0.25, 84, 0.14, 0.7, 0.25, 0, 0, false, 0},
    {"sbp", 0.14, 121, 0.11, -0.6, 0.0, 0, 0, false, 0},
    {"dbp", 0.14, 66, 0.12, -0.5, 0.0, 0, 0, false, 0},
    {"map", 0.14, 82, 0.11, -0.6, 0.0, 0, 0, false, 0},
    {"respiratory_rate", 0.13, 18, 0.18, 0.35, 0.8, 0, 0, false, 0},
    {"spo2", 0.13, 95, 0.014, -0.25, -0.9, 0, 0, false, 0},
    {"temp_c", 0.06, 36.9, 0.011, 0.45, 0.1, 0, 0, false},
    {"weight_kg", 0.01, 80, 0.2, 0.0, 0.0, 0, 0, false},
};

constexpr Physiology kLabs[] = {
    {"albumin", 0.04, 3.4, 0.14, -0.5, 0.0, 0, 0, false, 3},
    {"alt", 0.04, 30, 0.55, 0.25, 0.0, 0, 0, false, 3},
    {"ast", 0.04, 34, 0.55, 0.35, 0.0, 0, 0, false, 3},
    {"bicarbonate", 0.08, 24, 0.11, -0.5, 0.1, 0, 0, false, 1},
    {"bilirubin_total", 0.04, 0.8, 0.5, 0.3, 0.0, 0, 0, false, 3},
    {"bun", 0.08, 18, 0.4, 0.5, 0.0, 0, 0, false, 1},
    {"chloride", 0.08, 102, 0.03, 0.0, 0.0, 0, 0, false, 1},
    {"creatinine", 0.09, 1.0, 0.35, 0.55, 0.0, 0, 0, false, 1},
    {"glucose_serum", 0.08, 122, 0.25, 0.3, 0.0, 0, 0, false, 1},
    {"hemoglobin", 0.08, 11, 0.15, -0.35, 0.0, 0, 0, false, 2},
    {"lactate", 0.07, 1.5, 0.4, 0.85, 0.2, 0, 0, false, 4},
    {"pco2_arterial", 0.04, 41, 0.13, 0.1, 0.7, 0, 0, false, 4},
    {"platelet_count", 0.07, 220, 0.3, -0.35, 0.0, 0, 0, false, 2},
    {"potassium", 0.08, 4.1, 0.09, 0.25, 0.0, 0, 0, false, 1},
    {"sodium", 0.08, 139, 0.022, -0.15, 0.0, 0, 0, false, 1},
    {"wbc", 0.07, 8.5, 0.35, 0.55, 0.1, 0, 0, false, 2},
};

// Medication weight is scaled by exp(sev * s) when choosing the category.
constexpr Physiology kMeds[] = {
    {"dexmedetomidine", 0.08, 0.6, 0.4, 0.2, 0.3, 0, 0, false},
    {"epinephrine", 0.03, 0.05, 0.5, 0.6, 0.0, 0, 0, false},
    {"fentanyl", 0.12, 50, 0.5, 0.3, 0.3, 0, 0, false},
    {"heparin", 0.25, 1000, 0.3, 0.0, 0.0, 0, 0, false},
    {"insulin", 0.2, 3, 0.5, 0.2, 0.0, 0, 0, false},
    {"midazolam", 0.05, 2, 0.5, 0.3, 0.3, 0, 0, false},
    {"norepinephrine", 0.1, 0.08, 0.5, 0.7, 0.0, 0, 0, false},
    {"phenylephrine", 0.05, 0.8, 0.5, 0.5, 0.0, 0, 0, false},
    {"propofol", 0.08, 30, 0.4, 0.3, 0.4, 0, 0, false},
    {"vasopressin", 0.04, 0.03, 0.3, 0.7, 0.0, 0, 0, false},
};

constexpr Physiology kAssessments[] = {
    {"braden_total", 0.25, 17, 0.15, -0.5, 0.0, 6, 23, true},
    {"gcs_total", 0.3, 13.5, 0.12, -0.6, -0.1, 3, 15, true},
    {"pain_score", 0.25, 3, 0.5, 0.2, 0.0, 0, 10, true},
    {"rass", 0.2, 2, 0.5, -0.3, 0.0, 0, 9, true},  // shifted: rass + 5
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string pick_weighted(const std::vector<std::pair<std::string, double>>& w,
                          Rng& rng) {
  std::vector<double> p;
  for (const auto& kv : w) p.push_back(kv.second);
  std::discrete_distribution<std::size_t> d(p.begin(), p.end());
  return w[d(rng)].first;
}

std::size_t negative_binomial(double mean, double shape, Rng& rng) {
  if (mean <= 0) return 0;
  std::gamma_distribution<double> g(shape, mean / shape);
  std::poisson_distribution<long> p(g(rng));
  return static_cast<std::size_t>(p(rng));
}

double measure(const Physiology& ph, double s, double r, double level,
               double shared, Rng& rng) {
  std::normal_distribution<double> n01;
  double z = ph.sev * s + ph.resp * r + 0.4 * level +
             0.4 * (0.8 * shared + 0.6 * n01(rng));
  double v = ph.base * std::exp(ph.sigma * z);
  if (ph.integer) {
    v = std::round(v);
    v = std::clamp(v, ph.lo, ph.hi);
  } else {
    double scale = v >= 1000 ? 10.0 : v >= 1 ? 100.0 : 10000.0;
    v = std::round(v * scale) / scale;
  }
  return v;
}

TimeMs round_to_second(double ms) {
  return static_cast<TimeMs>(std::floor(ms / 1000.0)) * 1000;
}

TimeMs date(int y, unsigned m, unsigned d) {
  using namespace std::chrono;
  return static_cast<TimeMs>(
             sys_days{year_month_day{year{y}, month{m}, day{d}}}
                 .time_since_epoch()
                 .count()) *
         kDayMs;
}

}  // namespace

SiteProfile site_profile(const std::string& name) {
  SiteProfile p;
  p.name = name;
  if (name == "A") {
    p.first_admission_begin = date(2008, 1, 1);
    p.first_admission_end = date(2019, 12, 31);
    p.race_weights = {{"black", 0.151}, {"asian", 0.036}, {"white", 0.684},
                      {"american_indian", 0.003}, {"pacific_islander", 0.001},
                      {"other", 0.06}, {"unknown", 0.065}};
    p.p_hispanic = 0.055;
    p.p_female = 0.526;
    p.age_mean = 60.5;
    p.age_sd = 17.5;
    p.vitals_per_hour = 1.12;
    p.labs_per_hour = 0.42;
    p.meds_per_hour = 0.15;
    p.assessments_per_hour = 0.22;
    p.respiratory_per_day = 0.6;
    p.mortality = {-3.3, 2.2, 0.3, 0.02};
    p.icu = {-2.2, 1.9, 0.5, 0.0};
    p.imv = {-2.9, 1.6, 0.8, 0.0};
    p.high_flow_base = -2.5;
    p.high_flow_respiratory = 0.0;
  } else if (name == "B") {
    p.first_admission_begin = date(2020, 3, 1);
    p.first_admission_end = date(2022, 3, 1);
    p.race_weights = {{"black", 0.70}, {"asian", 0.018}, {"white", 0.23},
                      {"american_indian", 0.002}, {"pacific_islander", 0.001},
                      {"other", 0.02}, {"unknown", 0.029}};
    p.p_hispanic = 0.055;
    p.p_female = 0.56;
    p.age_mean = 54.5;
    p.age_sd = 17.0;
    p.severity_shift = 0.15;
    p.respiratory_shift = 0.3;
    p.vitals_per_hour = 4.6;
    p.labs_per_hour = 1.6;
    p.meds_per_hour = 0.6;
    p.assessments_per_hour = 0.85;
    p.respiratory_per_day = 1.5;
    p.mortality = {-3.6, 2.2, 0.3, 0.02};
    p.icu = {-2.6, 0.3, 2.2, 0.0};
    p.imv = {-3.4, 0.2, 2.3, 0.0};
    p.high_flow_base = -1.5;
    p.high_flow_respiratory = 1.6;
  } else {
    throw ConfigError("unknown site profile '" + name + "' (expected A or B)");
  }
  return p;
}

namespace {

void synth_stay(const SiteProfile& p, const std::string& hid,
                const std::string& pid, TimeMs admit, double age, Rng& rng,
                ClifBundle& b, TimeMs& discharge_out) {
  namespace cc = clif_categories;
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  const double s = n01(rng) + p.severity_shift;
  const double r = n01(rng) + p.respiratory_shift;

  double los_h = std::exp(p.los_log_mean + p.los_severity * s +
                          p.los_respiratory * r + p.los_log_sd * n01(rng));
  los_h = std::clamp(los_h, 2.0, 24.0 * 60);
  const TimeMs los = round_to_second(los_h * kHourMs);
  const TimeMs discharge = admit + los;
  discharge_out = discharge;

  auto logit = [&](const OutcomeModel& m) {
    return m.intercept + m.severity * s + m.respiratory * r +
           m.age_per_year * (age - 60.0);
  };
  const bool dies = u01(rng) < sigmoid(logit(p.mortality));
  const bool icu = u01(rng) < sigmoid(logit(p.icu));
  const bool imv = u01(rng) < sigmoid(logit(p.imv));

  auto event_time = [&](bool early) {
    double lo = 0, hi = static_cast<double>(los);
    if (early) {
      lo = 0.5 * kHourMs;
      hi = std::min<double>(hi, static_cast<double>(kWindowMs));
    } else if (los > kWindowMs + kHourMs) {
      lo = static_cast<double>(kWindowMs) + kSecondMs;
    }
    if (hi <= lo) lo = 0;
    return admit + round_to_second(lo + (hi - lo) * u01(rng));
  };

  std::vector<std::pair<std::string, double>> admission_types = {
      {"ed", 0.6}, {"elective", 0.15}, {"direct", 0.15}, {"transfer", 0.1}};
  const std::string admission_type = pick_weighted(admission_types, rng);

  std::string discharge_category;
  if (dies) {
    discharge_category = std::string(cc::kExpired);
  } else {
    discharge_category = pick_weighted({{"home", 0.6}, {"snf", 0.2},
                                        {"rehab", 0.1}, {"hospice", 0.03},
                                        {"ama", 0.02}, {"other", 0.05}},
                                       rng);
  }
  b.hospitalizations.push_back({hid, pid, admit, discharge,
                                std::round(age * 10) / 10, admission_type,
                                discharge_category});

  // ADT: arrival, optional ICU episode, ward return.
  b.adt.push_back({hid, admit, admission_type == "ed" ? "ed" : "ward"});
  if (admission_type == "ed") {
    TimeMs t = admit + round_to_second((2 + 8 * u01(rng)) * kHourMs);
    if (t < discharge) b.adt.push_back({hid, t, "ward"});
  }
  if (icu) {
    TimeMs t = event_time(u01(rng) < p.icu_early_fraction);
    b.adt.push_back({hid, t, "icu"});
    TimeMs back = t + round_to_second((24 + 72 * u01(rng)) * kHourMs);
    if (back < discharge) b.adt.push_back({hid, back, "stepdown"});
  }

  // Respiratory support.
  const double rate_mult =
      std::exp(p.rate_severity * s - 0.5 * p.rate_severity * p.rate_severity);
  if (u01(rng) < sigmoid(p.high_flow_base + p.high_flow_respiratory * r)) {
    TimeMs t = admit + round_to_second(12.0 * kHourMs * u01(rng));
    b.respiratory.push_back({hid, t, "passive", "high_flow_nc", false});
  }
  std::size_t n_resp = negative_binomial(
      p.respiratory_per_day * rate_mult * std::exp(0.4 * r) * los_h / 24.0,
      p.count_dispersion, rng);
  for (std::size_t i = 0; i < n_resp; ++i) {
    TimeMs t = event_time(false);
    if (u01(rng) < 0.5) t = admit + round_to_second(u01(rng) * los);
    double z = 0.8 * r + n01(rng);
    const char* device = z < -0.3 ? "room_air" : z < 1.0 ? "nasal_cannula"
                                               : z < 1.8 ? "face_mask"
                                                         : "nippv";
    const char* mode = std::string_view(device) == "room_air" ? "spontaneous"
                       : std::string_view(device) == "nippv"  ? "psv_cpap"
                                                              : "passive";
    b.respiratory.push_back({hid, t, mode, device, false});
  }
  if (imv) {
    TimeMs t = event_time(u01(rng) < p.imv_early_fraction);
    bool prone = u01(rng) < sigmoid(-2.0 + 0.8 * r);
    b.respiratory.push_back({hid, t, "ac_vc", "imv", prone});
    if (u01(rng) < 0.5) {
      TimeMs t2 = t + round_to_second((6 + 48 * u01(rng)) * kHourMs);
      if (t2 < discharge) b.respiratory.push_back({hid, t2, "psv_cpap", "imv", false});
    }
  }

  // Category/value tables. Each stay has a persistent level per category.
  auto emit = [&](const auto& table, double per_hour, bool sev_weighted,
                  std::vector<MeasurementRow>& dst) {
    constexpr std::size_t kMax = 32;
    std::array<double, kMax> level{};
    for (auto& l : level) l = n01(rng);
    // Draw units are panels (or single rows); the count keeps per_hour as
    // measurements per hour.
    std::vector<std::vector<std::size_t>> units;
    std::vector<double> uw;
    double mean_size = 0, total_w = 0;
    for (std::size_t i = 0; i < std::size(table); ++i) {
      const Physiology& ph = table[i];
      double w = ph.weight * (sev_weighted ? std::exp(ph.sev * s) : 1.0);
      auto it = std::find_if(units.begin(), units.end(), [&](const auto& u) {
        return ph.panel >= 0 && table[u[0]].panel == ph.panel;
      });
      if (it == units.end()) {
        units.push_back({i});
        uw.push_back(w);
      } else {
        it->push_back(i);
        uw[static_cast<std::size_t>(it - units.begin())] += w;
      }
    }
    for (std::size_t u = 0; u < units.size(); ++u) {
      mean_size += uw[u] * static_cast<double>(units[u].size());
      total_w += uw[u];
    }
    mean_size /= total_w;
    std::discrete_distribution<std::size_t> pick_unit(uw.begin(), uw.end());
    std::size_t n = negative_binomial(per_hour * rate_mult * los_h / mean_size,
                                      p.count_dispersion, rng);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& unit = units[pick_unit(rng)];
      TimeMs t = admit + round_to_second(u01(rng) * static_cast<double>(los));
      double shared = n01(rng);
      for (std::size_t idx : unit) {
        const Physiology& ph = table[idx];
        dst.push_back({hid, t, ph.category, measure(ph, s, r, level[idx], shared, rng)});
      }
    }
  };
  emit(kVitals, p.vitals_per_hour, false, b.vitals);
  emit(kLabs, p.labs_per_hour, false, b.labs);
  emit(kMeds, p.meds_per_hour, true, b.meds);
  emit(kAssessments, p.assessments_per_hour, false, b.assessments);
}

}  // namespace

ClifBundle synth_cohort(const SynthConfig& config, std::uint64_t seed) {
  const SiteProfile& p = config.profile;
  if (config.patients == 0) throw ConfigError("synth: zero patients");
  for (double rate : {p.vitals_per_hour, p.labs_per_hour, p.meds_per_hour,
                      p.assessments_per_hour, p.respiratory_per_day})
    if (rate < 0) throw ConfigError("synth: negative event rate");
  if (p.first_admission_end <= p.first_admission_begin)
    throw ConfigError("synth: empty admission window");
  if (p.race_weights.empty()) throw ConfigError("synth: no race weights");

  ClifBundle b;
  char buf[64];
  std::size_t stay_counter = 0;
  for (std::size_t i = 0; i < config.patients; ++i) {
    Rng rng(derive_seed(seed, i));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01;

    std::snprintf(buf, sizeof buf, "%s-P%06zu", p.name.c_str(), i + 1);
    std::string pid = buf;
    PatientRow row;
    row.patient_id = pid;
    row.race_category = pick_weighted(p.race_weights, rng);
    row.ethnicity_category = u01(rng) < p.p_hispanic ? "hispanic" : "non_hispanic";
    row.sex_category = u01(rng) < p.p_female ? "female" : "male";
    b.patients.push_back(row);

    double age = std::clamp(p.age_mean + p.age_sd * n01(rng), 16.0, 95.0);
    TimeMs admit = p.first_admission_begin +
                   round_to_second(u01(rng) * static_cast<double>(
                                                  p.first_admission_end -
                                                  p.first_admission_begin));
    std::poisson_distribution<int> extra(p.extra_stays_mean);
    int stays = 1 + extra(rng);
    for (int k = 0; k < stays; ++k) {
      std::snprintf(buf, sizeof buf, "%s-H%07zu", p.name.c_str(), ++stay_counter);
      TimeMs discharge = 0;
      synth_stay(p, buf, pid, admit, age, rng, b, discharge);
      std::exponential_distribution<double> gap(1.0 / 120.0);
      double gap_days = 1.0 + gap(rng);
      admit = discharge + round_to_second(gap_days * kDayMs);
      age += gap_days / 365.25;
    }
  }
  return b;
}

}  // namespace cliffm
