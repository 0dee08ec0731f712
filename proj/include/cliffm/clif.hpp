#ifndef CLIFFM_CLIF_HPP
#define CLIFFM_CLIF_HPP

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cliffm/common.hpp"

namespace cliffm {

struct PatientRow {
  std::string patient_id;
  std::string race_category;
  std::string ethnicity_category;
  std::string sex_category;
  bool operator==(const PatientRow&) const = default;
};

struct HospitalizationRow {
  std::string hospitalization_id;
  std::string patient_id;
  TimeMs admission_dttm = 0;
  TimeMs discharge_dttm = 0;
  double age_at_admission = 0.0;  // years
  std::string admission_type_category;
  std::string discharge_category;
  bool operator==(const HospitalizationRow&) const = default;
};

struct AdtRow {
  std::string hospitalization_id;
  TimeMs in_dttm = 0;
  std::string location_category;
  bool operator==(const AdtRow&) const = default;
};

// Shared shape of the four category/value tables.
struct MeasurementRow {
  std::string hospitalization_id;
  TimeMs time = 0;
  std::string category;
  double value = 0.0;
  bool operator==(const MeasurementRow&) const = default;
};

struct RespiratoryRow {
  std::string hospitalization_id;
  TimeMs start_dttm = 0;
  std::string mode_category;
  std::string device_category;
  bool prone_flag = false;
  bool operator==(const RespiratoryRow&) const = default;
};

// The CLIF tables of one site. The four category/value tables share
// MeasurementRow; their file-level column names differ (see table_schema).
struct ClifBundle {
  std::vector<PatientRow> patients;
  std::vector<HospitalizationRow> hospitalizations;
  std::vector<AdtRow> adt;
  std::vector<MeasurementRow> vitals;   // recorded_dttm, vital_category, value
  std::vector<MeasurementRow> labs;     // result_available_dttm, lab_category
  std::vector<MeasurementRow> meds;     // admin_dttm, med_category, dose
  std::vector<RespiratoryRow> respiratory;
  std::vector<MeasurementRow> assessments;  // recorded_dttm, assessment_category

  bool operator==(const ClifBundle&) const = default;
};

enum class MeasurementTable { kVitals, kLabs, kMeds, kAssessments };

struct MeasurementSchema {
  const char* file;
  const char* time_column;
  const char* category_column;
  const char* value_column;
};
const MeasurementSchema& table_schema(MeasurementTable table);

inline constexpr std::array<const char*, 8> kClifTableFiles = {
    "patient.csv",     "hospitalization.csv",
    "adt.csv",         "vitals.csv",
    "labs.csv",        "medication_admin_continuous.csv",
    "respiratory_support.csv", "patient_assessments.csv"};

// Reads one CSV per table from `directory`, then validate().
ClifBundle parse_bundle(const std::filesystem::path& directory);
void write_bundle(const ClifBundle& bundle,
                  const std::filesystem::path& directory);

// Referential integrity, admission < discharge, and event-in-stay checks.
// Throws IntegrityError naming the offending row.
void validate(const ClifBundle& bundle);

// Adults (age >= 18) with stays of at least 24 hours; orphaned rows dropped.
ClifBundle filter_cohort(const ClifBundle& bundle);

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(Split s);
Split parse_split(std::string_view name);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct SplitAssignment {
  std::map<std::string, Split> patient_split;
  // Per split: earliest and latest first-admission time (absent if empty).
  std::array<std::optional<std::pair<TimeMs, TimeMs>>, 3> first_admission_range;

  Split of_patient(const std::string& patient_id) const;
  std::size_t count(Split s) const;
};

// Chronological patient-level split by first admission time. Counts follow
// the largest-remainder rule so each split is within one patient of its
// requested share.
SplitAssignment assign_splits(const ClifBundle& bundle, SplitRatios ratios);

// Stays (with their patients and events) whose patient is in split `s`.
ClifBundle restrict_to_split(const ClifBundle& bundle, const SplitAssignment& splits, Split s);

struct OutcomeLabels {
  std::string hospitalization_id;
  bool same_admission_death = false;
  bool long_length_of_stay = false;
  bool icu_within_24h = false;
  bool icu_any = false;
  bool imv_within_24h = false;
  bool imv_any = false;
  bool operator==(const OutcomeLabels&) const = default;
};

inline constexpr TimeMs kLongStayMs = 7 * kDayMs;
inline constexpr TimeMs kWindowMs = 24 * kHourMs;

std::map<std::string, OutcomeLabels> derive_outcomes(const ClifBundle& bundle);

// The four evaluated outcomes. ICU and IMV are "after the first 24 hours":
// stays with the event inside the window are excluded, not negative.
enum class Outcome { kMortality = 0, kLongStay = 1, kIcuAdmission = 2, kImvEvent = 3 };
inline constexpr std::array<Outcome, 4> kAllOutcomes = {
    Outcome::kMortality, Outcome::kLongStay, Outcome::kIcuAdmission,
    Outcome::kImvEvent};

const char* outcome_key(Outcome o);           // same_admission_death, ...
const char* outcome_display_name(Outcome o);  // same admission death, ...
Outcome parse_outcome(std::string_view key);
// nullopt when the stay is excluded by the 24-hour restriction.
std::optional<bool> outcome_label(const OutcomeLabels& labels, Outcome o);

// Table 1/2 style grid.
struct SummaryCell {
  std::size_t count = 0;
  std::optional<double> mean_timeline_len_24h;
  double mean_age = 0.0;
  double fraction_female = 0.0;
  std::map<std::string, double> race_fraction;
  double fraction_hispanic = 0.0;
  double mortality = 0.0;
  double long_length_of_stay = 0.0;
  double icu_within_24h = 0.0;
  double icu_any = 0.0;
  double imv_within_24h = 0.0;
  double imv_any = 0.0;
};

enum class Subset { kInliers = 0, kOutliers = 1, kOverall = 2 };
inline constexpr std::array<Subset, 3> kAllSubsets = {Subset::kInliers, Subset::kOutliers,
                                                      Subset::kOverall};
const char* subset_name(Subset s);

struct CohortSummary {
  // [split][subset]; inlier/outlier cells absent without outlier flags.
  std::array<std::array<std::optional<SummaryCell>, 3>, 3> cells;
};

CohortSummary summarize_cohort(
    const ClifBundle& bundle, const SplitAssignment& splits,
    const std::map<std::string, OutcomeLabels>& outcomes,
    const std::map<std::string, bool>* outlier_flags = nullptr,
    const std::map<std::string, std::size_t>* timeline_len_24h = nullptr);

std::string summary_to_json(const CohortSummary& summary, int indent = 2);

void write_splits_csv(const SplitAssignment& splits,
                      const std::filesystem::path& path,
                      const std::string& provenance = "");
SplitAssignment read_splits_csv(const std::filesystem::path& path);
void write_outcomes_csv(const std::map<std::string, OutcomeLabels>& outcomes,
                        const std::filesystem::path& path,
                        const std::string& provenance = "");
std::map<std::string, OutcomeLabels> read_outcomes_csv(
    const std::filesystem::path& path);

}  // namespace cliffm

#endif  // CLIFFM_CLIF_HPP
