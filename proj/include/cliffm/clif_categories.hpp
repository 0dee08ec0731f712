#ifndef CLIFFM_CLIF_CATEGORIES_HPP
#define CLIFFM_CLIF_CATEGORIES_HPP

#include <array>
#include <span>
#include <string_view>

// Built-in CLIF category enumeration. Bump kClifCategoriesVersion whenever a
// list changes; vocabularies record the version they were built against.
namespace cliffm::clif_categories {

inline constexpr std::string_view kVersion = "clif-categories-1";
inline constexpr std::string_view kUnknown = "unknown";

inline constexpr std::array<std::string_view, 7> kRace = {
    "american_indian", "asian", "black", "other",
    "pacific_islander", "unknown", "white"};
inline constexpr std::array<std::string_view, 3> kEthnicity = {
    "hispanic", "non_hispanic", "unknown"};
inline constexpr std::array<std::string_view, 3> kSex = {"female", "male",
                                                         "unknown"};
inline constexpr std::array<std::string_view, 5> kAdmissionType = {
    "direct", "ed", "elective", "transfer", "unknown"};
inline constexpr std::array<std::string_view, 8> kDischarge = {
    "ama", "expired", "home", "hospice", "other", "rehab", "snf", "unknown"};
inline constexpr std::array<std::string_view, 7> kLocation = {
    "ed", "icu", "other", "procedural", "stepdown", "unknown", "ward"};
inline constexpr std::array<std::string_view, 9> kRespDevice = {
    "cpap", "face_mask", "high_flow_nc", "imv", "nasal_cannula",
    "nippv", "other", "room_air", "unknown"};
inline constexpr std::array<std::string_view, 8> kRespMode = {
    "ac_pc", "ac_vc", "other", "passive", "psv_cpap", "simv", "spontaneous",
    "unknown"};
inline constexpr std::array<std::string_view, 9> kVital = {
    "dbp", "heart_rate", "map", "respiratory_rate", "sbp", "spo2", "temp_c",
    "unknown", "weight_kg"};
inline constexpr std::array<std::string_view, 17> kLab = {
    "albumin", "alt", "ast", "bicarbonate", "bilirubin_total", "bun",
    "chloride", "creatinine", "glucose_serum", "hemoglobin", "lactate",
    "pco2_arterial", "platelet_count", "potassium", "sodium", "unknown", "wbc"};
inline constexpr std::array<std::string_view, 11> kMed = {
    "dexmedetomidine", "epinephrine", "fentanyl", "heparin", "insulin",
    "midazolam", "norepinephrine", "phenylephrine", "propofol", "unknown",
    "vasopressin"};
inline constexpr std::array<std::string_view, 5> kAssessment = {
    "braden_total", "gcs_total", "pain_score", "rass", "unknown"};

// Discharge category counted as in-hospital death.
inline constexpr std::string_view kExpired = "expired";
inline constexpr std::string_view kIcu = "icu";
inline constexpr std::string_view kImv = "imv";

}  // namespace cliffm::clif_categories

#endif  // CLIFFM_CLIF_CATEGORIES_HPP
