#ifndef CLIFFM_SYNTH_HPP
#define CLIFFM_SYNTH_HPP

#include <string>
#include <utility>
#include <vector>

#include "cliffm/clif.hpp"

namespace cliffm {

// Effect of the two latent factors on one outcome's log-odds.
struct OutcomeModel {
  double intercept = 0.0;
  double severity = 0.0;
  double respiratory = 0.0;
  double age_per_year = 0.0;
};

// Parameters of one synthetic site. Stays carry a latent severity s and a
// latent respiratory-failure factor r (both standard normal plus a site
// shift); measurements, event rates, length of stay and outcomes depend on
// them, so outcomes are learnable from the token stream.
struct SiteProfile {
  std::string name;
  TimeMs first_admission_begin = 0;
  TimeMs first_admission_end = 0;

  std::vector<std::pair<std::string, double>> race_weights;
  double p_hispanic = 0.05;
  double p_female = 0.5;
  double age_mean = 60.0;
  double age_sd = 17.0;
  double extra_stays_mean = 0.25;

  double severity_shift = 0.0;
  double respiratory_shift = 0.0;

  // log(hours) = los_log_mean + los_severity*s + los_respiratory*r + los_log_sd*N
  double los_log_mean = 4.4;
  double los_log_sd = 0.7;
  double los_severity = 0.35;
  double los_respiratory = 0.15;

  // Mean events per hour of stay, before the severity multiplier.
  double vitals_per_hour = 1.0;
  double labs_per_hour = 0.4;
  double meds_per_hour = 0.15;
  double assessments_per_hour = 0.2;
  double respiratory_per_day = 0.5;
  double rate_severity = 0.25;
  double count_dispersion = 8.0;  // negative binomial shape

  OutcomeModel mortality;
  OutcomeModel icu;
  OutcomeModel imv;
  double icu_early_fraction = 0.45;
  double imv_early_fraction = 0.4;
  // Probability scale of early high-flow oxygen as a function of r.
  double high_flow_respiratory = 0.0;
  double high_flow_base = -2.0;
};

// Named profiles: "A" (about 100 tokens in the first 24 h, source-like) and
// "B" (about 400 tokens, shifted case mix and site-specific ICU/IMV drivers).
SiteProfile site_profile(const std::string& name);

struct SynthConfig {
  SiteProfile profile;
  std::size_t patients = 1000;
};

// Deterministic in (config, seed); the result satisfies validate().
ClifBundle synth_cohort(const SynthConfig& config, std::uint64_t seed);

}  // namespace cliffm

#endif  // CLIFFM_SYNTH_HPP
