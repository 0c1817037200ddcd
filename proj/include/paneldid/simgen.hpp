#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "paneldid/panel.hpp"

namespace paneldid {

// Piecewise-linear profile over event time; flat beyond the outer knots.
struct PiecewiseProfile {
  std::vector<std::pair<int, double>> knots;  // sorted by event time
  double at(int t) const;
};

// Additive treatment effect on the monthly prescription probability as a
// function of event time. Default profiles are zero before the anticipation
// window so limited anticipation holds by construction.
struct TrueEffectProfile {
  PiecewiseProfile profile;
  double at(int t) const { return profile.at(t); }
};

TrueEffectProfile zero_effect();
// 0 through the first post-birth year, then a linear climb reaching
// +0.010 at t=48 and +0.014 at t=72.
TrueEffectProfile calibrated_effect();
TrueEffectProfile step_effect(double level, int from_t);

// Pregnancy-dip multiplier: 1 outside [-9, 12], descending linearly to 0.4 at
// birth and recovering to 1 by t=12.
PiecewiseProfile default_dip();
PiecewiseProfile flat_dip();

struct ReformEffect {
  int reform_month = 0;
  double monthly_delta = 0.0;  // added to the rate in event months 1..12 for g >= reform_month
};

struct DgpConfig {
  int n_units = 5000;
  int n_months = 132;
  double never_share = 0.35;
  int cohort_lo = 24;
  int cohort_hi = 83;
  double baseline = 0.02;
  PiecewiseProfile dip = default_dip();
  TrueEffectProfile effect = calibrated_effect();
  double covar_level = 0.0;    // additive rate shift per sd of age
  double covar_trend = 0.0;    // additive rate slope per sd of age across the window
  double covar_timing = 0.0;   // cohort-month shift per sd of age
  double calendar_trend = 0.0; // additive rate drift across the window
  double persistence = 0.6;    // on/off spell stickiness
  double psy_rate = 0.12;
  double gp_rate = 0.18;
  double age_log_mean = 3.3842; // log(29.5)
  double age_log_sd = 0.10;
  bool violate_trends = false;  // cohort-dependent untreated trends (negative testing)
  std::optional<ReformEffect> reform;
  std::uint64_t seed = 0;

  int delta_guard = 9;  // effect profiles must vanish before -delta_guard
};

// Throws ConfigError when any reachable monthly rate leaves (0, 1) or the
// effect profile violates the anticipation guard.
void validate(const DgpConfig& config);

// Generates the monthly panel directly: covariate and cohort per unit, then
// an on/off spell process whose month-tau marginal equals the configured
// latent rate exactly, so the implied effect path is analytic. Visit counts
// are Poisson. Deterministic given config.seed.
Panel simulate_panel(const DgpConfig& config);

// Exact event-study path implied by the generative model.
std::vector<double> true_event_effects(const DgpConfig& config, int t_min, int t_max);

// Claims whose smoothed reconstruction reproduces the panel's prescription
// series (up to the rare short gap the smoother closes) plus one visit row
// per visit; exercises the full ingestion pipeline end to end.
std::vector<ClaimRecord> emit_claims(const Panel& panel);

}  // namespace paneldid
