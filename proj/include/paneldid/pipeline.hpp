#pragma once

#include "paneldid/did.hpp"
#include "paneldid/inference.hpp"
#include "paneldid/simgen.hpp"

namespace paneldid {

struct EstimateConfig {
  DidConfig did;
  int t_min = -24;
  int t_max = 48;
  BootConfig boot;
};

struct EstimateResult {
  EventStudyCurve curve;
  BandResult band;
  std::vector<CellSkip> skipped;
  int n_cells = 0;
};

// smoothing-ready panel -> group-time cells -> event-study aggregation ->
// multiplier-bootstrap bands.
EstimateResult estimate_event_study(const Panel& panel, const EstimateConfig& config);

// -- Monte Carlo harnesses --------------------------------------------------------

struct CoverageReport {
  std::vector<int> event_times;
  std::vector<double> pointwise_coverage;  // per event time
  std::vector<double> bias;
  double uniform_coverage = 0.0;
  double uniform_mc_se = 0.0;
  int n_reps = 0;
  int n_failed = 0;
};

// Fraction of replications whose uniform band covers the whole true path,
// plus per-event-time pointwise coverage against 1.96 intervals.
CoverageReport coverage_study(const DgpConfig& dgp, const EstimateConfig& estimator,
                              int n_reps, std::uint64_t seed);

using EventStudyEstimator =
    std::function<EventStudyCurve(const Panel& panel, std::uint64_t rep_seed)>;

struct McCell {
  int event_time = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double pointwise_coverage = 0.0;
  int n_reps = 0;
};

struct McResult {
  std::vector<McCell> cells;
  double uniform_coverage = 0.0;
  int n_failed = 0;
  int n_reps = 0;
};

// Generic bias/RMSE/coverage table for an event-study estimator against the
// DGP's analytic path. Estimator failures count toward n_failed. Coverage
// columns require the estimator to fill pointwise_se (and uniform bands when
// present).
McResult monte_carlo_run(const DgpConfig& dgp, const EventStudyEstimator& estimator,
                         int n_reps, std::uint64_t seed);

}  // namespace paneldid
