#include "paneldid/pipeline.hpp"

#include <cmath>

#include "paneldid/errors.hpp"
#include "paneldid/rng.hpp"

namespace paneldid {

EstimateResult estimate_event_study(const Panel& panel, const EstimateConfig& cfg) {
  AttGtResult cells = att_gt_all(panel, cfg.did, cfg.t_min, cfg.t_max);
  EstimateResult res;
  res.skipped = cells.skipped;
  res.n_cells = static_cast<int>(cells.cells.size());
  if (cells.cells.empty()) {
    if (!res.skipped.empty())
      throw EstimationError("estimation failed for every cell; first reason: " +
                            res.skipped.front().reason);
    throw EstimationError("no estimable group-time cells in the event window");
  }
  res.curve = aggregate_event_study(cells, panel);
  res.band = multiplier_bootstrap(res.curve.influence, cfg.boot);
  res.curve.critical_value = res.band.critical_value;
  const auto K = res.curve.estimates.size();
  res.curve.uniform_lo.resize(K);
  res.curve.uniform_hi.resizeLike(res.curve.uniform_lo);
  for (Eigen::Index k = 0; k < K; ++k) {
    double half = res.band.critical_value * res.curve.pointwise_se[k];
    res.curve.uniform_lo[k] = res.curve.estimates[k] - half;
    res.curve.uniform_hi[k] = res.curve.estimates[k] + half;
  }
  return res;
}

CoverageReport coverage_study(const DgpConfig& dgp, const EstimateConfig& estimator,
                              int n_reps, std::uint64_t seed) {
  if (n_reps < 2) throw ConfigError("coverage_study: need n_reps >= 2");
  std::vector<double> truth =
      true_event_effects(dgp, estimator.t_min, estimator.t_max);

  std::map<int, int> hit;     // per event time: pointwise covered count
  std::map<int, int> seen;    // per event time: times estimated
  std::map<int, double> berr; // per event time: summed error
  int uniform_hits = 0, done = 0, failed = 0;

  for (int rep = 0; rep < n_reps; ++rep) {
    DgpConfig d = dgp;
    d.seed = derive_seed(seed, static_cast<std::uint64_t>(rep));
    EstimateConfig est = estimator;
    est.boot.seed = derive_seed(seed, 0xb00500000ULL + static_cast<std::uint64_t>(rep));
    try {
      Panel panel = simulate_panel(d);
      EstimateResult r = estimate_event_study(panel, est);
      bool uniform_ok = true;
      for (std::size_t k = 0; k < r.curve.event_times.size(); ++k) {
        int t = r.curve.event_times[k];
        auto idx = static_cast<Eigen::Index>(k);
        double tv = truth[static_cast<std::size_t>(t - estimator.t_min)];
        double se = r.curve.pointwise_se[idx];
        double err = r.curve.estimates[idx] - tv;
        ++seen[t];
        berr[t] += err;
        if (se > 0.0 && std::abs(err) <= 1.96 * se) ++hit[t];
        if (se == 0.0 && err == 0.0) ++hit[t];
        if (tv < r.curve.uniform_lo[idx] || tv > r.curve.uniform_hi[idx]) uniform_ok = false;
      }
      if (uniform_ok) ++uniform_hits;
      ++done;
    } catch (const std::exception&) {
      ++failed;
    }
  }

  CoverageReport rep;
  rep.n_reps = done;
  rep.n_failed = failed;
  if (done > 0) {
    rep.uniform_coverage = static_cast<double>(uniform_hits) / done;
    rep.uniform_mc_se =
        std::sqrt(rep.uniform_coverage * (1.0 - rep.uniform_coverage) / done);
  }
  for (const auto& [t, cnt] : seen) {
    rep.event_times.push_back(t);
    rep.pointwise_coverage.push_back(static_cast<double>(hit[t]) / cnt);
    rep.bias.push_back(berr[t] / cnt);
  }
  return rep;
}

McResult monte_carlo_run(const DgpConfig& dgp, const EventStudyEstimator& estimator,
                         int n_reps, std::uint64_t seed) {
  if (n_reps < 2) throw ConfigError("monte_carlo_run: need n_reps >= 2");

  struct Acc {
    double err_sum = 0.0, err_sq = 0.0;
    int covered = 0, n = 0;
  };
  std::map<int, Acc> acc;
  int uniform_hits = 0, uniform_evald = 0, failed = 0, done = 0;

  for (int rep = 0; rep < n_reps; ++rep) {
    DgpConfig d = dgp;
    d.seed = derive_seed(seed, static_cast<std::uint64_t>(rep));
    try {
      Panel panel = simulate_panel(d);
      EventStudyCurve curve =
          estimator(panel, derive_seed(seed, 0xe5700000ULL + static_cast<std::uint64_t>(rep)));
      if (curve.event_times.empty()) throw EstimationError("estimator returned no curve");
      int t_lo = *std::min_element(curve.event_times.begin(), curve.event_times.end());
      int t_hi = *std::max_element(curve.event_times.begin(), curve.event_times.end());
      std::vector<double> truth = true_event_effects(d, t_lo, t_hi);
      bool uniform_ok = true, has_band = curve.uniform_lo.size() > 0;
      for (std::size_t k = 0; k < curve.event_times.size(); ++k) {
        int t = curve.event_times[k];
        auto idx = static_cast<Eigen::Index>(k);
        double tv = truth[static_cast<std::size_t>(t - t_lo)];
        double err = curve.estimates[idx] - tv;
        Acc& a = acc[t];
        a.err_sum += err;
        a.err_sq += err * err;
        ++a.n;
        double se = curve.pointwise_se.size() ? curve.pointwise_se[idx] : 0.0;
        if ((se > 0.0 && std::abs(err) <= 1.96 * se) || (se == 0.0 && err == 0.0)) ++a.covered;
        if (has_band && (tv < curve.uniform_lo[idx] || tv > curve.uniform_hi[idx]))
          uniform_ok = false;
      }
      if (has_band) {
        ++uniform_evald;
        if (uniform_ok) ++uniform_hits;
      }
      ++done;
    } catch (const std::exception&) {
      ++failed;
    }
  }

  McResult res;
  res.n_reps = done;
  res.n_failed = failed;
  res.uniform_coverage = uniform_evald > 0
                             ? static_cast<double>(uniform_hits) / uniform_evald
                             : std::numeric_limits<double>::quiet_NaN();
  for (const auto& [t, a] : acc) {
    McCell c;
    c.event_time = t;
    c.n_reps = a.n;
    c.bias = a.err_sum / a.n;
    c.rmse = std::sqrt(a.err_sq / a.n);
    c.pointwise_coverage = static_cast<double>(a.covered) / a.n;
    res.cells.push_back(c);
  }
  return res;
}

}  // namespace paneldid
