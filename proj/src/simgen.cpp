#include "paneldid/simgen.hpp"

#include <algorithm>
#include <cmath>

#include "paneldid/errors.hpp"
#include "paneldid/rng.hpp"

namespace paneldid {

double PiecewiseProfile::at(int t) const {
  if (knots.empty()) return 0.0;
  if (t <= knots.front().first) return knots.front().second;
  if (t >= knots.back().first) return knots.back().second;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (t <= knots[i].first) {
      auto [t0, v0] = knots[i - 1];
      auto [t1, v1] = knots[i];
      return v0 + (v1 - v0) * static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
    }
  }
  return knots.back().second;
}

TrueEffectProfile zero_effect() { return {PiecewiseProfile{{{0, 0.0}}}}; }

TrueEffectProfile calibrated_effect() {
  return {PiecewiseProfile{{{12, 0.0}, {48, 0.010}, {72, 0.014}}}};
}

TrueEffectProfile step_effect(double level, int from_t) {
  return {PiecewiseProfile{{{from_t - 1, 0.0}, {from_t, level}}}};
}

PiecewiseProfile default_dip() {
  return PiecewiseProfile{{{-9, 1.0}, {0, 0.4}, {12, 1.0}}};
}

PiecewiseProfile flat_dip() { return PiecewiseProfile{{{0, 1.0}}}; }

namespace {

constexpr double kZClip = 4.0;  // standardized-age draws are truncated here

struct RateModel {
  const DgpConfig& cfg;
  int mid_month;

  // untreated monthly rate for a unit with standardized age z in month tau
  double untreated(double z, int tau, int g) const {
    double drift = (cfg.calendar_trend + cfg.covar_trend * z) *
                   (tau - mid_month) / static_cast<double>(cfg.n_months);
    double r = cfg.baseline + cfg.covar_level * z + drift;
    if (cfg.violate_trends && g != kNeverTreated) {
      double g_pos = (g - 0.5 * (cfg.cohort_lo + cfg.cohort_hi)) /
                     std::max(1.0, static_cast<double>(cfg.cohort_hi - cfg.cohort_lo));
      r += 0.01 * g_pos * (tau - mid_month) / static_cast<double>(cfg.n_months);
    }
    return r;
  }

  double treatment_shift(int t) const {
    return cfg.baseline * (cfg.dip.at(t) - 1.0) + cfg.effect.at(t);
  }

  double rate(double z, int tau, int g) const {
    double r = untreated(z, tau, g);
    if (g != kNeverTreated) {
      r += treatment_shift(tau - g);
      if (cfg.reform && g >= cfg.reform->reform_month) {
        int t = tau - g;
        if (t >= 1 && t <= 12) r += cfg.reform->monthly_delta;
      }
    }
    return r;
  }
};

}  // namespace

void validate(const DgpConfig& cfg) {
  if (cfg.n_units < 1 || cfg.n_months < 2) throw ConfigError("dgp: empty panel");
  if (cfg.never_share < 0.0 || cfg.never_share > 1.0)
    throw ConfigError("dgp: never_share outside [0,1]");
  if (cfg.never_share < 1.0) {
    if (cfg.cohort_lo > cfg.cohort_hi) throw ConfigError("dgp: empty cohort band");
    if (cfg.cohort_lo < 0 || cfg.cohort_hi >= cfg.n_months)
      throw ConfigError("dgp: cohort band outside window");
  }
  if (cfg.persistence < 0.0 || cfg.persistence >= 1.0)
    throw ConfigError("dgp: persistence must be in [0,1)");
  if (cfg.psy_rate < 0.0 || cfg.gp_rate < 0.0) throw ConfigError("dgp: negative visit rate");

  for (int t = -cfg.n_months; t < -cfg.delta_guard; ++t) {
    if (cfg.effect.at(t) != 0.0)
      throw ConfigError("dgp: effect profile nonzero before the anticipation window");
    if (cfg.dip.at(t) != 1.0)
      throw ConfigError("dgp: dip profile active before the anticipation window");
  }
  for (int t = -cfg.n_months; t <= cfg.n_months; ++t) {
    double d = cfg.dip.at(t);
    if (d < 0.0 || d > 1.0) throw ConfigError("dgp: dip multiplier outside [0,1]");
  }

  // Worst-case rate scan over the reachable (z, tau, g) grid.
  RateModel model{cfg, cfg.n_months / 2};
  std::vector<int> gs;
  if (cfg.never_share > 0.0) gs.push_back(kNeverTreated);
  if (cfg.never_share < 1.0)
    for (int g = cfg.cohort_lo; g <= cfg.cohort_hi; ++g) gs.push_back(g);
  for (double z : {-kZClip, 0.0, kZClip})
    for (int g : gs)
      for (int tau = 0; tau < cfg.n_months; ++tau) {
        double r = model.rate(z, tau, g);
        if (r <= 0.0 || r >= 1.0)
          throw ConfigError("dgp: monthly rate " + std::to_string(r) +
                            " outside (0,1) at tau=" + std::to_string(tau));
      }
}

Panel simulate_panel(const DgpConfig& cfg) {
  validate(cfg);
  RateModel model{cfg, cfg.n_months / 2};
  const double age_mean = std::exp(cfg.age_log_mean + 0.5 * cfg.age_log_sd * cfg.age_log_sd);
  const double age_sd = std::max(1e-12, age_mean * std::sqrt(std::expm1(cfg.age_log_sd * cfg.age_log_sd)));

  std::vector<UnitMeta> units(cfg.n_units);
  std::vector<double> zs(cfg.n_units);
  for (int u = 0; u < cfg.n_units; ++u) {
    std::mt19937_64 eng = make_engine(cfg.seed, static_cast<std::uint64_t>(u));
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    double zn = std::clamp(stdnorm(eng), -kZClip, kZClip);
    double age = std::clamp(std::exp(cfg.age_log_mean + cfg.age_log_sd * zn), 20.5, 39.5);
    double z = std::clamp((age - age_mean) / age_sd, -kZClip, kZClip);
    zs[u] = z;

    UnitMeta& m = units[u];
    m.unit_id = "u" + std::to_string(u);
    m.employed_at_birth = unif(eng) < 0.8;
    m.subsidy = unif(eng) < 0.18;
    m.cesarean = unif(eng) < 0.3;
    if (unif(eng) < cfg.never_share) {
      std::uniform_int_distribution<int> by(1985, 1995);
      m.birth_year = by(eng);
      m.age_at_first_birth = age;  // latent covariate; no first-child month
    } else {
      std::uniform_int_distribution<int> gpick(cfg.cohort_lo, cfg.cohort_hi);
      int g = gpick(eng) + static_cast<int>(std::lround(cfg.covar_timing * z));
      g = std::clamp(g, cfg.cohort_lo, cfg.cohort_hi);
      m.first_child_month = g;
      m.age_at_first_birth = age;
      m.birth_year = static_cast<int>(std::floor(2010.0 + (g + 0.5) / 12.0 - age));
    }
  }

  Panel panel(std::move(units), 0, cfg.n_months - 1, true);

  for (int u = 0; u < cfg.n_units; ++u) {
    std::mt19937_64 eng = make_engine(cfg.seed, 0x80000000ULL + static_cast<std::uint64_t>(u));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int g = panel.group(u);
    const double z = zs[u];

    // On/off chain with exact month-tau marginals: given the previous
    // month's marginal pi_prev, stay-on probability a and turn-on
    // probability b satisfy a*pi_prev + b*(1-pi_prev) = pi_tau.
    double pi_prev = model.rate(z, 0, g);
    bool on = unif(eng) < pi_prev;
    panel.set_rx(u, 0, on ? 1.0 : 0.0);
    for (int tau = 1; tau < cfg.n_months; ++tau) {
      double pi = model.rate(z, tau, g);
      double a = std::min(pi + cfg.persistence * (1.0 - pi), pi / pi_prev);
      double b = (pi - a * pi_prev) / (1.0 - pi_prev);
      on = unif(eng) < (on ? a : b);
      panel.set_rx(u, tau, on ? 1.0 : 0.0);
      pi_prev = pi;
    }

    if (cfg.psy_rate > 0.0 || cfg.gp_rate > 0.0) {
      std::poisson_distribution<int> psy(std::max(cfg.psy_rate, 1e-300));
      std::poisson_distribution<int> gp(std::max(cfg.gp_rate, 1e-300));
      for (int tau = 0; tau < cfg.n_months; ++tau) {
        panel.set_psy(u, tau, cfg.psy_rate > 0.0 ? psy(eng) : 0);
        panel.set_gp(u, tau, cfg.gp_rate > 0.0 ? gp(eng) : 0);
      }
    }
  }
  return panel;
}

std::vector<double> true_event_effects(const DgpConfig& cfg, int t_min, int t_max) {
  validate(cfg);
  RateModel model{cfg, cfg.n_months / 2};
  std::vector<double> out;
  out.reserve(t_max - t_min + 1);
  for (int t = t_min; t <= t_max; ++t) out.push_back(model.treatment_shift(t));
  return out;
}

std::vector<ClaimRecord> emit_claims(const Panel& panel) {
  std::vector<ClaimRecord> claims;
  for (int u = 0; u < panel.n_units(); ++u) {
    const auto& meta = panel.unit(u);
    int run_start = -1;
    for (int m = meta.obs_lo; m <= meta.obs_hi + 1; ++m) {
      bool on = m <= meta.obs_hi && panel.rx(u, m) > 0.0;
      if (on && run_start < 0) run_start = m;
      if (!on && run_start >= 0) {
        ClaimRecord c;
        c.unit_id = meta.unit_id;
        c.calendar_month = run_start;
        c.kind = ClaimKind::rx;
        c.n_packages = m - run_start;  // one 30-pill package per active month
        c.pills_per_package = kPillsPerMonth;
        claims.push_back(std::move(c));
        run_start = -1;
      }
    }
    for (int m = meta.obs_lo; m <= meta.obs_hi; ++m) {
      for (int k = 0; k < static_cast<int>(panel.psy(u, m)); ++k)
        claims.push_back({meta.unit_id, m, ClaimKind::psy, 0, 0});
      for (int k = 0; k < static_cast<int>(panel.gp(u, m)); ++k)
        claims.push_back({meta.unit_id, m, ClaimKind::gp, 0, 0});
    }
  }
  return claims;
}

}  // namespace paneldid
