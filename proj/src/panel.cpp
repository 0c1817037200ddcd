#include "paneldid/panel.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "paneldid/errors.hpp"
#include "paneldid/rng.hpp"

namespace paneldid {

const char* to_string(ClaimKind k) {
  switch (k) {
    case ClaimKind::rx: return "rx";
    case ClaimKind::psy: return "psy";
    case ClaimKind::gp: return "gp";
  }
  return "?";
}

ClaimKind claim_kind_from_string(const std::string& s) {
  if (s == "rx") return ClaimKind::rx;
  if (s == "psy") return ClaimKind::psy;
  if (s == "gp") return ClaimKind::gp;
  throw DataError("unknown claim kind: '" + s + "'");
}

Panel::Panel(std::vector<UnitMeta> units, int month_lo, int month_hi, bool balanced)
    : units_(std::move(units)), month_lo_(month_lo), month_hi_(month_hi), balanced_(balanced) {
  if (month_hi_ < month_lo_) throw ConfigError("panel window is empty");
  std::size_t cells = units_.size() * static_cast<std::size_t>(n_months());
  double nan = std::numeric_limits<double>::quiet_NaN();
  y_rx_.assign(cells, nan);
  y_psy_.assign(cells, nan);
  y_gp_.assign(cells, nan);
  for (auto& u : units_) {
    if (u.obs_hi < u.obs_lo) {  // unset span defaults to the full window
      u.obs_lo = month_lo_;
      u.obs_hi = month_hi_;
    }
    u.obs_lo = std::max(u.obs_lo, month_lo_);
    u.obs_hi = std::min(u.obs_hi, month_hi_);
    u.balanced_flag = (u.obs_lo == month_lo_ && u.obs_hi == month_hi_);
  }
  for (int u = 0; u < n_units(); ++u)
    for (int m = units_[u].obs_lo; m <= units_[u].obs_hi; ++m) {
      at(y_rx_, u, m) = 0.0;
      at(y_psy_, u, m) = 0.0;
      at(y_gp_, u, m) = 0.0;
    }
}

PanelObservation Panel::row(int u, int month) const {
  PanelObservation o;
  o.unit = u;
  o.month = month;
  o.y_rx = rx(u, month);
  o.y_psy = psy(u, month);
  o.y_gp = gp(u, month);
  o.group = group(u);
  o.event_time = event_time(u, month);
  o.age_at_first_birth = units_[u].age_at_first_birth;
  return o;
}

std::size_t Panel::n_observations() const {
  std::size_t n = 0;
  for (const auto& u : units_) n += static_cast<std::size_t>(u.obs_hi - u.obs_lo + 1);
  return n;
}

std::vector<std::uint8_t> smooth_prescriptions(std::span<const ClaimRecord> rx_claims,
                                               int lo, int hi) {
  if (hi < lo) return {};
  std::vector<std::uint8_t> s(static_cast<std::size_t>(hi - lo + 1), 0);
  for (const auto& c : rx_claims) {
    if (c.kind != ClaimKind::rx) continue;
    if (c.n_packages < 1 || c.pills_per_package < 1)
      throw DataError("rx claim for unit '" + c.unit_id + "' lacks package/pill counts");
    long total_pills = static_cast<long>(c.n_packages) * c.pills_per_package;
    int span = static_cast<int>((total_pills + kPillsPerMonth - 1) / kPillsPerMonth);
    int a = std::max(c.calendar_month, lo);
    int b = std::min(c.calendar_month + span - 1, hi);
    for (int m = a; m <= b; ++m) s[m - lo] = 1;  // overlapping spells union
  }
  return fill_gaps(std::move(s));
}

std::vector<std::uint8_t> fill_gaps(std::vector<std::uint8_t> series) {
  // Find gaps against the input series, then fill; a filled gap never
  // re-qualifies a neighbouring run.
  int n = static_cast<int>(series.size());
  int prev_active = -1;
  std::vector<std::pair<int, int>> fills;
  for (int i = 0; i < n; ++i) {
    if (!series[i]) continue;
    if (prev_active >= 0) {
      int gap = i - prev_active - 1;
      if (gap == 1 || gap == 2) fills.emplace_back(prev_active + 1, i - 1);
    }
    prev_active = i;
  }
  for (auto [a, b] : fills)
    for (int i = a; i <= b; ++i) series[i] = 1;
  return series;
}

Panel build_panel(std::span<const ClaimRecord> claims, std::vector<UnitMeta> units,
                  int month_lo, int month_hi, bool balanced, BuildDiagnostics* diag) {
  BuildDiagnostics local;
  BuildDiagnostics& d = diag ? *diag : local;

  // Validate metadata; reject contradictory units.
  std::vector<UnitMeta> kept;
  kept.reserve(units.size());
  for (auto& u : units) {
    if (u.first_child_month) {
      double canonical = age_from_birth(u.birth_year, *u.first_child_month);
      if (std::isnan(u.age_at_first_birth)) u.age_at_first_birth = canonical;
      if (std::abs(u.age_at_first_birth - canonical) > 1.0) {
        d.rejected_units.push_back(u.unit_id + ": age inconsistent with birth year and first-child month");
        continue;
      }
      if (u.age_at_first_birth < 20.0 || u.age_at_first_birth > 40.0) {
        d.rejected_units.push_back(u.unit_id + ": age at first birth outside [20, 40]");
        continue;
      }
    }
    kept.push_back(std::move(u));
  }

  if (balanced) {
    std::vector<UnitMeta> full;
    for (auto& u : kept) {
      bool unset = u.obs_hi < u.obs_lo;
      if (unset || (u.obs_lo <= month_lo && u.obs_hi >= month_hi)) {
        full.push_back(std::move(u));
      } else {
        ++d.dropped_unbalanced;
      }
    }
    kept = std::move(full);
  }

  std::unordered_map<std::string, int> index;
  index.reserve(kept.size());
  for (int i = 0; i < static_cast<int>(kept.size()); ++i) index[kept[i].unit_id] = i;

  Panel panel(std::move(kept), month_lo, month_hi, balanced);

  // Group claims per unit; claims for rejected/dropped units are ignored.
  std::vector<std::vector<ClaimRecord>> rx_by_unit(panel.n_units());
  for (const auto& c : claims) {
    auto it = index.find(c.unit_id);
    if (it == index.end()) continue;
    int u = it->second;
    if (c.kind == ClaimKind::rx) {
      rx_by_unit[u].push_back(c);
    } else if (c.calendar_month >= panel.unit(u).obs_lo &&
               c.calendar_month <= panel.unit(u).obs_hi) {
      // duplicate visit claims for a (unit, month) aggregate by sum
      if (c.kind == ClaimKind::psy)
        panel.set_psy(u, c.calendar_month, panel.psy(u, c.calendar_month) + 1.0);
      else
        panel.set_gp(u, c.calendar_month, panel.gp(u, c.calendar_month) + 1.0);
    }
  }

  for (int u = 0; u < panel.n_units(); ++u) {
    const auto& meta = panel.unit(u);
    if (rx_by_unit[u].empty()) continue;
    std::sort(rx_by_unit[u].begin(), rx_by_unit[u].end(),
              [](const ClaimRecord& a, const ClaimRecord& b) {
                return a.calendar_month < b.calendar_month;
              });
    auto series = smooth_prescriptions(rx_by_unit[u], meta.obs_lo, meta.obs_hi);
    for (int m = meta.obs_lo; m <= meta.obs_hi; ++m)
      panel.set_rx(u, m, static_cast<double>(series[m - meta.obs_lo]));
  }
  return panel;
}

FirstRxFilterResult first_prescription_filter(const Panel& panel, int washout_months) {
  if (washout_months < 1) throw ConfigError("washout_months must be >= 1");
  std::vector<UnitMeta> kept;
  std::vector<int> kept_src;
  std::vector<int> first_month;
  for (int u = 0; u < panel.n_units(); ++u) {
    const auto& meta = panel.unit(u);
    int first = -1;
    for (int m = meta.obs_lo; m <= meta.obs_hi; ++m) {
      if (panel.rx(u, m) > 0.0) {
        first = m;
        break;
      }
    }
    if (first < 0) continue;                          // never prescribed
    if (first - meta.obs_lo < washout_months) continue;  // washout not observable
    kept.push_back(meta);
    kept_src.push_back(u);
    first_month.push_back(first);
  }

  FirstRxFilterResult res;
  res.panel = Panel(std::move(kept), panel.month_lo(), panel.month_hi(), panel.balanced());
  for (int i = 0; i < static_cast<int>(kept_src.size()); ++i) {
    int src = kept_src[i];
    const auto& meta = res.panel.unit(i);
    for (int m = meta.obs_lo; m <= meta.obs_hi; ++m) {
      res.panel.set_rx(i, m, panel.rx(src, m));
      res.panel.set_psy(i, m, panel.psy(src, m));
      res.panel.set_gp(i, m, panel.gp(src, m));
    }
    res.events.push_back({i, first_month[i]});
  }
  return res;
}

std::map<int, CohortParams> fit_cohort_params(const std::vector<UnitMeta>& units) {
  std::map<int, std::vector<double>> logs;
  for (const auto& u : units) {
    if (!u.first_child_month || std::isnan(u.age_at_first_birth)) continue;
    if (u.age_at_first_birth <= 0.0) continue;
    logs[u.birth_year].push_back(std::log(u.age_at_first_birth));
  }
  std::map<int, CohortParams> out;
  for (auto& [year, v] : logs) {
    double mu = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    double sigma = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    out[year] = CohortParams{mu, sigma};
  }
  return out;
}

void assign_placebo_births(std::vector<UnitMeta>& units,
                           const std::map<int, CohortParams>& cohort_params,
                           std::uint64_t seed, int month_lo, int month_hi,
                           int max_retries, PlaceboDiagnostics* diag) {
  PlaceboDiagnostics local;
  PlaceboDiagnostics& d = diag ? *diag : local;
  for (std::size_t i = 0; i < units.size(); ++i) {
    UnitMeta& u = units[i];
    if (u.first_child_month) continue;  // treated units untouched
    auto it = cohort_params.find(u.birth_year);
    if (it == cohort_params.end()) {
      d.missing_params.push_back(u.unit_id);
      continue;
    }
    const CohortParams& cp = it->second;
    // Per-unit stream keyed by position so assignment is independent of
    // how many units precede it in other runs of the same vector.
    std::mt19937_64 eng = make_engine(seed, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_int_distribution<int> month_of_year(0, 11);
    bool ok = false;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
      double age = std::exp(cp.mu + cp.sigma * z(eng));
      // woman born mid-year on average; event year from the drawn age
      int year = static_cast<int>(std::floor(u.birth_year + 0.5 + age));
      int m = (year - 2010) * 12 + month_of_year(eng);
      if (m >= month_lo && m <= month_hi) {
        u.placebo_assigned = true;
        u.placebo_month = m;
        u.placebo_age = age;
        ok = true;
        break;
      }
    }
    if (!ok) d.unassigned.push_back(u.unit_id);
  }
}

}  // namespace paneldid
