#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace paneldid {

// Calendar months are integer indices with 0 = January 2010.
constexpr int kNeverTreated = std::numeric_limits<int>::max();

constexpr int kPillsPerMonth = 30;

enum class ClaimKind { rx, psy, gp };

const char* to_string(ClaimKind k);
ClaimKind claim_kind_from_string(const std::string& s);

// One raw insurance event (prescription purchase or provider visit).
struct ClaimRecord {
  std::string unit_id;
  int calendar_month = 0;
  ClaimKind kind = ClaimKind::rx;
  int n_packages = 0;         // rx only, >= 1
  int pills_per_package = 0;  // rx only, >= 1
};

struct UnitMeta {
  std::string unit_id;
  int birth_year = 0;
  std::optional<int> first_child_month;  // absent = never-treated in window
  double age_at_first_birth = std::numeric_limits<double>::quiet_NaN();
  bool employed_at_birth = false;
  bool subsidy = false;
  bool cesarean = false;
  // Observation span (inclusive). CSV-loaded units cover the full window;
  // narrower spans can be set in memory to model partial enrollment.
  int obs_lo = 0;
  int obs_hi = -1;
  bool balanced_flag = false;

  // Placebo first-birth assignment for never-treated units. Kept separate
  // from first_child_month: placebo dates feed descriptive analyses only
  // and never turn a unit into a treated one.
  bool placebo_assigned = false;
  std::optional<int> placebo_month;
  double placebo_age = std::numeric_limits<double>::quiet_NaN();

  int group() const { return first_child_month ? *first_child_month : kNeverTreated; }
};

// Age implied by a birth year and a first-child calendar month, placing the
// woman's own birth mid-year and the event mid-month.
inline double age_from_birth(int birth_year, int first_child_month) {
  return 2010.0 + (first_child_month + 0.5) / 12.0 - (birth_year + 0.5);
}

struct PanelObservation {
  int unit = 0;  // index into Panel::units
  int month = 0;
  double y_rx = 0.0;
  double y_psy = 0.0;
  double y_gp = 0.0;
  int group = kNeverTreated;
  std::optional<int> event_time;
  double age_at_first_birth = std::numeric_limits<double>::quiet_NaN();
};

// Analysis-ready monthly panel in unit-major dense storage. Unobserved
// unit-months hold NaN. Immutable once built; shareable across threads.
class Panel {
 public:
  Panel() = default;
  Panel(std::vector<UnitMeta> units, int month_lo, int month_hi, bool balanced);

  int month_lo() const { return month_lo_; }
  int month_hi() const { return month_hi_; }
  int n_months() const { return month_hi_ - month_lo_ + 1; }
  int n_units() const { return static_cast<int>(units_.size()); }
  bool balanced() const { return balanced_; }

  const std::vector<UnitMeta>& units() const { return units_; }
  const UnitMeta& unit(int u) const { return units_[u]; }
  int group(int u) const { return units_[u].group(); }

  bool observed(int u, int month) const {
    return month >= units_[u].obs_lo && month <= units_[u].obs_hi;
  }
  double rx(int u, int month) const { return at(y_rx_, u, month); }
  double psy(int u, int month) const { return at(y_psy_, u, month); }
  double gp(int u, int month) const { return at(y_gp_, u, month); }

  void set_rx(int u, int month, double v) { at(y_rx_, u, month) = v; }
  void set_psy(int u, int month, double v) { at(y_psy_, u, month) = v; }
  void set_gp(int u, int month, double v) { at(y_gp_, u, month) = v; }

  std::optional<int> event_time(int u, int month) const {
    int g = group(u);
    if (g == kNeverTreated) return std::nullopt;
    return month - g;
  }

  PanelObservation row(int u, int month) const;
  std::size_t n_observations() const;

  // mutable access for builders
  std::vector<UnitMeta>& mutable_units() { return units_; }

 private:
  double& at(std::vector<double>& v, int u, int month) {
    return v[static_cast<std::size_t>(u) * n_months() + (month - month_lo_)];
  }
  const double& at(const std::vector<double>& v, int u, int month) const {
    return v[static_cast<std::size_t>(u) * n_months() + (month - month_lo_)];
  }

  std::vector<UnitMeta> units_;
  int month_lo_ = 0;
  int month_hi_ = -1;
  bool balanced_ = false;
  std::vector<double> y_rx_, y_psy_, y_gp_;
};

// -- prescription smoothing ---------------------------------------------------

// Expands purchases into consumption spells and closes 1-2 month gaps.
// A purchase in month m of P packages x k pills marks months
// m .. m + ceil(P*k/30) - 1 active; overlapping spells merge; months outside
// [lo, hi] are clipped. Gap-fill then sets any run of 1 or 2 inactive months
// strictly between two active months of the expanded series to active; each
// gap is judged against the expanded series, so fills do not chain.
std::vector<std::uint8_t> smooth_prescriptions(std::span<const ClaimRecord> rx_claims,
                                               int lo, int hi);

// Gap-fill alone (used by property tests; idempotent).
std::vector<std::uint8_t> fill_gaps(std::vector<std::uint8_t> series);

// -- panel assembly -----------------------------------------------------------

struct BuildDiagnostics {
  std::vector<std::string> rejected_units;  // unit id + reason
  int dropped_unbalanced = 0;
};

// Assembles the monthly panel from raw claims. Rx claims are smoothed per
// unit; visit claims aggregate to monthly counts. balanced=true drops units
// not observed over the whole window. Units with contradictory metadata are
// rejected with a diagnostic.
Panel build_panel(std::span<const ClaimRecord> claims, std::vector<UnitMeta> units,
                  int month_lo, int month_hi, bool balanced,
                  BuildDiagnostics* diag = nullptr);

// -- first-time prescription filter -------------------------------------------

struct FirstRxEvent {
  int unit = 0;  // index into the returned panel's units
  int month = 0;
};

struct FirstRxFilterResult {
  Panel panel;
  std::vector<FirstRxEvent> events;
};

// Keeps units whose first observed rx month is preceded by at least
// washout_months observed zero months; marks that month as the first-time
// prescription event. Units with no prescription at all are dropped.
FirstRxFilterResult first_prescription_filter(const Panel& panel, int washout_months = 12);

// -- placebo birth dates ------------------------------------------------------

struct CohortParams {
  double mu = 0.0;     // mean of log age
  double sigma = 0.0;  // sd of log age
};

// Log-mean / log-sd of treated units' ages at first birth, per birth year.
std::map<int, CohortParams> fit_cohort_params(const std::vector<UnitMeta>& units);

struct PlaceboDiagnostics {
  std::vector<std::string> missing_params;  // unit ids skipped
  std::vector<std::string> unassigned;      // retries exhausted
};

// Draws placebo first-birth dates for never-treated units: age from the
// unit's birth-cohort log-normal, month uniform over the 12 months of the
// implied year. Draws outside [month_lo, month_hi] are redrawn up to
// max_retries; treated units are never touched. Deterministic given seed.
void assign_placebo_births(std::vector<UnitMeta>& units,
                           const std::map<int, CohortParams>& cohort_params,
                           std::uint64_t seed, int month_lo, int month_hi,
                           int max_retries = 100, PlaceboDiagnostics* diag = nullptr);

}  // namespace paneldid
