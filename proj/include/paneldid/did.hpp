#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "paneldid/panel.hpp"

namespace paneldid {

struct DidConfig {
  int delta = 9;                      // anticipation months
  int min_cell_size = 5;              // minimum treated and control units per cell
  double trim_eps = 0.01;             // drop controls with pscore > 1 - trim_eps
  bool include_never_treated = false; // admit never-treated units to control pools
  int ps_degree = 1;                  // polynomial degree of age in the propensity
  int or_degree = 1;                  // polynomial degree of age in the outcome regression
  double logit_tol = 1e-8;
  int logit_max_iter = 50;
  double eps_clip = 1e-6;             // pscore clamp at predict time
};

// ATT(g, tau) with its panel-wide influence function (one entry per panel
// unit; zero off-cell). estimate - truth ~ mean(influence).
struct GroupTimeEffect {
  int g = 0;
  int tau = 0;
  double estimate = 0.0;
  Eigen::VectorXd influence;
  int n_treated = 0;
  int n_control = 0;
  std::string note;  // e.g. propensity fit diagnostics
};

struct CellSkip {
  int g = 0;
  int tau = 0;
  std::string reason;
};

struct AttGtResult {
  std::vector<GroupTimeEffect> cells;
  std::vector<CellSkip> skipped;
};

// Units whose treatment starts after tau + delta (cohort g itself excluded);
// never-treated units included only when the config flag is set.
std::vector<int> control_pool(const Panel& panel, int g, int tau, int delta,
                              bool include_never_treated);

// Doubly robust ATT(g, tau; delta) against the not-yet-treated pool:
// treated weighted by cohort share, controls by normalized propensity odds,
// both applied to the outcome change from the base period g - delta - 1 net
// of the control-group regression adjustment. Throws EstimationError when the
// cell is degenerate (callers turn that into a CellSkip).
GroupTimeEffect att_gt_dr(const Panel& panel, int g, int tau, const DidConfig& config);

// All cells with cohort g in the window and tau - g in [t_min, t_max]; the
// base-period cell (identically zero) and degenerate cells are recorded as
// skips.
AttGtResult att_gt_all(const Panel& panel, const DidConfig& config, int t_min, int t_max);

struct EventStudyCurve {
  std::vector<int> event_times;
  Eigen::VectorXd estimates;
  Eigen::VectorXd pointwise_se;
  Eigen::MatrixXd influence;  // n_units x n_event_times
  std::vector<int> n_cells;
  std::vector<std::map<int, double>> group_weights;  // per event time: cohort -> weight
  // filled by the bootstrap step
  double critical_value = 0.0;
  Eigen::VectorXd uniform_lo, uniform_hi;
};

// Cohort-share weighted aggregation of ATT(g, g+t) per event time, with the
// weight-estimation contribution folded into the influence functions.
EventStudyCurve aggregate_event_study(const AttGtResult& effects, const Panel& panel);

void write_event_study_csv(const std::string& path, const EventStudyCurve& curve);

}  // namespace paneldid
