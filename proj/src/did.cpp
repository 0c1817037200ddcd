#include "paneldid/did.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "paneldid/csv.hpp"
#include "paneldid/errors.hpp"
#include "paneldid/learners.hpp"

namespace paneldid {

std::vector<int> control_pool(const Panel& panel, int g, int tau, int delta,
                              bool include_never_treated) {
  std::vector<int> pool;
  for (int u = 0; u < panel.n_units(); ++u) {
    int gu = panel.group(u);
    if (gu == g) continue;
    if (gu == kNeverTreated) {
      if (include_never_treated) pool.push_back(u);
      continue;
    }
    if (gu > tau + delta) pool.push_back(u);
  }
  return pool;
}

namespace {

struct CellSample {
  std::vector<int> treated;   // unit indices with outcomes at tau and base
  std::vector<int> controls;  // pool with outcomes at tau and base
  Eigen::VectorXd dy_treated, dy_controls;
  Eigen::VectorXd age_treated, age_controls;
};

CellSample collect_cell(const Panel& panel, int g, int tau, int base,
                        const DidConfig& cfg) {
  CellSample s;
  const bool needs_age = cfg.ps_degree > 0 || cfg.or_degree > 0;
  for (int u = 0; u < panel.n_units(); ++u) {
    if (panel.group(u) != g) continue;
    if (!panel.observed(u, tau) || !panel.observed(u, base)) continue;
    s.treated.push_back(u);
  }
  auto pool = control_pool(panel, g, tau, cfg.delta, cfg.include_never_treated);
  for (int u : pool) {
    if (!panel.observed(u, tau) || !panel.observed(u, base)) continue;
    if (needs_age && std::isnan(panel.unit(u).age_at_first_birth)) continue;
    s.controls.push_back(u);
  }
  auto fill = [&](const std::vector<int>& ids, Eigen::VectorXd& dy, Eigen::VectorXd& age) {
    dy.resize(ids.size());
    age.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      dy[i] = panel.rx(ids[i], tau) - panel.rx(ids[i], base);
      age[i] = panel.unit(ids[i]).age_at_first_birth;
    }
  };
  fill(s.treated, s.dy_treated, s.age_treated);
  fill(s.controls, s.dy_controls, s.age_controls);
  return s;
}

inline void power_basis(double x, int p, Eigen::VectorXd& out) {
  double v = 1.0;
  for (int k = 0; k < p; ++k) {
    out[k] = v;
    v *= x;
  }
}

}  // namespace

GroupTimeEffect att_gt_dr(const Panel& panel, int g, int tau, const DidConfig& cfg) {
  const int base = g - cfg.delta - 1;
  if (base < panel.month_lo() || base > panel.month_hi())
    throw EstimationError("base period outside window");
  if (tau < panel.month_lo() || tau > panel.month_hi())
    throw EstimationError("tau outside window");
  if (tau == base) throw EstimationError("base-period cell");

  CellSample s = collect_cell(panel, g, tau, base, cfg);
  const int nT = static_cast<int>(s.treated.size());
  const int nC = static_cast<int>(s.controls.size());
  if (nT < cfg.min_cell_size) throw EstimationError("too few treated units");
  if (nC == 0) throw EstimationError("empty control pool");
  if (nC < cfg.min_cell_size) throw EstimationError("too few control units");

  // Propensity: treated-vs-pool logit refit on this cell's sample.
  const int pP = cfg.ps_degree + 1;
  Eigen::VectorXd age_all(nT + nC), lbl(nT + nC);
  age_all << s.age_treated, s.age_controls;
  lbl.setZero();
  lbl.head(nT).setOnes();
  Eigen::MatrixXd Xp = polynomial_design(age_all, cfg.ps_degree).X;
  LogitFit ps = fit_logit(Xp, lbl, cfg.logit_tol, cfg.logit_max_iter);
  Eigen::VectorXd phat = predict_proba(ps, Xp, cfg.eps_clip);

  // Overlap trimming on control odds weights.
  std::vector<std::uint8_t> keep(nC, 1);
  int n_trimmed = 0;
  for (int j = 0; j < nC; ++j)
    if (phat[nT + j] > 1.0 - cfg.trim_eps) {
      keep[j] = 0;
      ++n_trimmed;
    }
  if (n_trimmed == nC) throw EstimationError("overlap failure: all controls trimmed");
  const int nCk = nC - n_trimmed;
  if (nCk < cfg.min_cell_size) throw EstimationError("too few controls after trimming");

  // Outcome regression of the control-group change on the covariate,
  // fit on the surviving controls.
  const int pM = cfg.or_degree + 1;
  Eigen::MatrixXd Xm_c(nCk, pM);
  Eigen::VectorXd dy_c(nCk);
  {
    Eigen::VectorXd a(nCk);
    int k = 0;
    for (int j = 0; j < nC; ++j)
      if (keep[j]) {
        a[k] = s.age_controls[j];
        dy_c[k] = s.dy_controls[j];
        ++k;
      }
    Xm_c = polynomial_design(a, cfg.or_degree).X;
  }
  OlsFit orfit = fit_ols(Xm_c, dy_c);

  auto m_hat = [&](double age) {
    double v = orfit.coef[0], x = 1.0;
    for (int p = 1; p < pM; ++p) {
      x *= age;
      v += orfit.coef[p] * x;
    }
    return v;
  };

  // Everything below is expressed as full-sample means over the n panel
  // units; off-cell units carry zero weight, which keeps per-cell influence
  // functions on a common scale for aggregation.
  const int n = panel.n_units();
  const double dn = static_cast<double>(n);

  Eigen::VectorXd resid_T(nT), resid_C(nC), odds(nC);
  for (int i = 0; i < nT; ++i) resid_T[i] = s.dy_treated[i] - m_hat(s.age_treated[i]);
  for (int j = 0; j < nC; ++j) {
    resid_C[j] = s.dy_controls[j] - m_hat(s.age_controls[j]);
    double p = phat[nT + j];
    odds[j] = keep[j] ? p / (1.0 - p) : 0.0;
  }

  const double ET = nT / dn;          // mean of the treated indicator
  const double EC = odds.sum() / dn;  // mean of the control odds weight
  if (EC <= 0.0) throw EstimationError("overlap failure: zero control mass");
  const double eta_T = resid_T.sum() / dn / ET;
  const double eta_C = odds.dot(resid_C) / dn / EC;

  GroupTimeEffect eff;
  eff.g = g;
  eff.tau = tau;
  eff.estimate = eta_T - eta_C;
  eff.n_treated = nT;
  eff.n_control = nCk;
  if (!std::isfinite(eff.estimate)) throw EstimationError("non-finite cell estimate");
  if (!ps.converged) eff.note = "propensity: " + (ps.note.empty() ? std::string("not converged") : ps.note);

  // Influence function with the estimation effect of the outcome regression
  // (OLS on kept controls) and of the propensity (logit MLE on the cell
  // sample): beta_hat - beta ~ mean_i A^{-1} x_i C_i eps_i with
  // A = E_n[C x x'], gamma_hat - gamma ~ mean_i H^{-1} x_i S_i (lbl_i - p_i)
  // with H = E_n[S p (1-p) x x'].
  Eigen::MatrixXd A = Xm_c.transpose() * Xm_c / dn;
  Eigen::LDLT<Eigen::MatrixXd> A_ldlt(A);
  Eigen::VectorXd w_ps = phat.array() * (1.0 - phat.array());
  Eigen::MatrixXd H = Xp.transpose() * w_ps.asDiagonal() * Xp / dn;
  Eigen::LDLT<Eigen::MatrixXd> H_ldlt(H);

  Eigen::VectorXd M1 = Eigen::VectorXd::Zero(pM);  // E[T x] / E[T]
  {
    Eigen::VectorXd xv(pM);
    for (int i = 0; i < nT; ++i) {
      power_basis(s.age_treated[i], pM, xv);
      M1 += xv;
    }
    M1 /= dn * ET;
  }
  Eigen::VectorXd M2 = Eigen::VectorXd::Zero(pP);  // E[odds x (resid - eta_C)] / E[odds]
  Eigen::VectorXd M3 = Eigen::VectorXd::Zero(pM);  // E[odds x] / E[odds]
  {
    Eigen::VectorXd xp(pP), xm(pM);
    for (int j = 0; j < nC; ++j) {
      if (!keep[j]) continue;
      power_basis(s.age_controls[j], pP, xp);
      power_basis(s.age_controls[j], pM, xm);
      M2 += odds[j] * (resid_C[j] - eta_C) * xp;
      M3 += odds[j] * xm;
    }
    M2 /= dn * EC;
    M3 /= dn * EC;
  }

  Eigen::VectorXd AinvM31 = A_ldlt.solve(M3 - M1);
  Eigen::VectorXd HinvM2 = H_ldlt.solve(M2);

  Eigen::VectorXd psi = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd xp(pP), xm(pM);

  for (int i = 0; i < nT; ++i) {
    power_basis(s.age_treated[i], pP, xp);
    double ps_score = (1.0 - phat[i]) * HinvM2.dot(xp);
    psi[s.treated[i]] = (resid_T[i] - eta_T) / ET - ps_score;
  }
  for (int j = 0; j < nC; ++j) {
    int u = s.controls[j];
    double val = 0.0;
    if (keep[j]) {
      val -= odds[j] * (resid_C[j] - eta_C) / EC;
      power_basis(s.age_controls[j], pM, xm);
      val += AinvM31.dot(xm) * resid_C[j];  // resid_C is the OLS residual on kept rows
    }
    power_basis(s.age_controls[j], pP, xp);
    val -= (0.0 - phat[nT + j]) * HinvM2.dot(xp);
    psi[u] += val;
  }

  // The score equations hold only to solver tolerance; recentre so the
  // influence function is exactly mean-zero.
  psi.array() -= psi.mean();
  eff.influence = std::move(psi);
  return eff;
}

AttGtResult att_gt_all(const Panel& panel, const DidConfig& cfg, int t_min, int t_max) {
  if (cfg.delta < 0) throw ConfigError("anticipation delta must be >= 0");
  if (t_min > t_max) return {};

  std::set<int> cohorts;
  for (int u = 0; u < panel.n_units(); ++u) {
    int g = panel.group(u);
    if (g != kNeverTreated && g >= panel.month_lo() && g <= panel.month_hi()) cohorts.insert(g);
  }

  AttGtResult res;
  for (int g : cohorts) {
    int base = g - cfg.delta - 1;
    if (base < panel.month_lo() || base > panel.month_hi()) {
      res.skipped.push_back({g, -1, "base period outside window"});
      continue;
    }
    for (int t = t_min; t <= t_max; ++t) {
      int tau = g + t;
      if (tau < panel.month_lo() || tau > panel.month_hi()) continue;
      if (tau == base) {
        res.skipped.push_back({g, tau, "base-period cell"});
        continue;
      }
      try {
        res.cells.push_back(att_gt_dr(panel, g, tau, cfg));
      } catch (const EstimationError& e) {
        res.skipped.push_back({g, tau, e.what()});
      }
    }
  }
  return res;
}

EventStudyCurve aggregate_event_study(const AttGtResult& effects, const Panel& panel) {
  if (effects.cells.empty()) throw EstimationError("no group-time cells to aggregate");
  const int n = panel.n_units();

  std::map<int, int> cohort_n;  // cohort sizes over the whole panel
  for (int u = 0; u < n; ++u) {
    int g = panel.group(u);
    if (g != kNeverTreated) ++cohort_n[g];
  }

  std::map<int, std::vector<const GroupTimeEffect*>> by_t;
  for (const auto& c : effects.cells) by_t[c.tau - c.g].push_back(&c);

  EventStudyCurve curve;
  const int K = static_cast<int>(by_t.size());
  curve.estimates.resize(K);
  curve.pointwise_se.resize(K);
  curve.influence = Eigen::MatrixXd::Zero(n, K);
  curve.n_cells.reserve(K);
  curve.group_weights.resize(K);

  int k = 0;
  for (const auto& [t, cells] : by_t) {
    double denom = 0.0;
    for (const auto* c : cells) denom += cohort_n.at(c->g);
    const double s_share = denom / static_cast<double>(n);

    double est = 0.0;
    std::map<int, double> cell_est;
    auto col = curve.influence.col(k);
    for (const auto* c : cells) {
      double w = cohort_n.at(c->g) / denom;
      curve.group_weights[k][c->g] = w;
      cell_est[c->g] = c->estimate;
      est += w * c->estimate;
      col += w * c->influence;
    }
    // Weight-estimation term: with w_g = P(G=g)/P(G in A_t) the influence of
    // the weights collapses to 1{G_i in A_t} (ATT(G_i) - theta_t) / s.
    for (int u = 0; u < n; ++u) {
      auto it = cell_est.find(panel.group(u));
      if (it != cell_est.end()) col[u] += (it->second - est) / s_share;
    }

    curve.event_times.push_back(t);
    curve.estimates[k] = est;
    double mean = col.mean();
    curve.pointwise_se[k] =
        std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n)) /
        std::sqrt(static_cast<double>(n));
    curve.n_cells.push_back(static_cast<int>(cells.size()));
    ++k;
  }
  return curve;
}

void write_event_study_csv(const std::string& path, const EventStudyCurve& curve) {
  std::string s = "event_time,estimate,se,uniform_lo,uniform_hi,n_cells\n";
  for (std::size_t i = 0; i < curve.event_times.size(); ++i) {
    auto idx = static_cast<Eigen::Index>(i);
    s += std::to_string(curve.event_times[i]);
    s += ',';
    s += format_double(curve.estimates[idx]);
    s += ',';
    s += format_double(curve.pointwise_se[idx]);
    s += ',';
    s += format_double(curve.uniform_lo.size() ? curve.uniform_lo[idx] : curve.estimates[idx]);
    s += ',';
    s += format_double(curve.uniform_hi.size() ? curve.uniform_hi[idx] : curve.estimates[idx]);
    s += ',';
    s += std::to_string(curve.n_cells[i]);
    s += '\n';
  }
  atomic_write(path, s);
}

}  // namespace paneldid
