#include "paneldid/dml.hpp"

#include <algorithm>
#include <cmath>

#include "paneldid/errors.hpp"
#include "paneldid/rng.hpp"

namespace paneldid {

namespace {

void check_cells(const DidSample& s) {
  int c[2][2] = {{0, 0}, {0, 0}};
  for (int i = 0; i < s.n(); ++i) {
    if ((s.d[i] != 0 && s.d[i] != 1) || (s.t[i] != 0 && s.t[i] != 1))
      throw DataError("dml: d and t must be 0/1");
    ++c[s.d[i]][s.t[i]];
  }
  for (int d = 0; d < 2; ++d)
    for (int t = 0; t < 2; ++t)
      if (c[d][t] == 0)
        throw DataError("dml: empty cell (d=" + std::to_string(d) +
                        ",t=" + std::to_string(t) + ")");
}

// theta-free part of the orthogonal score.
inline double score_free(double y, double d, double t, double g, double l,
                         double p0, double lam) {
  double denom_lam = lam * (1.0 - lam);
  double a = (t - lam) / denom_lam * y / p0 * (d - g) / (1.0 - g);
  double b = (d - g) / (denom_lam * p0 * (1.0 - g)) * l;
  return a - b;
}

}  // namespace

AtetResult dml_atet(const DidSample& sample, const DmlConfig& cfg) {
  const int n = sample.n();
  if (cfg.k_folds < 2) throw ConfigError("dml: k_folds must be >= 2");
  if (cfg.k_folds > n) throw ConfigError("dml: k_folds exceeds sample size");
  check_cells(sample);

  const double p0 = sample.d.cast<double>().mean();
  const double lam = sample.t.cast<double>().mean();

  std::vector<int> fold = kfold_split(n, cfg.k_folds, derive_seed(cfg.seed, 0xd31dULL));

  Eigen::VectorXd ghat(n), lhat(n);
  std::vector<FoldDiag> diags;

  for (int k = 0; k < cfg.k_folds; ++k) {
    std::vector<int> tr, te;
    for (int i = 0; i < n; ++i) (fold[i] == k ? te : tr).push_back(i);
    if (te.empty()) continue;

    std::vector<int> tr0;  // control rows for l0
    for (int i : tr)
      if (sample.d[i] == 0) tr0.push_back(i);
    if (tr0.empty())
      throw EstimationError("dml: fold " + std::to_string(k) + " has no D=0 training rows");

    Eigen::MatrixXd Xtr(tr.size(), sample.x.cols()), Xte(te.size(), sample.x.cols());
    Eigen::VectorXd dtr(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      Xtr.row(i) = sample.x.row(tr[i]);
      dtr[i] = sample.d[tr[i]];
    }
    for (std::size_t i = 0; i < te.size(); ++i) Xte.row(i) = sample.x.row(te[i]);

    Eigen::MatrixXd X0(tr0.size(), sample.x.cols());
    Eigen::VectorXd l_target(tr0.size());
    for (std::size_t i = 0; i < tr0.size(); ++i) {
      X0.row(i) = sample.x.row(tr0[i]);
      l_target[i] = (sample.t[tr0[i]] - lam) * sample.y[tr0[i]];
    }

    Eigen::VectorXd g_te, l_te;
    if (cfg.g_learner == GLearner::forest) {
      ForestConfig fc = cfg.forest;
      fc.seed = derive_seed(cfg.seed, 0x67000000ULL + static_cast<std::uint64_t>(k));
      g_te = fit_forest(Xtr, dtr, fc).predict(Xte);
    } else {
      Eigen::MatrixXd Xtr1(tr.size(), sample.x.cols() + 1), Xte1(te.size(), sample.x.cols() + 1);
      Xtr1 << Eigen::VectorXd::Ones(tr.size()), Xtr;
      Xte1 << Eigen::VectorXd::Ones(te.size()), Xte;
      LogitFit f = fit_logit(Xtr1, dtr);
      g_te = predict_proba(f, Xte1);
    }
    if (cfg.l_learner == LLearner::forest) {
      ForestConfig fc = cfg.forest;
      fc.seed = derive_seed(cfg.seed, 0x6c000000ULL + static_cast<std::uint64_t>(k));
      l_te = fit_forest(X0, l_target, fc).predict(Xte);
    } else {
      Eigen::MatrixXd X01(tr0.size(), sample.x.cols() + 1), Xte1(te.size(), sample.x.cols() + 1);
      X01 << Eigen::VectorXd::Ones(tr0.size()), X0;
      Xte1 << Eigen::VectorXd::Ones(te.size()), Xte;
      OlsFit f = fit_ols(X01, l_target);
      l_te = Xte1 * f.coef;
    }

    FoldDiag fd;
    fd.fold = k;
    fd.n_train = static_cast<int>(tr.size());
    fd.n_test = static_cast<int>(te.size());
    fd.g_min = g_te.minCoeff();
    fd.g_max = g_te.maxCoeff();
    for (std::size_t i = 0; i < te.size(); ++i) {
      ghat[te[i]] = std::clamp(g_te[i], 0.0, 1.0);
      lhat[te[i]] = l_te[i];
    }
    diags.push_back(fd);
  }

  // Overlap trimming, then the score average over retained rows.
  AtetResult res;
  res.folds = std::move(diags);
  std::vector<double> s;
  s.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (ghat[i] > 1.0 - cfg.trim_eps) {
      ++res.n_trimmed;
      for (auto& fd : res.folds)
        if (fold[i] == fd.fold) ++fd.n_trimmed;
      continue;
    }
    s.push_back(score_free(sample.y[i], sample.d[i], sample.t[i], ghat[i], lhat[i], p0, lam));
  }
  if (s.empty()) throw EstimationError("dml: all rows trimmed");
  res.n_used = static_cast<int>(s.size());

  double sum = 0.0;
  for (double v : s) sum += v;
  res.theta = sum / res.n_used;
  double ss = 0.0;
  for (double v : s) ss += (v - res.theta) * (v - res.theta);
  res.se = std::sqrt(ss / res.n_used) / std::sqrt(static_cast<double>(res.n_used));
  res.ci_lo = res.theta - 1.96 * res.se;
  res.ci_hi = res.theta + 1.96 * res.se;

  double sm = 0.0;
  for (double v : s) sm += v - res.theta;
  res.score_mean = sm / res.n_used;
  return res;
}

OrthogonalityResult orthogonality_check(const DidSample& sample, const Nuisances& nuis,
                                        const Direction& dir, std::vector<double> eps_grid) {
  const int n = sample.n();
  check_cells(sample);
  const double p0 = nuis.p0, lam = nuis.lambda0;

  Eigen::VectorXd g0(n), l0(n), hg(n), hl(n);
  for (int i = 0; i < n; ++i) {
    g0[i] = nuis.g0(sample.x.row(i));
    l0[i] = nuis.l0(sample.x.row(i));
    hg[i] = dir.hg(sample.x.row(i));
    hl[i] = dir.hl(sample.x.row(i));
  }

  auto mean_score = [&](double eps, bool orthogonal) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double g = std::clamp(g0[i] + eps * hg[i], 1e-9, 1.0 - 1e-9);
      double l = l0[i] + eps * hl[i];
      double a = (sample.t[i] - lam) / (lam * (1.0 - lam)) * sample.y[i] / p0 *
                 (sample.d[i] - g) / (1.0 - g);
      acc += orthogonal ? a - (sample.d[i] - g) / (lam * (1.0 - lam) * p0 * (1.0 - g)) * l : a;
    }
    return acc / n;
  };

  OrthogonalityResult res;
  res.eps = std::move(eps_grid);

  // sd of the orthogonal score at eps = 0
  {
    double m = mean_score(0.0, true);
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
      double a = (sample.t[i] - lam) / (lam * (1.0 - lam)) * sample.y[i] / p0 *
                     (sample.d[i] - g0[i]) / (1.0 - g0[i]) -
                 (sample.d[i] - g0[i]) / (lam * (1.0 - lam) * p0 * (1.0 - g0[i])) * l0[i];
      ss += (a - m) * (a - m);
    }
    res.score_sd = std::sqrt(ss / n);
  }

  for (double e : res.eps) {
    res.slope_orthogonal.push_back((mean_score(e, true) - mean_score(-e, true)) / (2.0 * e));
    res.slope_naive.push_back((mean_score(e, false) - mean_score(-e, false)) / (2.0 * e));
  }
  return res;
}

LinearDidResult linear_did(const DidSample& sample) {
  check_cells(sample);
  const int n = sample.n();
  const int px = static_cast<int>(sample.x.cols());

  std::vector<std::string> names = {"intercept", "d", "t", "d:t"};
  for (int j = 0; j < px; ++j)
    names.push_back(j < static_cast<int>(sample.x_names.size()) ? sample.x_names[j]
                                                                : "x" + std::to_string(j));
  Eigen::MatrixXd X(n, 4 + px);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = sample.d[i];
    X(i, 2) = sample.t[i];
    X(i, 3) = sample.d[i] * sample.t[i];
    for (int j = 0; j < px; ++j) X(i, 4 + j) = sample.x(i, j);
  }

  // Drop exactly collinear columns (QR with column pivoting), keeping the
  // earliest columns so the DiD interaction survives whenever possible.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  std::vector<int> kept;
  LinearDidResult res;
  if (qr.rank() < X.cols()) {
    // greedy: add columns while the rank keeps increasing
    Eigen::MatrixXd cur(n, 0);
    for (int j = 0; j < X.cols(); ++j) {
      Eigen::MatrixXd trial(n, cur.cols() + 1);
      if (cur.cols() > 0) trial.leftCols(cur.cols()) = cur;
      trial.col(cur.cols()) = X.col(j);
      if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(trial).rank() ==
          static_cast<Eigen::Index>(cur.cols() + 1)) {
        cur = trial;
        kept.push_back(j);
      } else {
        res.dropped.push_back(names[j]);
      }
    }
    X = cur;
  } else {
    kept.resize(X.cols());
    for (int j = 0; j < X.cols(); ++j) kept[j] = j;
  }

  OlsFit fit = fit_ols(X, sample.y);
  Eigen::VectorXd resid = sample.y - X * fit.coef;

  // HC1 sandwich
  Eigen::MatrixXd XtX_inv =
      (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  for (int i = 0; i < n; ++i)
    meat.noalias() += resid[i] * resid[i] * X.row(i).transpose() * X.row(i);
  double dof_adj = static_cast<double>(n) / std::max(1.0, static_cast<double>(n - X.cols()));
  Eigen::MatrixXd V = dof_adj * XtX_inv * meat * XtX_inv;

  res.n = n;
  res.coef = fit.coef;
  res.robust_se = V.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.names.clear();
  for (int j : kept) res.names.push_back(names[j]);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    if (kept[j] == 3) {
      res.did_estimate = res.coef[static_cast<Eigen::Index>(j)];
      res.did_se = res.robust_se[static_cast<Eigen::Index>(j)];
    }
  }
  return res;
}

DidSampleBuild build_did_sample(const Panel& panel, const ReformDesign& design) {
  const int w = design.window_months;
  if (w < 1) throw ConfigError("reform design: window_months must be >= 1");
  if (w > 6) throw ConfigError("reform design: window_months > 6 makes the year windows overlap");
  const int r = design.reform_month;

  // outcome months for event year y, anchored at the birth month
  auto year_range = [&](int g) -> std::pair<int, int> {
    int y = design.outcome_year;
    if (y >= 1) return {g + (y - 1) * 12 + 1, g + y * 12};
    return {g + y * 12 - 11, g + y * 12};
  };

  struct Row {
    int unit;
    int d, t;
  };
  std::vector<Row> rows;
  auto in_window = [&](int g, int lo, int hi) { return g >= lo && g < hi; };
  for (int u = 0; u < panel.n_units(); ++u) {
    int g = panel.group(u);
    if (g == kNeverTreated) continue;
    int d = -1, t = -1;
    if (in_window(g, r, r + w)) {
      d = 1;
      t = 1;
    } else if (in_window(g, r - w, r)) {
      d = 0;
      t = 1;
    } else if (in_window(g, r - 12, r - 12 + w)) {
      d = 1;
      t = 0;
    } else if (in_window(g, r - 12 - w, r - 12)) {
      d = 0;
      t = 0;
    } else {
      continue;
    }
    auto [m_lo, m_hi] = year_range(g);
    if (m_lo < panel.month_lo() || m_hi > panel.month_hi())
      throw DataError("reform design: outcome year [" + std::to_string(m_lo) + "," +
                      std::to_string(m_hi) + "] not covered by the panel window");
    if (!panel.observed(u, m_lo) || !panel.observed(u, m_hi)) continue;
    rows.push_back({u, d, t});
  }

  DidSampleBuild out;
  const int n = static_cast<int>(rows.size());
  out.sample.y.resize(n);
  out.sample.d.resize(n);
  out.sample.t.resize(n);
  out.sample.x.resize(n, 4);
  out.sample.x_names = {"age_at_first_birth", "employed", "subsidy", "cesarean"};
  out.sample.take_up = Eigen::VectorXi::Zero(n);
  for (int i = 0; i < n; ++i) {
    const auto& row = rows[i];
    auto [m_lo, m_hi] = year_range(panel.group(row.unit));
    double any = 0.0;
    for (int m = m_lo; m <= m_hi; ++m)
      if (panel.rx(row.unit, m) > 0.0) {
        any = 1.0;
        break;
      }
    out.sample.y[i] = any;
    out.sample.d[i] = row.d;
    out.sample.t[i] = row.t;
    const auto& meta = panel.unit(row.unit);
    out.sample.x(i, 0) = meta.age_at_first_birth;
    out.sample.x(i, 1) = meta.employed_at_birth ? 1.0 : 0.0;
    out.sample.x(i, 2) = meta.subsidy ? 1.0 : 0.0;
    out.sample.x(i, 3) = meta.cesarean ? 1.0 : 0.0;
    if (row.d == 1) ++(row.t == 1 ? out.n11 : out.n10);
    else ++(row.t == 1 ? out.n01 : out.n00);
  }
  if (out.n11 == 0 || out.n10 == 0 || out.n01 == 0 || out.n00 == 0)
    throw DataError("reform design: empty cell (n11=" + std::to_string(out.n11) +
                    ", n10=" + std::to_string(out.n10) + ", n01=" + std::to_string(out.n01) +
                    ", n00=" + std::to_string(out.n00) + ")");
  return out;
}

AtetResult placebo_reform(const Panel& panel, const ReformDesign& design,
                          int shift_months, const DmlConfig& config) {
  ReformDesign shifted = design;
  shifted.reform_month -= shift_months;
  return dml_atet(build_did_sample(panel, shifted).sample, config);
}

AtetResult shrink_window(const Panel& panel, const ReformDesign& design,
                         int window_months, const DmlConfig& config) {
  ReformDesign narrowed = design;
  narrowed.window_months = window_months;
  return dml_atet(build_did_sample(panel, narrowed).sample, config);
}

}  // namespace paneldid
