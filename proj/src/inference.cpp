#include "paneldid/inference.hpp"

#include <algorithm>
#include <cmath>

#include "paneldid/errors.hpp"
#include "paneldid/rng.hpp"

namespace paneldid {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must be in (0,1)");
  // Acklam's rational approximation
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // one Halley refinement step
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  x = x - u / (1 + x * u / 2);
  return x;
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw ConfigError("quantile of empty sample");
  std::sort(v.begin(), v.end());
  double h = (static_cast<double>(v.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, v.size() - 1);
  double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

Eigen::VectorXd pointwise_se(const Eigen::MatrixXd& influence) {
  const auto n = influence.rows();
  if (n < 2) throw ConfigError("pointwise_se: need at least 2 units");
  Eigen::VectorXd se(influence.cols());
  for (Eigen::Index k = 0; k < influence.cols(); ++k) {
    double m = influence.col(k).mean();
    double var = (influence.col(k).array() - m).square().sum() / static_cast<double>(n);
    se[k] = std::sqrt(var / static_cast<double>(n));
  }
  return se;
}

namespace {

// One multiplier per unit per draw; draws are independent streams off the
// master seed so the result is invariant to evaluation order.
inline double draw_multiplier(Multiplier kind, std::mt19937_64& eng) {
  if (kind == Multiplier::rademacher) {
    return (eng() & 1ULL) ? 1.0 : -1.0;
  }
  // Mammen two-point: mean 0, variance 1, third moment 1
  static const double golden = (1.0 + std::sqrt(5.0)) / 2.0;      // 1.618...
  static const double p_low = golden / std::sqrt(5.0);            // P(xi = 1 - golden)
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(eng) < p_low ? 1.0 - golden : golden;
}

struct BootDraws {
  std::vector<std::vector<double>> perturb;  // n_draws x K
  std::vector<int> active_cols;
  Eigen::VectorXd se;
};

BootDraws run_draws(const Eigen::MatrixXd& IF, const BootConfig& cfg) {
  const auto n = IF.rows();
  const auto K = IF.cols();
  if (n < 2) throw ConfigError("multiplier_bootstrap: need at least 2 units");
  if (cfg.n_draws < 199) throw ConfigError("multiplier_bootstrap: need n_draws >= 199");

  BootDraws out;
  out.se = pointwise_se(IF);
  for (Eigen::Index k = 0; k < K; ++k)
    if (out.se[k] > 0.0) out.active_cols.push_back(static_cast<int>(k));

  out.perturb.assign(cfg.n_draws, std::vector<double>(K, 0.0));
  Eigen::VectorXd xi(n);
  for (int b = 0; b < cfg.n_draws; ++b) {
    std::mt19937_64 eng = make_engine(cfg.seed, static_cast<std::uint64_t>(b));
    for (Eigen::Index i = 0; i < n; ++i) xi[i] = draw_multiplier(cfg.multiplier, eng);
    Eigen::VectorXd r = IF.transpose() * xi / static_cast<double>(n);
    for (Eigen::Index k = 0; k < K; ++k) out.perturb[b][k] = r[k];
  }
  return out;
}

}  // namespace

BandResult multiplier_bootstrap(const Eigen::MatrixXd& influence, const BootConfig& cfg) {
  BootDraws draws = run_draws(influence, cfg);
  const auto K = influence.cols();

  BandResult res;
  res.pointwise_se = draws.se;
  res.coverage_level = cfg.level;
  res.n_draws = cfg.n_draws;
  res.boot_scale = Eigen::VectorXd::Zero(K);
  for (Eigen::Index k = 0; k < K; ++k)
    if (draws.se[k] == 0.0) res.zero_variance_cols.push_back(static_cast<int>(k));

  static const double iqr_norm = 2.0 * normal_quantile(0.75);
  std::vector<double> colv(cfg.n_draws);
  for (int k : draws.active_cols) {
    for (int b = 0; b < cfg.n_draws; ++b) colv[b] = draws.perturb[b][k];
    double q75 = quantile(colv, 0.75), q25 = quantile(colv, 0.25);
    res.boot_scale[k] = (q75 - q25) / iqr_norm;
  }

  std::vector<double> max_stat;
  max_stat.reserve(cfg.n_draws);
  for (int b = 0; b < cfg.n_draws; ++b) {
    double m = 0.0;
    bool any = false;
    for (int k : draws.active_cols) {
      if (res.boot_scale[k] <= 0.0) continue;
      m = std::max(m, std::abs(draws.perturb[b][k]) / res.boot_scale[k]);
      any = true;
    }
    if (any) max_stat.push_back(m);
  }
  if (max_stat.empty())
    throw EstimationError("multiplier_bootstrap: no columns with positive variance");
  res.critical_value = quantile(max_stat, cfg.level);
  return res;
}

std::vector<double> bootstrap_critical_values(const Eigen::MatrixXd& influence,
                                              const BootConfig& cfg,
                                              const std::vector<double>& levels) {
  BootDraws draws = run_draws(influence, cfg);
  static const double iqr_norm = 2.0 * normal_quantile(0.75);
  std::vector<double> scale(influence.cols(), 0.0);
  std::vector<double> colv(cfg.n_draws);
  for (int k : draws.active_cols) {
    for (int b = 0; b < cfg.n_draws; ++b) colv[b] = draws.perturb[b][k];
    scale[k] = (quantile(colv, 0.75) - quantile(colv, 0.25)) / iqr_norm;
  }
  std::vector<double> max_stat;
  for (int b = 0; b < cfg.n_draws; ++b) {
    double m = 0.0;
    bool any = false;
    for (int k : draws.active_cols)
      if (scale[k] > 0.0) {
        m = std::max(m, std::abs(draws.perturb[b][k]) / scale[k]);
        any = true;
      }
    if (any) max_stat.push_back(m);
  }
  std::vector<double> out;
  for (double lv : levels) out.push_back(quantile(max_stat, lv));
  return out;
}

}  // namespace paneldid
