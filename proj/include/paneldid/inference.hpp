#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace paneldid {

enum class Multiplier { rademacher, mammen };

struct BootConfig {
  int n_draws = 999;
  double level = 0.95;
  Multiplier multiplier = Multiplier::rademacher;
  std::uint64_t seed = 0;
};

struct BandResult {
  Eigen::VectorXd pointwise_se;       // sd(IF col)/sqrt(n)
  Eigen::VectorXd boot_scale;         // IQR-based studentization scale per column
  double critical_value = 0.0;
  double coverage_level = 0.95;
  int n_draws = 0;
  std::vector<int> zero_variance_cols;
};

// Pointwise standard errors from an influence matrix (rows = units).
Eigen::VectorXd pointwise_se(const Eigen::MatrixXd& influence);

// Multiplier bootstrap for simultaneous bands: each draw perturbs the
// estimates by the mean of multiplier-weighted influence rows; each column is
// studentized by a bootstrap interquartile-range scale, and the critical
// value is the level-quantile of the max-|t| statistic across columns.
// Zero-variance columns are excluded from the max and reported. Deterministic
// given the seed.
BandResult multiplier_bootstrap(const Eigen::MatrixXd& influence, const BootConfig& config);

// Critical values at several levels from one set of draws (shares the same
// max statistics, so monotonicity in the level is exact).
std::vector<double> bootstrap_critical_values(const Eigen::MatrixXd& influence,
                                              const BootConfig& config,
                                              const std::vector<double>& levels);

// type-7 quantile (linear interpolation) of unsorted data
double quantile(std::vector<double> v, double p);

}  // namespace paneldid
