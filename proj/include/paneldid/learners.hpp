#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace paneldid {

// Design with an explicit intercept column (column 0).
struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

// Intercept plus powers of a single covariate: [1, x, x^2, ..., x^degree].
DesignMatrix polynomial_design(const Eigen::VectorXd& x, int degree);

// -- logistic regression via IRLS ----------------------------------------------

struct LogitFit {
  Eigen::VectorXd coef;
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = 0.0;
  std::vector<double> loglik_path;  // one entry per accepted IRLS step
  std::string note;                 // separation / ridge diagnostics
};

// Maximizes the Bernoulli log-likelihood by iteratively reweighted least
// squares with step-halving whenever a step would decrease the likelihood.
// Convergence: max-abs of the mean score X'(y-p)/n <= tol. Quasi-separation
// (runaway coefficients) and singular weighted normal equations are flagged
// in `note`; the latter falls back to a small ridge.
LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   double tol = 1e-8, int max_iter = 50);

Eigen::VectorXd predict_proba(const LogitFit& fit, const Eigen::MatrixXd& X,
                              double eps_clip = 1e-6);

double logit_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& coef);
Eigen::VectorXd logit_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& coef);  // mean score X'(y-p)/n

// -- ordinary least squares ----------------------------------------------------

struct OlsFit {
  Eigen::VectorXd coef;
  double residual_variance = 0.0;
  Eigen::Index rank = 0;
  std::string note;  // rank-deficiency diagnostic
};

// Least squares via complete orthogonal decomposition; rank-deficient designs
// get the minimal-norm solution with a diagnostic.
OlsFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// -- bagged CART regression forest ----------------------------------------------

struct ForestConfig {
  int n_trees = 1000;
  int max_depth = 8;
  int min_leaf = 5;
  std::uint64_t seed = 0;
  bool compute_oob = false;
  int max_bins = 256;  // histogram resolution for split search
};

struct TreeNode {
  int feature = -1;          // -1 = leaf
  double threshold = 0.0;    // go left if x <= threshold
  int left = -1, right = -1;
  double value = 0.0;        // leaf mean
  int n_rows = 0;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(const double* x) const;
};

class Forest {
 public:
  std::vector<Tree> trees;
  ForestConfig config;
  double oob_error = std::numeric_limits<double>::quiet_NaN();
  double y_min = 0.0, y_max = 0.0;

  double predict_row(const double* x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

// Bagged regression trees with variance-reduction splits over quantile-binned
// thresholds; all features are candidates at every split. Deterministic given
// config.seed.
Forest fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const ForestConfig& config);

// -- k-fold utilities and grid tuning -------------------------------------------

// Partition of [0, n) into K folds with sizes differing by at most one,
// assigned by dealing a uniformly shuffled order round-robin.
std::vector<int> kfold_split(int n, int K, std::uint64_t seed);

struct ForestGridPoint {
  int max_depth = 0;
  int min_leaf = 0;
};

struct GridTuneResult {
  ForestGridPoint best;
  std::vector<double> cv_mse;  // aligned with the grid
};

// Cross-validated MSE over the grid; ties break toward smaller depth, then
// larger leaf (the simpler model).
GridTuneResult grid_tune(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const std::vector<ForestGridPoint>& grid, int k_folds,
                         std::uint64_t seed, ForestConfig base = {});

std::vector<ForestGridPoint> default_forest_grid();  // depth {3,5,8} x leaf {5,20,50}

}  // namespace paneldid
