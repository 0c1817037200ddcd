#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "paneldid/learners.hpp"
#include "paneldid/panel.hpp"

namespace paneldid {

// Two-period ITT difference-in-differences sample: one row per mother.
// d: reform-side birth-window indicator, t: reform-year indicator,
// y: any-prescription-in-year outcome. take_up is carried for bookkeeping
// only; the estimator never reads it.
struct DidSample {
  Eigen::VectorXd y;
  Eigen::VectorXi d;
  Eigen::VectorXi t;
  Eigen::MatrixXd x;
  std::vector<std::string> x_names;
  Eigen::VectorXi take_up;

  int n() const { return static_cast<int>(y.size()); }
};

enum class GLearner { forest, logit };
enum class LLearner { forest, ols };

struct DmlConfig {
  int k_folds = 5;
  GLearner g_learner = GLearner::forest;  // g0(x) = P(D=1|X=x)
  LLearner l_learner = LLearner::forest;  // l0(x) = E[(T-lambda0) Y | X=x, D=0]
  ForestConfig forest;                    // shared by both forest nuisances
  double trim_eps = 0.02;                 // drop rows with g_hat > 1 - eps
  std::uint64_t seed = 0;
};

struct FoldDiag {
  int fold = 0;
  int n_train = 0, n_test = 0, n_trimmed = 0;
  double g_min = 0.0, g_max = 0.0;
};

struct AtetResult {
  double theta = 0.0;
  double se = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  int n_used = 0;
  int n_trimmed = 0;
  double score_mean = 0.0;  // empirical mean score at theta (exactly 0)
  std::vector<FoldDiag> folds;
};

// Cross-fitted ATET from the Neyman-orthogonal score: nuisances g0 and l0 are
// fit on K-1 folds and evaluated on the held-out fold; the marginal shares
// p0 = P(D=1) and lambda0 = P(T=1) come from the full sample. The score is
// linear in theta with unit slope, so theta_hat is the mean of the theta-free
// part over retained rows; the SE is the score's standard deviation over
// sqrt(n).
AtetResult dml_atet(const DidSample& sample, const DmlConfig& config);

// -- orthogonality diagnostics ---------------------------------------------------

struct Nuisances {
  std::function<double(const Eigen::RowVectorXd&)> g0;
  std::function<double(const Eigen::RowVectorXd&)> l0;
  double p0 = 0.5;
  double lambda0 = 0.5;
};

struct Direction {
  std::function<double(const Eigen::RowVectorXd&)> hg;  // perturbs g0
  std::function<double(const Eigen::RowVectorXd&)> hl;  // perturbs l0
};

struct OrthogonalityResult {
  std::vector<double> eps;
  std::vector<double> slope_orthogonal;  // d/d.eps of the mean orthogonal score
  std::vector<double> slope_naive;       // same derivative for the plain IPW score
  double score_sd = 0.0;
};

// Central finite differences of the mean score along a nuisance perturbation,
// contrasted with the non-orthogonal inverse-propensity score.
OrthogonalityResult orthogonality_check(const DidSample& sample, const Nuisances& nuis,
                                        const Direction& dir, std::vector<double> eps_grid);

// -- linear reference specification ----------------------------------------------

struct LinearDidResult {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::VectorXd robust_se;  // HC1
  double did_estimate = 0.0;  // coefficient on D*T
  double did_se = 0.0;
  std::vector<std::string> dropped;  // collinear columns
  int n = 0;
};

LinearDidResult linear_did(const DidSample& sample);

// -- reform-window sample construction -------------------------------------------

struct ReformDesign {
  int reform_month = 0;    // first birth month on the reform side
  int window_months = 3;   // births in [reform, reform+w) vs [reform-w, reform)
  int outcome_year = 1;    // event year for the outcome (year 0 = months -11..0)
};

struct DidSampleBuild {
  DidSample sample;
  int n11 = 0, n10 = 0, n01 = 0, n00 = 0;  // cell counts (d, t)
};

// Builds the four treatment-window cells from a monthly panel: t=1 compares
// births around the reform month, t=0 the same windows one year earlier; d
// flags the reform-side window within each year. The outcome is the
// any-prescription indicator over the requested event year. Covariates:
// age at first birth, employment, subsidy, cesarean.
DidSampleBuild build_did_sample(const Panel& panel, const ReformDesign& design);

// Same estimator at a reform date shifted back by shift_months.
AtetResult placebo_reform(const Panel& panel, const ReformDesign& design,
                          int shift_months, const DmlConfig& config);

// Same estimator on narrower birth windows.
AtetResult shrink_window(const Panel& panel, const ReformDesign& design,
                         int window_months, const DmlConfig& config);

}  // namespace paneldid
