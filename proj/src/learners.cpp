#include "paneldid/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "paneldid/errors.hpp"
#include "paneldid/rng.hpp"

namespace paneldid {

DesignMatrix polynomial_design(const Eigen::VectorXd& x, int degree) {
  DesignMatrix d;
  d.X.resize(x.size(), degree + 1);
  d.X.col(0).setOnes();
  d.names.push_back("intercept");
  for (int p = 1; p <= degree; ++p) {
    d.X.col(p) = d.X.col(p - 1).cwiseProduct(x);
    d.names.push_back(p == 1 ? "x" : "x^" + std::to_string(p));
  }
  return d;
}

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

constexpr double kCoefBound = 1e3;

// Quasi-separation: the fit classifies every row essentially perfectly, so
// the MLE is drifting to infinity.
bool perfectly_classified(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& coef) {
  Eigen::VectorXd eta = X * coef;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    double p = sigmoid(eta[i]);
    if (y[i] == 1.0 ? p < 1.0 - 1e-4 : p > 1e-4) return false;
  }
  return true;
}

}  // namespace

double logit_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& coef) {
  Eigen::VectorXd eta = X * coef;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1+e^eta) computed stably
    double e = eta[i];
    double log1pe = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += y[i] * e - log1pe;
  }
  return ll;
}

Eigen::VectorXd logit_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& coef) {
  Eigen::VectorXd p = (X * coef).unaryExpr([](double z) { return sigmoid(z); });
  return X.transpose() * (y - p) / static_cast<double>(X.rows());
}

LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   double tol, int max_iter) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw ConfigError("fit_logit: X and y disagree on n");
  if (n <= p) throw ConfigError("fit_logit: need n > number of columns");
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] != 0.0 && y[i] != 1.0) throw ConfigError("fit_logit: y must be 0/1");

  LogitFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);
  double ll = logit_loglik(X, y, fit.coef);
  fit.loglik_path.push_back(ll);

  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd eta = X * fit.coef;
    Eigen::VectorXd prob = eta.unaryExpr([](double z) { return sigmoid(z); });
    Eigen::VectorXd grad = X.transpose() * (y - prob);
    fit.iterations = it;
    fit.final_gradient_norm = grad.lpNorm<Eigen::Infinity>() / static_cast<double>(n);
    if (fit.final_gradient_norm <= tol) {
      if (perfectly_classified(X, y, fit.coef)) {
        fit.converged = false;
        fit.note = "quasi-separation: sample perfectly classified";
      } else {
        fit.converged = true;
      }
      return fit;
    }

    Eigen::VectorXd w = prob.array() * (1.0 - prob.array());
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step;
    bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                    ldlt.vectorD().minCoeff() < 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff());
    if (singular) {
      double ridge = std::max(1e-10, 1e-8 * H.trace() / static_cast<double>(p));
      H.diagonal().array() += ridge;
      step = H.ldlt().solve(grad);
      fit.note = "singular weighted normal equations; ridge fallback";
    } else {
      step = ldlt.solve(grad);
    }

    // step-halving keeps the likelihood nondecreasing
    double scale = 1.0;
    Eigen::VectorXd trial;
    double ll_new = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 40; ++h) {
      trial = fit.coef + scale * step;
      ll_new = logit_loglik(X, y, trial);
      if (ll_new >= ll - 1e-12 * std::abs(ll)) break;
      scale *= 0.5;
    }
    fit.coef = trial;
    ll = ll_new;
    fit.loglik_path.push_back(ll);

    if (fit.coef.lpNorm<Eigen::Infinity>() > kCoefBound) {
      fit.converged = false;
      fit.note = "quasi-separation: coefficient bound exceeded";
      fit.final_gradient_norm =
          logit_gradient(X, y, fit.coef).lpNorm<Eigen::Infinity>();
      fit.iterations = it + 1;
      return fit;
    }
  }
  fit.iterations = max_iter;
  fit.final_gradient_norm = logit_gradient(X, y, fit.coef).lpNorm<Eigen::Infinity>();
  if (perfectly_classified(X, y, fit.coef)) {
    fit.converged = false;
    fit.note = "quasi-separation: sample perfectly classified";
  } else {
    fit.converged = fit.final_gradient_norm <= tol;
    if (!fit.converged && fit.note.empty()) fit.note = "max iterations reached";
  }
  return fit;
}

Eigen::VectorXd predict_proba(const LogitFit& fit, const Eigen::MatrixXd& X,
                              double eps_clip) {
  Eigen::VectorXd p = (X * fit.coef).unaryExpr([](double z) { return sigmoid(z); });
  return p.cwiseMax(eps_clip).cwiseMin(1.0 - eps_clip);
}

OlsFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw ConfigError("fit_ols: X and y disagree on n");
  if (n <= p) throw ConfigError("fit_ols: need n > number of columns");
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  OlsFit fit;
  fit.coef = cod.solve(y);
  fit.rank = cod.rank();
  if (fit.rank < p) fit.note = "rank-deficient design; minimal-norm solution";
  Eigen::VectorXd resid = y - X * fit.coef;
  Eigen::Index dof = n - fit.rank;
  fit.residual_variance = dof > 0 ? resid.squaredNorm() / static_cast<double>(dof) : 0.0;
  return fit;
}

// -- forest ---------------------------------------------------------------------

double Tree::predict(const double* x) const {
  int i = 0;
  while (nodes[i].feature >= 0)
    i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].value;
}

double Forest::predict_row(const double* x) const {
  double s = 0.0;
  for (const auto& t : trees) s += t.predict(x);
  return s / static_cast<double>(trees.size());
}

Eigen::VectorXd Forest::predict(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd Xt = X.transpose();  // column-major: rows become contiguous
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict_row(Xt.col(i).data());
  return out;
}

namespace {

// Per-feature quantile binning shared by all trees of one fit. Split search
// scans bin statistics instead of sorting rows at every node.
struct BinnedFeatures {
  int n_rows = 0, n_features = 0, n_bins_max = 0;
  std::vector<std::uint16_t> codes;        // row-major n_rows x n_features
  std::vector<std::vector<double>> edges;  // per feature: threshold for code k is edges[f][k]

  std::uint16_t code(int row, int f) const { return codes[static_cast<std::size_t>(row) * n_features + f]; }
};

BinnedFeatures bin_features(const Eigen::MatrixXd& X, int max_bins) {
  BinnedFeatures b;
  b.n_rows = static_cast<int>(X.rows());
  b.n_features = static_cast<int>(X.cols());
  b.codes.resize(static_cast<std::size_t>(b.n_rows) * b.n_features);
  b.edges.resize(b.n_features);
  std::vector<double> sorted(b.n_rows);
  for (int f = 0; f < b.n_features; ++f) {
    for (int i = 0; i < b.n_rows; ++i) sorted[i] = X(i, f);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    auto& e = b.edges[f];
    int n_distinct = static_cast<int>(sorted.size());
    if (n_distinct <= max_bins) {
      e = sorted;  // one bin per distinct value: split search is exact
    } else {
      e.reserve(max_bins);
      for (int k = 1; k <= max_bins; ++k) {
        int idx = static_cast<int>(static_cast<long long>(k) * n_distinct / max_bins) - 1;
        e.push_back(sorted[std::clamp(idx, 0, n_distinct - 1)]);
      }
      e.erase(std::unique(e.begin(), e.end()), e.end());
    }
    b.n_bins_max = std::max(b.n_bins_max, static_cast<int>(e.size()));
    for (int i = 0; i < b.n_rows; ++i) {
      double v = X(i, f);
      auto it = std::lower_bound(e.begin(), e.end(), v);
      std::size_t k = it == e.end() ? e.size() - 1 : static_cast<std::size_t>(it - e.begin());
      b.codes[static_cast<std::size_t>(i) * b.n_features + f] = static_cast<std::uint16_t>(k);
    }
  }
  return b;
}

struct TreeBuilder {
  const BinnedFeatures& bins;
  const Eigen::VectorXd& y;
  const ForestConfig& cfg;
  Tree& tree;
  std::vector<int>& rows;    // bootstrap row ids, partitioned in place
  std::vector<double> sum_buf;
  std::vector<int> cnt_buf;

  void build(int lo, int hi, int depth, int node_id) {
    const int m = hi - lo;
    double sum = 0.0;
    for (int i = lo; i < hi; ++i) sum += y[rows[i]];
    TreeNode& node = tree.nodes[node_id];
    node.value = sum / m;
    node.n_rows = m;
    if (depth >= cfg.max_depth || m < 2 * cfg.min_leaf) return;

    // best variance-reduction split: maximize sumL^2/nL + sumR^2/nR
    int best_f = -1, best_bin = -1;
    double best_gain = sum * sum / m + 1e-12;
    for (int f = 0; f < bins.n_features; ++f) {
      const int nb = static_cast<int>(bins.edges[f].size());
      if (nb < 2) continue;
      std::fill(sum_buf.begin(), sum_buf.begin() + nb, 0.0);
      std::fill(cnt_buf.begin(), cnt_buf.begin() + nb, 0);
      for (int i = lo; i < hi; ++i) {
        int r = rows[i];
        int k = bins.code(r, f);
        sum_buf[k] += y[r];
        cnt_buf[k] += 1;
      }
      double sL = 0.0;
      int nL = 0;
      for (int k = 0; k < nb - 1; ++k) {
        sL += sum_buf[k];
        nL += cnt_buf[k];
        int nR = m - nL;
        if (nL < cfg.min_leaf || nR < cfg.min_leaf) continue;
        double gain = sL * sL / nL + (sum - sL) * (sum - sL) / nR;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_bin = k;
        }
      }
    }
    if (best_f < 0) return;

    double thr = bins.edges[best_f][best_bin];
    int mid = lo;
    for (int i = lo; i < hi; ++i)
      if (bins.code(rows[i], best_f) <= best_bin) std::swap(rows[i], rows[mid++]);

    node.feature = best_f;
    node.threshold = thr;
    int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    int right_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node_id].left = left_id;
    tree.nodes[node_id].right = right_id;
    build(lo, mid, depth + 1, left_id);
    build(mid, hi, depth + 1, right_id);
  }
};

}  // namespace

Forest fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const ForestConfig& config) {
  const int n = static_cast<int>(X.rows());
  if (y.size() != n) throw ConfigError("fit_forest: X and y disagree on n");
  if (config.n_trees < 1 || config.min_leaf < 1 || config.max_depth < 0)
    throw ConfigError("fit_forest: bad config");
  if (n < 1) throw ConfigError("fit_forest: empty training set");

  Forest forest;
  forest.config = config;
  forest.y_min = y.minCoeff();
  forest.y_max = y.maxCoeff();
  forest.trees.resize(config.n_trees);

  BinnedFeatures bins = bin_features(X, config.max_bins);

  std::vector<double> oob_sum;
  std::vector<int> oob_cnt;
  if (config.compute_oob) {
    oob_sum.assign(n, 0.0);
    oob_cnt.assign(n, 0);
  }
  Eigen::MatrixXd Xt;
  if (config.compute_oob) Xt = X.transpose();

  std::vector<int> rows(n);
  std::vector<std::uint8_t> in_bag;
  for (int t = 0; t < config.n_trees; ++t) {
    std::mt19937_64 eng = make_engine(config.seed, static_cast<std::uint64_t>(t));
    std::uniform_int_distribution<int> pick(0, n - 1);
    if (config.compute_oob) in_bag.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      rows[i] = pick(eng);
      if (config.compute_oob) in_bag[rows[i]] = 1;
    }
    Tree& tree = forest.trees[t];
    tree.nodes.clear();
    tree.nodes.emplace_back();
    TreeBuilder builder{bins, y, config, tree, rows,
                        std::vector<double>(bins.n_bins_max),
                        std::vector<int>(bins.n_bins_max)};
    builder.build(0, n, 0, 0);
    if (config.compute_oob)
      for (int i = 0; i < n; ++i)
        if (!in_bag[i]) {
          oob_sum[i] += tree.predict(Xt.col(i).data());
          oob_cnt[i] += 1;
        }
  }
  if (config.compute_oob) {
    double se = 0.0;
    int used = 0;
    for (int i = 0; i < n; ++i)
      if (oob_cnt[i] > 0) {
        double e = oob_sum[i] / oob_cnt[i] - y[i];
        se += e * e;
        ++used;
      }
    forest.oob_error = used > 0 ? se / used : std::numeric_limits<double>::quiet_NaN();
  }
  return forest;
}

std::vector<int> kfold_split(int n, int K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("kfold_split: K must be >= 2");
  if (n < K) throw ConfigError("kfold_split: need n >= K");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 eng = make_engine(seed, 0x6b666f6cULL);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(order[i], order[pick(eng)]);
  }
  std::vector<int> fold(n);
  for (int i = 0; i < n; ++i) fold[order[i]] = i % K;
  return fold;
}

std::vector<ForestGridPoint> default_forest_grid() {
  std::vector<ForestGridPoint> g;
  for (int d : {3, 5, 8})
    for (int l : {5, 20, 50}) g.push_back({d, l});
  return g;
}

GridTuneResult grid_tune(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const std::vector<ForestGridPoint>& grid, int k_folds,
                         std::uint64_t seed, ForestConfig base) {
  if (grid.empty()) throw ConfigError("grid_tune: empty grid");
  const int n = static_cast<int>(X.rows());
  std::vector<int> fold = kfold_split(n, k_folds, derive_seed(seed, 0xcf01dULL));

  GridTuneResult res;
  res.cv_mse.assign(grid.size(), 0.0);
  for (std::size_t gidx = 0; gidx < grid.size(); ++gidx) {
    double sse = 0.0;
    for (int k = 0; k < k_folds; ++k) {
      std::vector<int> tr, te;
      for (int i = 0; i < n; ++i) (fold[i] == k ? te : tr).push_back(i);
      Eigen::MatrixXd Xtr(tr.size(), X.cols()), Xte(te.size(), X.cols());
      Eigen::VectorXd ytr(tr.size());
      for (std::size_t i = 0; i < tr.size(); ++i) {
        Xtr.row(i) = X.row(tr[i]);
        ytr[i] = y[tr[i]];
      }
      for (std::size_t i = 0; i < te.size(); ++i) Xte.row(i) = X.row(te[i]);
      ForestConfig cfg = base;
      cfg.max_depth = grid[gidx].max_depth;
      cfg.min_leaf = grid[gidx].min_leaf;
      cfg.seed = derive_seed(seed, 1000 + k);  // same per fold across grid points
      Forest f = fit_forest(Xtr, ytr, cfg);
      Eigen::VectorXd pred = f.predict(Xte);
      for (std::size_t i = 0; i < te.size(); ++i) {
        double e = pred[i] - y[te[i]];
        sse += e * e;
      }
    }
    res.cv_mse[gidx] = sse / n;
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    double a = res.cv_mse[i], b = res.cv_mse[best];
    if (a < b) {
      best = i;
    } else if (a == b) {
      // simpler model wins ties: smaller depth, then larger leaf
      if (grid[i].max_depth < grid[best].max_depth ||
          (grid[i].max_depth == grid[best].max_depth && grid[i].min_leaf > grid[best].min_leaf))
        best = i;
    }
  }
  res.best = grid[best];
  return res;
}

}  // namespace paneldid
