#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "bql/core.hpp"
#include "bql/nuisance.hpp"
#include "bql/regress.hpp"

namespace bql {

struct LassoOptions {
  double tol = 1e-12;
  std::size_t max_sweeps = 200000;
};

struct LassoFit {
  VectorXd coefficients;  // original scale
  VectorXd standardized;  // coefficients on RMS-scaled columns
  VectorXd scale;         // column RMS, 0 for all-zero columns
  double penalty = 0.0;
  std::size_t sweeps = 0;
  bool converged = false;
};

namespace detail {

inline VectorXd column_rms(const MatrixXd& x) {
  VectorXd s(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) s(j) = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows()));
  return s;
}

inline MatrixXd scale_columns(const MatrixXd& x, const VectorXd& s) {
  MatrixXd z = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) z.col(j) = s(j) > 0 ? VectorXd(x.col(j) / s(j)) : VectorXd::Zero(x.rows());
  return z;
}

inline double soft(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

/// Cyclic coordinate descent on unit-RMS columns for (1/2n)|y - Zb|^2 + pen sum_{penalized} |b_j|.
inline std::size_t coordinate_descent(const MatrixXd& z, const VectorXd& y, double pen, const std::vector<char>& penalized,
                                      VectorXd& b, const LassoOptions& opt, bool& converged) {
  const double n = static_cast<double>(z.rows());
  VectorXd r = y - z * b;
  std::vector<double> zz(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) zz[static_cast<std::size_t>(j)] = z.col(j).squaredNorm() / n;
  converged = false;
  std::size_t sweep = 0;
  while (sweep < opt.max_sweeps) {
    ++sweep;
    double change = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double q = zz[static_cast<std::size_t>(j)];
      if (q == 0) continue;
      const double rho = z.col(j).dot(r) / n + q * b(j);
      const double nb = penalized[static_cast<std::size_t>(j)] ? soft(rho, pen) / q : rho / q;
      const double dlt = nb - b(j);
      if (dlt != 0) {
        r -= dlt * z.col(j);
        b(j) = nb;
        change = std::max(change, std::abs(dlt));
      }
    }
    if (change < opt.tol) {
      converged = true;
      break;
    }
  }
  return sweep;
}

}  // namespace detail

/// Lasso with internally RMS-scaled columns; unpenalized columns (mask 0) are fitted freely.
inline LassoFit lasso(const MatrixXd& x, const VectorXd& y, double penalty, const std::vector<char>& penalized,
                      const LassoOptions& opt = {}, const VectorXd* warm_standardized = nullptr) {
  if (!(penalty >= 0) || !std::isfinite(penalty)) throw ConfigError("lasso penalty must be a finite value >= 0");
  if (penalized.size() != static_cast<std::size_t>(x.cols())) throw DimensionError("penalty mask length must match columns");
  if (x.rows() != y.size()) throw DimensionError("lasso: rows of x and y differ");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("lasso: non-finite input");
  LassoFit f;
  f.penalty = penalty;
  f.scale = detail::column_rms(x);
  MatrixXd z = detail::scale_columns(x, f.scale);
  f.standardized = warm_standardized ? *warm_standardized : VectorXd::Zero(x.cols());
  f.sweeps = detail::coordinate_descent(z, y, penalty, penalized, f.standardized, opt, f.converged);
  if (!f.converged) throw NumericError("lasso coordinate descent did not converge in " + std::to_string(opt.max_sweeps) + " sweeps");
  f.coefficients = VectorXd::Zero(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (f.scale(j) > 0) f.coefficients(j) = f.standardized(j) / f.scale(j);
  return f;
}

/// Gradient of the smooth part on the standardized scale, z_j'(y - Zb)/n.
inline VectorXd lasso_gradient(const MatrixXd& x, const VectorXd& y, const LassoFit& f) {
  MatrixXd z = detail::scale_columns(x, f.scale);
  return z.transpose() * (y - z * f.standardized) / static_cast<double>(x.rows());
}

/// Smallest penalty at which every penalized coefficient is zero.
inline double lasso_penalty_max(const MatrixXd& x, const VectorXd& y, const std::vector<char>& penalized) {
  MatrixXd z = detail::scale_columns(x, detail::column_rms(x));
  std::vector<Eigen::Index> free;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (!penalized[static_cast<std::size_t>(j)]) free.push_back(j);
  VectorXd r = y;
  if (!free.empty()) {
    MatrixXd zf = z(Eigen::all, free);
    r = y - zf * ols(zf, y).coefficients;
  }
  double m = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (penalized[static_cast<std::size_t>(j)]) m = std::max(m, std::abs(z.col(j).dot(r)) / static_cast<double>(x.rows()));
  return m;
}

struct LassoCv {
  std::vector<double> path, cv_mean, cv_se;
  std::size_t best = 0, chosen = 0;
  LassoFit fit;
};

/// Penalty chosen by K-fold CV with the one-standard-error rule over a geometric path.
inline LassoCv lasso_cv(const MatrixXd& x, const VectorXd& y, const std::vector<char>& penalized, std::uint64_t seed,
                        std::size_t folds = 5, std::size_t steps = 50, double ratio = 1e-3, const LassoOptions& opt = {}) {
  LassoCv cv;
  const double pmax = lasso_penalty_max(x, y, penalized);
  if (pmax == 0) {
    cv.path = {0.0};
    cv.cv_mean = {0.0};
    cv.cv_se = {0.0};
    cv.fit = lasso(x, y, 0.0, penalized, opt);
    return cv;
  }
  for (std::size_t s = 0; s < steps; ++s)
    cv.path.push_back(pmax * std::pow(ratio, static_cast<double>(s) / static_cast<double>(steps - 1)));
  const auto plan = make_folds(static_cast<std::size_t>(x.rows()), folds, seed);
  std::vector<std::vector<double>> err(steps, std::vector<double>(folds, 0.0));
  for (std::size_t k = 0; k < folds; ++k) {
    auto tr = plan.out_of_fold(static_cast<int>(k));
    auto te = plan.in_fold(static_cast<int>(k));
    MatrixXd xtr = x(tr, Eigen::all), xte = x(te, Eigen::all);
    VectorXd ytr = y(tr), yte = y(te);
    VectorXd warm = VectorXd::Zero(x.cols());
    for (std::size_t s = 0; s < steps; ++s) {
      auto f = lasso(xtr, ytr, cv.path[s], penalized, opt, &warm);
      warm = f.standardized;
      err[s][k] = (yte - xte * f.coefficients).squaredNorm() / static_cast<double>(te.size());
    }
  }
  for (std::size_t s = 0; s < steps; ++s) {
    auto m = mean_se(err[s]);
    cv.cv_mean.push_back(m.mean);
    cv.cv_se.push_back(m.se);
    if (m.mean < cv.cv_mean[cv.best]) cv.best = s;
  }
  const double bound = cv.cv_mean[cv.best] + cv.cv_se[cv.best];
  cv.chosen = cv.best;
  for (std::size_t s = 0; s <= cv.best; ++s)
    if (cv.cv_mean[s] <= bound) {
      cv.chosen = s;
      break;
    }
  cv.fit = lasso(x, y, cv.path[cv.chosen], penalized, opt);
  return cv;
}

}  // namespace bql
