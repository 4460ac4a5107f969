#pragma once

#include "bql/core.hpp"

namespace bql {

struct LinearFit {
  VectorXd coefficients;
  Eigen::Index rank = 0;
  double residual_sum_squares = 0.0;
};

inline constexpr double kSvdCutoff = 1e-10;

/// Minimum-norm least squares; singular values below kSvdCutoff * sigma_max are dropped.
inline LinearFit ols(const MatrixXd& x, const VectorXd& y) {
  if (x.rows() != y.size()) throw DimensionError("ols: design has " + std::to_string(x.rows()) + " rows, response " +
                                                 std::to_string(y.size()));
  if (x.rows() < 1 || x.cols() < 1) throw DimensionError("ols: empty design");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("ols: non-finite input");
  LinearFit f;
  Eigen::JacobiSVD<MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  if (smax == 0.0) {
    f.coefficients = VectorXd::Zero(x.cols());
    f.rank = 0;
  } else {
    svd.setThreshold(kSvdCutoff);
    f.coefficients = svd.solve(y);
    f.rank = svd.rank();
  }
  f.residual_sum_squares = (y - x * f.coefficients).squaredNorm();
  return f;
}

/// argmin over a of sum_i [rf_i - rg_i (x_i' a + offset)]^2
inline LinearFit residual_on_residual(const VectorXd& rf, const VectorXd& rg, const MatrixXd& x, double offset) {
  if (rf.size() != rg.size() || rf.size() != x.rows())
    throw DimensionError("residual_on_residual: dimension mismatch");
  MatrixXd z = rg.asDiagonal() * x;
  VectorXd r = rf - rg * offset;
  return ols(z, r);
}

inline LinearFit nested_projection(const VectorXd& fitted, const MatrixXd& z) { return ols(z, fitted); }

}  // namespace bql
