#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include "bql/bql.hpp"
#include "bql/core.hpp"

namespace bql {

/// Estimated covariance of sqrt(n) (theta_hat - theta*) for one coefficient family.
struct CovarianceReport {
  std::string family;  // alpha_bar | alpha | beta_bar | beta | gamma_bar | gamma | delta
  std::optional<std::size_t> j1, j2;
  std::optional<int> a1;
  VectorXd estimate;
  MatrixXd covariance;
  VectorXd se;  // sqrt of the covariance diagonal; divide by sqrt(n) for the estimator's s.e.
  std::size_t n = 0;
  bool near_boundary = false;  // many decision scores lie within 1e-6 of zero
};

struct Interval {
  double lower = 0.0, upper = 0.0;
};

/// theta_j +- z_{(1+level)/2} se_j / sqrt(n).
inline std::vector<Interval> confidence_intervals(const CovarianceReport& r, double level) {
  if (!(level >= 0 && level < 1)) throw ConfigError("confidence level must lie in [0, 1)");
  if (r.n == 0) throw ConfigError("report has no sample size");
  const double z = level == 0 ? 0.0 : boost::math::quantile(boost::math::normal(), (1.0 + level) / 2.0);
  std::vector<Interval> out;
  for (Eigen::Index k = 0; k < r.estimate.size(); ++k) {
    const double h = z * r.se(k) / std::sqrt(static_cast<double>(r.n));
    out.push_back({r.estimate(k) - h, r.estimate(k) + h});
  }
  return out;
}

namespace detail {

/// Inverse of a symmetric positive definite matrix; throws when it is numerically singular.
inline MatrixXd spd_inverse(const MatrixXd& m, const std::string& what) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  const auto& ev = es.eigenvalues();
  if (ev.size() == 0) return m;
  const double top = ev.maxCoeff();
  if (!(top > 0) || ev.minCoeff() <= 1e-12 * top)
    throw NumericError(what + " is singular (condition number beyond 1e12); more data or fewer covariates are needed");
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

/// Sample average of sum_i w_i a_i b_i'.
inline MatrixXd cross_mean(const MatrixXd& a, const VectorXd& w, const MatrixXd& b) {
  return a.transpose() * (b.array().colwise() * w.array()).matrix() / static_cast<double>(a.rows());
}

inline MatrixXd gram(const MatrixXd& a) { return a.transpose() * a / static_cast<double>(a.rows()); }

/// Covariance as the mean outer product of influence rows, checked for symmetry and PSD.
inline MatrixXd influence_covariance(const MatrixXd& psi, const std::string& what) {
  MatrixXd m = gram(psi);
  m = 0.5 * (m + m.transpose());
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8 * std::max(m.trace(), 1e-300))
    throw NumericError(what + " covariance is not positive semidefinite");
  return m;
}

}  // namespace detail

/// Plug-in sandwich covariances for every coefficient family of a BQL fit. Each family's
/// per-subject influence rows are built once and reused by the families that depend on it.
class PluginInference {
 public:
  PluginInference(const BqlFit& fit, const Dataset& data) : fit_(fit), d_(DataMatrices::from(data)) {
    if (!fit.nuisance) throw ConfigError("inference needs the fit's nuisance predictions");
    if (static_cast<std::size_t>(d_.n()) != fit.nuisance->plan.n)
      throw DimensionError("dataset has " + std::to_string(d_.n()) + " rows but the fit used " +
                           std::to_string(fit.nuisance->plan.n));
    const auto& r = fit.regime;
    cat_ = r.cat;
    ic_ = r.intercept;
    ec_ = r.costs.scaled();
    n_ = static_cast<std::size_t>(d_.n());
    xbar2_ = design::xbar2(d_, ic_);
    w_ = design::lbar2f(d_, cat_, ic_);
    x1_ = design::s1(d_, ic_);
    rg2_ = d_.a2 - fit.nuisance->g2.oof;
    rg1_ = d_.a1 - fit.nuisance->g1.oof;
    choice_.resize(cat_.cand1.size());
    for (std::size_t j1 = 0; j1 < cat_.cand1.size(); ++j1) choice_[j1] = stage2_choice(d_, cat_, fit.stage2, j1, ic_);
  }

  std::size_t n() const { return n_; }

  CovarianceReport alpha_bar() { return report("alpha_bar", fit_.regime.alpha_bar, psi_alpha_bar(), alpha_boundary()); }

  CovarianceReport alpha(std::size_t j1, int a1, std::size_t j2) {
    MatrixXd z = design::jbar2(d_, cat_, j1, j2, ic_);
    MatrixXd xa = design::xbar2_at(d_, a1, ic_);
    const VectorXd& coef = fit_.regime.alpha.at(j1, a1, j2);
    VectorXd resid = xa * fit_.regime.alpha_bar - z * coef;
    MatrixXd q = (z.array().colwise() * resid.array()).matrix() +
                 psi_alpha_bar() * detail::cross_mean(z, ones(), xa).transpose();
    MatrixXd psi = q * detail::spd_inverse(detail::gram(z), "E(S_j2bar S_j2bar')");
    auto rep = report("alpha", coef, psi, alpha_boundary());
    rep.j1 = j1, rep.a1 = a1, rep.j2 = j2;
    return rep;
  }

  CovarianceReport beta_bar(std::size_t j1, std::size_t j2) {
    auto rep = report("beta_bar", fit_.regime.beta_bar.at(j1).at(j2), psi_beta_bar(j1, j2), alpha_boundary());
    rep.j1 = j1, rep.j2 = j2;
    return rep;
  }

  CovarianceReport beta(std::size_t j1, int a1, std::size_t j2) {
    MatrixXd u = design::lbar2(d_, cat_, j1, ic_);
    MatrixXd wa = design::lbar2f_at(d_, cat_, a1, ic_);
    const VectorXd& coef = fit_.regime.beta.at(j1, a1, j2);
    VectorXd resid = wa * fit_.regime.beta_bar[j1][j2] - u * coef;
    MatrixXd q = (u.array().colwise() * resid.array()).matrix() +
                 psi_beta_bar(j1, j2) * detail::cross_mean(u, ones(), wa).transpose();
    MatrixXd psi = q * detail::spd_inverse(detail::gram(u), "E(S_l2bar S_l2bar')");
    auto rep = report("beta", coef, psi, alpha_boundary());
    rep.j1 = j1, rep.a1 = a1, rep.j2 = j2;
    return rep;
  }

  CovarianceReport gamma_bar(std::size_t j1) {
    auto rep = report("gamma_bar", fit_.regime.gamma_bar.at(j1), psi_gamma_bar(j1), gamma_boundary());
    rep.j1 = j1;
    return rep;
  }

  CovarianceReport gamma(std::size_t j1) {
    auto rep = report("gamma", fit_.regime.gamma.at(j1), psi_gamma(j1), gamma_boundary());
    rep.j1 = j1;
    return rep;
  }

  CovarianceReport delta(std::size_t j1) {
    MatrixXd l = design::l1(d_, cat_, ic_);
    const std::size_t jf = cat_.full1_pos();
    const VectorXd& coef = fit_.regime.delta.at(j1);
    MatrixXd y1c = stage1_assessment_outcome(d_, cat_, ec_, fit_.regime.config, EngineOptions{}, fit_.stage1);
    VectorXd resid = y1c.col(static_cast<Eigen::Index>(j1)) - y1c.col(static_cast<Eigen::Index>(jf)) - l * coef;
    MatrixXd q = (l.array().colwise() * resid.array()).matrix() + delta_chain(j1, l) - delta_chain(jf, l);
    MatrixXd psi = q * detail::spd_inverse(detail::gram(l), "E(S_l1 S_l1')");
    auto rep = report("delta", coef, psi, alpha_boundary() || gamma_boundary());
    rep.j1 = j1;
    return rep;
  }

  /// Every family at every index.
  std::vector<CovarianceReport> all() {
    std::vector<CovarianceReport> out{alpha_bar()};
    const auto J1 = cat_.cand1.size(), J2 = cat_.cand2.size();
    for (std::size_t j1 = 0; j1 < J1; ++j1)
      for (int a1 = 0; a1 < 2; ++a1)
        for (std::size_t j2 = 0; j2 < J2; ++j2) out.push_back(alpha(j1, a1, j2));
    for (std::size_t j1 = 0; j1 < J1; ++j1)
      for (std::size_t j2 = 0; j2 < J2; ++j2) out.push_back(beta_bar(j1, j2));
    for (std::size_t j1 = 0; j1 < J1; ++j1)
      for (int a1 = 0; a1 < 2; ++a1)
        for (std::size_t j2 = 0; j2 < J2; ++j2) out.push_back(beta(j1, a1, j2));
    for (std::size_t j1 = 0; j1 < J1; ++j1) out.push_back(gamma_bar(j1));
    for (std::size_t j1 = 0; j1 < J1; ++j1) out.push_back(gamma(j1));
    for (std::size_t j1 = 0; j1 < J1; ++j1) out.push_back(delta(j1));
    return out;
  }

  /// Plug-in V^alpha = mean (A2 - g2)^2 Xbar2 Xbar2'.
  MatrixXd v_alpha() const { return detail::cross_mean(xbar2_, rg2_.cwiseAbs2(), xbar2_); }
  MatrixXd v_gamma() const { return detail::cross_mean(x1_, rg1_.cwiseAbs2(), x1_); }

 private:
  VectorXd ones() const { return VectorXd::Ones(static_cast<Eigen::Index>(n_)); }

  CovarianceReport report(const std::string& family, const VectorXd& coef, const MatrixXd& psi, bool boundary) const {
    CovarianceReport r;
    r.family = family;
    r.estimate = coef;
    r.covariance = detail::influence_covariance(psi, family);
    r.se = r.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    r.n = n_;
    r.near_boundary = boundary;
    return r;
  }

  const MatrixXd& psi_alpha_bar() {
    if (!psi_ab_) {
      VectorXd fit = xbar2_ * fit_.regime.alpha_bar + VectorXd::Constant(static_cast<Eigen::Index>(n_), ec_.c2t[1] - ec_.c2t[0]);
      VectorXd rf = d_.y - fit_.nuisance->f2.oof;
      VectorXd e = rf - (rg2_.array() * fit.array()).matrix();
      MatrixXd q = xbar2_.array().colwise() * (rg2_.array() * e.array());
      psi_ab_ = q * detail::spd_inverse(v_alpha(), "V^alpha = E{(A2 - g2)^2 Xbar2 Xbar2'}");
    }
    return *psi_ab_;
  }

  /// I(S_j2bar' alpha_{j1 A1 j2} > 0) per row.
  VectorXd treat2(std::size_t j1, std::size_t j2) const {
    return indicator(stage2_score(d_, cat_, fit_.regime.alpha, j1, j2, ic_), 0.0);
  }

  const MatrixXd& psi_beta_bar(std::size_t j1, std::size_t j2) {
    auto key = std::make_pair(j1, j2);
    auto it = psi_bb_.find(key);
    if (it != psi_bb_.end()) return it->second;
    const std::size_t jf = cat_.full2_pos();
    const VectorXd& coef = fit_.regime.beta_bar.at(j1).at(j2);
    VectorXd resid = fit_.stage2.y2c.at(j1).at(j2) - w_ * coef;
    VectorXd e = treat2(j1, j2) - treat2(j1, jf);
    MatrixXd q = (w_.array().colwise() * resid.array()).matrix() +
                 psi_alpha_bar() * detail::cross_mean(w_, e, xbar2_).transpose();
    return psi_bb_[key] = q * w_inverse();
  }

  const MatrixXd& w_inverse() {
    if (!w_inv_) w_inv_ = detail::spd_inverse(detail::gram(w_), "E(X_l2f X_l2f')");
    return *w_inv_;
  }

  /// Contribution of the stage-2 choice events: sum_j2 psi^beta_bar_{j1 j2} E[w I(B_{j1 j2}) a W']'.
  MatrixXd choice_terms(std::size_t j1, const MatrixXd& a, const VectorXd& w) {
    MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(n_), a.cols());
    for (std::size_t j2 = 0; j2 < cat_.cand2.size(); ++j2) {
      VectorXd b(static_cast<Eigen::Index>(n_));
      for (std::size_t i = 0; i < n_; ++i) b(static_cast<Eigen::Index>(i)) = choice_[j1][i] == j2 ? 1.0 : 0.0;
      VectorXd wb = (w.array() * b.array()).matrix();
      if (wb.isZero()) continue;
      out += psi_beta_bar(j1, j2) * detail::cross_mean(a, wb, w_).transpose();
    }
    return out;
  }

  const MatrixXd& psi_gamma_bar(std::size_t j1) {
    auto it = psi_gb_.find(j1);
    if (it != psi_gb_.end()) return it->second;
    const auto c = static_cast<Eigen::Index>(j1);
    const VectorXd& coef = fit_.regime.gamma_bar.at(j1);
    VectorXd e = fit_.stage1.y1t.col(c) - fit_.stage1.f1.col(c) - (rg1_.array() * (x1_ * coef).array()).matrix();
    MatrixXd q = x1_.array().colwise() * (rg1_.array() * e.array());
    VectorXd et = treat2(j1, cat_.full2_pos()) - d_.a2;
    q += psi_alpha_bar() * detail::cross_mean(x1_, (rg1_.array() * et.array()).matrix(), xbar2_).transpose();
    q += choice_terms(j1, x1_, rg1_);
    return psi_gb_[j1] = q * detail::spd_inverse(v_gamma(), "V^gamma = E{(A1 - g1)^2 S1 S1'}");
  }

  MatrixXd psi_gamma(std::size_t j1) {
    MatrixXd z = design::jbar1(d_, cat_, j1, ic_);
    const VectorXd& coef = fit_.regime.gamma.at(j1);
    VectorXd resid = x1_ * fit_.regime.gamma_bar.at(j1) - z * coef;
    MatrixXd q = (z.array().colwise() * resid.array()).matrix() + psi_gamma_bar(j1) * detail::cross_mean(z, ones(), x1_).transpose();
    return q * detail::spd_inverse(detail::gram(z), "E(S_j1bar S_j1bar')");
  }

  /// Composition terms of Q^delta contributed by candidate j.
  MatrixXd delta_chain(std::size_t j, const MatrixXd& l) {
    VectorXd et = treat2(j, cat_.full2_pos()) - d_.a2;
    MatrixXd out = psi_alpha_bar() * detail::cross_mean(l, et, xbar2_).transpose();
    out += choice_terms(j, l, ones());
    VectorXd it = indicator(design::jbar1(d_, cat_, j, ic_) * fit_.regime.gamma.at(j), 0.0) - d_.a1;
    out += psi_gamma_bar(j) * detail::cross_mean(l, it, x1_).transpose();
    return out;
  }

  static double boundary_share(const VectorXd& s) {
    return s.size() ? static_cast<double>((s.array().abs() < 1e-6).count()) / static_cast<double>(s.size()) : 0.0;
  }

  bool alpha_boundary() {
    if (!alpha_flag_) {
      bool f = false;
      for (std::size_t j1 = 0; j1 < cat_.cand1.size() && !f; ++j1)
        for (std::size_t j2 = 0; j2 < cat_.cand2.size() && !f; ++j2)
          f = boundary_share(stage2_score(d_, cat_, fit_.regime.alpha, j1, j2, ic_)) > 0.01;
      alpha_flag_ = f;
    }
    return *alpha_flag_;
  }

  bool gamma_boundary() {
    if (!gamma_flag_) {
      bool f = false;
      for (std::size_t j1 = 0; j1 < cat_.cand1.size() && !f; ++j1)
        f = boundary_share(design::jbar1(d_, cat_, j1, ic_) * fit_.regime.gamma[j1]) > 0.01;
      gamma_flag_ = f;
    }
    return *gamma_flag_;
  }

  const BqlFit& fit_;
  DataMatrices d_;
  AssessmentCatalog cat_;
  bool ic_ = true;
  CostSpec ec_;
  std::size_t n_ = 0;
  MatrixXd xbar2_, w_, x1_;
  VectorXd rg2_, rg1_;
  std::vector<std::vector<std::size_t>> choice_;
  std::optional<MatrixXd> psi_ab_, w_inv_;
  std::map<std::pair<std::size_t, std::size_t>, MatrixXd> psi_bb_;
  std::map<std::size_t, MatrixXd> psi_gb_;
  std::optional<bool> alpha_flag_, gamma_flag_;
};

/// Report for one family; index arguments are ignored where the family has none.
inline CovarianceReport plugin_covariance(const std::string& family, const BqlFit& fit, const Dataset& data,
                                          std::size_t j1 = 0, int a1 = 0, std::size_t j2 = 0) {
  PluginInference p(fit, data);
  if (family == "alpha_bar") return p.alpha_bar();
  if (family == "alpha") return p.alpha(j1, a1, j2);
  if (family == "beta_bar") return p.beta_bar(j1, j2);
  if (family == "beta") return p.beta(j1, a1, j2);
  if (family == "gamma_bar") return p.gamma_bar(j1);
  if (family == "gamma") return p.gamma(j1);
  if (family == "delta") return p.delta(j1);
  throw ConfigError("unknown coefficient family '" + family + "'");
}

}  // namespace bql
