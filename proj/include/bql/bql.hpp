#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "bql/core.hpp"
#include "bql/nuisance.hpp"
#include "bql/regime.hpp"
#include "bql/regress.hpp"
#include "bql/rng.hpp"

namespace bql {

struct BqlConfig {
  std::size_t folds = 2;
  std::size_t inner_folds = 0;  // 0: same as folds
  LearnerSpec outcome2, propensity2, outcome1, propensity1;
  bool intercept = true;
  std::uint64_t seed = 1;
  std::pair<double, double> propensity_clip{0.01, 0.99};

  std::size_t inner() const { return inner_folds ? inner_folds : folds; }

  void validate() const {
    if (folds < 2 || inner() < 2) throw ConfigError("cross-fitting needs at least 2 folds");
    for (const auto* s : {&outcome2, &propensity2, &outcome1, &propensity1}) s->validate();
    if (!(propensity_clip.first > 0 && propensity_clip.first < propensity_clip.second && propensity_clip.second < 1))
      throw ConfigError("propensity clip must satisfy 0 < lo < hi < 1");
  }

  static BqlConfig with_learner(const LearnerSpec& s) {
    BqlConfig c;
    c.outcome2 = c.propensity2 = c.outcome1 = c.propensity1 = s;
    return c;
  }
};

/// Coefficient vectors indexed by (j1, a1, j2) catalog positions.
struct CoefGrid {
  std::size_t n1 = 0, n2 = 0;
  std::vector<VectorXd> v;

  CoefGrid() = default;
  CoefGrid(std::size_t a, std::size_t b) : n1(a), n2(b), v(a * 2 * b) {}

  VectorXd& at(std::size_t j1, int a1, std::size_t j2) { return v[index(j1, a1, j2)]; }
  const VectorXd& at(std::size_t j1, int a1, std::size_t j2) const { return v[index(j1, a1, j2)]; }

 private:
  std::size_t index(std::size_t j1, int a1, std::size_t j2) const {
    if (j1 >= n1 || j2 >= n2 || (a1 != 0 && a1 != 1)) throw DimensionError("coefficient index out of range");
    return (j1 * 2 + static_cast<std::size_t>(a1)) * n2 + j2;
  }
};

using CoefTable = std::vector<std::vector<VectorXd>>;  // [j1][j2]

/// Design matrices. Column order follows the vectors named in the rules; a column of ones is appended last.
namespace design {

inline MatrixXd constant(Eigen::Index n, double v) { return VectorXd::Constant(n, v); }

inline MatrixXd xbar2(const DataMatrices& d, bool icpt) { return design_matrix({d.s1, d.s2, d.a1}, icpt); }
inline MatrixXd xbar2_at(const DataMatrices& d, int a1, bool icpt) {
  return design_matrix({d.s1, d.s2, constant(d.n(), a1)}, icpt);
}
inline MatrixXd jbar2(const DataMatrices& d, const AssessmentCatalog& c, std::size_t j1, std::size_t j2, bool icpt) {
  return design_matrix({select_columns(d.s1, c.l1), select_columns(d.s1, c.cand1[j1]), select_columns(d.s2, c.l2),
                        select_columns(d.s2, c.cand2[j2])},
                       icpt);
}
inline MatrixXd lbar2f(const DataMatrices& d, const AssessmentCatalog& c, bool icpt) {
  return design_matrix({d.s1, select_columns(d.s2, c.l2), d.a1}, icpt);
}
inline MatrixXd lbar2f_at(const DataMatrices& d, const AssessmentCatalog& c, int a1, bool icpt) {
  return design_matrix({d.s1, select_columns(d.s2, c.l2), constant(d.n(), a1)}, icpt);
}
inline MatrixXd lbar2(const DataMatrices& d, const AssessmentCatalog& c, std::size_t j1, bool icpt) {
  return design_matrix({select_columns(d.s1, c.l1), select_columns(d.s1, c.cand1[j1]), select_columns(d.s2, c.l2)}, icpt);
}
inline MatrixXd s1(const DataMatrices& d, bool icpt) { return design_matrix({d.s1}, icpt); }
inline MatrixXd jbar1(const DataMatrices& d, const AssessmentCatalog& c, std::size_t j1, bool icpt) {
  return design_matrix({select_columns(d.s1, c.l1), select_columns(d.s1, c.cand1[j1])}, icpt);
}
inline MatrixXd l1(const DataMatrices& d, const AssessmentCatalog& c, bool icpt) {
  return design_matrix({select_columns(d.s1, c.l1)}, icpt);
}
inline MatrixXd nuisance2(const DataMatrices& d) { return design_matrix({d.s1, d.s2, d.a1}, false); }

/// Penalty mask of the (S1, S2, A1[, 1]) and (S1[, 1]) contrast designs.
inline std::vector<char> xbar2_mask(const DataMatrices& d, bool icpt) {
  std::vector<char> m(static_cast<std::size_t>(d.s1.cols() + d.s2.cols()), 1);
  m.push_back(0);
  if (icpt) m.push_back(0);
  return m;
}
inline std::vector<char> s1_mask(const DataMatrices& d, bool icpt) {
  std::vector<char> m(static_cast<std::size_t>(d.s1.cols()), 1);
  if (icpt) m.push_back(0);
  return m;
}

}  // namespace design

inline VectorXd indicator(const VectorXd& score, double thr) { return (score.array() > thr).cast<double>().matrix(); }

/// Solver for argmin_a sum [rf - rg (x'a + offset)]^2, possibly penalized on masked columns.
using ContrastSolver = std::function<VectorXd(const VectorXd& rf, const VectorXd& rg, const MatrixXd& x, double offset,
                                              const std::vector<char>& penalized, std::uint64_t seed)>;

inline VectorXd rlearner_ols(const VectorXd& rf, const VectorXd& rg, const MatrixXd& x, double offset,
                             const std::vector<char>&, std::uint64_t) {
  return residual_on_residual(rf, rg, x, offset).coefficients;
}

struct EngineOptions {
  ContrastSolver solver = rlearner_ols;
  double threshold1 = 0.0, threshold2 = 0.0;
};

/// Cross-fitted nuisance predictions that do not depend on costs.
struct NuisanceFits {
  FoldPlan plan;
  CrossFitPredictor f2, g2, g1;
  struct Inner {
    std::vector<Eigen::Index> rows;
    FoldPlan plan;
    VectorXd f2, g2;
  };
  std::vector<Inner> inner;
};

namespace detail {

inline void require_arms(const VectorXd& a1, const VectorXd& a2, const std::string& where) {
  const double s1 = a1.sum(), s2 = a2.sum();
  const double n = static_cast<double>(a1.size());
  if (s1 == 0 || s1 == n || s2 == 0 || s2 == n)
    throw ConfigError(where + " lacks one treatment arm; positivity fails on this split");
}

inline constexpr std::size_t kMinTrainRows = 10;

inline std::size_t min_rows(std::size_t K, std::size_t Ki) {
  const double need = static_cast<double>(kMinTrainRows) * static_cast<double>(K * Ki) /
                      static_cast<double>((K - 1) * (Ki - 1));
  return static_cast<std::size_t>(std::ceil(need)) + K * Ki;
}

}  // namespace detail

inline NuisanceFits fit_nuisance(const DataMatrices& d, const BqlConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(d.n());
  const std::size_t K = cfg.folds, Ki = cfg.inner();
  NuisanceFits nf;
  nf.plan = make_folds(n, K, derive_seed(cfg.seed, "outer"));
  for (int k = 0; k < static_cast<int>(K); ++k) {
    auto tr = nf.plan.out_of_fold(k);
    if (tr.size() / Ki * (Ki - 1) < detail::kMinTrainRows)
      throw ConfigError("sample too small for nested cross-fitting: need n >= " + std::to_string(detail::min_rows(K, Ki)));
    detail::require_arms(d.a1(tr), d.a2(tr), "training rows outside fold " + std::to_string(k));
  }
  const auto clip2 = std::make_optional(cfg.propensity_clip);
  MatrixXd x2 = design::nuisance2(d);
  nf.f2 = fit_crossfit(x2, d.y, nf.plan, cfg.outcome2, std::nullopt, derive_seed(cfg.seed, "f2"));
  nf.g2 = fit_crossfit(x2, d.a2, nf.plan, cfg.propensity2, clip2, derive_seed(cfg.seed, "g2"));
  nf.g1 = fit_crossfit(d.s1, d.a1, nf.plan, cfg.propensity1, clip2, derive_seed(cfg.seed, "g1"));
  for (int k = 0; k < static_cast<int>(K); ++k) {
    NuisanceFits::Inner in;
    in.rows = nf.plan.out_of_fold(k);
    in.plan = make_folds(in.rows.size(), Ki, derive_seed(cfg.seed, "inner", static_cast<std::uint64_t>(k)));
    MatrixXd xs = x2(in.rows, Eigen::all);
    VectorXd a1 = d.a1(in.rows), a2 = d.a2(in.rows);
    for (int m = 0; m < static_cast<int>(Ki); ++m) {
      auto itr = in.plan.out_of_fold(m);
      detail::require_arms(a1(itr), a2(itr), "inner training rows of fold " + std::to_string(k));
    }
    in.f2 = fit_crossfit(xs, d.y(in.rows), in.plan, cfg.outcome2, std::nullopt,
                         derive_seed(cfg.seed, "inner-f2", static_cast<std::uint64_t>(k))).oof;
    in.g2 = fit_crossfit(xs, a2, in.plan, cfg.propensity2, clip2,
                         derive_seed(cfg.seed, "inner-g2", static_cast<std::uint64_t>(k))).oof;
    nf.inner.push_back(std::move(in));
  }
  return nf;
}

struct Stage2Fit {
  VectorXd alpha_bar;
  CoefGrid alpha;
  CoefTable beta_bar;
  CoefGrid beta;
  CoefTable y2c;  // assessment pseudo-outcomes, [j1][j2]
};

struct Stage1Fit {
  std::vector<VectorXd> gamma_bar, gamma, delta;
  MatrixXd y1t;  // treatment pseudo-outcomes, column per j1
  MatrixXd f1;   // cross-fitted centering predictions, column per j1
};

/// Stage-2 treatment scores S_{j2bar}' alpha_{j1, A1_i, j2} per row.
inline VectorXd stage2_score(const DataMatrices& d, const AssessmentCatalog& cat, const CoefGrid& alpha, std::size_t j1,
                             std::size_t j2, bool icpt) {
  MatrixXd z = design::jbar2(d, cat, j1, j2, icpt);
  VectorXd s0 = z * alpha.at(j1, 0, j2), s1 = z * alpha.at(j1, 1, j2);
  return (d.a1.array() > 0.5).select(s1, s0);
}

inline void fit_stage2_treatment(const DataMatrices& d, const VectorXd& f2, const VectorXd& g2,
                                 const AssessmentCatalog& cat, const CostSpec& ec, const BqlConfig& cfg,
                                 const EngineOptions& opt, std::uint64_t seed, Stage2Fit& out) {
  const bool ic = cfg.intercept;
  MatrixXd x = design::xbar2(d, ic);
  out.alpha_bar = opt.solver(d.y - f2, d.a2 - g2, x, ec.c2t[1] - ec.c2t[0], design::xbar2_mask(d, ic), seed);
  out.alpha = CoefGrid(cat.cand1.size(), cat.cand2.size());
  std::array<VectorXd, 2> v{design::xbar2_at(d, 0, ic) * out.alpha_bar, design::xbar2_at(d, 1, ic) * out.alpha_bar};
  for (std::size_t j1 = 0; j1 < cat.cand1.size(); ++j1)
    for (std::size_t j2 = 0; j2 < cat.cand2.size(); ++j2) {
      MatrixXd z = design::jbar2(d, cat, j1, j2, ic);
      for (int a = 0; a < 2; ++a) out.alpha.at(j1, a, j2) = nested_projection(v[static_cast<std::size_t>(a)], z).coefficients;
    }
}

inline void fit_stage2_assessment(const DataMatrices& d, const AssessmentCatalog& cat, const CostSpec& ec,
                                  const BqlConfig& cfg, const EngineOptions& opt, Stage2Fit& s2) {
  const bool ic = cfg.intercept;
  const std::size_t jf = cat.full2_pos();
  VectorXd c = design::xbar2(d, ic) * s2.alpha_bar;
  MatrixXd w = design::lbar2f(d, cat, ic);
  std::array<MatrixXd, 2> wa{design::lbar2f_at(d, cat, 0, ic), design::lbar2f_at(d, cat, 1, ic)};
  s2.beta_bar.assign(cat.cand1.size(), std::vector<VectorXd>(cat.cand2.size()));
  s2.y2c.assign(cat.cand1.size(), std::vector<VectorXd>(cat.cand2.size()));
  s2.beta = CoefGrid(cat.cand1.size(), cat.cand2.size());
  for (std::size_t j1 = 0; j1 < cat.cand1.size(); ++j1) {
    VectorXd ind_f = indicator(stage2_score(d, cat, s2.alpha, j1, jf, ic), opt.threshold2);
    MatrixXd u = design::lbar2(d, cat, j1, ic);
    for (std::size_t j2 = 0; j2 < cat.cand2.size(); ++j2) {
      VectorXd ind = indicator(stage2_score(d, cat, s2.alpha, j1, j2, ic), opt.threshold2);
      VectorXd y2c = (c.array() * (ind - ind_f).array() - ec.c2c[j2] + ec.c2c[jf]).matrix();
      s2.beta_bar[j1][j2] = ols(w, y2c).coefficients;
      for (int a = 0; a < 2; ++a)
        s2.beta.at(j1, a, j2) =
            nested_projection(wa[static_cast<std::size_t>(a)] * s2.beta_bar[j1][j2], u).coefficients;
      s2.y2c[j1][j2] = std::move(y2c);
    }
  }
}

/// Index of the chosen stage-2 candidate per row, argmax_j2 S_{l2bar}' beta_{j1 A1 j2}.
inline std::vector<std::size_t> stage2_choice(const DataMatrices& d, const AssessmentCatalog& cat, const Stage2Fit& s2,
                                              std::size_t j1, bool icpt) {
  MatrixXd u = design::lbar2(d, cat, j1, icpt);
  const auto n = static_cast<std::size_t>(d.n());
  std::vector<std::size_t> best(n, 0);
  std::vector<double> top(n, -std::numeric_limits<double>::infinity());
  for (std::size_t j2 = 0; j2 < cat.cand2.size(); ++j2) {
    VectorXd s0 = u * s2.beta.at(j1, 0, j2), s1 = u * s2.beta.at(j1, 1, j2);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = d.a1(static_cast<Eigen::Index>(i)) > 0.5 ? s1(static_cast<Eigen::Index>(i)) : s0(static_cast<Eigen::Index>(i));
      if (s > top[i]) top[i] = s, best[i] = j2;
    }
  }
  return best;
}

/// Stage-1 treatment pseudo-outcomes, one column per j1.
inline MatrixXd stage1_pseudo_outcome(const DataMatrices& d, const AssessmentCatalog& cat, const CostSpec& ec,
                                      const BqlConfig& cfg, const EngineOptions& opt, const Stage2Fit& s2) {
  const bool ic = cfg.intercept;
  const std::size_t jf = cat.full2_pos();
  const auto n = d.n();
  VectorXd c = design::xbar2(d, ic) * s2.alpha_bar;
  MatrixXd w = design::lbar2f(d, cat, ic);
  VectorXd base(n);
  for (Eigen::Index i = 0; i < n; ++i)
    base(i) = d.y(i) - ec.c2t[d.a2(i) > 0.5 ? 1 : 0] - ec.c1t[d.a1(i) > 0.5 ? 1 : 0] - ec.c2c[jf];
  MatrixXd out(n, static_cast<Eigen::Index>(cat.cand1.size()));
  for (std::size_t j1 = 0; j1 < cat.cand1.size(); ++j1) {
    VectorXd ind_f = indicator(stage2_score(d, cat, s2.alpha, j1, jf, ic), opt.threshold2);
    VectorXd col = base + (c.array() * (ind_f - d.a2).array()).matrix();
    auto choice = stage2_choice(d, cat, s2, j1, ic);
    std::vector<VectorXd> gain(cat.cand2.size());
    for (std::size_t j2 = 0; j2 < cat.cand2.size(); ++j2) gain[j2] = w * s2.beta_bar[j1][j2];
    for (Eigen::Index i = 0; i < n; ++i) col(i) += gain[choice[static_cast<std::size_t>(i)]](i);
    out.col(static_cast<Eigen::Index>(j1)) = col;
  }
  return out;
}

inline Stage2Fit fit_stage2(const DataMatrices& d, const VectorXd& f2, const VectorXd& g2, const AssessmentCatalog& cat,
                            const CostSpec& ec, const BqlConfig& cfg, const EngineOptions& opt, std::uint64_t seed) {
  Stage2Fit s2;
  fit_stage2_treatment(d, f2, g2, cat, ec, cfg, opt, seed, s2);
  fit_stage2_assessment(d, cat, ec, cfg, opt, s2);
  return s2;
}

inline Stage1Fit fit_stage1_treatment(const DataMatrices& d, const NuisanceFits& nf, const AssessmentCatalog& cat,
                                      const CostSpec& ec, const BqlConfig& cfg, const EngineOptions& opt,
                                      const Stage2Fit& s2) {
  const bool ic = cfg.intercept;
  const auto J1 = static_cast<Eigen::Index>(cat.cand1.size());
  Stage1Fit s1;
  s1.y1t = stage1_pseudo_outcome(d, cat, ec, cfg, opt, s2);
  s1.f1.resize(d.n(), J1);
  for (int k = 0; k < static_cast<int>(nf.plan.K); ++k) {
    const auto& in = nf.inner[static_cast<std::size_t>(k)];
    DataMatrices sub = d.rows(in.rows);
    Stage2Fit s2k = fit_stage2(sub, in.f2, in.g2, cat, ec, cfg, opt,
                               derive_seed(cfg.seed, "inner-contrast", static_cast<std::uint64_t>(k)));
    MatrixXd y1tk = stage1_pseudo_outcome(sub, cat, ec, cfg, opt, s2k);
    auto te = nf.plan.in_fold(k);
    MatrixXd xte = d.s1(te, Eigen::all);
    for (Eigen::Index j1 = 0; j1 < J1; ++j1) {
      auto seed = derive_seed(cfg.seed, "f1", cat.cand1[static_cast<std::size_t>(j1)].to_string(),
                              static_cast<std::uint64_t>(k));
      auto t = train_learner(cfg.outcome1, sub.s1, y1tk.col(j1), seed);
      s1.f1(te, j1) = t.model->predict(xte);
    }
  }
  VectorXd rg = d.a1 - nf.g1.oof;
  MatrixXd x = design::s1(d, ic);
  for (Eigen::Index j1 = 0; j1 < J1; ++j1) {
    VectorXd gb = opt.solver(s1.y1t.col(j1) - s1.f1.col(j1), rg, x, 0.0, design::s1_mask(d, ic),
                             derive_seed(cfg.seed, "gamma", static_cast<std::uint64_t>(j1)));
    s1.gamma.push_back(nested_projection(x * gb, design::jbar1(d, cat, static_cast<std::size_t>(j1), ic)).coefficients);
    s1.gamma_bar.push_back(std::move(gb));
  }
  return s1;
}

/// Stage-1 assessment pseudo-outcomes, one column per j1.
inline MatrixXd stage1_assessment_outcome(const DataMatrices& d, const AssessmentCatalog& cat, const CostSpec& ec,
                                          const BqlConfig& cfg, const EngineOptions& opt, const Stage1Fit& s1) {
  const bool ic = cfg.intercept;
  MatrixXd x = design::s1(d, ic);
  MatrixXd out(d.n(), static_cast<Eigen::Index>(cat.cand1.size()));
  for (std::size_t j1 = 0; j1 < cat.cand1.size(); ++j1) {
    VectorXd ind = indicator(design::jbar1(d, cat, j1, ic) * s1.gamma[j1], opt.threshold1);
    out.col(static_cast<Eigen::Index>(j1)) =
        s1.y1t.col(static_cast<Eigen::Index>(j1)) + ((x * s1.gamma_bar[j1]).array() * (ind - d.a1).array()).matrix() -
        VectorXd::Constant(d.n(), ec.c1c[j1]);
  }
  return out;
}

inline void fit_stage1_assessment(const DataMatrices& d, const AssessmentCatalog& cat, const CostSpec& ec,
                                  const BqlConfig& cfg, const EngineOptions& opt, Stage1Fit& s1) {
  MatrixXd y1c = stage1_assessment_outcome(d, cat, ec, cfg, opt, s1);
  const auto jf = static_cast<Eigen::Index>(cat.full1_pos());
  MatrixXd l = design::l1(d, cat, cfg.intercept);
  s1.delta.clear();
  for (Eigen::Index j1 = 0; j1 < y1c.cols(); ++j1) {
    VectorXd r = y1c.col(j1) - y1c.col(jf);
    s1.delta.push_back(ols(l, r).coefficients);
  }
}

/// Largest Euclidean norms of the deployment designs seen in training.
struct DesignNorms {
  double l1 = 0.0;
  std::vector<double> jbar1, lbar2;
  std::vector<std::vector<double>> jbar2;
};

inline double max_row_norm(const MatrixXd& m) { return m.rows() ? m.rowwise().norm().maxCoeff() : 0.0; }

class FittedRegime : public Regime {
 public:
  AssessmentCatalog cat;
  CostSpec costs;
  bool intercept = true;
  BqlConfig config;
  VectorXd alpha_bar;
  CoefGrid alpha;
  CoefTable beta_bar;
  CoefGrid beta;
  std::vector<VectorXd> gamma_bar, gamma, delta;
  DesignNorms norms;

  std::string kind() const override { return "bql"; }
  const AssessmentCatalog& catalog() const override { return cat; }

  /// Scores S_{l1}' delta_{j1} for every j1; input is S_{l1}.
  std::vector<double> assessment_scores1(std::span<const double> s_l1) const {
    check_len(s_l1.size(), cat.l1.size(), "stage-1 assessment");
    auto x = with_icpt(s_l1);
    std::vector<double> s;
    for (const auto& d : delta) s.push_back(dot(x, d));
    return s;
  }
  /// Input is S_{j1bar} = (S_{l1}, S_{j1}).
  double treatment_score1(std::span<const double> s_jbar1, std::size_t j1) const {
    check_len(s_jbar1.size(), cat.l1.size() + cat.cand1.at(j1).size(), "stage-1 treatment");
    return dot(with_icpt(s_jbar1), gamma[j1]);
  }
  /// Input is S_{l2bar} = (S_{l1}, S_{j1}, S_{l2}).
  std::vector<double> assessment_scores2(std::span<const double> s_lbar2, std::size_t j1, int a1) const {
    check_len(s_lbar2.size(), cat.l1.size() + cat.cand1.at(j1).size() + cat.l2.size(), "stage-2 assessment");
    auto x = with_icpt(s_lbar2);
    std::vector<double> s;
    for (std::size_t j2 = 0; j2 < cat.cand2.size(); ++j2) s.push_back(dot(x, beta.at(j1, a1, j2)));
    return s;
  }
  /// Input is S_{j2bar} = (S_{l1}, S_{j1}, S_{l2}, S_{j2}).
  double treatment_score2(std::span<const double> s_jbar2, std::size_t j1, int a1, std::size_t j2) const {
    check_len(s_jbar2.size(), cat.l1.size() + cat.cand1.at(j1).size() + cat.l2.size() + cat.cand2.at(j2).size(),
              "stage-2 treatment");
    return dot(with_icpt(s_jbar2), alpha.at(j1, a1, j2));
  }

  AssessmentChoice assess1(const History& h) const override {
    auto s = assessment_scores1(h.gather1(cat.l1));
    return {argmax_first(s), s};
  }
  TreatmentChoice treat1(const History& h, std::size_t j1) const override {
    const double s = treatment_score1(jbar1(h, j1), j1);
    return {s > 0 ? 1 : 0, s};
  }
  AssessmentChoice assess2(const History& h, std::size_t j1, int a1) const override {
    auto s = assessment_scores2(lbar2(h, j1), j1, a1);
    return {argmax_first(s), s};
  }
  TreatmentChoice treat2(const History& h, std::size_t j1, int a1, std::size_t j2) const override {
    const double s = treatment_score2(jbar2(h, j1, j2), j1, a1, j2);
    return {s > 0 ? 1 : 0, s};
  }
  bool extrapolates(const History& h, std::size_t j1, int, std::size_t j2) const override {
    if (norms.jbar1.empty()) return false;
    auto nrm = [&](const std::vector<double>& v) { return norm(with_icpt(v)); };
    return nrm(h.gather1(cat.l1)) > norms.l1 || nrm(jbar1(h, j1)) > norms.jbar1[j1] ||
           nrm(lbar2(h, j1)) > norms.lbar2[j1] || nrm(jbar2(h, j1, j2)) > norms.jbar2[j1][j2];
  }

  std::vector<double> jbar1(const History& h, std::size_t j1) const {
    auto v = h.gather1(cat.l1);
    auto w = h.gather1(cat.cand1.at(j1));
    v.insert(v.end(), w.begin(), w.end());
    return v;
  }
  std::vector<double> lbar2(const History& h, std::size_t j1) const {
    auto v = jbar1(h, j1);
    auto w = h.gather2(cat.l2);
    v.insert(v.end(), w.begin(), w.end());
    return v;
  }
  std::vector<double> jbar2(const History& h, std::size_t j1, std::size_t j2) const {
    auto v = lbar2(h, j1);
    auto w = h.gather2(cat.cand2.at(j2));
    v.insert(v.end(), w.begin(), w.end());
    return v;
  }

 private:
  std::vector<double> with_icpt(std::span<const double> x) const {
    std::vector<double> v(x.begin(), x.end());
    if (intercept) v.push_back(1.0);
    return v;
  }
  static double dot(const std::vector<double>& x, const VectorXd& c) {
    if (static_cast<Eigen::Index>(x.size()) != c.size())
      throw DimensionError("design has length " + std::to_string(x.size()) + ", coefficients " + std::to_string(c.size()));
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * c(static_cast<Eigen::Index>(k));
    return s;
  }
  static double norm(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
  }
  static void check_len(std::size_t got, std::size_t want, const char* rule) {
    if (got != want)
      throw DimensionError(std::string(rule) + " rule expects a design of length " + std::to_string(want) +
                           " (before intercept), got " + std::to_string(got));
  }
};

struct BqlFit {
  FittedRegime regime;
  Stage2Fit stage2;
  Stage1Fit stage1;
  std::shared_ptr<const NuisanceFits> nuisance;
};

inline DesignNorms design_norms(const DataMatrices& d, const AssessmentCatalog& cat, bool ic) {
  DesignNorms n;
  n.l1 = max_row_norm(design::l1(d, cat, ic));
  for (std::size_t j1 = 0; j1 < cat.cand1.size(); ++j1) {
    n.jbar1.push_back(max_row_norm(design::jbar1(d, cat, j1, ic)));
    n.lbar2.push_back(max_row_norm(design::lbar2(d, cat, j1, ic)));
    n.jbar2.emplace_back();
    for (std::size_t j2 = 0; j2 < cat.cand2.size(); ++j2)
      n.jbar2.back().push_back(max_row_norm(design::jbar2(d, cat, j1, j2, ic)));
  }
  return n;
}

inline void check_problem(const DataMatrices& d, const AssessmentCatalog& cat, const CostSpec& costs) {
  cat.validate();
  costs.validate(cat);
  if (cat.d1 != static_cast<std::size_t>(d.s1.cols()) || cat.d2 != static_cast<std::size_t>(d.s2.cols()))
    throw ConfigError("catalog dimensions (" + std::to_string(cat.d1) + ", " + std::to_string(cat.d2) +
                      ") do not match the data (" + std::to_string(d.s1.cols()) + ", " + std::to_string(d.s2.cols()) + ")");
}

/// Runs the estimation given precomputed nuisance fits, so fits at several cost settings can share them.
inline BqlFit fit_bql_with(const DataMatrices& d, std::shared_ptr<const NuisanceFits> nf, const AssessmentCatalog& cat,
                           const CostSpec& costs, const BqlConfig& cfg, const EngineOptions& opt = {}) {
  check_problem(d, cat, costs);
  const CostSpec ec = costs.scaled();
  BqlFit f;
  f.nuisance = nf;
  auto stage = [](const char* label, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(label) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError(std::string(label) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(std::string(label) + ": " + e.what());
    }
  };
  stage("stage-2 treatment", [&] {
    fit_stage2_treatment(d, nf->f2.oof, nf->g2.oof, cat, ec, cfg, opt, derive_seed(cfg.seed, "contrast"), f.stage2);
  });
  stage("stage-2 assessment", [&] { fit_stage2_assessment(d, cat, ec, cfg, opt, f.stage2); });
  stage("stage-1 treatment", [&] { f.stage1 = fit_stage1_treatment(d, *nf, cat, ec, cfg, opt, f.stage2); });
  stage("stage-1 assessment", [&] { fit_stage1_assessment(d, cat, ec, cfg, opt, f.stage1); });

  auto& r = f.regime;
  r.cat = cat;
  r.costs = costs;
  r.intercept = cfg.intercept;
  r.config = cfg;
  r.alpha_bar = f.stage2.alpha_bar;
  r.alpha = f.stage2.alpha;
  r.beta_bar = f.stage2.beta_bar;
  r.beta = f.stage2.beta;
  r.gamma_bar = f.stage1.gamma_bar;
  r.gamma = f.stage1.gamma;
  r.delta = f.stage1.delta;
  r.norms = design_norms(d, cat, cfg.intercept);
  return f;
}

inline BqlFit fit_bql_detailed(const Dataset& data, const AssessmentCatalog& cat, const CostSpec& costs,
                               const BqlConfig& cfg) {
  require_valid(data);
  DataMatrices d = DataMatrices::from(data);
  check_problem(d, cat, costs);
  auto nf = std::make_shared<const NuisanceFits>(fit_nuisance(d, cfg));
  return fit_bql_with(d, nf, cat, costs, cfg);
}

inline FittedRegime fit_bql(const Dataset& data, const AssessmentCatalog& cat, const CostSpec& costs,
                            const BqlConfig& cfg) {
  return fit_bql_detailed(data, cat, costs, cfg).regime;
}

/// One fit per cost setting, sharing the cost-free nuisance fits.
inline std::vector<FittedRegime> fit_bql_path(const Dataset& data, const AssessmentCatalog& cat,
                                              const std::vector<CostSpec>& costs, const BqlConfig& cfg) {
  require_valid(data);
  DataMatrices d = DataMatrices::from(data);
  auto nf = std::make_shared<const NuisanceFits>(fit_nuisance(d, cfg));
  std::vector<FittedRegime> out;
  for (const auto& c : costs) out.push_back(fit_bql_with(d, nf, cat, c, cfg).regime);
  return out;
}

}  // namespace bql
