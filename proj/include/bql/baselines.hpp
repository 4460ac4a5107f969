#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bql/bql.hpp"
#include "bql/lasso.hpp"
#include "bql/regime.hpp"

namespace bql {

/// Dense or sparse Q-learning comparator: one contrast per stage over the full designs,
/// treatment rules thresholded at the scaled treatment-cost differences, and a fixed
/// assessment choice.
class BaselineRegime : public Regime {
 public:
  std::string method = "dense";  // dense | sparse
  AssessmentCatalog cat;
  CostSpec costs;
  bool intercept = true;
  BqlConfig config;
  VectorXd alpha_bar;  // over (S1, S2, A1[, 1])
  VectorXd gamma_bar;  // over (S1[, 1])
  double threshold1 = 0.0, threshold2 = 0.0;
  std::size_t j1 = 0, j2 = 0;
  std::optional<double> penalty;    // requested; nullopt selects by cross-validation
  double penalty2 = 0.0, penalty1 = 0.0;  // used for the stage-2 and stage-1 contrasts
  FeatureIndexSet support1, support2;     // nonzero S1 and S2 coordinates over both contrasts
  std::vector<std::string> warnings;

  std::string kind() const override { return method; }
  const AssessmentCatalog& catalog() const override { return cat; }

  AssessmentChoice assess1(const History&) const override { return {j1, {}}; }
  TreatmentChoice treat1(const History& h, std::size_t) const override {
    const double s = score1(h);
    return {s > threshold1 ? 1 : 0, s};
  }
  AssessmentChoice assess2(const History&, std::size_t, int) const override { return {j2, {}}; }
  TreatmentChoice treat2(const History& h, std::size_t, int a1, std::size_t) const override {
    const double s = score2(h, a1);
    return {s > threshold2 ? 1 : 0, s};
  }

  /// S1' gamma using only covariates with nonzero coefficients.
  double score1(const History& h) const {
    const auto d1 = static_cast<Eigen::Index>(cat.d1);
    check_len(gamma_bar.size(), d1 + (intercept ? 1 : 0), "stage-1");
    double s = intercept ? gamma_bar(d1) : 0.0;
    for (Eigen::Index k = 0; k < d1; ++k)
      if (gamma_bar(k) != 0) s += gamma_bar(k) * value1(h, k);
    return s;
  }
  /// (S1, S2, a1)' alpha using only covariates with nonzero coefficients.
  double score2(const History& h, int a1) const {
    const auto d1 = static_cast<Eigen::Index>(cat.d1), d2 = static_cast<Eigen::Index>(cat.d2);
    check_len(alpha_bar.size(), d1 + d2 + 1 + (intercept ? 1 : 0), "stage-2");
    double s = alpha_bar(d1 + d2) * a1 + (intercept ? alpha_bar(d1 + d2 + 1) : 0.0);
    for (Eigen::Index k = 0; k < d1; ++k)
      if (alpha_bar(k) != 0) s += alpha_bar(k) * value1(h, k);
    for (Eigen::Index k = 0; k < d2; ++k)
      if (alpha_bar(d1 + k) != 0) s += alpha_bar(d1 + k) * h.gather2(FeatureIndexSet({static_cast<std::size_t>(k) + 1}))[0];
    return s;
  }

 private:
  static double value1(const History& h, Eigen::Index k) {
    return h.gather1(FeatureIndexSet({static_cast<std::size_t>(k) + 1}))[0];
  }
  static void check_len(Eigen::Index got, Eigen::Index want, const char* stage) {
    if (got != want)
      throw DimensionError(std::string(stage) + " baseline contrast has " + std::to_string(got) +
                           " coefficients, expected " + std::to_string(want));
  }
};

/// Catalog with only the full candidate at each stage.
inline AssessmentCatalog full_only(const AssessmentCatalog& c) {
  AssessmentCatalog r = c;
  r.cand1 = {c.full1()};
  r.cand2 = {c.full2()};
  return r;
}

/// Cheapest candidate containing `need`, lowest position on ties; nullopt when none covers it.
inline std::optional<std::size_t> cheapest_cover(const std::vector<FeatureIndexSet>& cand, const std::vector<double>& cost,
                                                 const FeatureIndexSet& need) {
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < cand.size(); ++k)
    if (need.subset_of(cand[k]) && (!best || cost[k] < cost[*best])) best = k;
  return best;
}

/// Lasso R-learner contrast solver. Chosen penalties are recorded by seed.
inline ContrastSolver lasso_contrast(std::optional<double> penalty, std::shared_ptr<std::map<std::uint64_t, double>> log) {
  return [penalty, log](const VectorXd& rf, const VectorXd& rg, const MatrixXd& x, double offset,
                        const std::vector<char>& penalized, std::uint64_t seed) -> VectorXd {
    MatrixXd z = x.array().colwise() * rg.array();
    VectorXd r = rf - rg * offset;
    LassoFit f;
    if (penalty) f = lasso(z, r, *penalty, penalized);
    else f = lasso_cv(z, r, penalized, derive_seed(seed, "lasso-cv")).fit;
    if (log) (*log)[seed] = f.penalty;
    return f.coefficients;
  };
}

/// Shared implementation of both baselines on precomputed nuisance fits.
inline BaselineRegime fit_baseline_with(const DataMatrices& d, std::shared_ptr<const NuisanceFits> nf,
                                        const AssessmentCatalog& cat, const CostSpec& costs, const BqlConfig& cfg,
                                        const std::string& method, std::optional<double> penalty = std::nullopt) {
  check_problem(d, cat, costs);
  if (method != "dense" && method != "sparse") throw ConfigError("unknown baseline method '" + method + "'");
  if (penalty && !(*penalty >= 0)) throw ConfigError("sparse penalty must be >= 0");
  const auto rc = full_only(cat);
  EngineOptions opt;
  opt.threshold1 = costs.lambda * (costs.c1t[1] - costs.c1t[0]);
  opt.threshold2 = costs.lambda * (costs.c2t[1] - costs.c2t[0]);
  auto log = std::make_shared<std::map<std::uint64_t, double>>();
  if (method == "sparse") opt.solver = lasso_contrast(penalty, log);
  auto fit = fit_bql_with(d, nf, rc, CostSpec::zero(rc), cfg, opt);

  BaselineRegime r;
  r.method = method;
  r.cat = cat;
  r.costs = costs;
  r.intercept = cfg.intercept;
  r.config = cfg;
  r.alpha_bar = fit.stage2.alpha_bar;
  r.gamma_bar = fit.stage1.gamma_bar.at(0);
  r.threshold1 = opt.threshold1;
  r.threshold2 = opt.threshold2;
  r.penalty = penalty;
  if (method == "sparse") {
    r.penalty2 = log->at(derive_seed(cfg.seed, "contrast"));
    r.penalty1 = log->at(derive_seed(cfg.seed, "gamma", std::uint64_t{0}));
  }
  std::vector<std::size_t> s1, s2;
  for (std::size_t k = 0; k < cat.d1; ++k)
    if (r.alpha_bar(static_cast<Eigen::Index>(k)) != 0 || r.gamma_bar(static_cast<Eigen::Index>(k)) != 0) s1.push_back(k + 1);
  for (std::size_t k = 0; k < cat.d2; ++k)
    if (r.alpha_bar(static_cast<Eigen::Index>(cat.d1 + k)) != 0) s2.push_back(k + 1);
  r.support1 = FeatureIndexSet(s1);
  r.support2 = FeatureIndexSet(s2);
  r.j1 = cat.full1_pos();
  r.j2 = cat.full2_pos();
  if (method == "sparse") {
    auto pick = [&](const std::vector<FeatureIndexSet>& cand, const std::vector<double>& cost,
                    const FeatureIndexSet& need, std::size_t fallback, int stage) {
      if (auto p = cheapest_cover(cand, cost, need)) return *p;
      r.warnings.push_back("no stage-" + std::to_string(stage) + " candidate covers support " + need.to_string() +
                           "; using the full set");
      return fallback;
    };
    r.j1 = pick(cat.cand1, costs.c1c, r.support1.minus(cat.l1), r.j1, 1);
    r.j2 = pick(cat.cand2, costs.c2c, r.support2.minus(cat.l2), r.j2, 2);
  }
  return r;
}

inline BaselineRegime fit_dense(const Dataset& data, const AssessmentCatalog& cat, const CostSpec& costs,
                                const BqlConfig& cfg) {
  require_valid(data);
  DataMatrices d = DataMatrices::from(data);
  check_problem(d, cat, costs);
  auto nf = std::make_shared<const NuisanceFits>(fit_nuisance(d, cfg));
  return fit_baseline_with(d, nf, cat, costs, cfg, "dense");
}

/// Lasso analogue; a missing penalty is chosen by 5-fold cross-validation with the one-SE rule.
inline BaselineRegime fit_sparse(const Dataset& data, const AssessmentCatalog& cat, const CostSpec& costs,
                                 std::optional<double> penalty, const BqlConfig& cfg) {
  require_valid(data);
  DataMatrices d = DataMatrices::from(data);
  check_problem(d, cat, costs);
  auto nf = std::make_shared<const NuisanceFits>(fit_nuisance(d, cfg));
  return fit_baseline_with(d, nf, cat, costs, cfg, "sparse", penalty);
}

}  // namespace bql
