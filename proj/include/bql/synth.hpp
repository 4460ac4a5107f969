#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bql/core.hpp"
#include "bql/deploy.hpp"
#include "bql/rng.hpp"

namespace bql {

inline double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// Two-stage Gaussian law: S1 ~ N(0, I_p), A1 ~ Bern(logistic(S1'alpha1)),
/// S2 = S1 + A1 S1 + N(0, I_p), A2 ~ Bern(logistic(X2'alpha2)),
/// Y = X2'(beta1 + A1 beta2 + A2 beta3) + N(0, noise_sd_y^2), X2 = (S1, A1, S2).
struct GenerativeSpec {
  std::size_t p = 0;
  std::vector<double> alpha1, alpha2, beta1, beta2, beta3;
  double noise_sd_y = 0.5;

  std::size_t dim2() const { return 2 * p + 1; }

  void validate() const {
    if (p == 0) throw ConfigError("covariate dimension must be positive");
    if (alpha1.size() != p) throw ConfigError("alpha1 must have length p");
    for (const auto* v : {&alpha2, &beta1, &beta2, &beta3})
      if (v->size() != dim2()) throw ConfigError("stage-2 coefficient vectors must have length 2p+1");
    if (!(noise_sd_y > 0)) throw ConfigError("outcome noise sd must be positive");
  }
};

/// Exogenous draws of one subject; covariates and outcome follow from the assigned treatments.
struct SimulatedSubject {
  std::vector<double> s1, e2;
  double ey = 0.0, u1 = 0.0, u2 = 0.0;

  static SimulatedSubject draw(std::size_t p, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    SimulatedSubject s;
    s.s1.resize(p);
    s.e2.resize(p);
    for (auto& v : s.s1) v = z(rng);
    for (auto& v : s.e2) v = z(rng);
    s.ey = z(rng);
    s.u1 = u(rng);
    s.u2 = u(rng);
    return s;
  }

  std::vector<double> s2(int a1) const {
    std::vector<double> v(s1.size());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = s1[j] + a1 * s1[j] + e2[j];
    return v;
  }

  std::vector<double> xbar2(int a1) const {
    std::vector<double> x = s1;
    x.push_back(a1);
    auto t = s2(a1);
    x.insert(x.end(), t.begin(), t.end());
    return x;
  }

  double mean_outcome(const GenerativeSpec& g, int a1, int a2) const {
    auto x = xbar2(a1);
    double m = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) m += x[k] * (g.beta1[k] + a1 * g.beta2[k] + a2 * g.beta3[k]);
    return m;
  }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline Dataset generate(const GenerativeSpec& g, std::size_t n, std::uint64_t seed) {
  g.validate();
  if (n < 1) throw ConfigError("sample size must be positive");
  Dataset d{g.p, g.p, {}};
  d.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = SimulatedSubject::draw(g.p, derive_seed(seed, "subject", static_cast<std::uint64_t>(i)));
    Trajectory t;
    t.s1 = s.s1;
    t.a1 = s.u1 < logistic(dot(s.s1, g.alpha1)) ? 1 : 0;
    t.s2 = s.s2(t.a1);
    t.a2 = s.u2 < logistic(dot(s.xbar2(t.a1), g.alpha2)) ? 1 : 0;
    t.y = s.mean_outcome(g, t.a1, t.a2) + g.noise_sd_y * s.ey;
    d.rows.push_back(std::move(t));
  }
  return d;
}

/// Answers covariate requests for a simulated subject, with S2 drawn under the assigned a1.
class SimulatedOracle : public CovariateOracle {
 public:
  explicit SimulatedOracle(const SimulatedSubject& s) : s_(s) {}
  std::vector<double> stage1(const FeatureIndexSet& idx) override { return subvector(s_.s1, idx); }
  void assign_first_treatment(int a1) override {
    a1_ = a1;
    s2_ = s_.s2(a1);
  }
  std::vector<double> stage2(const FeatureIndexSet& idx) override {
    if (a1_ < 0) throw DataError("stage-2 covariates requested before the first treatment was assigned");
    return subvector(s2_, idx);
  }

 private:
  const SimulatedSubject& s_;
  int a1_ = -1;
  std::vector<double> s2_;
};

struct Sweep {
  std::string parameter = "lambda";  // lambda | c1t_1 | c2t_1 | n_train
  std::vector<double> values;
};

struct ModelPreset {
  int id = 0;
  GenerativeSpec spec;
  AssessmentCatalog catalog;
  CostSpec costs;
  Sweep sweep;
  std::size_t n_train = 500;
};

/// Cost table and sample size at one sweep value.
inline CostSpec apply_sweep(CostSpec c, const std::string& param, double v) {
  if (param == "lambda") c.lambda = v;
  else if (param == "c1t_1") c.c1t[1] = v;
  else if (param == "c2t_1") c.c2t[1] = v;
  else if (param != "n_train") throw ConfigError("unknown sweep parameter '" + param + "'");
  return c;
}

inline ModelPreset model_preset(int id) {
  ModelPreset m;
  m.id = id;
  auto zeros = [](std::size_t k) { return std::vector<double>(k, 0.0); };
  auto cat_of = [](std::size_t d, FeatureIndexSet l1, std::vector<FeatureIndexSet> c1, FeatureIndexSet l2,
                   std::vector<FeatureIndexSet> c2) { return AssessmentCatalog{d, d, l1, l2, c1, c2}; };
  switch (id) {
    case 1:
    case 4:
    case 6:
    case 7: {
      auto& g = m.spec;
      g.p = 5;
      g.alpha1 = {1, 1, 0, 0, 0};
      g.alpha2 = {1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0};
      g.beta1 = {1, 1, 0.5, 0, 0, 0, 0, 1, 0.5, 0, 1};
      g.beta2 = {1, 1, 0.5, 0, 0, 0, 0, 0, 0, 0, 0};
      g.beta3 = {0, 0, 0, 0, 0, 0, 0, 1, 0.5, 0, 1};
      m.catalog = cat_of(5, FeatureIndexSet::range(5), {FeatureIndexSet{}}, {1}, {{2, 3, 4}, {2, 3, 4, 5}});
      m.costs.c1c = {0.0};
      m.costs.c2c = {0.0, 0.1};
      m.sweep = {"lambda", {0, 0.5, 1, 2}};
      if (id == 4) {
        m.costs.lambda = 0.0;
        m.sweep = {"n_train", {250, 500, 1000, 2000}};
      } else if (id == 6 || id == 7) {
        m.costs.c2c = {0.0, 0.0};
        m.costs.lambda = 1.0;
        std::vector<double> grid{0, 2.5, 5, 7.5, 10, 12.5, 15};
        if (id == 6) {
          m.costs.c2t = {7.5, 7.5};
          m.sweep = {"c2t_1", grid};
        } else {
          m.costs.c1t = {7.5, 7.5};
          m.sweep = {"c1t_1", grid};
        }
      }
      break;
    }
    case 2: {
      auto& g = m.spec;
      g.p = 5;
      g.alpha1 = {1, 0, 0, 0, 0};
      g.alpha2 = {1, 0, 0.5, 0.5, 0.5, 0.5, 0.5, 0, 0.5, 0.5, 0};
      g.beta1 = {1, 0, 0.5, 0, 0, 0, 1, 0, 1, 1, 0};
      g.beta2 = {1, 0, 0.5, 0, 0, 0, 0, 0, 0, 0, 0};
      g.beta3 = {0, 0, 0, 0, 0, 0, 1, 0, 1, 1, 0};
      m.catalog = cat_of(5, {1}, {{3, 4, 5}, {2, 3, 4, 5}}, {1}, {{2, 3}, {2, 3, 4}, {2, 3, 4, 5}});
      m.costs.c1c = {0.0, 0.2};
      m.costs.c2c = {0.0, 0.1, 0.2};
      m.sweep = {"lambda", {0, 0.25, 0.5, 1}};
      break;
    }
    case 3: {
      auto& g = m.spec;
      g.p = 3;
      g.alpha1 = {0.6, 0.36, 0.216};
      g.alpha2.clear();
      for (int k = 1; k <= 7; ++k) g.alpha2.push_back(k == 5 ? 0.0 : std::pow(0.6, k));
      g.beta1 = {1.5, 1, 0, 0, 0, 1, 2};
      g.beta2 = zeros(7);  // written as a length-11 zero vector; 2p+1 = 7 here
      g.beta3 = {0.5, 0, 0, 0, 0, 1, 2};
      std::vector<FeatureIndexSet> all{{}, {1}, {2}, {3}, {1, 2}, {1, 3}, {2, 3}, {1, 2, 3}};
      m.catalog = cat_of(3, FeatureIndexSet::range(3), {FeatureIndexSet{}}, {}, all);
      m.costs.c1c = {0.0};
      for (const auto& s : all) m.costs.c2c.push_back(0.1 * static_cast<double>(s.size()));
      m.sweep = {"lambda", {0, 0.5, 1, 2, 4, 8}};
      break;
    }
    case 5: {
      auto& g = m.spec;
      g.p = 5;
      for (int k = 1; k <= 5; ++k) g.alpha1.push_back(std::pow(0.5, k));
      for (int k = 1; k <= 11; ++k) g.alpha2.push_back(std::pow(0.5, k));
      g.beta1 = {1.2, 0.4, 0.4, 0.4, 0.4, 0.2, 0.2, 0.2, 0.2, 1.5, 1};
      g.beta2 = {0.5, 0.2, 0.2, 0.2, 0.2, 0, 0, 0, 0, 0, 0};
      g.beta3 = {0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 1.5, 1};
      m.catalog = cat_of(5, FeatureIndexSet::range(5), {FeatureIndexSet{}}, {1}, {{2, 3}, {2, 3, 4}, {2, 3, 4, 5}});
      m.costs.c1c = {0.0};
      m.costs.c2c = {0.0, 0.1, 0.2};
      m.sweep = {"lambda", {0, 0.5, 1, 2}};
      break;
    }
    default:
      throw ConfigError("unknown model preset " + std::to_string(id) + " (expected 1..7)");
  }
  m.spec.validate();
  m.catalog.validate();
  m.costs.validate(m.catalog);
  return m;
}

struct ProfitEstimate {
  MeanSe profit, utility;
  PathCosts mean_costs;
  FrequencyTable frequencies;
  std::size_t extrapolated = 0;
};

/// Monte Carlo profit of a regime on fresh simulated subjects. Subject draws depend only on
/// (seed, index), so regimes evaluated with the same seed see the same subjects. The outcome
/// is its conditional mean given (S1, a1, S2(a1), a2).
inline ProfitEstimate true_profit(const GenerativeSpec& g, const Regime& regime, const CostSpec& costs,
                                  std::size_t n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw ConfigError("n_mc must be positive");
  const auto& cat = regime.catalog();
  costs.validate(cat);
  std::vector<double> profit(n_mc), util(n_mc), c1c(n_mc), c1t(n_mc), c2c(n_mc), c2t(n_mc);
  std::vector<DecisionRecord> recs(n_mc);
  ProfitEstimate est;
  for (std::size_t i = 0; i < n_mc; ++i) {
    auto s = SimulatedSubject::draw(g.p, derive_seed(seed, "subject", static_cast<std::uint64_t>(i)));
    SimulatedOracle oracle(s);
    recs[i] = deploy(regime, oracle);
    const auto& r = recs[i];
    auto pc = path_costs(r, costs);
    util[i] = s.mean_outcome(g, r.a1, r.a2);
    profit[i] = util[i] - costs.lambda * pc.total();
    c1c[i] = pc.c1c, c1t[i] = pc.c1t, c2c[i] = pc.c2c, c2t[i] = pc.c2t;
    est.extrapolated += r.extrapolation ? 1 : 0;
  }
  est.profit = mean_se(profit);
  est.utility = mean_se(util);
  est.mean_costs = {mean_se(c1c).mean, mean_se(c1t).mean, mean_se(c2c).mean, mean_se(c2t).mean};
  est.frequencies = tally(recs, cat);
  return est;
}

}  // namespace bql
