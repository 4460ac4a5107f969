#pragma once

#include "bql/bql.hpp"
#include "bql/synth.hpp"

namespace bql::test {

/// Ridge nuisance learners: fast and exact on the linear presets.
inline BqlConfig ridge_config(std::uint64_t seed = 7) {
  BqlConfig c;
  for (auto* s : {&c.outcome2, &c.propensity2, &c.outcome1, &c.propensity1}) s->kind = LearnerKind::ridge;
  c.seed = seed;
  return c;
}

inline Dataset toy_dataset(std::size_t n, std::uint64_t seed, std::size_t d1 = 2, std::size_t d2 = 2) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  std::bernoulli_distribution coin(0.5);
  Dataset d{d1, d2, {}};
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory t;
    for (std::size_t k = 0; k < d1; ++k) t.s1.push_back(z(rng));
    t.a1 = coin(rng);
    for (std::size_t k = 0; k < d2; ++k) t.s2.push_back(z(rng) + t.a1 * t.s1[k % d1]);
    t.a2 = coin(rng);
    t.y = t.s1[0] + t.a2 * (t.s2[0] - 0.5) + 0.5 * t.a1 * t.s1[0] + z(rng);
    d.rows.push_back(t);
  }
  return d;
}

/// Catalog where each stage reveals one free covariate and chooses between {} and the rest.
inline AssessmentCatalog toy_catalog(std::size_t d1 = 2, std::size_t d2 = 2) {
  AssessmentCatalog c;
  c.d1 = d1;
  c.d2 = d2;
  c.l1 = {1};
  c.l2 = {1};
  c.cand1 = {FeatureIndexSet{}, c.full1()};
  c.cand2 = {FeatureIndexSet{}, c.full2()};
  return c;
}

inline CostSpec toy_costs(const AssessmentCatalog& c, double lambda = 1.0) {
  CostSpec s;
  s.c1c.assign(c.cand1.size(), 0.0);
  s.c2c.assign(c.cand2.size(), 0.0);
  s.c1c.back() = 0.1;
  s.c2c.back() = 0.2;
  s.c2t = {0.0, 0.1};
  s.lambda = lambda;
  return s;
}

inline bool same(const VectorXd& a, const VectorXd& b) { return a.size() == b.size() && a == b; }

}  // namespace bql::test
