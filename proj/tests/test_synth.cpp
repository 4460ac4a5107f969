#include <gtest/gtest.h>

#include "bql/eval.hpp"
#include "bql/synth.hpp"

using namespace bql;

namespace {

/// Always treats with 0 and assesses the first candidates.
class NullRegime : public Regime {
 public:
  explicit NullRegime(AssessmentCatalog c) : c_(std::move(c)) {}
  std::string kind() const override { return "null"; }
  const AssessmentCatalog& catalog() const override { return c_; }
  AssessmentChoice assess1(const History&) const override { return {0, {}}; }
  TreatmentChoice treat1(const History&, std::size_t) const override { return {0, 0.0}; }
  AssessmentChoice assess2(const History&, std::size_t, int) const override { return {0, {}}; }
  TreatmentChoice treat2(const History&, std::size_t, int, std::size_t) const override { return {0, 0.0}; }

 private:
  AssessmentCatalog c_;
};

GenerativeSpec zero_spec() {
  GenerativeSpec g = model_preset(1).spec;
  g.beta1.assign(g.dim2(), 0.0);
  g.beta2.assign(g.dim2(), 0.0);
  g.beta3.assign(g.dim2(), 0.0);
  return g;
}

}  // namespace

TEST(Logistic, Properties) {
  EXPECT_EQ(logistic(0), 0.5);
  EXPECT_GT(logistic(40), 1 - 1e-12);
  EXPECT_LT(logistic(2), logistic(3));
  EXPECT_NEAR(logistic(-1.7), 1 - logistic(1.7), 1e-12);
  EXPECT_TRUE(std::isfinite(logistic(-1000)));
}

TEST(Generate, BalancedFirstTreatmentUnderZeroPropensityCoefficients) {
  GenerativeSpec g = model_preset(1).spec;
  g.alpha1.assign(g.p, 0.0);
  auto d = generate(g, 10000, 1);
  double m = 0;
  for (const auto& t : d.rows) m += t.a1;
  m /= 10000;
  EXPECT_GE(m, 0.46);
  EXPECT_LE(m, 0.54);
}

TEST(Generate, StageTwoMomentsUnderTreatment) {
  auto g = model_preset(1).spec;
  auto d = generate(g, 100000, 2);
  std::vector<double> v;
  for (const auto& t : d.rows)
    if (t.a1 == 1) v.push_back(t.s2[2]);
  auto ms = mean_se(v);
  EXPECT_LT(std::abs(ms.mean), 3 * ms.se);
  double var = 0;
  for (double x : v) var += (x - ms.mean) * (x - ms.mean);
  var /= static_cast<double>(v.size() - 1);
  // Var(2 S1 + e) = 5 for S1 independent of A1; S1_3 does not enter the propensity.
  const double se_var = std::sqrt(2.0 / static_cast<double>(v.size())) * 5.0;
  EXPECT_LT(std::abs(var - 5.0), 3 * se_var);
}

TEST(Generate, ShapesAndReproducibility) {
  auto g = model_preset(1).spec;
  auto a = generate(g, 500, 3), b = generate(g, 500, 3);
  EXPECT_EQ(a.d1, 5u);
  EXPECT_EQ(a.d2, 5u);
  ASSERT_EQ(a.size(), 500u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.rows[i].s1, b.rows[i].s1);
    EXPECT_EQ(a.rows[i].y, b.rows[i].y);
  }
  EXPECT_THROW(generate(g, 0, 1), ConfigError);
}

TEST(Generate, OutcomeDependsOnlyOnRealizedPath) {
  auto g = model_preset(2).spec;
  auto s = SimulatedSubject::draw(5, 9);
  EXPECT_EQ(s.mean_outcome(g, 1, 0), SimulatedSubject::draw(5, 9).mean_outcome(g, 1, 0));
  auto x = s.xbar2(1);
  ASSERT_EQ(x.size(), 11u);
  EXPECT_EQ(x[5], 1.0);
  EXPECT_EQ(x[6], 2 * s.s1[0] + s.e2[0]);
}

TEST(Presets, TranscriptionShapes) {
  auto m1 = model_preset(1);
  EXPECT_EQ(m1.spec.beta1.size(), 11u);
  EXPECT_EQ(m1.catalog.cand2, (std::vector<FeatureIndexSet>{{2, 3, 4}, {2, 3, 4, 5}}));
  EXPECT_EQ(m1.catalog.l2, (FeatureIndexSet{1}));
  EXPECT_EQ(m1.costs.c2c, (std::vector<double>{0.0, 0.1}));

  auto m3 = model_preset(3);
  EXPECT_EQ(m3.spec.p, 3u);
  EXPECT_EQ(m3.spec.beta1.size(), 7u);
  EXPECT_EQ(m3.catalog.cand2.size(), 8u);
  for (std::size_t k = 0; k < 8; ++k)
    EXPECT_DOUBLE_EQ(m3.costs.c2c[k], 0.1 * static_cast<double>(m3.catalog.cand2[k].size()));

  auto m6 = model_preset(6);
  EXPECT_EQ(m6.costs.c2t[0], 7.5);
  EXPECT_EQ(m6.sweep.parameter, "c2t_1");
  EXPECT_EQ(m6.sweep.values.front(), 0.0);
  EXPECT_EQ(m6.sweep.values.back(), 15.0);
  EXPECT_EQ(model_preset(7).sweep.parameter, "c1t_1");
  EXPECT_EQ(model_preset(4).costs.lambda, 0.0);
  EXPECT_THROW(model_preset(8), ConfigError);
  for (int id = 1; id <= 7; ++id) EXPECT_NO_THROW(model_preset(id));
}

TEST(Presets, ApplySweep) {
  auto c = model_preset(6).costs;
  EXPECT_EQ(apply_sweep(c, "c2t_1", 12.5).c2t[1], 12.5);
  EXPECT_EQ(apply_sweep(c, "lambda", 2).lambda, 2.0);
  EXPECT_THROW(apply_sweep(c, "mu", 1), ConfigError);
}

TEST(TrueProfit, ZeroModelAndConstantCost) {
  auto m = model_preset(1);
  NullRegime r(m.catalog);
  auto g = zero_spec();
  CostSpec c = CostSpec::zero(m.catalog);
  c.lambda = 1.0;
  auto e = true_profit(g, r, c, 1000, 1);
  EXPECT_EQ(e.profit.mean, 0.0);
  c.c1t = {2.0, 0.0};
  e = true_profit(g, r, c, 1000, 1);
  EXPECT_DOUBLE_EQ(e.profit.mean, -2.0);
  EXPECT_DOUBLE_EQ(e.mean_costs.c1t, 2.0);
  EXPECT_EQ(e.frequencies.stage1, std::vector<double>{1.0});
}

TEST(TrueProfit, StandardErrorShrinksWithSampleSize) {
  auto m = model_preset(1);
  NullRegime r(m.catalog);
  auto a = true_profit(m.spec, r, m.costs, 4000, 2);
  auto b = true_profit(m.spec, r, m.costs, 16000, 2);
  EXPECT_NEAR(b.profit.se / a.profit.se, 0.5, 0.05);
}

TEST(TrueProfit, CommonRandomNumbers) {
  auto m = model_preset(1);
  NullRegime r(m.catalog);
  auto a = true_profit(m.spec, r, m.costs, 500, 3);
  auto b = true_profit(m.spec, r, m.costs, 500, 3);
  EXPECT_EQ(a.profit.mean, b.profit.mean);
}

TEST(TrueProfit, MatchesExactValueOnDiscreteLawOfOracleRegime) {
  auto in = random_instance(5);
  auto opt = backward_induction_optimal(in, in.costs.lambda);
  std::vector<double> prof;
  Rng rng(7);
  std::discrete_distribution<std::size_t> p1(in.s1_prob.begin(), in.s1_prob.end());
  for (int k = 0; k < 100000; ++k) {
    const auto i = p1(rng);
    PointOracle probe(in.s1_support[i], in.s2_support[0]);
    const int a1 = deploy(opt.regime, probe).a1;
    const auto& tr = in.transition[i][static_cast<std::size_t>(a1)];
    std::discrete_distribution<std::size_t> p2(tr.begin(), tr.end());
    const auto s = p2(rng);
    PointOracle o(in.s1_support[i], in.s2_support[s]);
    auto rec = deploy(opt.regime, o);
    prof.push_back(in.mean[i][static_cast<std::size_t>(rec.a1)][s][static_cast<std::size_t>(rec.a2)] -
                   in.costs.lambda * path_costs(rec, in.costs).total());
  }
  auto ms = mean_se(prof);
  EXPECT_LT(std::abs(ms.mean - opt.profit), 2 * ms.se);
  auto bf = brute_force_optimal(in, in.costs.lambda);
  EXPECT_LT(std::abs(ms.mean - bf.profit), 2 * ms.se);
}
