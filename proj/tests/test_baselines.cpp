#include <gtest/gtest.h>

#include "bql/baselines.hpp"
#include "bql/eval.hpp"
#include "support.hpp"

using namespace bql;
using test::ridge_config;

namespace {

MatrixXd gaussian(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  MatrixXd x(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = z(rng) * (1.0 + static_cast<double>(j));
  return x;
}

struct Problem {
  MatrixXd x;
  VectorXd y;
  std::vector<char> mask;
};

Problem sparse_problem(std::uint64_t seed) {
  Problem p;
  p.x = gaussian(200, 6, seed);
  p.x.col(5).setOnes();
  VectorXd b = VectorXd::Zero(6);
  b(0) = 1.0;
  b(2) = -0.3;
  b(5) = 0.7;
  p.y = p.x * b + gaussian(200, 1, seed + 1).col(0);
  p.mask = {1, 1, 1, 1, 1, 0};
  return p;
}

}  // namespace

TEST(Lasso, KktConditions) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto p = sparse_problem(s);
    const double pen = 0.2 * lasso_penalty_max(p.x, p.y, p.mask);
    auto f = lasso(p.x, p.y, pen, p.mask);
    VectorXd g = lasso_gradient(p.x, p.y, f);
    for (Eigen::Index j = 0; j < 6; ++j) {
      if (!p.mask[static_cast<std::size_t>(j)]) EXPECT_NEAR(g(j), 0.0, 1e-6);
      else if (f.standardized(j) != 0) EXPECT_NEAR(std::abs(g(j)), pen, 1e-6);
      else EXPECT_LE(std::abs(g(j)), pen + 1e-6);
    }
  }
}

TEST(Lasso, ZeroPenaltyIsLeastSquares) {
  auto p = sparse_problem(10);
  auto f = lasso(p.x, p.y, 0.0, p.mask);
  EXPECT_LT((f.coefficients - ols(p.x, p.y).coefficients).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Lasso, LargePenaltyEmptiesSupport) {
  auto p = sparse_problem(11);
  const double pmax = lasso_penalty_max(p.x, p.y, p.mask);
  auto f = lasso(p.x, p.y, pmax * 1.0001, p.mask);
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_EQ(f.coefficients(j), 0.0);
  EXPECT_NEAR(f.coefficients(5), p.y.mean(), 1e-9);
  auto g = lasso(p.x, p.y, pmax * 0.9, p.mask);
  EXPECT_GT((g.coefficients.head(5).array() != 0).count(), 0);
  EXPECT_THROW(lasso(p.x, p.y, -1.0, p.mask), ConfigError);
}

TEST(Lasso, CrossValidationUsesOneStandardErrorRule) {
  auto p = sparse_problem(12);
  auto cv = lasso_cv(p.x, p.y, p.mask, 13);
  ASSERT_EQ(cv.path.size(), 50u);
  EXPECT_NEAR(cv.path.back() / cv.path.front(), 1e-3, 1e-12);
  EXPECT_LE(cv.chosen, cv.best);
  EXPECT_LE(cv.cv_mean[cv.chosen], cv.cv_mean[cv.best] + cv.cv_se[cv.best]);
  for (std::size_t s = 0; s < cv.chosen; ++s) EXPECT_GT(cv.cv_mean[s], cv.cv_mean[cv.best] + cv.cv_se[cv.best]);
  EXPECT_EQ(cv.fit.penalty, cv.path[cv.chosen]);
  auto again = lasso_cv(p.x, p.y, p.mask, 13);
  EXPECT_EQ(again.fit.coefficients, cv.fit.coefficients);
}

TEST(Baselines, SparseWithZeroPenaltyMatchesDense) {
  auto m = model_preset(2);
  auto d = generate(m.spec, 500, 1);
  auto dense = fit_dense(d, m.catalog, m.costs, ridge_config());
  auto sparse = fit_sparse(d, m.catalog, m.costs, 0.0, ridge_config());
  EXPECT_LT((dense.alpha_bar - sparse.alpha_bar).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((dense.gamma_bar - sparse.gamma_bar).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Baselines, HugePenaltyGivesEmptySupportAndCheapestSets) {
  auto m = model_preset(2);
  auto d = generate(m.spec, 500, 2);
  auto r = fit_sparse(d, m.catalog, m.costs, 1e6, ridge_config());
  EXPECT_TRUE(r.support1.empty());
  EXPECT_TRUE(r.support2.empty());
  EXPECT_EQ(r.j1, 0u);
  EXPECT_EQ(r.j2, 0u);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Baselines, DenseAlwaysAssessesFullSets) {
  auto m = model_preset(3);
  auto d = generate(m.spec, 400, 3);
  auto r = fit_dense(d, m.catalog, m.costs, ridge_config());
  auto f = selection_frequencies(r, m.spec, 300, 4);
  EXPECT_EQ(f.stage2[m.catalog.full2_pos()], 1.0);
  EXPECT_EQ(f.stage1[m.catalog.full1_pos()], 1.0);
}

TEST(Baselines, InfiniteTreatmentCostSurrogateNeverTreats) {
  auto m = model_preset(1);
  auto d = generate(m.spec, 400, 5);
  CostSpec c = m.costs;
  c.c2t = {0.0, 1e9};
  auto r = fit_dense(d, m.catalog, c, ridge_config());
  EXPECT_EQ(selection_frequencies(r, m.spec, 2000, 6).p_a2, 0.0);
}

TEST(Baselines, DenseFrequenciesAreLambdaInvariant) {
  auto m = model_preset(1);
  auto d = generate(m.spec, 500, 7);
  std::optional<FrequencyTable> first;
  for (double l : {0.0, 0.5, 1.0, 2.0}) {
    auto r = fit_dense(d, m.catalog, apply_sweep(m.costs, "lambda", l), ridge_config());
    auto f = selection_frequencies(r, m.spec, 1000, 8);
    if (!first) first = f;
    EXPECT_EQ(f.stage1, first->stage1);
    EXPECT_EQ(f.stage2, first->stage2);
    EXPECT_EQ(f.p_a1, first->p_a1);
    EXPECT_EQ(f.p_a2, first->p_a2);
  }
}

TEST(Baselines, TreatmentFrequencyFallsWithTreatmentCost) {
  auto m = model_preset(6);
  auto d = generate(m.spec, 500, 9);
  double prev = 2.0;
  for (double c : m.sweep.values) {
    auto r = fit_dense(d, m.catalog, apply_sweep(m.costs, "c2t_1", c), ridge_config());
    const double p = selection_frequencies(r, m.spec, 1000, 10).p_a2;
    EXPECT_LE(p, prev) << c;
    prev = p;
  }
}

TEST(Baselines, NegatedContrastAndThresholdFlipDecisions) {
  auto m = model_preset(1);
  auto r = fit_dense(generate(m.spec, 400, 11), m.catalog, m.costs, ridge_config());
  r.threshold1 = 0.3;
  r.threshold2 = -0.2;
  auto neg = r;
  neg.alpha_bar = -r.alpha_bar;
  neg.gamma_bar = -r.gamma_bar;
  neg.threshold1 = -0.3;
  neg.threshold2 = 0.2;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto subj = SimulatedSubject::draw(5, s);
    RowOracle a(subj.s1, subj.s2(0)), b(subj.s1, subj.s2(0));
    History h(5, 5);
    h.reveal1(FeatureIndexSet::range(5), subj.s1);
    h.reveal2(FeatureIndexSet::range(5), subj.s2(0));
    EXPECT_EQ(r.treat1(h, 0).action, 1 - neg.treat1(h, 0).action);
    EXPECT_EQ(r.treat2(h, 0, 1, 1).action, 1 - neg.treat2(h, 0, 1, 1).action);
  }
}

TEST(Baselines, ReductionToBqlOnFullSetsWithoutCosts) {
  auto m = model_preset(2);
  auto cat = full_only(m.catalog);
  auto costs = CostSpec::zero(cat);
  auto d = generate(m.spec, 1000, 12);
  auto b = fit_bql(d, cat, costs, ridge_config());
  auto r = fit_dense(d, cat, costs, ridge_config());
  std::size_t agree = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    auto subj = SimulatedSubject::draw(5, 500 + s);
    SimulatedOracle oa(subj), ob(subj);
    auto x = deploy(b, oa), y = deploy(r, ob);
    agree += (x.a1 == y.a1 && x.a2 == y.a2 && x.j1 == y.j1 && x.j2 == y.j2) ? 1 : 0;
  }
  EXPECT_GE(agree, 1980u);
}

TEST(Baselines, CheapestCoverAndFallback) {
  std::vector<FeatureIndexSet> cand{{2, 3}, {2}, {2, 3, 4}};
  std::vector<double> cost{0.2, 0.1, 0.3};
  EXPECT_EQ(cheapest_cover(cand, cost, {2}), std::optional<std::size_t>(1));
  EXPECT_EQ(cheapest_cover(cand, cost, {3}), std::optional<std::size_t>(0));
  EXPECT_FALSE(cheapest_cover(cand, cost, {5}).has_value());
  std::vector<double> tie{0.1, 0.1, 0.1};
  EXPECT_EQ(cheapest_cover(cand, tie, {}), std::optional<std::size_t>(0));
}

TEST(Baselines, ModelThreeSparseSupportConcentratesOnInformativeCovariates) {
  auto m = model_preset(3);
  const int reps = 200;
  int hits = 0;
  for (int rep = 0; rep < reps; ++rep) {
    auto d = generate(m.spec, 500, 1000 + static_cast<std::uint64_t>(rep));
    auto r = fit_sparse(d, m.catalog, m.costs, std::nullopt, ridge_config(static_cast<std::uint64_t>(rep)));
    hits += r.support2.subset_of({2, 3}) ? 1 : 0;
  }
  EXPECT_GE(hits, static_cast<int>(0.8 * reps)) << hits;
}

TEST(Baselines, RejectsUnknownMethodAndNegativePenalty) {
  auto m = model_preset(1);
  auto d = generate(m.spec, 300, 13);
  EXPECT_THROW(fit_sparse(d, m.catalog, m.costs, -1.0, ridge_config()), ConfigError);
  auto dm = DataMatrices::from(d);
  auto nf = std::make_shared<const NuisanceFits>(fit_nuisance(dm, ridge_config()));
  EXPECT_THROW(fit_baseline_with(dm, nf, m.catalog, m.costs, ridge_config(), "ridge"), ConfigError);
}
