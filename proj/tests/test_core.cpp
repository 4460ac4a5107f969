#include <gtest/gtest.h>

#include "bql/core.hpp"
#include "bql/rng.hpp"
#include "bql/synth.hpp"

using namespace bql;

TEST(FeatureIndexSet, SortsAndRejectsDuplicatesAndZero) {
  FeatureIndexSet s{4, 2, 3};
  EXPECT_EQ(s.indices(), (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_THROW(FeatureIndexSet({1, 1}), ConfigError);
  EXPECT_THROW(FeatureIndexSet({0, 2}), ConfigError);
  EXPECT_EQ(FeatureIndexSet::range(3).to_string(), "{1,2,3}");
}

TEST(FeatureIndexSet, SetAlgebra) {
  FeatureIndexSet a{1, 2, 3}, b{3, 4};
  EXPECT_EQ(a.unite(b), (FeatureIndexSet{1, 2, 3, 4}));
  EXPECT_EQ(a.minus(b), (FeatureIndexSet{1, 2}));
  EXPECT_FALSE(a.disjoint(b));
  EXPECT_TRUE((FeatureIndexSet{2}).subset_of(a));
  EXPECT_TRUE(FeatureIndexSet{}.subset_of(a));
}

TEST(Subvector, Examples) {
  EXPECT_EQ(subvector(std::vector<double>{5, 6, 7}, {2}), (std::vector<double>{6}));
  EXPECT_EQ(subvector(std::vector<double>{1, 2, 3, 4, 5}, {2, 3, 4}), (std::vector<double>{2, 3, 4}));
  EXPECT_TRUE(subvector(std::vector<double>{1, 2}, {}).empty());
  EXPECT_THROW(subvector(std::vector<double>{1, 2}, {3}), DimensionError);
}

TEST(Subvector, FullRangeIsIdentityAndOrderIsAscending) {
  std::vector<double> x{0.5, -1, 2, 9};
  EXPECT_EQ(subvector(x, FeatureIndexSet::range(4)), x);
  EXPECT_EQ(subvector(x, FeatureIndexSet{4, 1}), (std::vector<double>{0.5, 9}));
}

TEST(AssembleDesign, Examples) {
  EXPECT_EQ(assemble_design({std::vector<double>{1, 2}, 0.0}, false), (std::vector<double>{1, 2, 0}));
  EXPECT_EQ(assemble_design({std::vector<double>{1, 2}, 0.0}, true), (std::vector<double>{1, 2, 0, 1}));
  EXPECT_EQ(assemble_design({std::vector<double>{}, 1.0}, true), (std::vector<double>{1, 1}));
}

TEST(ValidateDataset, NonBinaryTreatmentIsReportedAtItsRow) {
  auto d = generate(model_preset(1).spec, 20, 3);
  d.rows[3].a1 = 2;
  auto v = validate_dataset(d);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front().row, std::optional<std::size_t>(3));
  EXPECT_NE(v.front().reason.find("not binary"), std::string::npos);
  EXPECT_THROW(require_valid(d), DataError);
}

TEST(ValidateDataset, ModelDrawIsClean) { EXPECT_TRUE(validate_dataset(generate(model_preset(1).spec, 500, 1)).empty()); }

TEST(ValidateDataset, MissingArmViolatesPositivity) {
  auto d = generate(model_preset(1).spec, 50, 2);
  for (auto& t : d.rows) t.a2 = 1;
  auto v = validate_dataset(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_FALSE(v[0].row.has_value());
  EXPECT_NE(v[0].reason.find("arm 0 absent at stage 2"), std::string::npos);
}

TEST(ValidateDataset, PureFunction) {
  auto d = generate(model_preset(2).spec, 30, 4);
  d.rows[1].s2.pop_back();
  d.rows[5].y = std::nan("");
  auto a = validate_dataset(d), b = validate_dataset(d);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].to_string(), b[k].to_string());
}

TEST(Catalog, ValidationCatchesBrokenInvariants) {
  AssessmentCatalog c{3, 3, {1}, {1}, {{2}, {2, 3}}, {{2, 3}}};
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.cand1 = {{2}};
  EXPECT_THROW(bad.validate(), ConfigError);  // no full set
  bad = c;
  bad.cand1 = {{1, 2}, {2, 3}};
  EXPECT_THROW(bad.validate(), ConfigError);  // overlaps l1
  bad = c;
  bad.cand2 = {{2, 3}, {2, 3}};
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(c.full1_pos(), 1u);
}

TEST(CostSpec, ScaledMultipliesEveryCost) {
  CostSpec c{{0.0, 0.5}, {0.1}, {1.0, 2.0}, {0.0, 3.0}, 2.0};
  auto s = c.scaled();
  EXPECT_EQ(s.c1c, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(s.c2c, (std::vector<double>{0.2}));
  EXPECT_EQ(s.c1t[1], 4.0);
  EXPECT_EQ(s.c2t[1], 6.0);
  EXPECT_EQ(s.lambda, 1.0);
  AssessmentCatalog cat{1, 1, {}, {}, {{1}}, {{1}}};
  CostSpec neg{{-1.0}, {0.0}};
  EXPECT_THROW(neg.validate(cat), ConfigError);
}

TEST(DesignMatrix, ConcatenatesWithTrailingIntercept) {
  MatrixXd a(2, 1), b(2, 2);
  a << 1, 2;
  b << 3, 4, 5, 6;
  MatrixXd m = design_matrix({a, b}, true);
  MatrixXd want(2, 4);
  want << 1, 3, 4, 1, 2, 5, 6, 1;
  EXPECT_EQ(m, want);
  EXPECT_EQ(select_columns(b, {2}), MatrixXd(b.col(1)));
}

TEST(MeanSe, MatchesClosedForm) {
  std::vector<double> x{1, 2, 3, 4};
  auto m = mean_se(x);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
}

TEST(Seeds, DeriveSeedIsDeterministicAndLabelSensitive) {
  EXPECT_EQ(derive_seed(1, "fold", std::uint64_t{2}), derive_seed(1, "fold", std::uint64_t{2}));
  EXPECT_NE(derive_seed(1, "fold", std::uint64_t{2}), derive_seed(1, "fold", std::uint64_t{3}));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
}
