#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bql/bql.hpp"
#include "bql/regime.hpp"

namespace bql {

/// Source of covariate values for one subject. Stage-2 values may depend on the
/// assigned first treatment, which is announced before any stage-2 request.
class CovariateOracle {
 public:
  virtual ~CovariateOracle() = default;
  virtual std::vector<double> stage1(const FeatureIndexSet& s) = 0;
  virtual void assign_first_treatment(int a1) = 0;
  virtual std::vector<double> stage2(const FeatureIndexSet& s) = 0;
};

/// Serves a fixed row of covariates, counting every index handed out.
class RowOracle : public CovariateOracle {
 public:
  RowOracle(std::vector<double> s1, std::vector<double> s2) : s1_(std::move(s1)), s2_(std::move(s2)) {}
  std::vector<double> stage1(const FeatureIndexSet& s) override {
    requested1 += s.size();
    return subvector(s1_, s);
  }
  void assign_first_treatment(int a1) override { assigned = a1; }
  std::vector<double> stage2(const FeatureIndexSet& s) override {
    if (assigned < 0) throw DataError("stage-2 covariates requested before the first treatment was assigned");
    requested2 += s.size();
    return subvector(s2_, s);
  }

  std::size_t requested1 = 0, requested2 = 0;
  int assigned = -1;

 private:
  std::vector<double> s1_, s2_;
};

struct DecisionRecord {
  std::size_t j1 = 0, j2 = 0;
  FeatureIndexSet set1, set2;
  int a1 = 0, a2 = 0;
  std::vector<double> s_l1, s_j1, s_l2, s_j2;
  std::vector<double> scores1, scores2;
  double treat_score1 = 0.0, treat_score2 = 0.0;
  bool extrapolation = false;
};

/// Runs the sequential pipeline: assess S_l1, choose j1, assess S_j1, choose a1,
/// assess S_l2, choose j2, assess S_j2, choose a2.
inline DecisionRecord deploy(const Regime& regime, CovariateOracle& oracle) {
  const auto& cat = regime.catalog();
  History h(cat.d1, cat.d2);
  DecisionRecord r;
  auto step = [](const char* label, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw DataError(std::string("deploy (") + label + "): " + e.what());
    }
  };
  step("assess l1", [&] {
    r.s_l1 = oracle.stage1(cat.l1);
    h.reveal1(cat.l1, r.s_l1);
  });
  step("choose j1", [&] {
    auto c = regime.assess1(h);
    r.j1 = c.position;
    r.scores1 = std::move(c.scores);
    r.set1 = cat.cand1.at(r.j1);
  });
  step("assess j1", [&] {
    r.s_j1 = oracle.stage1(r.set1);
    h.reveal1(r.set1, r.s_j1);
  });
  step("choose a1", [&] {
    auto t = regime.treat1(h, r.j1);
    r.a1 = t.action;
    r.treat_score1 = t.score;
    oracle.assign_first_treatment(r.a1);
  });
  step("assess l2", [&] {
    r.s_l2 = oracle.stage2(cat.l2);
    h.reveal2(cat.l2, r.s_l2);
  });
  step("choose j2", [&] {
    auto c = regime.assess2(h, r.j1, r.a1);
    r.j2 = c.position;
    r.scores2 = std::move(c.scores);
    r.set2 = cat.cand2.at(r.j2);
  });
  step("assess j2", [&] {
    r.s_j2 = oracle.stage2(r.set2);
    h.reveal2(r.set2, r.s_j2);
  });
  step("choose a2", [&] {
    auto t = regime.treat2(h, r.j1, r.a1, r.j2);
    r.a2 = t.action;
    r.treat_score2 = t.score;
  });
  r.extrapolation = regime.extrapolates(h, r.j1, r.a1, r.j2);
  return r;
}

/// Assessment choice from a plain history vector: S_l1 at stage 1, S_{l2bar} at stage 2.
inline AssessmentChoice choose_assessment(const FittedRegime& regime, int stage, std::span<const double> history,
                                          std::size_t j1 = 0, int a1 = 0) {
  std::vector<double> s;
  if (stage == 1) s = regime.assessment_scores1(history);
  else if (stage == 2) s = regime.assessment_scores2(history, j1, a1);
  else throw ConfigError("stage must be 1 or 2");
  return {argmax_first(s), s};
}

/// Treatment choice from S_{j1bar} at stage 1 or S_{j2bar} at stage 2.
inline TreatmentChoice choose_treatment(const FittedRegime& regime, int stage, std::span<const double> history,
                                        std::size_t j1, int a1 = 0, std::size_t j2 = 0) {
  double s;
  if (stage == 1) s = regime.treatment_score1(history, j1);
  else if (stage == 2) s = regime.treatment_score2(history, j1, a1, j2);
  else throw ConfigError("stage must be 1 or 2");
  return {s > 0 ? 1 : 0, s};
}

/// Assessment and treatment costs incurred along a decision path, unscaled by lambda.
struct PathCosts {
  double c1c = 0.0, c1t = 0.0, c2c = 0.0, c2t = 0.0;
  double total() const { return c1c + c1t + c2c + c2t; }
};

inline PathCosts path_costs(const DecisionRecord& r, const CostSpec& c) {
  return {c.c1c.at(r.j1), c.c1t[static_cast<std::size_t>(r.a1)], c.c2c.at(r.j2), c.c2t[static_cast<std::size_t>(r.a2)]};
}

struct FrequencyTable {
  std::vector<double> stage1, stage2;  // per catalog position
  double p_a1 = 0.0, p_a2 = 0.0;
};

inline FrequencyTable tally(const std::vector<DecisionRecord>& recs, const AssessmentCatalog& cat) {
  FrequencyTable t;
  t.stage1.assign(cat.cand1.size(), 0.0);
  t.stage2.assign(cat.cand2.size(), 0.0);
  if (recs.empty()) return t;
  std::vector<std::size_t> c1(cat.cand1.size(), 0), c2(cat.cand2.size(), 0);
  std::size_t n1 = 0, n2 = 0;
  for (const auto& r : recs) {
    ++c1[r.j1];
    ++c2[r.j2];
    n1 += static_cast<std::size_t>(r.a1);
    n2 += static_cast<std::size_t>(r.a2);
  }
  const double n = static_cast<double>(recs.size());
  for (std::size_t k = 0; k < c1.size(); ++k) t.stage1[k] = static_cast<double>(c1[k]) / n;
  for (std::size_t k = 0; k < c2.size(); ++k) t.stage2[k] = static_cast<double>(c2[k]) / n;
  t.p_a1 = static_cast<double>(n1) / n;
  t.p_a2 = static_cast<double>(n2) / n;
  return t;
}

}  // namespace bql
