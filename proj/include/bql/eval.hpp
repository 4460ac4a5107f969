#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "bql/core.hpp"
#include "bql/deploy.hpp"
#include "bql/regime.hpp"
#include "bql/rng.hpp"
#include "bql/synth.hpp"

namespace bql {

/// Finite two-stage law: S1 and S2 range over listed support points, P(S2 | S1, a1) is tabulated,
/// and so is E[Y | S1, a1, S2, a2]. Propensities and outcome noise are only used for sampling.
struct DiscreteInstance {
  std::vector<std::vector<double>> s1_support;
  std::vector<double> s1_prob;
  std::vector<std::vector<double>> s2_support;
  std::vector<std::array<std::vector<double>, 2>> transition;           // [s1][a1][s2]
  std::vector<std::array<std::vector<std::array<double, 2>>, 2>> mean;  // [s1][a1][s2][a2]
  AssessmentCatalog catalog;
  CostSpec costs;
  std::vector<double> g1;                                     // P(A1=1 | s1), optional
  std::vector<std::array<std::vector<double>, 2>> g2;         // P(A2=1 | s1, a1, s2), optional
  double noise_sd = 1.0;

  std::size_t n1() const { return s1_support.size(); }
  std::size_t n2() const { return s2_support.size(); }

  void validate() const {
    catalog.validate();
    costs.validate(catalog);
    if (s1_support.empty() || s2_support.empty()) throw DataError("supports must be nonempty");
    if (s1_prob.size() != n1() || transition.size() != n1() || mean.size() != n1())
      throw DataError("tables must have one entry per S1 support point");
    for (const auto& s : s1_support)
      if (s.size() != catalog.d1) throw DataError("S1 support point has wrong dimension");
    for (const auto& s : s2_support)
      if (s.size() != catalog.d2) throw DataError("S2 support point has wrong dimension");
    auto check_dist = [](const std::vector<double>& p, const std::string& what) {
      double t = 0.0;
      for (double v : p) {
        if (!(v >= 0) || !std::isfinite(v)) throw DataError(what + " has a negative or non-finite probability");
        t += v;
      }
      if (std::abs(t - 1.0) > 1e-9) throw DataError(what + " sums to " + std::to_string(t) + ", not 1");
    };
    check_dist(s1_prob, "P(S1)");
    for (std::size_t i = 0; i < n1(); ++i)
      for (int a = 0; a < 2; ++a) {
        const auto& row = transition[i][static_cast<std::size_t>(a)];
        if (row.size() != n2()) throw DataError("transition row has wrong length");
        check_dist(row, "P(S2 | s1=" + std::to_string(i) + ", a1=" + std::to_string(a) + ")");
        if (mean[i][static_cast<std::size_t>(a)].size() != n2()) throw DataError("outcome table has wrong shape");
      }
  }
};

/// Regime stored as lookup tables keyed by the revealed covariate values. Unlisted keys map to 0.
class TabularRegime : public Regime {
 public:
  using Key = std::vector<double>;
  AssessmentCatalog cat;
  std::map<Key, std::size_t> pi1c;
  std::vector<std::map<Key, int>> pi1t;                             // [j1]
  std::vector<std::array<std::map<Key, std::size_t>, 2>> pi2c;      // [j1][a1]
  std::vector<std::array<std::vector<std::map<Key, int>>, 2>> pi2t; // [j1][a1][j2]

  explicit TabularRegime(const AssessmentCatalog& c) : cat(c) {
    const auto J1 = c.cand1.size(), J2 = c.cand2.size();
    pi1t.resize(J1);
    pi2c.resize(J1);
    pi2t.resize(J1);
    for (auto& a : pi2t)
      for (auto& v : a) v.resize(J2);
  }

  std::string kind() const override { return "tabular"; }
  const AssessmentCatalog& catalog() const override { return cat; }

  AssessmentChoice assess1(const History& h) const override { return {find(pi1c, key_l1(h)), {}}; }
  TreatmentChoice treat1(const History& h, std::size_t j1) const override {
    return {find(pi1t.at(j1), key_jbar1(h, j1)), 0.0};
  }
  AssessmentChoice assess2(const History& h, std::size_t j1, int a1) const override {
    return {find(pi2c.at(j1)[static_cast<std::size_t>(a1)], key_lbar2(h, j1)), {}};
  }
  TreatmentChoice treat2(const History& h, std::size_t j1, int a1, std::size_t j2) const override {
    return {find(pi2t.at(j1)[static_cast<std::size_t>(a1)].at(j2), key_jbar2(h, j1, j2)), 0.0};
  }

  Key key_l1(const History& h) const { return h.gather1(cat.l1); }
  Key key_jbar1(const History& h, std::size_t j1) const { return cat_keys(key_l1(h), h.gather1(cat.cand1[j1])); }
  Key key_lbar2(const History& h, std::size_t j1) const { return cat_keys(key_jbar1(h, j1), h.gather2(cat.l2)); }
  Key key_jbar2(const History& h, std::size_t j1, std::size_t j2) const {
    return cat_keys(key_lbar2(h, j1), h.gather2(cat.cand2[j2]));
  }

 private:
  template <class V>
  static V find(const std::map<Key, V>& m, const Key& k) {
    auto it = m.find(k);
    return it == m.end() ? V{} : it->second;
  }
  static Key cat_keys(Key a, const Key& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
};

namespace detail {

/// Dense ids of information cells for every (s1, s2) pair of an instance.
struct CellIndex {
  std::vector<int> l1;                                     // [s1]
  std::vector<std::vector<int>> jbar1;                     // [j1][s1]
  std::vector<std::vector<std::vector<int>>> lbar2;        // [j1][s1][s2]
  std::vector<std::vector<std::vector<std::vector<int>>>> jbar2;  // [j1][j2][s1][s2]
  int n_l1 = 0;
  std::vector<int> n_jbar1, n_lbar2;
  std::vector<std::vector<int>> n_jbar2;
  // keys by id for building lookup tables
  std::vector<std::vector<double>> keys_l1;
  std::vector<std::vector<std::vector<double>>> keys_jbar1, keys_lbar2;
  std::vector<std::vector<std::vector<std::vector<double>>>> keys_jbar2;

  explicit CellIndex(const DiscreteInstance& in) {
    const auto& c = in.catalog;
    const auto J1 = c.cand1.size(), J2 = c.cand2.size(), N1 = in.n1(), N2 = in.n2();
    auto id_of = [](std::map<std::vector<double>, int>& m, std::vector<std::vector<double>>& keys,
                    const std::vector<double>& k) {
      auto [it, fresh] = m.try_emplace(k, static_cast<int>(m.size()));
      if (fresh) keys.push_back(k);
      return it->second;
    };
    auto join = [](std::vector<double> a, const std::vector<double>& b) {
      a.insert(a.end(), b.begin(), b.end());
      return a;
    };
    std::map<std::vector<double>, int> m;
    for (std::size_t i = 0; i < N1; ++i) l1.push_back(id_of(m, keys_l1, subvector(in.s1_support[i], c.l1)));
    n_l1 = static_cast<int>(m.size());
    jbar1.assign(J1, {});
    lbar2.assign(J1, {});
    jbar2.assign(J1, std::vector<std::vector<std::vector<int>>>(J2));
    keys_jbar1.resize(J1);
    keys_lbar2.resize(J1);
    keys_jbar2.assign(J1, std::vector<std::vector<std::vector<double>>>(J2));
    n_jbar2.assign(J1, std::vector<int>(J2));
    for (std::size_t j1 = 0; j1 < J1; ++j1) {
      std::map<std::vector<double>, int> m1, m2;
      std::vector<std::map<std::vector<double>, int>> m3(J2);
      for (std::size_t i = 0; i < N1; ++i) {
        auto kj1 = join(subvector(in.s1_support[i], c.l1), subvector(in.s1_support[i], c.cand1[j1]));
        jbar1[j1].push_back(id_of(m1, keys_jbar1[j1], kj1));
        lbar2[j1].emplace_back();
        for (std::size_t s = 0; s < N2; ++s) {
          auto kl2 = join(kj1, subvector(in.s2_support[s], c.l2));
          lbar2[j1][i].push_back(id_of(m2, keys_lbar2[j1], kl2));
        }
      }
      n_jbar1.push_back(static_cast<int>(m1.size()));
      n_lbar2.push_back(static_cast<int>(m2.size()));
      for (std::size_t j2 = 0; j2 < J2; ++j2) {
        jbar2[j1][j2].assign(N1, std::vector<int>(N2));
        for (std::size_t i = 0; i < N1; ++i)
          for (std::size_t s = 0; s < N2; ++s) {
            auto k = join(join(join(subvector(in.s1_support[i], c.l1), subvector(in.s1_support[i], c.cand1[j1])),
                               subvector(in.s2_support[s], c.l2)),
                          subvector(in.s2_support[s], c.cand2[j2]));
            jbar2[j1][j2][i][s] = id_of(m3[j2], keys_jbar2[j1][j2], k);
          }
        n_jbar2[j1][j2] = static_cast<int>(m3[j2].size());
      }
    }
  }
};

}  // namespace detail

/// Serves one support point pair of a discrete instance.
class PointOracle : public CovariateOracle {
 public:
  PointOracle(const std::vector<double>& s1, const std::vector<double>& s2) : s1_(s1), s2_(s2) {}
  std::vector<double> stage1(const FeatureIndexSet& s) override { return subvector(s1_, s); }
  void assign_first_treatment(int a1) override { a1_ = a1; }
  std::vector<double> stage2(const FeatureIndexSet& s) override {
    if (a1_ < 0) throw DataError("stage-2 covariates requested before the first treatment was assigned");
    return subvector(s2_, s);
  }
  int a1() const { return a1_; }

 private:
  const std::vector<double>& s1_;
  const std::vector<double>& s2_;
  int a1_ = -1;
};

struct ExactValue {
  double profit = 0.0;
  double utility = 0.0;
  PathCosts costs;
};

/// Expected profit of any regime on a discrete instance, by summation over the supports.
inline ExactValue exact_profit(const DiscreteInstance& in, const Regime& r, double lambda) {
  ExactValue v;
  for (std::size_t i = 0; i < in.n1(); ++i) {
    if (in.s1_prob[i] == 0) continue;
    // Stage-1 decisions depend on S1 only; any S2 point serves to learn a1.
    PointOracle probe(in.s1_support[i], in.s2_support[0]);
    const int a1 = deploy(r, probe).a1;
    for (std::size_t s = 0; s < in.n2(); ++s) {
      const double w = in.s1_prob[i] * in.transition[i][static_cast<std::size_t>(a1)][s];
      if (w == 0) continue;
      PointOracle o(in.s1_support[i], in.s2_support[s]);
      auto rec = deploy(r, o);
      auto pc = path_costs(rec, in.costs);
      const double mu = in.mean[i][static_cast<std::size_t>(rec.a1)][s][static_cast<std::size_t>(rec.a2)];
      v.utility += w * mu;
      v.costs.c1c += w * pc.c1c;
      v.costs.c1t += w * pc.c1t;
      v.costs.c2c += w * pc.c2c;
      v.costs.c2t += w * pc.c2t;
    }
  }
  v.profit = v.utility - lambda * v.costs.total();
  return v;
}

struct OracleResult {
  double profit = 0.0;
  TabularRegime regime;
  std::size_t evaluated = 0;
};

/// Restricted Q-functions computed backwards by exact conditional expectations. Stage-2
/// expectations for a given a1 use the law P(S1) P(S2 | S1, a1).
inline OracleResult backward_induction_optimal(const DiscreteInstance& in, double lambda) {
  in.validate();
  const auto& c = in.catalog;
  CostSpec ec = in.costs;
  ec.lambda = lambda;
  ec = ec.scaled();
  const auto J1 = c.cand1.size(), J2 = c.cand2.size(), N1 = in.n1(), N2 = in.n2();
  detail::CellIndex cell(in);
  OracleResult res{0.0, TabularRegime(c), 0};
  auto& reg = res.regime;
  auto qbar2t = [&](std::size_t i, int a1, std::size_t s, int a2) {
    return in.mean[i][static_cast<std::size_t>(a1)][s][static_cast<std::size_t>(a2)] - ec.c2t[static_cast<std::size_t>(a2)];
  };
  auto w2 = [&](std::size_t i, int a1, std::size_t s) { return in.s1_prob[i] * in.transition[i][static_cast<std::size_t>(a1)][s]; };

  // pi2t[j1][a1][j2][cell]
  std::vector<std::array<std::vector<std::vector<int>>, 2>> pi2t(J1);
  std::vector<std::array<std::vector<std::size_t>, 2>> pi2c(J1);
  for (std::size_t j1 = 0; j1 < J1; ++j1)
    for (int a1 = 0; a1 < 2; ++a1) {
      auto& p2t = pi2t[j1][static_cast<std::size_t>(a1)];
      p2t.resize(J2);
      for (std::size_t j2 = 0; j2 < J2; ++j2) {
        const int nc = cell.n_jbar2[j1][j2];
        std::vector<std::array<double, 2>> num(static_cast<std::size_t>(nc), {0.0, 0.0});
        std::vector<double> den(static_cast<std::size_t>(nc), 0.0);
        for (std::size_t i = 0; i < N1; ++i)
          for (std::size_t s = 0; s < N2; ++s) {
            const double w = w2(i, a1, s);
            if (w == 0) continue;
            const auto k = static_cast<std::size_t>(cell.jbar2[j1][j2][i][s]);
            den[k] += w;
            for (int a2 = 0; a2 < 2; ++a2) num[k][static_cast<std::size_t>(a2)] += w * qbar2t(i, a1, s, a2);
          }
        p2t[j2].assign(static_cast<std::size_t>(nc), 0);
        for (std::size_t k = 0; k < static_cast<std::size_t>(nc); ++k) {
          if (den[k] == 0) continue;
          const double q0 = num[k][0] / den[k], q1 = num[k][1] / den[k];
          p2t[j2][k] = q1 > q0 ? 1 : 0;
          reg.pi2t[j1][static_cast<std::size_t>(a1)][j2][cell.keys_jbar2[j1][j2][k]] = p2t[j2][k];
        }
      }
      // Q2c on S_{l2bar} cells
      const int nc = cell.n_lbar2[j1];
      std::vector<std::vector<double>> num(static_cast<std::size_t>(nc), std::vector<double>(J2, 0.0));
      std::vector<double> den(static_cast<std::size_t>(nc), 0.0);
      for (std::size_t i = 0; i < N1; ++i)
        for (std::size_t s = 0; s < N2; ++s) {
          const double w = w2(i, a1, s);
          if (w == 0) continue;
          const auto k = static_cast<std::size_t>(cell.lbar2[j1][i][s]);
          den[k] += w;
          for (std::size_t j2 = 0; j2 < J2; ++j2) {
            const int a2 = p2t[j2][static_cast<std::size_t>(cell.jbar2[j1][j2][i][s])];
            num[k][j2] += w * (qbar2t(i, a1, s, a2) - ec.c2c[j2]);
          }
        }
      auto& p2c = pi2c[j1][static_cast<std::size_t>(a1)];
      p2c.assign(static_cast<std::size_t>(nc), 0);
      for (std::size_t k = 0; k < static_cast<std::size_t>(nc); ++k) {
        if (den[k] == 0) continue;
        std::vector<double> q(J2);
        for (std::size_t j2 = 0; j2 < J2; ++j2) q[j2] = num[k][j2] / den[k];
        p2c[k] = argmax_first(q);
        reg.pi2c[j1][static_cast<std::size_t>(a1)][cell.keys_lbar2[j1][k]] = p2c[k];
      }
    }

  // Qbar1t(s1, j1, a1)
  std::vector<std::vector<std::array<double, 2>>> qbar1t(N1, std::vector<std::array<double, 2>>(J1));
  for (std::size_t i = 0; i < N1; ++i)
    for (std::size_t j1 = 0; j1 < J1; ++j1)
      for (int a1 = 0; a1 < 2; ++a1) {
        double v = 0.0;
        for (std::size_t s = 0; s < N2; ++s) {
          const double t = in.transition[i][static_cast<std::size_t>(a1)][s];
          if (t == 0) continue;
          const auto j2 = pi2c[j1][static_cast<std::size_t>(a1)][static_cast<std::size_t>(cell.lbar2[j1][i][s])];
          const int a2 = pi2t[j1][static_cast<std::size_t>(a1)][j2][static_cast<std::size_t>(cell.jbar2[j1][j2][i][s])];
          v += t * (qbar2t(i, a1, s, a2) - ec.c2c[j2]);
        }
        qbar1t[i][j1][static_cast<std::size_t>(a1)] = v - ec.c1t[static_cast<std::size_t>(a1)];
      }

  // Q1t on S_{j1bar} cells, then Q1c on S_{l1} cells
  std::vector<std::vector<int>> pi1t(J1);
  for (std::size_t j1 = 0; j1 < J1; ++j1) {
    const auto nc = static_cast<std::size_t>(cell.n_jbar1[j1]);
    std::vector<std::array<double, 2>> num(nc, {0.0, 0.0});
    std::vector<double> den(nc, 0.0);
    for (std::size_t i = 0; i < N1; ++i) {
      const auto k = static_cast<std::size_t>(cell.jbar1[j1][i]);
      den[k] += in.s1_prob[i];
      for (int a1 = 0; a1 < 2; ++a1) num[k][static_cast<std::size_t>(a1)] += in.s1_prob[i] * qbar1t[i][j1][static_cast<std::size_t>(a1)];
    }
    pi1t[j1].assign(nc, 0);
    for (std::size_t k = 0; k < nc; ++k) {
      if (den[k] == 0) continue;
      pi1t[j1][k] = num[k][1] / den[k] > num[k][0] / den[k] ? 1 : 0;
      reg.pi1t[j1][cell.keys_jbar1[j1][k]] = pi1t[j1][k];
    }
  }
  const auto nc = static_cast<std::size_t>(cell.n_l1);
  std::vector<std::vector<double>> num(nc, std::vector<double>(J1, 0.0));
  std::vector<double> den(nc, 0.0);
  for (std::size_t i = 0; i < N1; ++i) {
    const auto k = static_cast<std::size_t>(cell.l1[i]);
    den[k] += in.s1_prob[i];
    for (std::size_t j1 = 0; j1 < J1; ++j1) {
      const int a1 = pi1t[j1][static_cast<std::size_t>(cell.jbar1[j1][i])];
      num[k][j1] += in.s1_prob[i] * (qbar1t[i][j1][static_cast<std::size_t>(a1)] - ec.c1c[j1]);
    }
  }
  for (std::size_t k = 0; k < nc; ++k) {
    if (den[k] == 0) continue;
    std::vector<double> q(J1);
    for (std::size_t j1 = 0; j1 < J1; ++j1) q[j1] = num[k][j1] / den[k];
    const auto best = argmax_first(q);
    reg.pi1c[cell.keys_l1[k]] = best;
    res.profit += den[k] * q[best];
  }
  res.evaluated = 1;
  return res;
}

/// Exhaustive search: every stage-1 policy (pi1c over S_l1 cells, pi1t over reachable
/// S_{j1bar} cells) is enumerated. Given stage 1, the reachable stage-2 information cells
/// partition the outcome space and the profit is a sum over cells, so each cell's
/// (j2, a2-map) is chosen by enumerating its own options on joint probability masses.
inline OracleResult brute_force_optimal(const DiscreteInstance& in, double lambda, std::size_t limit = 1000000) {
  in.validate();
  const auto& c = in.catalog;
  CostSpec ec = in.costs;
  ec.lambda = lambda;
  ec = ec.scaled();
  const auto J1 = c.cand1.size(), J2 = c.cand2.size(), N1 = in.n1(), N2 = in.n2();
  detail::CellIndex cell(in);
  const auto L = static_cast<std::size_t>(cell.n_l1);

  // size check
  std::size_t total = 0;
  {
    std::vector<std::size_t> code(L, 0);
    while (true) {
      std::map<std::pair<std::size_t, int>, int> reach;
      for (std::size_t i = 0; i < N1; ++i) {
        const auto j1 = code[static_cast<std::size_t>(cell.l1[i])];
        reach.try_emplace({j1, cell.jbar1[j1][i]}, 0);
      }
      if (reach.size() >= 63) throw ConfigError("regime space too large to enumerate (> 2^63 stage-1 policies)");
      total += std::size_t{1} << reach.size();
      if (total > limit)
        throw ConfigError("regime space too large to enumerate: more than " + std::to_string(limit) +
                          " stage-1 policies (counted " + std::to_string(total) + " so far)");
      std::size_t k = 0;
      while (k < L && ++code[k] == J1) code[k++] = 0;
      if (k == L) break;
    }
  }

  OracleResult best{-std::numeric_limits<double>::infinity(), TabularRegime(c), 0};
  std::vector<std::size_t> code(L, 0);
  while (true) {
    std::map<std::pair<std::size_t, int>, int> reach;
    std::vector<int> slot(N1);
    for (std::size_t i = 0; i < N1; ++i) {
      const auto j1 = code[static_cast<std::size_t>(cell.l1[i])];
      auto [it, fresh] = reach.try_emplace({j1, cell.jbar1[j1][i]}, static_cast<int>(reach.size()));
      slot[i] = it->second;
    }
    const std::size_t R = reach.size();
    for (std::uint64_t tcode = 0; tcode < (std::uint64_t{1} << R); ++tcode) {
      ++best.evaluated;
      // stage-1 profit contributions
      double value = 0.0;
      std::vector<std::size_t> j1of(N1);
      std::vector<int> a1of(N1);
      for (std::size_t i = 0; i < N1; ++i) {
        j1of[i] = code[static_cast<std::size_t>(cell.l1[i])];
        a1of[i] = static_cast<int>((tcode >> slot[i]) & 1U);
        value -= in.s1_prob[i] * (ec.c1c[j1of[i]] + ec.c1t[static_cast<std::size_t>(a1of[i])]);
      }
      // stage-2 cells: (j1, a1, S_{l2bar} cell)
      using C2 = std::tuple<std::size_t, int, int>;
      std::map<C2, std::vector<double>> gain;                     // per j2: -cost mass
      std::map<std::tuple<std::size_t, int, std::size_t, int>, std::array<double, 2>> tmass;  // (j1,a1,j2,jbar2 cell)
      std::map<C2, std::vector<std::vector<int>>> members;        // per j2, list of jbar2 cells
      for (std::size_t i = 0; i < N1; ++i)
        for (std::size_t s = 0; s < N2; ++s) {
          const auto j1 = j1of[i];
          const int a1 = a1of[i];
          const double w = in.s1_prob[i] * in.transition[i][static_cast<std::size_t>(a1)][s];
          if (w == 0) continue;
          C2 key{j1, a1, cell.lbar2[j1][i][s]};
          auto& g = gain[key];
          auto& mem = members[key];
          if (g.empty()) {
            g.assign(J2, 0.0);
            mem.assign(J2, {});
          }
          for (std::size_t j2 = 0; j2 < J2; ++j2) {
            g[j2] -= w * ec.c2c[j2];
            const int k2 = cell.jbar2[j1][j2][i][s];
            auto [it, fresh] = tmass.try_emplace({j1, a1, j2, k2}, std::array<double, 2>{0.0, 0.0});
            if (fresh) mem[j2].push_back(k2);
            for (int a2 = 0; a2 < 2; ++a2)
              it->second[static_cast<std::size_t>(a2)] +=
                  w * (in.mean[i][static_cast<std::size_t>(a1)][s][static_cast<std::size_t>(a2)] - ec.c2t[static_cast<std::size_t>(a2)]);
          }
        }
      std::map<C2, std::size_t> choice;
      for (auto& [key, g] : gain) {
        const auto& [j1, a1, k] = key;
        std::vector<double> opt(J2);
        for (std::size_t j2 = 0; j2 < J2; ++j2) {
          double v = g[j2];
          for (int k2 : members[key][j2]) {
            const auto& m = tmass[{j1, a1, j2, k2}];
            v += std::max(m[0], m[1]);
          }
          opt[j2] = v;
        }
        const auto jb = argmax_first(opt);
        choice[key] = jb;
        value += opt[jb];
      }
      if (value > best.profit) {
        best.profit = value;
        TabularRegime r(c);
        for (std::size_t k = 0; k < L; ++k) r.pi1c[cell.keys_l1[k]] = code[k];
        for (const auto& [jk, sl] : reach)
          r.pi1t[jk.first][cell.keys_jbar1[jk.first][static_cast<std::size_t>(jk.second)]] =
              static_cast<int>((tcode >> sl) & 1U);
        for (const auto& [key, jb] : choice) {
          const auto& [j1, a1, k] = key;
          r.pi2c[j1][static_cast<std::size_t>(a1)][cell.keys_lbar2[j1][static_cast<std::size_t>(k)]] = jb;
          for (int k2 : members[key][jb]) {
            const auto& m = tmass[{j1, a1, jb, k2}];
            r.pi2t[j1][static_cast<std::size_t>(a1)][jb][cell.keys_jbar2[j1][jb][static_cast<std::size_t>(k2)]] =
                m[1] > m[0] ? 1 : 0;
          }
        }
        best.regime = std::move(r);
      }
    }
    std::size_t k = 0;
    while (k < L && ++code[k] == J1) code[k++] = 0;
    if (k == L) break;
  }
  return best;
}

/// Trajectories drawn from a discrete instance with its propensities and Gaussian outcome noise.
inline Dataset sample_instance(const DiscreteInstance& in, std::size_t n, std::uint64_t seed) {
  in.validate();
  if (in.g1.size() != in.n1() || in.g2.size() != in.n1()) throw ConfigError("instance has no propensities for sampling");
  Dataset d{in.catalog.d1, in.catalog.d2, {}};
  std::discrete_distribution<std::size_t> p1(in.s1_prob.begin(), in.s1_prob.end());
  for (std::size_t r = 0; r < n; ++r) {
    Rng rng(derive_seed(seed, "row", static_cast<std::uint64_t>(r)));
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> z;
    const auto i = p1(rng);
    Trajectory t;
    t.s1 = in.s1_support[i];
    t.a1 = u(rng) < in.g1[i] ? 1 : 0;
    const auto& tr = in.transition[i][static_cast<std::size_t>(t.a1)];
    std::discrete_distribution<std::size_t> p2(tr.begin(), tr.end());
    const auto s = p2(rng);
    t.s2 = in.s2_support[s];
    t.a2 = u(rng) < in.g2[i][static_cast<std::size_t>(t.a1)][s] ? 1 : 0;
    t.y = in.mean[i][static_cast<std::size_t>(t.a1)][s][static_cast<std::size_t>(t.a2)] + in.noise_sd * z(rng);
    d.rows.push_back(std::move(t));
  }
  return d;
}

/// Random small instance with binary covariates, for oracle property checks.
inline DiscreteInstance random_instance(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "instance"));
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;
  DiscreteInstance in;
  auto& c = in.catalog;
  c.d1 = static_cast<std::size_t>(1 + coin(rng));
  c.d2 = static_cast<std::size_t>(1 + coin(rng));
  auto binary_points = [](std::size_t d) {
    std::vector<std::vector<double>> pts;
    for (std::size_t m = 0; m < (std::size_t{1} << d); ++m) {
      std::vector<double> v(d);
      for (std::size_t b = 0; b < d; ++b) v[b] = static_cast<double>((m >> b) & 1U);
      pts.push_back(v);
    }
    return pts;
  };
  in.s1_support = binary_points(c.d1);
  in.s2_support = binary_points(c.d2);
  auto random_subset = [&](std::size_t d) {
    std::vector<std::size_t> v;
    for (std::size_t k = 1; k <= d; ++k)
      if (coin(rng)) v.push_back(k);
    return FeatureIndexSet(v);
  };
  c.l1 = random_subset(c.d1);
  c.l2 = random_subset(c.d2);
  auto candidates = [&](const FeatureIndexSet& full, std::size_t maxn) {
    std::vector<FeatureIndexSet> subs;
    const auto& f = full.indices();
    for (std::size_t m = 0; m < (std::size_t{1} << f.size()); ++m) {
      std::vector<std::size_t> v;
      for (std::size_t b = 0; b < f.size(); ++b)
        if ((m >> b) & 1U) v.push_back(f[b]);
      FeatureIndexSet s(v);
      if (s != full) subs.push_back(s);
    }
    std::shuffle(subs.begin(), subs.end(), rng);
    std::vector<FeatureIndexSet> out{full};
    for (std::size_t k = 0; k < subs.size() && out.size() < maxn; ++k)
      if (coin(rng)) out.push_back(subs[k]);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  };
  c.cand1 = candidates(c.full1(), 2);
  c.cand2 = candidates(c.full2(), 3);
  auto simplex = [&](std::size_t k) {
    std::vector<double> p(k);
    double t = 0.0;
    for (auto& v : p) t += (v = 0.05 + u(rng));
    for (auto& v : p) v /= t;
    return p;
  };
  in.s1_prob = simplex(in.n1());
  for (std::size_t i = 0; i < in.n1(); ++i) {
    in.transition.push_back({simplex(in.n2()), simplex(in.n2())});
    in.mean.emplace_back();
    in.g2.emplace_back();
    in.g1.push_back(0.2 + 0.6 * u(rng));
    for (int a = 0; a < 2; ++a) {
      for (std::size_t s = 0; s < in.n2(); ++s) {
        in.mean[i][static_cast<std::size_t>(a)].push_back({z(rng), z(rng)});
        in.g2[i][static_cast<std::size_t>(a)].push_back(0.2 + 0.6 * u(rng));
      }
    }
  }
  auto cost = [&] { return coin(rng) ? 0.0 : 0.5 * u(rng); };
  for (std::size_t k = 0; k < c.cand1.size(); ++k) in.costs.c1c.push_back(cost());
  for (std::size_t k = 0; k < c.cand2.size(); ++k) in.costs.c2c.push_back(cost());
  in.costs.c1t = {cost(), cost()};
  in.costs.c2t = {cost(), cost()};
  in.costs.lambda = 0.5 + 1.5 * u(rng);
  return in;
}

inline double profit_lambda(double utility, const PathCosts& c, double lambda) { return utility - lambda * c.total(); }

struct IpwEstimate {
  double utility = 0.0;
  PathCosts costs;
  double weight_total = 0.0;
};

/// Self-normalized IPW utility of a regime on logged data. p1, p2 are P(A=1 | history) per row.
/// Stage-1 costs are averaged over all rows; stage-2 costs are weighted by the stage-1 match.
inline IpwEstimate ipw_utility(const Dataset& test, const Regime& r, const VectorXd& p1, const VectorXd& p2,
                               const CostSpec& costs) {
  const auto n = test.size();
  if (static_cast<std::size_t>(p1.size()) != n || static_cast<std::size_t>(p2.size()) != n)
    throw DimensionError("propensity vectors must match the dataset");
  std::vector<double> wy(n), w(n), w1(n), c1c(n), c1t(n), c2c(n), c2t(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = test.rows[i];
    RowOracle o(t.s1, t.s2);
    auto rec = deploy(r, o);
    const auto ii = static_cast<Eigen::Index>(i);
    const double q1 = t.a1 ? p1(ii) : 1.0 - p1(ii), q2 = t.a2 ? p2(ii) : 1.0 - p2(ii);
    const double m1 = rec.a1 == t.a1 ? 1.0 / q1 : 0.0;
    const double m2 = rec.a2 == t.a2 ? m1 / q2 : 0.0;
    auto pc = path_costs(rec, costs);
    w[i] = m2;
    wy[i] = m2 * t.y;
    w1[i] = m1;
    c1c[i] = pc.c1c;
    c1t[i] = pc.c1t;
    c2c[i] = m1 * pc.c2c;
    c2t[i] = m2 * pc.c2t;
  }
  IpwEstimate e;
  e.weight_total = pairwise_sum(w);
  if (!(e.weight_total > 0)) throw DataError("IPW: no logged trajectory matches the regime (zero total weight)");
  const double wt1 = pairwise_sum(w1);
  e.utility = pairwise_sum(wy) / e.weight_total;
  e.costs.c1c = pairwise_sum(c1c) / static_cast<double>(n);
  e.costs.c1t = pairwise_sum(c1t) / static_cast<double>(n);
  e.costs.c2c = pairwise_sum(c2c) / wt1;
  e.costs.c2t = pairwise_sum(c2t) / e.weight_total;
  return e;
}

/// Deployed decision frequencies on fresh simulated subjects.
inline FrequencyTable selection_frequencies(const Regime& r, const GenerativeSpec& g, std::size_t n,
                                            std::uint64_t seed) {
  std::vector<DecisionRecord> recs;
  recs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = SimulatedSubject::draw(g.p, derive_seed(seed, "subject", static_cast<std::uint64_t>(i)));
    SimulatedOracle o(s);
    recs.push_back(deploy(r, o));
  }
  return tally(recs, r.catalog());
}

/// Oracle profit minus the Monte Carlo profit of a regime; the s.e. is that of the estimate.
inline MeanSe empirical_regret(const GenerativeSpec& g, const Regime& r, double oracle_profit, const CostSpec& costs,
                               std::size_t n_mc, std::uint64_t seed) {
  auto est = true_profit(g, r, costs, n_mc, seed);
  return {oracle_profit - est.profit.mean, est.profit.se};
}

}  // namespace bql
