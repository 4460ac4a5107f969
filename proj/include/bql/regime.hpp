#pragma once

#include <string>
#include <vector>

#include "bql/core.hpp"

namespace bql {

/// Covariates revealed so far for one subject. Reading an unrevealed entry throws,
/// so a decision rule can only use what has been assessed.
class History {
 public:
  History(std::size_t d1, std::size_t d2) : s1_(d1, 0.0), s2_(d2, 0.0), k1_(d1, 0), k2_(d2, 0) {}

  void reveal1(const FeatureIndexSet& s, const std::vector<double>& v) { reveal(s, v, s1_, k1_); }
  void reveal2(const FeatureIndexSet& s, const std::vector<double>& v) { reveal(s, v, s2_, k2_); }

  std::vector<double> gather1(const FeatureIndexSet& s) const { return gather(s, s1_, k1_, 1); }
  std::vector<double> gather2(const FeatureIndexSet& s) const { return gather(s, s2_, k2_, 2); }

  std::size_t d1() const { return s1_.size(); }
  std::size_t d2() const { return s2_.size(); }

 private:
  static void reveal(const FeatureIndexSet& s, const std::vector<double>& v, std::vector<double>& x,
                     std::vector<char>& k) {
    if (v.size() != s.size()) throw DimensionError("revealed " + std::to_string(v.size()) + " values for " + s.to_string());
    if (s.max() > x.size()) throw DimensionError("index set " + s.to_string() + " out of range");
    for (std::size_t t = 0; t < s.size(); ++t) {
      x[s.indices()[t] - 1] = v[t];
      k[s.indices()[t] - 1] = 1;
    }
  }
  static std::vector<double> gather(const FeatureIndexSet& s, const std::vector<double>& x, const std::vector<char>& k,
                                    int stage) {
    for (auto i : s.indices())
      if (i > x.size() || !k[i - 1])
        throw DataError("stage-" + std::to_string(stage) + " covariate " + std::to_string(i) + " was not assessed");
    return subvector(x, s);
  }

  std::vector<double> s1_, s2_;
  std::vector<char> k1_, k2_;
};

struct AssessmentChoice {
  std::size_t position = 0;
  std::vector<double> scores;
};

struct TreatmentChoice {
  int action = 0;
  double score = 0.0;
};

/// Lowest position among maximal scores.
inline std::size_t argmax_first(const std::vector<double>& s) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < s.size(); ++k)
    if (s[k] > s[best]) best = k;
  return best;
}

/// A two-stage regime deciding assessments and treatments from revealed covariates.
class Regime {
 public:
  virtual ~Regime() = default;
  virtual std::string kind() const = 0;
  virtual const AssessmentCatalog& catalog() const = 0;
  virtual AssessmentChoice assess1(const History& h) const = 0;
  virtual TreatmentChoice treat1(const History& h, std::size_t j1) const = 0;
  virtual AssessmentChoice assess2(const History& h, std::size_t j1, int a1) const = 0;
  virtual TreatmentChoice treat2(const History& h, std::size_t j1, int a1, std::size_t j2) const = 0;
  /// True when some design used on this path lies beyond the training range.
  virtual bool extrapolates(const History&, std::size_t, int, std::size_t) const { return false; }
};

}  // namespace bql
