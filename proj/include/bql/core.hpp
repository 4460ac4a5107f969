#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace bql {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Error taxonomy. The CLI maps these onto exit codes 2, 3 and 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Sorted, duplicate-free set of 1-based covariate positions within one stage.
class FeatureIndexSet {
 public:
  FeatureIndexSet() = default;
  FeatureIndexSet(std::initializer_list<std::size_t> idx) : FeatureIndexSet(std::vector<std::size_t>(idx)) {}
  explicit FeatureIndexSet(std::vector<std::size_t> idx) : idx_(std::move(idx)) {
    std::sort(idx_.begin(), idx_.end());
    if (std::adjacent_find(idx_.begin(), idx_.end()) != idx_.end())
      throw ConfigError("index set " + to_string() + " has duplicates");
    if (!idx_.empty() && idx_.front() == 0) throw ConfigError("index sets are 1-based; got 0");
  }

  /// {1, ..., d}
  static FeatureIndexSet range(std::size_t d) {
    std::vector<std::size_t> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = i + 1;
    return FeatureIndexSet(std::move(v));
  }

  const std::vector<std::size_t>& indices() const { return idx_; }
  std::size_t size() const { return idx_.size(); }
  bool empty() const { return idx_.empty(); }
  std::size_t max() const { return idx_.empty() ? 0 : idx_.back(); }
  bool contains(std::size_t i) const { return std::binary_search(idx_.begin(), idx_.end(), i); }

  bool subset_of(const FeatureIndexSet& o) const {
    return std::includes(o.idx_.begin(), o.idx_.end(), idx_.begin(), idx_.end());
  }
  bool disjoint(const FeatureIndexSet& o) const {
    for (auto i : idx_)
      if (o.contains(i)) return false;
    return true;
  }
  FeatureIndexSet unite(const FeatureIndexSet& o) const {
    std::vector<std::size_t> v;
    std::set_union(idx_.begin(), idx_.end(), o.idx_.begin(), o.idx_.end(), std::back_inserter(v));
    return FeatureIndexSet(std::move(v));
  }
  FeatureIndexSet minus(const FeatureIndexSet& o) const {
    std::vector<std::size_t> v;
    std::set_difference(idx_.begin(), idx_.end(), o.idx_.begin(), o.idx_.end(), std::back_inserter(v));
    return FeatureIndexSet(std::move(v));
  }

  std::string to_string() const {
    std::ostringstream os;
    os << '{';
    for (std::size_t k = 0; k < idx_.size(); ++k) os << (k ? "," : "") << idx_[k];
    os << '}';
    return os.str();
  }

  auto operator<=>(const FeatureIndexSet&) const = default;

 private:
  std::vector<std::size_t> idx_;
};

/// Free covariates and candidate assessment sets for both stages.
struct AssessmentCatalog {
  std::size_t d1 = 0, d2 = 0;
  FeatureIndexSet l1, l2;
  std::vector<FeatureIndexSet> cand1, cand2;

  FeatureIndexSet full1() const { return FeatureIndexSet::range(d1).minus(l1); }
  FeatureIndexSet full2() const { return FeatureIndexSet::range(d2).minus(l2); }

  std::size_t full1_pos() const { return position(cand1, full1()); }
  std::size_t full2_pos() const { return position(cand2, full2()); }

  /// Throws ConfigError when an invariant fails.
  void validate() const {
    if (d1 == 0 || d2 == 0) throw ConfigError("catalog dimensions must be positive");
    if (l1.max() > d1 || l2.max() > d2) throw ConfigError("free covariate index out of range");
    check_stage(cand1, l1, d1, full1(), "stage-1");
    check_stage(cand2, l2, d2, full2(), "stage-2");
  }

  static std::size_t position(const std::vector<FeatureIndexSet>& c, const FeatureIndexSet& s) {
    auto it = std::find(c.begin(), c.end(), s);
    if (it == c.end()) throw ConfigError("candidate " + s.to_string() + " not in catalog");
    return static_cast<std::size_t>(it - c.begin());
  }

 private:
  static void check_stage(const std::vector<FeatureIndexSet>& c, const FeatureIndexSet& l, std::size_t d,
                          const FeatureIndexSet& full, const char* tag) {
    if (c.empty()) throw ConfigError(std::string(tag) + " candidate list is empty");
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (!c[k].disjoint(l)) throw ConfigError(std::string(tag) + " candidate " + c[k].to_string() + " overlaps free set");
      if (c[k].max() > d) throw ConfigError(std::string(tag) + " candidate " + c[k].to_string() + " out of range");
      for (std::size_t m = 0; m < k; ++m)
        if (c[m] == c[k]) throw ConfigError(std::string(tag) + " candidate list has duplicates");
    }
    if (std::find(c.begin(), c.end(), full) == c.end())
      throw ConfigError(std::string(tag) + " candidates must include the full set " + full.to_string());
  }
};

/// Assessment costs aligned with catalog positions, treatment costs indexed by action.
struct CostSpec {
  std::vector<double> c1c, c2c;
  std::array<double, 2> c1t{0.0, 0.0}, c2t{0.0, 0.0};
  double lambda = 1.0;

  void validate(const AssessmentCatalog& cat) const {
    if (c1c.size() != cat.cand1.size() || c2c.size() != cat.cand2.size())
      throw ConfigError("assessment cost tables must match the catalog candidate counts");
    for (double c : c1c)
      if (!(c >= 0) || !std::isfinite(c)) throw ConfigError("assessment costs must be finite and nonnegative");
    for (double c : c2c)
      if (!(c >= 0) || !std::isfinite(c)) throw ConfigError("assessment costs must be finite and nonnegative");
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and nonnegative");
    for (double c : {c1t[0], c1t[1], c2t[0], c2t[1]})
      if (!std::isfinite(c)) throw ConfigError("treatment costs must be finite");
  }

  /// Every cost multiplied by lambda; the result carries lambda = 1.
  CostSpec scaled() const {
    CostSpec s = *this;
    for (auto& c : s.c1c) c *= lambda;
    for (auto& c : s.c2c) c *= lambda;
    for (auto* p : {&s.c1t, &s.c2t})
      for (auto& c : *p) c *= lambda;
    s.lambda = 1.0;
    return s;
  }

  static CostSpec zero(const AssessmentCatalog& cat) {
    CostSpec s;
    s.c1c.assign(cat.cand1.size(), 0.0);
    s.c2c.assign(cat.cand2.size(), 0.0);
    s.lambda = 0.0;
    return s;
  }
};

struct Trajectory {
  std::vector<double> s1;
  int a1 = 0;
  std::vector<double> s2;
  int a2 = 0;
  double y = 0.0;
};

struct Dataset {
  std::size_t d1 = 0, d2 = 0;
  std::vector<Trajectory> rows;

  std::size_t size() const { return rows.size(); }
};

struct Violation {
  std::optional<std::size_t> row;
  std::string reason;

  std::string to_string() const {
    return row ? "row " + std::to_string(*row) + ": " + reason : reason;
  }
};

inline std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  if (d.d1 == 0 || d.d2 == 0) out.push_back({std::nullopt, "covariate dimensions must be positive"});
  if (d.rows.empty()) {
    out.push_back({std::nullopt, "dataset is empty"});
    return out;
  }
  std::array<std::size_t, 2> arm1{0, 0}, arm2{0, 0};
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    const auto& t = d.rows[i];
    if (t.s1.size() != d.d1) out.push_back({i, "s1 has length " + std::to_string(t.s1.size())});
    if (t.s2.size() != d.d2) out.push_back({i, "s2 has length " + std::to_string(t.s2.size())});
    if (!finite(t.s1) || !finite(t.s2)) out.push_back({i, "non-finite covariate"});
    if (!std::isfinite(t.y)) out.push_back({i, "non-finite outcome"});
    if (t.a1 != 0 && t.a1 != 1) out.push_back({i, "treatment not binary (a1)"});
    else ++arm1[t.a1];
    if (t.a2 != 0 && t.a2 != 1) out.push_back({i, "treatment not binary (a2)"});
    else ++arm2[t.a2];
  }
  for (int a = 0; a < 2; ++a) {
    if (arm1[a] == 0) out.push_back({std::nullopt, "positivity: arm " + std::to_string(a) + " absent at stage 1"});
    if (arm2[a] == 0) out.push_back({std::nullopt, "positivity: arm " + std::to_string(a) + " absent at stage 2"});
  }
  return out;
}

inline void require_valid(const Dataset& d) {
  auto v = validate_dataset(d);
  if (!v.empty()) throw DataError("invalid dataset: " + v.front().to_string());
}

inline std::vector<double> subvector(std::span<const double> x, const FeatureIndexSet& s) {
  if (s.max() > x.size())
    throw DimensionError("index " + std::to_string(s.max()) + " out of range for vector of length " +
                         std::to_string(x.size()));
  std::vector<double> out;
  out.reserve(s.size());
  for (auto i : s.indices()) out.push_back(x[i - 1]);
  return out;
}

using DesignPart = std::variant<std::vector<double>, double>;

inline std::vector<double> assemble_design(const std::vector<DesignPart>& parts, bool intercept) {
  std::vector<double> out;
  for (const auto& p : parts) {
    if (const auto* v = std::get_if<std::vector<double>>(&p)) out.insert(out.end(), v->begin(), v->end());
    else out.push_back(std::get<double>(p));
  }
  if (intercept) out.push_back(1.0);
  return out;
}

/// Column-oriented copy of a dataset for the numerical pipeline.
struct DataMatrices {
  MatrixXd s1, s2;
  VectorXd a1, a2, y;

  Eigen::Index n() const { return y.size(); }

  static DataMatrices from(const Dataset& d) {
    const auto n = static_cast<Eigen::Index>(d.size());
    DataMatrices m;
    m.s1.resize(n, static_cast<Eigen::Index>(d.d1));
    m.s2.resize(n, static_cast<Eigen::Index>(d.d2));
    m.a1.resize(n);
    m.a2.resize(n);
    m.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = d.rows[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < d.d1; ++j) m.s1(i, static_cast<Eigen::Index>(j)) = t.s1[j];
      for (std::size_t j = 0; j < d.d2; ++j) m.s2(i, static_cast<Eigen::Index>(j)) = t.s2[j];
      m.a1(i) = t.a1;
      m.a2(i) = t.a2;
      m.y(i) = t.y;
    }
    return m;
  }

  DataMatrices rows(const std::vector<Eigen::Index>& idx) const {
    DataMatrices m;
    m.s1 = s1(idx, Eigen::all);
    m.s2 = s2(idx, Eigen::all);
    m.a1 = a1(idx);
    m.a2 = a2(idx);
    m.y = y(idx);
    return m;
  }
};

/// Columns of X at the 1-based positions in s.
inline MatrixXd select_columns(const MatrixXd& x, const FeatureIndexSet& s) {
  if (s.max() > static_cast<std::size_t>(x.cols()))
    throw DimensionError("index " + std::to_string(s.max()) + " out of range for " + std::to_string(x.cols()) +
                         " columns");
  MatrixXd out(x.rows(), static_cast<Eigen::Index>(s.size()));
  Eigen::Index c = 0;
  for (auto i : s.indices()) out.col(c++) = x.col(static_cast<Eigen::Index>(i - 1));
  return out;
}

/// Horizontal concatenation of blocks with an optional trailing column of ones.
inline MatrixXd design_matrix(std::initializer_list<MatrixXd> blocks, bool intercept) {
  Eigen::Index n = -1, p = intercept ? 1 : 0;
  for (const auto& b : blocks) {
    if (n >= 0 && b.rows() != n) throw DimensionError("design blocks have different row counts");
    n = b.rows();
    p += b.cols();
  }
  if (n < 0) throw DimensionError("design needs at least one block");
  MatrixXd out(n, p);
  Eigen::Index c = 0;
  for (const auto& b : blocks) {
    out.middleCols(c, b.cols()) = b;
    c += b.cols();
  }
  if (intercept) out.col(p - 1).setOnes();
  return out;
}

/// Deterministic pairwise summation.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const auto h = x.size() / 2;
  return pairwise_sum(x.first(h)) + pairwise_sum(x.subspan(h));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> x) {
  MeanSe r;
  if (x.empty()) return r;
  const double n = static_cast<double>(x.size());
  r.mean = pairwise_sum(x) / n;
  if (x.size() > 1) {
    std::vector<double> sq(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - r.mean) * (x[i] - r.mean);
    r.se = std::sqrt(pairwise_sum(sq) / (n - 1.0) / n);
  }
  return r;
}

}  // namespace bql
