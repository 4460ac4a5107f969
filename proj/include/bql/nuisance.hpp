#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bql/core.hpp"
#include "bql/forest.hpp"
#include "bql/rng.hpp"

namespace bql {

struct FoldPlan {
  std::size_t n = 0, K = 0;
  std::vector<int> assignment;
  std::uint64_t seed = 0;

  std::vector<Eigen::Index> in_fold(int k) const {
    std::vector<Eigen::Index> r;
    for (std::size_t i = 0; i < n; ++i)
      if (assignment[i] == k) r.push_back(static_cast<Eigen::Index>(i));
    return r;
  }
  std::vector<Eigen::Index> out_of_fold(int k) const {
    std::vector<Eigen::Index> r;
    for (std::size_t i = 0; i < n; ++i)
      if (assignment[i] != k) r.push_back(static_cast<Eigen::Index>(i));
    return r;
  }
};

inline FoldPlan make_folds(std::size_t n, std::size_t K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("need at least 2 folds");
  if (K > n) throw ConfigError("cannot split " + std::to_string(n) + " rows into " + std::to_string(K) + " folds");
  FoldPlan p{n, K, std::vector<int>(n), seed};
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, "folds"));
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> u(0, i);
    std::swap(perm[i], perm[u(rng)]);
  }
  for (std::size_t r = 0; r < n; ++r) p.assignment[perm[r]] = static_cast<int>(r % K);
  return p;
}

enum class LearnerKind { ridge, forest, super_learner };

inline std::string to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::ridge: return "ridge";
    case LearnerKind::forest: return "forest";
    default: return "super_learner";
  }
}

inline LearnerKind learner_kind_from(const std::string& s) {
  if (s == "ridge") return LearnerKind::ridge;
  if (s == "forest") return LearnerKind::forest;
  if (s == "super_learner") return LearnerKind::super_learner;
  throw ConfigError("unknown learner kind '" + s + "'");
}

struct LearnerSpec {
  LearnerKind kind = LearnerKind::super_learner;
  double ridge_penalty = 1e-4;
  ForestParams forest;
  int internal_folds = 5;

  void validate() const {
    if (!(ridge_penalty >= 0)) throw ConfigError("ridge penalty must be nonnegative");
    if (forest.trees < 1 || forest.max_depth < 1 || forest.min_leaf < 1 || forest.feature_fraction < 0 ||
        forest.feature_fraction > 1)
      throw ConfigError("forest hyperparameters out of range");
    if (internal_folds < 2) throw ConfigError("internal CV needs at least 2 folds");
  }
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual VectorXd predict(const MatrixXd& x) const = 0;
};

/// Ridge on standardized columns with an unpenalized intercept:
/// minimizes (1/n)|y - b0 - Xb|^2 + penalty |b|^2 on the standardized scale.
class RidgeModel : public Predictor {
 public:
  RidgeModel(const MatrixXd& x, const VectorXd& y, double penalty) {
    const double n = static_cast<double>(x.rows());
    mean_ = x.colwise().mean();
    MatrixXd xc = x.rowwise() - mean_.transpose();
    scale_ = (xc.colwise().squaredNorm() / n).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < scale_.size(); ++j)
      if (scale_(j) < 1e-12) scale_(j) = 0.0;
    MatrixXd z = xc;
    for (Eigen::Index j = 0; j < z.cols(); ++j) z.col(j) = scale_(j) > 0 ? VectorXd(xc.col(j) / scale_(j)) : VectorXd::Zero(x.rows());
    ymean_ = y.mean();
    MatrixXd g = z.transpose() * z / n;
    g.diagonal().array() += penalty;
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      if (scale_(j) == 0) g(j, j) = 1.0;
    VectorXd rhs = z.transpose() * (y.array() - ymean_).matrix() / n;
    coef_ = g.ldlt().solve(rhs);
  }

  VectorXd predict(const MatrixXd& x) const override {
    VectorXd out = VectorXd::Constant(x.rows(), ymean_);
    for (Eigen::Index j = 0; j < coef_.size(); ++j)
      if (scale_(j) > 0) out += (x.col(j).array() - mean_(j)).matrix() * (coef_(j) / scale_(j));
    return out;
  }

 private:
  VectorXd mean_, scale_, coef_;
  double ymean_ = 0.0;
};

class ForestModel : public Predictor {
 public:
  ForestModel(const MatrixXd& x, const VectorXd& y, const ForestParams& p, std::uint64_t seed) { rf_.fit(x, y, p, seed); }
  VectorXd predict(const MatrixXd& x) const override { return rf_.predict(x); }

 private:
  RandomForest rf_;
};

struct TrainedLearner {
  std::shared_ptr<const Predictor> model;
  LearnerKind chosen = LearnerKind::ridge;
  // internal-CV mean squared errors of (ridge, forest); filled by the super learner
  std::optional<std::pair<double, double>> cv_mse;
};

inline std::shared_ptr<const Predictor> train_base(LearnerKind k, const LearnerSpec& spec, const MatrixXd& x,
                                                   const VectorXd& y, std::uint64_t seed) {
  if (k == LearnerKind::ridge) return std::make_shared<RidgeModel>(x, y, spec.ridge_penalty);
  return std::make_shared<ForestModel>(x, y, spec.forest, seed);
}

/// Fits the requested learner on (x, y). The super learner picks the base learner with
/// lower internal-CV mean squared error (ties to ridge) and refits it on all rows.
inline TrainedLearner train_learner(const LearnerSpec& spec, const MatrixXd& x, const VectorXd& y, std::uint64_t seed) {
  spec.validate();
  if (x.rows() < 1) throw ConfigError("cannot train a learner on zero rows");
  TrainedLearner t;
  if (spec.kind != LearnerKind::super_learner) {
    t.chosen = spec.kind;
    t.model = train_base(spec.kind, spec, x, y, derive_seed(seed, "base"));
    return t;
  }
  const auto n = static_cast<std::size_t>(x.rows());
  const std::size_t V = std::min<std::size_t>(static_cast<std::size_t>(spec.internal_folds), n);
  std::array<double, 2> sse{0.0, 0.0};
  if (V >= 2) {
    FoldPlan inner = make_folds(n, V, derive_seed(seed, "sl-folds"));
    for (int v = 0; v < static_cast<int>(V); ++v) {
      auto tr = inner.out_of_fold(v), te = inner.in_fold(v);
      MatrixXd xt = x(tr, Eigen::all), xv = x(te, Eigen::all);
      VectorXd yt = y(tr), yv = y(te);
      for (int b = 0; b < 2; ++b) {
        auto kind = b == 0 ? LearnerKind::ridge : LearnerKind::forest;
        auto m = train_base(kind, spec, xt, yt, derive_seed(seed, "sl", static_cast<std::uint64_t>(v)));
        sse[static_cast<std::size_t>(b)] += (m->predict(xv) - yv).squaredNorm();
      }
    }
  }
  t.cv_mse = std::make_pair(sse[0] / static_cast<double>(n), sse[1] / static_cast<double>(n));
  t.chosen = t.cv_mse->second < t.cv_mse->first ? LearnerKind::forest : LearnerKind::ridge;
  t.model = train_base(t.chosen, spec, x, y, derive_seed(seed, "base"));
  return t;
}

struct CrossFitPredictor {
  std::vector<TrainedLearner> per_fold;
  VectorXd oof;
  std::vector<LearnerKind> chosen;
};

inline VectorXd clip(VectorXd v, std::optional<std::pair<double, double>> c) {
  if (c) v = v.cwiseMax(c->first).cwiseMin(c->second);
  return v;
}

inline CrossFitPredictor fit_crossfit(const MatrixXd& x, const VectorXd& y, const FoldPlan& plan,
                                      const LearnerSpec& spec, std::optional<std::pair<double, double>> clip_to = {},
                                      std::uint64_t seed = 0) {
  if (static_cast<std::size_t>(x.rows()) != plan.n || y.size() != x.rows())
    throw DimensionError("fit_crossfit: data rows do not match the fold plan");
  CrossFitPredictor cf;
  cf.oof = VectorXd::Zero(x.rows());
  for (int k = 0; k < static_cast<int>(plan.K); ++k) {
    auto tr = plan.out_of_fold(k), te = plan.in_fold(k);
    auto t = train_learner(spec, x(tr, Eigen::all), y(tr), derive_seed(seed, plan.seed, "fold", static_cast<std::uint64_t>(k)));
    cf.oof(te) = clip(t.model->predict(x(te, Eigen::all)), clip_to);
    cf.chosen.push_back(t.chosen);
    cf.per_fold.push_back(std::move(t));
  }
  return cf;
}

}  // namespace bql
