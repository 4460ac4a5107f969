#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bql/core.hpp"
#include "bql/rng.hpp"

namespace bql {

struct ForestParams {
  int trees = 200;
  int max_depth = 8;
  int min_leaf = 5;
  double feature_fraction = 0.0;  // 0 selects 1/sqrt(p)
};

/// Regression tree stored as a flat node array; leaves carry the mean response.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
  };

  void fit(const MatrixXd& x, const VectorXd& y, std::vector<Eigen::Index> rows, const ForestParams& prm, int mtry,
           Rng& rng) {
    nodes_.clear();
    build(x, y, rows, 0, prm, mtry, rng);
  }

  double predict(const double* row, Eigen::Index stride) const {
    int k = 0;
    while (nodes_[k].feature >= 0)
      k = row[nodes_[k].feature * stride] <= nodes_[k].threshold ? nodes_[k].left : nodes_[k].right;
    return nodes_[k].value;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  int build(const MatrixXd& x, const VectorXd& y, std::vector<Eigen::Index>& rows, int depth, const ForestParams& prm,
            int mtry, Rng& rng) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double sum = 0.0;
    for (auto r : rows) sum += y(r);
    const double n = static_cast<double>(rows.size());
    nodes_[id].value = sum / n;

    const auto m = static_cast<int>(rows.size());
    if (depth >= prm.max_depth || m < 2 * prm.min_leaf) return id;
    double lo = y(rows[0]), hi = lo;
    for (auto r : rows) lo = std::min(lo, y(r)), hi = std::max(hi, y(r));
    if (lo == hi) return id;

    const int p = static_cast<int>(x.cols());
    std::vector<int> feats(p);
    std::iota(feats.begin(), feats.end(), 0);
    for (int k = 0; k < mtry; ++k) {
      std::uniform_int_distribution<int> pick(k, p - 1);
      std::swap(feats[k], feats[pick(rng)]);
    }

    int best_f = -1;
    double best_thr = 0.0, best_gain = 1e-12 * n;
    std::vector<std::pair<double, double>> buf(rows.size());
    for (int k = 0; k < mtry; ++k) {
      const int f = feats[k];
      for (std::size_t t = 0; t < rows.size(); ++t) buf[t] = {x(rows[t], f), y(rows[t])};
      std::sort(buf.begin(), buf.end());
      double left_sum = 0.0;
      for (int t = 0; t < m - 1; ++t) {
        left_sum += buf[t].second;
        const int nl = t + 1, nr = m - nl;
        if (nl < prm.min_leaf) continue;
        if (nr < prm.min_leaf) break;
        if (buf[t].first == buf[t + 1].first) continue;
        const double right_sum = sum - left_sum;
        // SSE reduction up to a constant
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - sum * sum / n;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_thr = 0.5 * (buf[t].first + buf[t + 1].first);
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<Eigen::Index> lrows, rrows;
    for (auto r : rows) (x(r, best_f) <= best_thr ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    nodes_[id].feature = best_f;
    nodes_[id].threshold = best_thr;
    const int l = build(x, y, lrows, depth + 1, prm, mtry, rng);
    nodes_[id].left = l;
    const int r = build(x, y, rrows, depth + 1, prm, mtry, rng);
    nodes_[id].right = r;
    return id;
  }

  std::vector<Node> nodes_;
};

class RandomForest {
 public:
  void fit(const MatrixXd& x, const VectorXd& y, const ForestParams& prm, std::uint64_t seed) {
    if (prm.trees < 1 || prm.max_depth < 0 || prm.min_leaf < 1) throw ConfigError("invalid forest hyperparameters");
    const int p = static_cast<int>(x.cols());
    const double frac = prm.feature_fraction > 0 ? prm.feature_fraction : 1.0 / std::sqrt(static_cast<double>(p));
    const int mtry = std::clamp(static_cast<int>(std::lround(frac * p)), 1, p);
    const auto n = x.rows();
    trees_.assign(static_cast<std::size_t>(prm.trees), {});
    for (int t = 0; t < prm.trees; ++t) {
      Rng rng(derive_seed(seed, "tree", static_cast<std::uint64_t>(t)));
      std::uniform_int_distribution<Eigen::Index> draw(0, n - 1);
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
      for (auto& r : rows) r = draw(rng);
      trees_[static_cast<std::size_t>(t)].fit(x, y, std::move(rows), prm, mtry, rng);
    }
  }

  VectorXd predict(const MatrixXd& x) const {
    VectorXd out = VectorXd::Zero(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double s = 0.0;
      for (const auto& t : trees_) s += t.predict(&x(i, 0), x.rows());
      out(i) = s / static_cast<double>(trees_.size());
    }
    return out;
  }

 private:
  std::vector<RegressionTree> trees_;
};

}  // namespace bql
