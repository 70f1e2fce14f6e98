#pragma once

#include "common.hpp"

#include <limits>
#include <vector>

namespace ncl {

// Uniform-weight point cloud; one point per row.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  explicit EmpiricalMeasure(Mat points) : pts_(std::move(points)) {
    if (pts_.rows() == 0 || pts_.cols() == 0)
      throw Error(ErrorCode::ShapeError, "empirical measure must be nonempty");
    if (!pts_.allFinite()) throw Error(ErrorCode::InvalidCost, "empirical measure has non-finite points");
  }

  Eigen::Index size() const { return pts_.rows(); }
  Eigen::Index dim() const { return pts_.cols(); }
  const Mat& points() const { return pts_; }
  auto point(Eigen::Index i) const { return pts_.row(i); }

  static EmpiricalMeasure from_csv(const std::string& path) { return EmpiricalMeasure(csv::read(path)); }
  void to_csv(const std::string& path) const { csv::write(path, pts_); }

 private:
  Mat pts_;
};

struct Assignment {
  std::vector<int> perm;  // row i -> column perm[i]
  double cost = 0.0;
};

inline Mat euclidean_cost(const Mat& p, const Mat& q) {
  Mat c(p.rows(), q.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < q.rows(); ++j) c(i, j) = (p.row(i) - q.row(j)).norm();
  return c;
}

// Shortest augmenting path Hungarian method with potentials, O(n^3).
inline Assignment assignment_min(const Mat& c) {
  if (c.rows() != c.cols())
    throw Error(ErrorCode::ShapeError, "cost matrix is " + std::to_string(c.rows()) + "x" + std::to_string(c.cols()));
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (std::isnan(c.data()[i])) throw Error(ErrorCode::InvalidCost, "NaN entry in cost matrix");
  if (!c.allFinite()) throw Error(ErrorCode::InvalidCost, "infinite entry in cost matrix");

  const int n = static_cast<int>(c.rows());
  Assignment out;
  if (n == 0) return out;
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  out.perm.assign(n, -1);
  for (int j = 1; j <= n; ++j) out.perm[p[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) out.cost += c(i, out.perm[i]);
  return out;
}

inline void check_compatible(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.size() != nu.size())
    throw Error(ErrorCode::SizeMismatch,
                "measures have " + std::to_string(mu.size()) + " and " + std::to_string(nu.size()) + " points");
  if (mu.dim() != nu.dim())
    throw Error(ErrorCode::DimensionMismatch,
                "measures live in R^" + std::to_string(mu.dim()) + " and R^" + std::to_string(nu.dim()));
}

inline double w1_empirical(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_compatible(mu, nu);
  auto a = assignment_min(euclidean_cost(mu.points(), nu.points()));
  return a.cost / static_cast<double>(mu.size());
}

// A dataset viewed as a pair of measures (features, labels) with matched rows.
struct MeasurePair {
  Mat x;
  Mat y;
};

inline EmpiricalMeasure joint_measure(const MeasurePair& p) {
  if (p.x.rows() != p.y.rows())
    throw Error(ErrorCode::SizeMismatch, "feature and label counts differ");
  Mat j(p.x.rows(), p.x.cols() + p.y.cols());
  j << p.x, p.y;
  return EmpiricalMeasure(std::move(j));
}

// W1 between the joint (x, y) clouds.
inline double kr_pair_distance(const MeasurePair& a, const MeasurePair& b) {
  return w1_empirical(joint_measure(a), joint_measure(b));
}

struct PairDistances {
  double joint = 0.0;
  double features = 0.0;
  double labels = 0.0;
  double componentwise() const { return features + labels; }
};

inline PairDistances kr_pair_report(const MeasurePair& a, const MeasurePair& b) {
  PairDistances r;
  r.joint = kr_pair_distance(a, b);
  r.features = w1_empirical(EmpiricalMeasure(a.x), EmpiricalMeasure(b.x));
  r.labels = w1_empirical(EmpiricalMeasure(a.y), EmpiricalMeasure(b.y));
  return r;
}

}  // namespace ncl
