#pragma once

#include "common.hpp"

#include <fstream>
#include <string>
#include <vector>

namespace ncl {

enum class RowSense { Eq, Le };

// min c'x  s.t.  M x (= | <=) r,  x >= 0.
struct StandardLp {
  Vec c;
  Mat M;
  Vec r;
  std::vector<RowSense> sense;  // empty means all Eq
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

inline std::string_view to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "Optimal";
    case LpStatus::Infeasible: return "Infeasible";
    case LpStatus::Unbounded: return "Unbounded";
  }
  return "Unknown";
}

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  double value = 0.0;
  Vec x;                   // original variables only
  std::vector<int> basis;  // basic column indices (slacks numbered after the n structurals)
  Vec y;                   // row duals: dV/dr_i
  int iterations = 0;
};

struct LpOptions {
  int max_iterations = 200000;
  double pivot_tol = 1e-10;
  std::string tableau_dump;  // CSV path for the final tableau, empty to skip
};

namespace detail {

class Tableau {
 public:
  using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  RMat t;  // rows 0..m-1 constraints, row m objective; last column rhs
  std::vector<int> basis;
  int ncols = 0;

  void pivot(int row, int col) {
    t.row(row) /= t(row, col);
    t(row, col) = 1.0;
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      if (i == row) continue;
      double f = t(i, col);
      if (f != 0.0) {
        t.row(i) -= f * t.row(row);
        t(i, col) = 0.0;
      }
    }
    basis[row] = col;
  }

  // Bland's rule. Returns false on unboundedness.
  bool run(const std::vector<char>& allowed, const LpOptions& opt, int& iters) {
    const int m = static_cast<int>(basis.size());
    const int obj = m;
    const int rhs = ncols;
    for (;;) {
      int enter = -1;
      for (int j = 0; j < ncols; ++j) {
        if (allowed[j] && t(obj, j) < -opt.pivot_tol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best = 0.0;
      for (int i = 0; i < m; ++i) {
        double a = t(i, enter);
        if (a <= opt.pivot_tol) continue;
        double ratio = std::max(t(i, rhs), 0.0) / a;
        if (leave < 0 || ratio < best - 1e-14 * std::max(1.0, best) ||
            (ratio <= best + 1e-14 * std::max(1.0, best) && basis[i] < basis[leave])) {
          leave = i;
          best = ratio;
        }
      }
      if (leave < 0) return false;
      if (++iters > opt.max_iterations)
        throw Error(ErrorCode::BudgetExceeded, "simplex exceeded " + std::to_string(opt.max_iterations) + " pivots");
      pivot(leave, enter);
    }
  }
};

}  // namespace detail

inline LpResult solve_lp(const StandardLp& lp, const LpOptions& opt = {}) {
  const Eigen::Index m = lp.M.rows(), n = lp.M.cols();
  if (lp.c.size() != n || lp.r.size() != m)
    throw Error(ErrorCode::InvalidProgram, "inconsistent LP dimensions");
  if (!lp.sense.empty() && static_cast<Eigen::Index>(lp.sense.size()) != m)
    throw Error(ErrorCode::InvalidProgram, "row sense list has wrong length");
  if (!lp.c.allFinite() || !lp.M.allFinite() || !lp.r.allFinite())
    throw Error(ErrorCode::InvalidProgram, "non-finite LP data");

  auto sense = [&](Eigen::Index i) { return lp.sense.empty() ? RowSense::Eq : lp.sense[i]; };
  int nslack = 0;
  std::vector<int> slack_of(m, -1);
  for (Eigen::Index i = 0; i < m; ++i)
    if (sense(i) == RowSense::Le) slack_of[i] = static_cast<int>(n) + nslack++;

  // Equality system on structurals + slacks with nonnegative rhs.
  const Eigen::Index nv = n + nslack;
  Mat A = Mat::Zero(m, nv);
  Vec b(m);
  Vec sign = Vec::Ones(m);
  A.leftCols(n) = lp.M;
  b = lp.r;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (slack_of[i] >= 0) A(i, slack_of[i]) = 1.0;
    if (b[i] < 0) {
      A.row(i) *= -1.0;
      b[i] = -b[i];
      sign[i] = -1.0;
    }
  }

  // Initial basis: a slack with +1 coefficient, else an artificial.
  std::vector<int> art_row;
  std::vector<int> init_basis(m, -1);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (slack_of[i] >= 0 && A(i, slack_of[i]) > 0) init_basis[i] = slack_of[i];
    else art_row.push_back(static_cast<int>(i));
  }
  const int nart = static_cast<int>(art_row.size());
  const int ncols = static_cast<int>(nv) + nart;

  detail::Tableau tab;
  tab.ncols = ncols;
  tab.t = detail::Tableau::RMat::Zero(m + 1, ncols + 1);
  tab.t.topLeftCorner(m, nv) = A;
  tab.t.col(ncols).head(m) = b;
  for (int k = 0; k < nart; ++k) {
    tab.t(art_row[k], nv + k) = 1.0;
    init_basis[art_row[k]] = static_cast<int>(nv) + k;
  }
  tab.basis = init_basis;

  LpResult res;
  int iters = 0;
  std::vector<int> rows;  // original rows surviving phase 1, aligned with tab.basis

  // Phase 1: minimize the sum of artificials.
  if (nart > 0) {
    for (int k = 0; k < nart; ++k) tab.t.row(m) -= tab.t.row(art_row[k]);
    for (int k = 0; k < nart; ++k) tab.t(m, nv + k) = 0.0;
    std::vector<char> allowed(ncols, 1);
    tab.run(allowed, opt, iters);
    double infeas = -tab.t(m, ncols);
    double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    if (infeas > 1e-9 * scale) {
      res.status = LpStatus::Infeasible;
      res.iterations = iters;
      return res;
    }
    // Drive remaining artificials out; drop rows that are redundant.
    std::vector<int> keep;
    for (int i = 0; i < m; ++i) {
      if (tab.basis[i] < nv) {
        keep.push_back(i);
        continue;
      }
      int col = -1;
      double best = opt.pivot_tol;
      for (int j = 0; j < nv; ++j) {
        if (std::abs(tab.t(i, j)) > best) {
          best = std::abs(tab.t(i, j));
          col = j;
        }
      }
      if (col >= 0) {
        tab.pivot(i, col);
        keep.push_back(i);
      }
    }
    detail::Tableau red;
    red.ncols = static_cast<int>(nv);
    red.t.resize(static_cast<Eigen::Index>(keep.size()) + 1, nv + 1);
    for (std::size_t k = 0; k < keep.size(); ++k) {
      red.t.row(k).head(nv) = tab.t.row(keep[k]).head(nv);
      red.t(k, nv) = tab.t(keep[k], ncols);
      red.basis.push_back(tab.basis[keep[k]]);
    }
    red.t.row(keep.size()).setZero();
    tab = std::move(red);
    rows = keep;
  } else {
    tab.t.conservativeResize(Eigen::NoChange, nv + 1);
    tab.t.col(nv).head(m) = b;
    for (int i = 0; i < m; ++i) rows.push_back(i);
  }

  // Phase 2 objective row as reduced costs.
  const int mr = static_cast<int>(tab.basis.size());
  Vec cfull = Vec::Zero(nv);
  cfull.head(n) = lp.c;
  tab.t.row(mr).head(nv) = cfull.transpose();
  tab.t(mr, nv) = 0.0;
  for (int i = 0; i < mr; ++i) {
    double cb = cfull[tab.basis[i]];
    if (cb != 0.0) tab.t.row(mr) -= cb * tab.t.row(i);
  }
  std::vector<char> allowed(nv, 1);
  bool bounded = tab.run(allowed, opt, iters);
  res.iterations = iters;
  if (!bounded) {
    res.status = LpStatus::Unbounded;
    return res;
  }

  // Refine the basic solution and duals from the original data.
  Mat B(mr, mr);
  Vec br(mr), cb(mr);
  for (int k = 0; k < mr; ++k) {
    br[k] = b[rows[k]];
    cb[k] = cfull[tab.basis[k]];
    for (int q = 0; q < mr; ++q) B(q, k) = A(rows[q], tab.basis[k]);
  }
  Vec xfull = Vec::Zero(nv);
  Vec yred = Vec::Zero(mr);
  if (mr > 0) {
    Eigen::PartialPivLU<Mat> lu(B);
    Vec xb = lu.solve(br);
    if (!xb.allFinite()) {
      for (int k = 0; k < mr; ++k) xb[k] = tab.t(k, nv);
    }
    for (int k = 0; k < mr; ++k) xfull[tab.basis[k]] = std::max(xb[k], 0.0);
    yred = lu.transpose().solve(cb);
  }
  res.status = LpStatus::Optimal;
  res.x = xfull.head(n);
  res.value = lp.c.dot(res.x);
  res.basis = tab.basis;
  res.y = Vec::Zero(m);
  for (int k = 0; k < mr; ++k) res.y[rows[k]] = sign[rows[k]] * yred[k];

  if (!opt.tableau_dump.empty()) {
    std::ofstream out(opt.tableau_dump);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + opt.tableau_dump);
    csv::write(out, Mat(tab.t));
  }
  return res;
}

}  // namespace ncl
