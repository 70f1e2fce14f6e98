#pragma once

#include "common.hpp"
#include "lp.hpp"

#include <Eigen/Eigenvalues>

#include <optional>
#include <ostream>
#include <set>
#include <vector>

namespace ncl {

// Tokens are the rows of a matrix (n x d).
using TokenSequence = Mat;
using IndexSet = std::vector<int>;

struct AttentionParams {
  Mat A;
  double alpha = 1.0;
  double tau = 0.0;            // 0 selects hardmax
  double tie_tolerance = 1e-9; // relative to max_j |<z_j, A z_i>|

  void validate() const {
    if (A.rows() != A.cols() || A.rows() == 0) throw Error(ErrorCode::ConfigError, "A must be square");
    if (!A.allFinite()) throw Error(ErrorCode::ConfigError, "A has non-finite entries");
    if ((A - A.transpose()).norm() >= 1e-12) throw Error(ErrorCode::ConfigError, "A must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> eig(A, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0)) throw Error(ErrorCode::ConfigError, "A must be positive definite");
    if (!(alpha > 0)) throw Error(ErrorCode::ConfigError, "alpha must be positive");
    if (!(tau >= 0)) throw Error(ErrorCode::ConfigError, "tau must be nonnegative");
    if (!(tie_tolerance >= 0)) throw Error(ErrorCode::ConfigError, "tie tolerance must be nonnegative");
  }
};

namespace detail {

inline void require_dim(const TokenSequence& Z, const AttentionParams& p) {
  if (Z.cols() != p.A.rows()) throw Error(ErrorCode::DimensionMismatch, "token dimension differs from A");
}

}  // namespace detail

inline double a_norm(const Vec& z, const Mat& A) { return std::sqrt(std::max(0.0, z.dot(A * z))); }

// S(i, l) = <z_l, A z_i>
inline Mat attention_scores(const TokenSequence& Z, const Mat& A) { return Z * A * Z.transpose(); }

// Maximizers of <z_j, A z_i> up to the tie tolerance. A candidate that nearly coincides
// with a strictly better one is a converging copy rather than a tie and is left out.
inline std::vector<IndexSet> hardmax_sets(const TokenSequence& Z, const AttentionParams& p) {
  detail::require_dim(Z, p);
  const Eigen::Index n = Z.rows();
  Mat S = attention_scores(Z, p.A);
  std::vector<IndexSet> C(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = S.row(i).maxCoeff();
    double tol = p.tie_tolerance * S.row(i).cwiseAbs().maxCoeff();
    std::vector<int> cand;
    for (Eigen::Index j = 0; j < n; ++j)
      if (S(i, j) >= mx - tol) cand.push_back(static_cast<int>(j));
    for (int j : cand) {
      bool copy = false;
      for (int m : cand) {
        if (S(i, m) <= S(i, j)) continue;
        double scale = std::max(Z.row(m).norm(), Z.row(j).norm());
        if ((Z.row(m) - Z.row(j)).norm() <= 1e-6 * scale) copy = true;
      }
      if (!copy) C[i].push_back(j);
    }
  }
  return C;
}

inline IndexSet leaders_of(const std::vector<IndexSet>& C) {
  IndexSet L;
  for (std::size_t i = 0; i < C.size(); ++i)
    if (C[i].size() == 1 && C[i][0] == static_cast<int>(i)) L.push_back(static_cast<int>(i));
  return L;
}

// Row-stochastic weight matrices; pi^0 is uniform over C_i.
inline Mat hardmax_weights(const TokenSequence& Z, const AttentionParams& p) {
  auto C = hardmax_sets(Z, p);
  Mat P = Mat::Zero(Z.rows(), Z.rows());
  for (std::size_t i = 0; i < C.size(); ++i)
    for (int j : C[i]) P(static_cast<Eigen::Index>(i), j) = 1.0 / static_cast<double>(C[i].size());
  return P;
}

inline Mat softmax_weights(const TokenSequence& Z, const AttentionParams& p) {
  detail::require_dim(Z, p);
  if (!(p.tau > 0)) throw Error(ErrorCode::ConfigError, "softmax needs tau > 0");
  Mat S = attention_scores(Z, p.A) / p.tau;
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    S.row(i).array() -= S.row(i).maxCoeff();
    S.row(i) = S.row(i).array().exp().matrix();
    S.row(i) /= S.row(i).sum();
  }
  return S;
}

namespace detail {

// z_i + alpha/(1+alpha) sum_l pi_il (z_l - z_i), written as a convex combination
inline TokenSequence attention_update(const TokenSequence& Z, const Mat& Pi, double alpha) {
  const double c = alpha / (1.0 + alpha);
  return (1.0 / (1.0 + alpha)) * Z + c * (Pi * Z);
}

}  // namespace detail

inline TokenSequence step_hardmax(const TokenSequence& Z, const AttentionParams& p) {
  auto C = hardmax_sets(Z, p);
  TokenSequence out = Z;
  const double c = p.alpha / (1.0 + p.alpha);
  for (std::size_t i = 0; i < C.size(); ++i) {
    if (C[i].size() == 1 && C[i][0] == static_cast<int>(i)) continue;  // leaders stay put exactly
    Vec mean = Vec::Zero(Z.cols());
    for (int j : C[i]) mean += Z.row(j).transpose();
    mean /= static_cast<double>(C[i].size());
    out.row(static_cast<Eigen::Index>(i)) = ((1.0 - c) * Z.row(static_cast<Eigen::Index>(i)).transpose() + c * mean).transpose();
  }
  return out;
}

inline TokenSequence step_softmax(const TokenSequence& Z, const AttentionParams& p) {
  return detail::attention_update(Z, softmax_weights(Z, p), p.alpha);
}

enum class TokenClass { Leader, FaceProjection, Unresolved };

inline const char* to_string(TokenClass c) {
  switch (c) {
    case TokenClass::Leader: return "leader";
    case TokenClass::FaceProjection: return "face_projection";
    case TokenClass::Unresolved: return "unresolved";
  }
  return "unknown";
}

struct EquilibriumOptions {
  double tol = 1e-9;
  int max_layers = 10000;
  bool record = false;  // keep every layer
};

struct EquilibriumReport {
  IndexSet leaders;
  int leader_stabilization_layer = 0;  // k0
  int layers = 0;
  TokenSequence final_tokens;
  std::vector<TokenClass> classes;
  double residual = 0.0;  // last max token displacement
  bool converged = false;
  std::vector<TokenSequence> trajectory;

  void require_converged() const {
    if (!converged)
      throw Error(ErrorCode::NotConverged, "displacement " + std::to_string(residual) + " after " +
                                               std::to_string(layers) + " layers");
  }
};

namespace detail {

// Is conv(vertices in S) a face of conv(all)? Feasibility of <c, v> = beta on S and
// <c, v> <= beta - 1 elsewhere, with free c and beta split into two nonnegative parts.
inline bool is_face(const Mat& V, const std::vector<int>& S) {
  const Eigen::Index m = V.rows(), d = V.cols();
  std::vector<bool> in(m, false);
  for (int s : S) in[s] = true;
  if (static_cast<Eigen::Index>(S.size()) == m) return true;
  const Eigen::Index nv = 2 * (d + 1);
  StandardLp lp;
  lp.c = Vec::Zero(nv);
  lp.M = Mat::Zero(m, nv);
  lp.r = Vec::Zero(m);
  lp.sense.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      lp.M(i, k) = V(i, k);
      lp.M(i, d + 1 + k) = -V(i, k);
    }
    lp.M(i, d) = -1.0;
    lp.M(i, 2 * d + 1) = 1.0;
    lp.sense[i] = in[i] ? RowSense::Eq : RowSense::Le;
    lp.r[i] = in[i] ? 0.0 : -1.0;
  }
  return solve_lp(lp).status == LpStatus::Optimal;
}

// A-norm projection of the origin onto conv(rows of V indexed by S). Minimizers sit on a
// sub-simplex of at most d + 1 vertices, so affine projections with nonnegative weights
// over small subsets are enumerated.
inline Vec project_origin(const Mat& V, const std::vector<int>& S, const Mat& A) {
  const Eigen::Index d = V.cols();
  const int k = static_cast<int>(S.size());
  Vec best;
  double best_val = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << k); ++mask) {
    std::vector<int> sub;
    for (int b = 0; b < k; ++b)
      if (mask & (1 << b)) sub.push_back(S[b]);
    const Eigen::Index m = static_cast<Eigen::Index>(sub.size());
    if (m > d + 1) continue;
    Mat L(d, m);
    for (Eigen::Index j = 0; j < m; ++j) L.col(j) = V.row(sub[j]).transpose();
    Mat K = Mat::Zero(m + 1, m + 1);
    K.topLeftCorner(m, m) = 2.0 * L.transpose() * A * L;
    K.block(0, m, m, 1).setOnes();
    K.block(m, 0, 1, m).setOnes();
    Vec rhs = Vec::Zero(m + 1);
    rhs[m] = 1.0;
    Eigen::FullPivLU<Mat> lu(K);
    if (!lu.isInvertible()) continue;
    Vec sol = lu.solve(rhs);
    Vec lam = sol.head(m);
    if (lam.minCoeff() < -1e-12) continue;
    Vec p = L * lam;
    double val = p.dot(A * p);
    if (val < best_val) {
      best_val = val;
      best = p;
    }
  }
  return best;
}

}  // namespace detail

// Nearest A-projections of the origin onto faces of the leader polytope; empty when the
// enumeration is out of range (more than 6 leaders or d > 3).
inline std::optional<std::vector<Vec>> face_projections(const Mat& leaders, const Mat& A) {
  const int m = static_cast<int>(leaders.rows());
  if (m == 0 || m > 6 || leaders.cols() > 3) return std::nullopt;
  std::vector<Vec> out;
  for (int mask = 1; mask < (1 << m); ++mask) {
    std::vector<int> S;
    for (int b = 0; b < m; ++b)
      if (mask & (1 << b)) S.push_back(b);
    if (!detail::is_face(leaders, S)) continue;
    Vec p = detail::project_origin(leaders, S, A);
    if (p.size()) out.push_back(p);
  }
  return out;
}

inline std::vector<TokenClass> classify_tokens(const TokenSequence& Z, const IndexSet& leaders, const Mat& A,
                                               double tol) {
  std::vector<TokenClass> cls(Z.rows(), TokenClass::Unresolved);
  Mat L(leaders.size(), Z.cols());
  for (std::size_t k = 0; k < leaders.size(); ++k) {
    L.row(static_cast<Eigen::Index>(k)) = Z.row(leaders[k]);
    cls[leaders[k]] = TokenClass::Leader;
  }
  auto proj = face_projections(L, A);
  if (!proj) return cls;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    if (cls[i] == TokenClass::Leader) continue;
    for (const auto& p : *proj)
      if (a_norm(Z.row(i).transpose() - p, A) < 10.0 * tol) {
        cls[i] = TokenClass::FaceProjection;
        break;
      }
  }
  return cls;
}

// Hardmax layers until the largest displacement drops below tol. k0 is the first
// layer from which the leader set stays the same for the rest of the run.
inline EquilibriumReport run_to_equilibrium(const TokenSequence& Z0, const AttentionParams& p,
                                            const EquilibriumOptions& opt = {}) {
  p.validate();
  detail::require_dim(Z0, p);
  if (!Z0.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite tokens");
  EquilibriumReport rep;
  TokenSequence Z = Z0;
  IndexSet current = leaders_of(hardmax_sets(Z, p));
  rep.leader_stabilization_layer = 0;
  if (opt.record) rep.trajectory.push_back(Z);
  int k = 0;
  for (; k < opt.max_layers; ++k) {
    TokenSequence next = step_hardmax(Z, p);
    rep.residual = (next - Z).rowwise().norm().maxCoeff();
    Z = std::move(next);
    if (opt.record) rep.trajectory.push_back(Z);
    IndexSet L = leaders_of(hardmax_sets(Z, p));
    if (L != current) {
      current = L;
      rep.leader_stabilization_layer = k + 1;
    }
    if (rep.residual < opt.tol) {
      rep.converged = true;
      ++k;
      break;
    }
  }
  if (Z0.rows() == 0) rep.converged = true;
  rep.layers = k;
  rep.leaders = current;
  rep.final_tokens = Z;
  rep.classes = classify_tokens(Z, current, p.A, opt.tol);
  return rep;
}

// rows: layer, token, coordinates
inline void write_trajectory_csv(std::ostream& os, const std::vector<TokenSequence>& traj) {
  if (traj.empty()) return;
  os << "layer,token";
  for (Eigen::Index c = 0; c < traj.front().cols(); ++c) os << ",z" << c;
  os << "\n";
  os.precision(17);
  for (std::size_t k = 0; k < traj.size(); ++k)
    for (Eigen::Index i = 0; i < traj[k].rows(); ++i) {
      os << k << "," << i;
      for (Eigen::Index c = 0; c < traj[k].cols(); ++c) os << "," << traj[k](i, c);
      os << "\n";
    }
}

// Keeps the first of every group of vectors closer than tol, in input order.
inline std::vector<Vec> readout_dedup(const std::vector<Vec>& S, double tol) {
  std::vector<Vec> out;
  for (const auto& v : S) {
    bool dup = false;
    for (const auto& u : out)
      if (u.size() == v.size() && (u - v).norm() < tol) {
        dup = true;
        break;
      }
    if (!dup) out.push_back(v);
  }
  return out;
}

}  // namespace ncl
