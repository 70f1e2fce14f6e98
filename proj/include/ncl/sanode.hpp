#pragma once

#include "common.hpp"

#include <tuple>
#include <vector>

namespace ncl {

// Samples x(t_k) of one trajectory; rows of x follow t.
struct Trajectory {
  Vec t;
  Mat x;
};

// x' = W relu(A x + beta t + b)
struct SanodeParams {
  Mat W;  // d x P
  Mat A;  // P x d
  Vec beta;
  Vec b;

  Vec operator()(double t, const Vec& x) const {
    Vec s = A * x + beta * t + b;
    return W * s.cwiseMax(0.0);
  }
};

struct SanodeFit {
  SanodeParams params;
  double residual = 0.0;  // mean over samples of |v_fit - v_target|^2
  double initial_residual = 0.0;
  int iterations = 0;
};

struct SanodeOptions {
  int iterations = 200;            // Levenberg-Marquardt steps per stage
  double ridge = 1e-10;            // for the initial amplitude solve
  double autonomous_target = 1e-6; // beta is released only if the autonomous fit misses this
  double beta_penalty = 1e-8;      // weight of sum beta_j^2 in the summed squared residual
  bool freeze_beta = false;
};

namespace detail {

struct VelocitySamples {
  Vec t;
  Mat x;
  Mat v;
};

inline VelocitySamples central_differences(const std::vector<Trajectory>& trajs) {
  std::vector<double> ts;
  std::vector<Vec> xs, vs;
  for (const auto& tr : trajs) {
    if (tr.t.size() != tr.x.rows()) throw Error(ErrorCode::SizeMismatch, "trajectory times and states differ in length");
    if (!tr.x.allFinite() || !tr.t.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite trajectory sample");
    for (Eigen::Index k = 1; k + 1 < tr.t.size(); ++k) {
      double dt = tr.t[k + 1] - tr.t[k - 1];
      if (!(dt > 0)) throw Error(ErrorCode::InvalidTime, "trajectory times must increase");
      ts.push_back(tr.t[k]);
      xs.push_back(tr.x.row(k).transpose());
      // second-order on nonuniform grids
      double h1 = tr.t[k] - tr.t[k - 1], h2 = tr.t[k + 1] - tr.t[k];
      Vec fwd = tr.x.row(k + 1) - tr.x.row(k), bwd = tr.x.row(k) - tr.x.row(k - 1);
      Vec v = (h1 * h1 * fwd + h2 * h2 * bwd) / (h1 * h2 * (h1 + h2));
      vs.push_back(v);
    }
  }
  VelocitySamples s;
  const auto n = static_cast<Eigen::Index>(ts.size());
  if (n == 0) return s;
  const Eigen::Index d = xs.front().size();
  s.t.resize(n);
  s.x.resize(n, d);
  s.v.resize(n, d);
  for (Eigen::Index k = 0; k < n; ++k) {
    s.t[k] = ts[k];
    s.x.row(k) = xs[k].transpose();
    s.v.row(k) = vs[k].transpose();
  }
  return s;
}

inline Mat sanode_features(const VelocitySamples& s, const SanodeParams& p) {
  Mat z = s.x * p.A.transpose() + s.t * p.beta.transpose();
  z.rowwise() += p.b.transpose();
  return z;
}

// Ridge least squares for W given inner parameters; returns the mean squared residual.
inline double solve_amplitudes(const VelocitySamples& s, SanodeParams& p, double ridge, Mat* residual = nullptr) {
  Mat F = sanode_features(s, p).cwiseMax(0.0);
  Mat G = F.transpose() * F;
  G.diagonal().array() += ridge * std::max(1.0, G.diagonal().maxCoeff());
  Eigen::LDLT<Mat> ldlt(G);
  Mat Wt = ldlt.solve(F.transpose() * s.v);
  if (!Wt.allFinite()) throw Error(ErrorCode::FitFailed, "amplitude solve failed");
  p.W = Wt.transpose();
  Mat R = F * Wt - s.v;
  if (residual) *residual = R;
  return R.squaredNorm() / static_cast<double>(s.t.size());
}

}  // namespace detail

// Inner parameters start as random hyperplanes through the sampled states with
// beta = 0 and least-squares amplitudes. Levenberg-Marquardt refines the
// autonomous part first; beta joins a second pass only when that fit misses
// autonomous_target.
inline SanodeFit fit_sanode(const std::vector<Trajectory>& trajs, Eigen::Index P, std::uint64_t seed,
                            const SanodeOptions& opt = {}) {
  auto s = detail::central_differences(trajs);
  if (s.t.size() < 4) throw Error(ErrorCode::DataTooSparse, "need at least 4 interior trajectory samples");
  if (P < 1) throw Error(ErrorCode::ConfigError, "width must be positive");
  const Eigen::Index n = s.t.size(), d = s.x.cols();
  Rng rng(seed);
  SanodeParams p{Mat::Zero(d, P), Mat(P, d), Vec::Zero(P), Vec(P)};
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (Eigen::Index j = 0; j < P; ++j) {
    Vec a = gaussian_vec(rng, d).normalized();
    p.A.row(j) = a.transpose();
    p.b[j] = -a.dot(s.x.row(pick(rng)).transpose());
  }

  SanodeFit out;
  out.initial_residual = detail::solve_amplitudes(s, p, opt.ridge);

  auto refine = [&](SanodeParams p, bool use_beta) {
    // layout: W (d*P, column-major), A (P*d), beta (P, unless frozen), b (P)
    const Eigen::Index nb = use_beta ? P : 0;
    const Eigen::Index np = d * P + P * d + nb + P;
    const double lam = use_beta ? opt.beta_penalty : 0.0;
    auto objective = [&](const SanodeParams& q, Vec* r) {
      Mat F = detail::sanode_features(s, q).cwiseMax(0.0);
      Mat R = F * q.W.transpose() - s.v;  // n x d
      if (r) {
        r->resize(n * d + nb);
        for (Eigen::Index k = 0; k < n; ++k) r->segment(k * d, d) = R.row(k).transpose();
        if (nb) r->tail(nb) = std::sqrt(lam) * q.beta;
      }
      return std::pair{R.squaredNorm() / static_cast<double>(n), R.squaredNorm() + lam * q.beta.squaredNorm()};
    };
    auto apply = [&](const SanodeParams& q, const Vec& delta) {
      SanodeParams o = q;
      Eigen::Index off = 0;
      for (Eigen::Index j = 0; j < P; ++j)
        for (Eigen::Index c = 0; c < d; ++c) o.W(c, j) += delta[off++];
      for (Eigen::Index j = 0; j < P; ++j)
        for (Eigen::Index m = 0; m < d; ++m) o.A(j, m) += delta[off++];
      for (Eigen::Index j = 0; j < nb; ++j) o.beta[j] += delta[off++];
      for (Eigen::Index j = 0; j < P; ++j) o.b[j] += delta[off++];
      return o;
    };

    Vec r;
    auto [mse, pen] = objective(p, &r);
    double loss = mse;
    double mu = 1e-3;
    int it = 0;
    for (; it < opt.iterations && pen > 0.0; ++it) {
      Mat Z = detail::sanode_features(s, p);
      Mat J = Mat::Zero(n * d + nb, np);
      for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index j = 0; j < P; ++j) {
          double z = Z(k, j);
          if (z <= 0) continue;
          for (Eigen::Index c = 0; c < d; ++c) {
            const Eigen::Index row = k * d + c;
            const double w = p.W(c, j);
            J(row, j * d + c) = z;
            for (Eigen::Index m = 0; m < d; ++m) J(row, d * P + j * d + m) = w * s.x(k, m);
            if (nb) J(row, 2 * d * P + j) = w * s.t[k];
            J(row, 2 * d * P + nb + j) = w;
          }
        }
      for (Eigen::Index j = 0; j < nb; ++j) J(n * d + j, 2 * d * P + j) = std::sqrt(lam);
      Mat H = J.transpose() * J;
      Vec g = J.transpose() * r;
      if (!g.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite gradient");
      if (g.norm() <= 1e-15 * std::max(1.0, pen)) break;
      bool accepted = false;
      for (int tries = 0; tries < 30 && !accepted; ++tries) {
        Mat Hd = H;
        Hd.diagonal().array() += mu * (H.diagonal().array() + 1e-12);
        Vec delta = -Hd.ldlt().solve(g);
        if (!delta.allFinite()) {
          mu *= 4;
          continue;
        }
        SanodeParams q = apply(p, delta);
        Vec rq;
        auto [mq, pq] = objective(q, &rq);
        if (pq < pen) {
          p = std::move(q);
          r = std::move(rq);
          loss = mq;
          pen = pq;
          mu = std::max(mu / 3.0, 1e-12);
          accepted = true;
        } else {
          mu *= 4;
        }
      }
      if (!accepted) break;
    }
    return std::tuple{p, loss, it};
};

  auto [p1, loss1, it1] = refine(std::move(p), false);
  out.params = std::move(p1);
  out.residual = loss1;
  out.iterations = it1;
  if (!opt.freeze_beta && loss1 > opt.autonomous_target) {
    auto [p2, loss2, it2] = refine(out.params, true);
    out.params = std::move(p2);
    out.residual = loss2;
    out.iterations += it2;
  }
  return out;
}

}  // namespace ncl
