#pragma once

#include "common.hpp"
#include "node.hpp"
#include "transport.hpp"

#include <vector>

namespace ncl {

// (sum_k |theta_k| dt_k + sum_k |theta_{k+1} - theta_k|)^2
inline double bv_norm_squared(const PiecewiseConstantControl& ctrl) {
  double v = 0.0;
  for (std::size_t k = 0; k < ctrl.segments.size(); ++k) {
    v += ctrl.segments[k].flat().norm() * ctrl.segments[k].duration;
    if (k + 1 < ctrl.segments.size()) v += (ctrl.segments[k + 1].flat() - ctrl.segments[k].flat()).norm();
  }
  return v * v;
}

inline double empirical_risk(const PointDataset& data, const PiecewiseConstantControl& ctrl) {
  return (flow_batch(data.x, ctrl) - data.y).squaredNorm();
}

inline double erm_objective(const PointDataset& data, const PiecewiseConstantControl& ctrl, double alpha) {
  return alpha * bv_norm_squared(ctrl) + empirical_risk(data, ctrl);
}

struct ErmOptions {
  int iterations = 200;
  double fd_step = 1e-6;
  double initial_step = 1e-2;
  double min_step = 1e-12;
};

struct ErmResult {
  PiecewiseConstantControl control;
  double objective = 0.0;
  double initial_objective = 0.0;
  double bv2 = 0.0;
  double risk = 0.0;
  int accepted = 0;
  std::vector<double> history;  // objective after every accepted step
};

namespace detail {

inline Vec stack_control(const PiecewiseConstantControl& c) {
  std::vector<Vec> parts;
  Eigen::Index n = 0;
  for (const auto& s : c.segments) {
    parts.push_back(s.flat());
    n += parts.back().size();
  }
  Vec v(n);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.segment(off, p.size()) = p;
    off += p.size();
  }
  return v;
}

inline void unstack_control(PiecewiseConstantControl& c, const Vec& v) {
  Eigen::Index off = 0;
  for (auto& s : c.segments) {
    const Eigen::Index n = s.W.size() + s.A.size() + s.b.size();
    s.set_flat(v.segment(off, n));
    off += n;
  }
}

// Central differences of the risk; states at segment boundaries are cached so a
// perturbation in segment k only re-integrates segments k..L.
inline Vec risk_gradient(const PointDataset& data, const PiecewiseConstantControl& ctrl, double h) {
  const std::size_t K = ctrl.segments.size();
  std::vector<Mat> states{data.x};
  for (const auto& s : ctrl.segments) {
    Mat next = states.back();
    for (Eigen::Index i = 0; i < next.rows(); ++i) next.row(i) = flow_segment(states.back().row(i).transpose(), s).transpose();
    states.push_back(std::move(next));
  }
  auto risk_from = [&](std::size_t k, const ControlSegment& seg) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
      Vec z = flow_segment(states[k].row(i).transpose(), seg);
      for (std::size_t m = k + 1; m < K; ++m) z = flow_segment(z, ctrl.segments[m]);
      r += (z - data.y.row(i).transpose()).squaredNorm();
    }
    return r;
  };
  std::vector<Vec> grads;
  Eigen::Index total = 0;
  for (std::size_t k = 0; k < K; ++k) {
    ControlSegment seg = ctrl.segments[k];
    Vec theta = seg.flat();
    Vec g(theta.size());
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      double step = h * std::max(1.0, std::abs(theta[j]));
      Vec tp = theta, tm = theta;
      tp[j] += step;
      tm[j] -= step;
      seg.set_flat(tp);
      double rp = risk_from(k, seg);
      seg.set_flat(tm);
      double rm = risk_from(k, seg);
      g[j] = (rp - rm) / (2 * step);
    }
    total += g.size();
    grads.push_back(std::move(g));
  }
  Vec out(total);
  Eigen::Index off = 0;
  for (const auto& g : grads) {
    out.segment(off, g.size()) = g;
    off += g.size();
  }
  return out;
}

inline Vec bv_gradient(const PiecewiseConstantControl& ctrl) {
  const std::size_t K = ctrl.segments.size();
  std::vector<Vec> th;
  for (const auto& s : ctrl.segments) th.push_back(s.flat());
  auto unit = [](const Vec& v) { double n = v.norm(); return n > 0 ? Vec(v / n) : Vec(Vec::Zero(v.size())); };
  std::vector<Vec> g(K);
  for (std::size_t k = 0; k < K; ++k) g[k] = ctrl.segments[k].duration * unit(th[k]);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    Vec u = unit(th[k + 1] - th[k]);
    g[k + 1] += u;
    g[k] -= u;
  }
  Vec flat(stack_control(ctrl).size());
  Eigen::Index off = 0;
  for (const auto& v : g) {
    flat.segment(off, v.size()) = v;
    off += v.size();
  }
  return 2.0 * std::sqrt(bv_norm_squared(ctrl)) * flat;
}

}  // namespace detail

// Descent on J = alpha |theta|_BV^2 + risk with segment durations held fixed. A step
// is taken only if it lowers J, so the result never exceeds J(init).
inline ErmResult train_erm(const PointDataset& data, const PiecewiseConstantControl& init, double alpha,
                           const ErmOptions& opt = {}) {
  if (!(alpha > 0)) throw Error(ErrorCode::ConfigError, "alpha must be positive");
  init.validate();
  if (init.dim() != data.dim()) throw Error(ErrorCode::DimensionMismatch, "control and data dimensions differ");
  ErmResult out;
  out.control = init;
  double J = erm_objective(data, out.control, alpha);
  if (!std::isfinite(J)) throw Error(ErrorCode::NumericalFailure, "initial objective is not finite");
  out.initial_objective = J;
  double step = opt.initial_step;
  for (int it = 0; it < opt.iterations && J > 0.0 && step >= opt.min_step; ++it) {
    Vec g = detail::risk_gradient(data, out.control, opt.fd_step) + alpha * detail::bv_gradient(out.control);
    if (!g.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite gradient");
    double gn = g.norm();
    if (gn == 0.0) break;
    Vec theta = detail::stack_control(out.control);
    bool accepted = false;
    while (step >= opt.min_step) {
      PiecewiseConstantControl trial = out.control;
      detail::unstack_control(trial, theta - (step / gn) * g);
      double Jt;
      try {
        Jt = erm_objective(data, trial, alpha);
      } catch (const Error&) {
        Jt = std::numeric_limits<double>::infinity();
      }
      if (Jt < J) {
        out.control = std::move(trial);
        J = Jt;
        step *= 2.0;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    ++out.accepted;
    out.history.push_back(J);
  }
  out.objective = J;
  out.bv2 = bv_norm_squared(out.control);
  out.risk = empirical_risk(data, out.control);
  return out;
}

// Bound on |theta*|_BV^2 implied by a reference control: J(reference) / alpha.
inline double apriori_bound(const PointDataset& data, const PiecewiseConstantControl& reference, double alpha) {
  return erm_objective(data, reference, alpha) / alpha;
}

struct TransportResult {
  PiecewiseConstantControl control;
  Assignment matching;
  Mat pushforward;
  double w1_heldout = 0.0;  // pushforward of the fresh source batch vs the fresh target batch
  double w1_raw = 0.0;      // fresh source vs fresh target, no transport
  double train_error = 0.0; // max endpoint error on the matched pairs
};

// Synthesis settings for off-sample use: kinks at the data, a leading mean
// translation and flat shear tails (three segments above the switch bound).
inline SynthesisOptions transport_synthesis_options(std::uint64_t seed = 0) {
  SynthesisOptions o;
  o.seed = seed;
  o.cut_fraction = 0.0;
  o.flat_tails = true;
  o.mean_translation = true;
  return o;
}

// Matches samples by an optimal assignment, steers the matched pairs with one
// control and evaluates it on fresh batches.
inline TransportResult transport_empirical(const EmpiricalMeasure& src, const EmpiricalMeasure& tgt,
                                           const EmpiricalMeasure& fresh_src, const EmpiricalMeasure& fresh_tgt,
                                           Eigen::Index P, double T,
                                           const SynthesisOptions& opt = transport_synthesis_options()) {
  check_compatible(src, tgt);
  check_compatible(fresh_src, fresh_tgt);
  if (src.dim() != fresh_src.dim()) throw Error(ErrorCode::DimensionMismatch, "fresh batch dimension differs");
  TransportResult out;
  out.matching = assignment_min(euclidean_cost(src.points(), tgt.points()));
  PointDataset pairs{src.points(), Mat(src.size(), src.dim())};
  for (Eigen::Index i = 0; i < src.size(); ++i) pairs.y.row(i) = tgt.points().row(out.matching.perm[i]);
  out.control = synthesize_width(pairs, P, T, opt);
  out.train_error = max_endpoint_error(pairs, out.control);
  out.pushforward = flow_batch(fresh_src.points(), out.control);
  if (!out.pushforward.allFinite()) throw Error(ErrorCode::NumericalFailure, "pushforward is not finite");
  out.w1_heldout = w1_empirical(EmpiricalMeasure(out.pushforward), fresh_tgt);
  out.w1_raw = w1_empirical(fresh_src, fresh_tgt);
  return out;
}

}  // namespace ncl
