#pragma once

#include "common.hpp"
#include "node.hpp"

#include <optional>
#include <vector>

namespace ncl {

// Quadratic Bezier gamma(t) = (1-s)^2 p0 + 2 s (1-s) p1 + s^2 p2, s = t / T.
struct TubeCurve {
  Vec p0, p1, p2;

  Vec at(double s) const { return (1 - s) * (1 - s) * p0 + 2 * s * (1 - s) * p1 + s * s * p2; }
  // d gamma / ds
  Vec tangent(double s) const { return 2 * (1 - s) * (p1 - p0) + 2 * s * (p2 - p1); }
  Vec curvature() const { return 2 * (p2 - 2 * p1 + p0); }

  // Closest parameter in [0, 1]: dense scan then Newton on |gamma(s) - x|^2.
  double nearest(const Vec& x) const {
    constexpr int kScan = 64;
    double best_s = 0.0, best = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= kScan; ++k) {
      double s = static_cast<double>(k) / kScan;
      double dist = (at(s) - x).squaredNorm();
      if (dist < best) {
        best = dist;
        best_s = s;
      }
    }
    double s = best_s;
    for (int it = 0; it < 30; ++it) {
      Vec r = at(s) - x;
      Vec g1 = tangent(s);
      double f1 = r.dot(g1);
      double f2 = g1.squaredNorm() + r.dot(curvature());
      if (f2 <= 0) break;
      double next = std::clamp(s - f1 / f2, 0.0, 1.0);
      if (std::abs(next - s) < 1e-15) {
        s = next;
        break;
      }
      s = next;
    }
    return s;
  }

  double distance(const Vec& x) const { return (at(nearest(x)) - x).norm(); }

  // Smallest radius of curvature; infinite for straight or degenerate curves.
  double min_curvature_radius() const {
    Vec acc = curvature();
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 100; ++k) {
      Vec v = tangent(k / 100.0);
      double speed2 = v.squaredNorm();
      if (speed2 == 0.0) continue;
      Vec normal = acc - (acc.dot(v) / speed2) * v;
      double nn = normal.norm();
      if (nn > 1e-14 * acc.norm() && nn > 0) best = std::min(best, speed2 / nn);
    }
    return best;
  }
};

enum class FieldKind { TubeExact, ShallowFit };

struct AutonomousField {
  FieldKind kind = FieldKind::TubeExact;
  double T = 1.0;
  // tube data
  std::vector<TubeCurve> curves;
  double radius = 0.0;
  // shallow data: a single time-independent segment W relu(A x + b)
  ControlSegment shallow;
  long kappa = 0;         // parameter count (d + 2) d P of the shallow fit
  double lipschitz = 0.0; // recorded global Lipschitz estimate

  Eigen::Index dim() const { return kind == FieldKind::TubeExact ? curves.front().p0.size() : shallow.dim(); }

  Vec operator()(const Vec& x) const {
    if (kind == FieldKind::ShallowFit) return eval_field(x, shallow);
    Vec v = Vec::Zero(x.size());
    for (const auto& c : curves) {
      // the curve lies in the box of its control points
      Vec lo = c.p0.cwiseMin(c.p1).cwiseMin(c.p2).array() - radius;
      Vec hi = c.p0.cwiseMax(c.p1).cwiseMax(c.p2).array() + radius;
      if ((x.array() < lo.array()).any() || (x.array() > hi.array()).any()) continue;
      double s = c.nearest(x);
      double rho = (c.at(s) - x).norm() / radius;
      if (rho >= 1.0) continue;
      double bump = (1 - rho * rho) * (1 - rho * rho);
      v += bump * c.tangent(s) / T;
    }
    return v;
  }
};

inline double bump_profile(double rho) { return rho >= 1.0 ? 0.0 : (1 - rho * rho) * (1 - rho * rho); }

inline Vec flow_autonomous(const AutonomousField& f, const Vec& x0, double tol = 1e-10) {
  return integrate_rk4([&](const Vec& x) { return f(x); }, x0, f.T, tol);
}

namespace detail {

inline double curve_distance(const TubeCurve& a, const TubeCurve& b) {
  constexpr int kSamples = 200;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= kSamples; ++k) best = std::min(best, b.distance(a.at(static_cast<double>(k) / kSamples)));
  for (int k = 0; k <= kSamples; ++k) best = std::min(best, a.distance(b.at(static_cast<double>(k) / kSamples)));
  return best;
}

inline double min_curve_distance(const std::vector<TubeCurve>& cs) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cs.size(); ++i)
    for (std::size_t j = i + 1; j < cs.size(); ++j) best = std::min(best, curve_distance(cs[i], cs[j]));
  return best;
}

}  // namespace detail

struct TubeOptions {
  int retries = 400;
  double perturbation = 0.3;  // midpoint offset relative to the chord length
};

// Curves from x_i to y_i with randomly perturbed midpoints, kept when pairwise
// separated; the tube radius is a quarter of the smallest separation, capped by
// half the smallest bend radius so the nearest-point map stays single valued.
inline AutonomousField build_autonomous_field(const PointDataset& data, double T, std::uint64_t seed,
                                              const TubeOptions& opt = {}) {
  if (data.dim() < 2) throw Error(ErrorCode::DimensionMismatch, "tube construction needs d >= 2");
  if (!data.consistent()) throw Error(ErrorCode::InconsistentData, "inputs or targets repeat");
  if (!(T > 0)) throw Error(ErrorCode::InvalidTime, "horizon must be positive");
  const Eigen::Index N = data.size(), d = data.dim();
  Mat all(2 * N, d);
  all << data.x, data.y;
  double diam = 0.0;
  for (Eigen::Index i = 0; i < all.rows(); ++i)
    for (Eigen::Index j = i + 1; j < all.rows(); ++j) diam = std::max(diam, (all.row(i) - all.row(j)).norm());
  if (diam == 0.0) diam = 1.0;

  auto make = [&](Rng* rng, double amp) {
    std::vector<TubeCurve> cs;
    for (Eigen::Index i = 0; i < N; ++i) {
      Vec a = data.x.row(i).transpose(), b = data.y.row(i).transpose();
      Vec mid = 0.5 * (a + b);
      if (rng) mid += amp * (b - a).norm() * gaussian_vec(*rng, d);
      cs.push_back({a, mid, b});
    }
    return cs;
  };
  // largest admissible tube radius: tubes disjoint and thinner than the bend radius
  auto admissible = [&](const std::vector<TubeCurve>& cs) {
    double r = N > 1 ? 0.25 * detail::min_curve_distance(cs) : 0.25 * diam;
    for (const auto& c : cs) r = std::min(r, 0.5 * c.min_curvature_radius());
    return r;
  };

  Rng rng(seed);
  std::vector<TubeCurve> best = make(nullptr, 0.0);
  double best_r = admissible(best);
  const double wanted = 0.0125 * diam / static_cast<double>(N);
  for (int k = 0; k < opt.retries && best_r < wanted; ++k) {
    auto cs = make(&rng, opt.perturbation * (1.0 + k / 100.0));
    double r = admissible(cs);
    if (r > best_r) {
      best_r = r;
      best = std::move(cs);
    }
  }
  if (!(best_r > 1e-9 * diam))
    throw Error(ErrorCode::TubePackingFailed, "curves could not be separated within " + std::to_string(opt.retries) +
                                                  " retries");
  AutonomousField f;
  f.kind = FieldKind::TubeExact;
  f.T = T;
  f.curves = std::move(best);
  f.radius = best_r;
  // |grad bump| <= 1.54 / r; tangent speed and curvature bound the rest.
  double speed = 0.0, curv = 0.0;
  for (const auto& c : f.curves) {
    speed = std::max({speed, c.tangent(0).norm(), c.tangent(1).norm()});
    curv = std::max(curv, c.curvature().norm());
  }
  f.lipschitz = (1.54 * speed / f.radius + curv) / T;
  return f;
}

struct ShallowFieldFit {
  AutonomousField field;
  double sup_error = 0.0;
  double train_rmse = 0.0;
};

struct ShallowFitOptions {
  int samples = 4000;
  double ridge = 1e-10;
  double tube_fraction = 0.5;  // share of samples drawn inside the tubes
};

// Random hyperplanes through the enclosing box, amplitudes by ridge least squares.
inline ShallowFieldFit fit_autonomous_shallow(const AutonomousField& tube, Eigen::Index P, std::uint64_t seed,
                                              const ShallowFitOptions& opt = {}) {
  if (tube.kind != FieldKind::TubeExact) throw Error(ErrorCode::FitFailed, "expected a tube field");
  const Eigen::Index d = tube.dim();
  Rng rng(seed);
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = -lo;
  for (const auto& c : tube.curves)
    for (int k = 0; k <= 50; ++k) {
      Vec p = c.at(k / 50.0);
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  lo.array() -= tube.radius;
  hi.array() += tube.radius;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto in_box = [&]() {
    Vec p(d);
    for (Eigen::Index k = 0; k < d; ++k) p[k] = lo[k] + (hi[k] - lo[k]) * unit(rng);
    return p;
  };
  const int S = opt.samples;
  Mat X(S, d), Y(S, d);
  for (int k = 0; k < S; ++k) {
    Vec p;
    if (unit(rng) < opt.tube_fraction) {
      const auto& c = tube.curves[static_cast<std::size_t>(unit(rng) * tube.curves.size()) % tube.curves.size()];
      p = c.at(unit(rng)) + sample_ball(rng, d, tube.radius);
    } else {
      p = in_box();
    }
    X.row(k) = p.transpose();
    Y.row(k) = tube(p).transpose();
  }

  ControlSegment seg = ControlSegment::zero(tube.T, d, P);
  for (Eigen::Index j = 0; j < P; ++j) {
    Vec a = gaussian_vec(rng, d).normalized();
    seg.A.row(j) = a.transpose();
    seg.b[j] = -a.dot(in_box());
  }
  Mat F = feature_matrix(X, seg.A, seg.b);
  Mat G = F.transpose() * F;
  G.diagonal().array() += opt.ridge * std::max(1.0, G.diagonal().maxCoeff());
  Eigen::LDLT<Mat> ldlt(G);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::FitFailed, "normal equations are singular");
  Mat Wt = ldlt.solve(F.transpose() * Y);  // P x d
  if (!Wt.allFinite()) throw Error(ErrorCode::FitFailed, "non-finite amplitudes");
  seg.W = Wt.transpose();

  ShallowFieldFit out;
  out.field.kind = FieldKind::ShallowFit;
  out.field.T = tube.T;
  out.field.shallow = seg;
  out.field.kappa = (d + 2) * d * P;
  double lip = 0.0;
  for (Eigen::Index j = 0; j < P; ++j) lip += seg.W.col(j).norm() * seg.A.row(j).norm();
  out.field.lipschitz = lip;
  out.train_rmse = std::sqrt((F * Wt - Y).squaredNorm() / S);
  for (const auto& c : tube.curves) {
    Vec end = flow_segment(c.p0, seg, FlowOptions{1e-9});
    out.sup_error = std::max(out.sup_error, (end - c.p2).norm());
  }
  return out;
}

}  // namespace ncl
