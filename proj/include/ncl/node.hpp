#pragma once

#include "common.hpp"

#include <json.hpp>

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace ncl {

// Constant (W, A, b) on one time interval; field x -> W relu(A x + b).
struct ControlSegment {
  double duration = 0.0;
  Mat W;  // d x P
  Mat A;  // P x d
  Vec b;  // P

  Eigen::Index width() const { return A.rows(); }
  Eigen::Index dim() const { return A.cols(); }

  static ControlSegment zero(double duration, Eigen::Index d, Eigen::Index P) {
    return {duration, Mat::Zero(d, P), Mat::Zero(P, d), Vec::Zero(P)};
  }
  // Stacked parameters (W, A column-major, then b).
  Vec flat() const {
    Vec v(W.size() + A.size() + b.size());
    v << W.reshaped(), A.reshaped(), b;
    return v;
  }
  void set_flat(const Vec& v) {
    W.reshaped() = v.head(W.size());
    A.reshaped() = v.segment(W.size(), A.size());
    b = v.tail(b.size());
  }
};

struct PiecewiseConstantControl {
  std::vector<ControlSegment> segments;

  double horizon() const {
    double t = 0.0;
    for (const auto& s : segments) t += s.duration;
    return t;
  }
  int switches() const { return segments.empty() ? 0 : static_cast<int>(segments.size()) - 1; }
  Eigen::Index dim() const { return segments.empty() ? 0 : segments.front().dim(); }

  void validate() const {
    if (segments.empty()) throw Error(ErrorCode::ConfigError, "control has no segments");
    for (const auto& s : segments) {
      if (!(s.duration > 0)) throw Error(ErrorCode::ConfigError, "segment duration must be positive");
      if (s.W.rows() != s.dim() || s.W.cols() != s.width() || s.b.size() != s.width())
        throw Error(ErrorCode::DimensionMismatch, "segment matrices have inconsistent shapes");
      if (!s.W.allFinite() || !s.A.allFinite() || !s.b.allFinite())
        throw Error(ErrorCode::NumericalFailure, "segment has non-finite entries");
    }
  }

  PiecewiseConstantControl then(const PiecewiseConstantControl& next) const {
    PiecewiseConstantControl c = *this;
    c.segments.insert(c.segments.end(), next.segments.begin(), next.segments.end());
    return c;
  }

  // Stretch time so the horizon becomes T; the flow map is unchanged.
  void rescale_horizon(double T) {
    double scale = horizon() / T;
    for (auto& s : segments) {
      s.duration /= scale;
      s.W *= scale;
    }
  }

  nlohmann::json to_json() const {
    auto rows = [](const Mat& m) {
      nlohmann::json r = nlohmann::json::array();
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> row(m.cols());
        for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = m(i, j);
        r.push_back(row);
      }
      return r;
    };
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : segments)
      out.push_back({{"duration", s.duration},
                     {"W", rows(s.W)},
                     {"A", rows(s.A)},
                     {"b", std::vector<double>(s.b.data(), s.b.data() + s.b.size())}});
    return out;
  }

  static PiecewiseConstantControl from_json(const nlohmann::json& j) {
    auto mat = [](const nlohmann::json& r) {
      if (r.empty()) return Mat(0, 0);
      Mat m(r.size(), r[0].size());
      for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t k = 0; k < r[i].size(); ++k) m(i, k) = r[i][k].get<double>();
      return m;
    };
    PiecewiseConstantControl c;
    for (const auto& s : j) {
      ControlSegment seg;
      seg.duration = s.at("duration").get<double>();
      seg.W = mat(s.at("W"));
      seg.A = mat(s.at("A"));
      auto b = s.at("b").get<std::vector<double>>();
      seg.b = Eigen::Map<Vec>(b.data(), static_cast<Eigen::Index>(b.size()));
      c.segments.push_back(std::move(seg));
    }
    c.validate();
    return c;
  }
};

inline Vec eval_field(const Vec& x, const ControlSegment& seg) {
  if (x.size() != seg.dim())
    throw Error(ErrorCode::DimensionMismatch,
                "state has dimension " + std::to_string(x.size()) + ", field expects " + std::to_string(seg.dim()));
  Vec s = seg.A * x + seg.b;
  return seg.W * s.cwiseMax(0.0);
}

struct FlowOptions {
  double tol = 1e-10;        // error target per segment
  double min_step = 1e-13;   // relative to the segment duration
  bool force_numeric = false;
};

// Adaptive classical RK4 with step doubling on x' = f(x) over [0, T].
inline Vec integrate_rk4(const std::function<Vec(const Vec&)>& f, Vec x, double T, double tol = 1e-10,
                         double min_step = 1e-13) {
  if (T <= 0) return x;
  auto rk4 = [&](const Vec& y, double h) {
    Vec k1 = f(y);
    Vec k2 = f(y + 0.5 * h * k1);
    Vec k3 = f(y + 0.5 * h * k2);
    Vec k4 = f(y + h * k3);
    return Vec(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };
  double t = 0.0;
  double h = T / 16.0;
  while (t < T) {
    h = std::min(h, T - t);
    Vec full = rk4(x, h);
    Vec half = rk4(rk4(x, 0.5 * h), 0.5 * h);
    double err = (half - full).norm() / 15.0;
    double allowed = tol * (h / T) * (1.0 + half.norm());
    if (!half.allFinite()) throw Error(ErrorCode::StiffnessError, "integrator produced non-finite state");
    if (err <= allowed) {
      t += h;
      x = half + (half - full) / 15.0;
      double grow = err > 0 ? 0.9 * std::pow(allowed / err, 0.2) : 4.0;
      h *= std::clamp(grow, 1.0, 4.0);
    } else {
      h *= std::clamp(0.9 * std::pow(allowed / err, 0.2), 0.1, 0.5);
      if (h < min_step * T) throw Error(ErrorCode::StiffnessError, "step size underflow");
    }
  }
  return x;
}

namespace detail {

// Every hyperplane normal is orthogonal to every wind direction: x' is constant along trajectories.
inline bool is_parallel_segment(const ControlSegment& seg) {
  double scale = seg.A.norm() * seg.W.norm();
  return scale == 0.0 || (seg.A * seg.W).cwiseAbs().maxCoeff() <= 1e-14 * scale;
}

}  // namespace detail

// Exact for one neuron (s' = <a,w> relu(s)) and for parallel segments; adaptive RK4 otherwise.
inline Vec flow_segment(const Vec& x0, const ControlSegment& seg, const FlowOptions& opt = {}) {
  if (x0.size() != seg.dim()) throw Error(ErrorCode::DimensionMismatch, "state dimension does not match control");
  const double t = seg.duration;
  if (!opt.force_numeric) {
    if (seg.width() == 1) {
      Vec a = seg.A.row(0).transpose();
      Vec w = seg.W.col(0);
      double s0 = a.dot(x0) + seg.b[0];
      if (s0 <= 0.0) return x0;
      double lam = a.dot(w);
      double z = lam * t;
      double integral = std::abs(z) < 1e-300 ? s0 * t : s0 * std::expm1(z) / lam;
      return x0 + w * integral;
    }
    if (detail::is_parallel_segment(seg)) return x0 + t * eval_field(x0, seg);
  }
  return integrate_rk4([&](const Vec& x) { return eval_field(x, seg); }, x0, t, opt.tol, opt.min_step);
}

inline Vec flow(const Vec& x0, const PiecewiseConstantControl& ctrl, const FlowOptions& opt = {}) {
  Vec x = x0;
  for (const auto& seg : ctrl.segments) x = flow_segment(x, seg, opt);
  return x;
}

// Rows of X are initial states.
inline Mat flow_batch(const Mat& X, const PiecewiseConstantControl& ctrl, const FlowOptions& opt = {}) {
  Mat out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out.row(i) = flow(X.row(i).transpose(), ctrl, opt).transpose();
  return out;
}

struct PointDataset {
  Mat x;  // N x d
  Mat y;  // N x d

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }

  bool consistent() const {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           (size() < 2 || (min_pairwise_distance(x) > 1e-12 && min_pairwise_distance(y) > 1e-12));
  }

  static PointDataset from_csv(const std::string& path) {
    Mat m = csv::read(path);
    if (m.cols() < 2 || m.cols() % 2 != 0)
      throw Error(ErrorCode::IoError, path + ": need d input columns then d target columns");
    Eigen::Index d = m.cols() / 2;
    return {m.leftCols(d), m.rightCols(d)};
  }
  void to_csv(const std::string& path) const {
    Mat m(size(), 2 * dim());
    m << x, y;
    csv::write(path, m);
  }
};

inline double max_endpoint_error(const PointDataset& data, const PiecewiseConstantControl& ctrl,
                                 const FlowOptions& opt = {}) {
  Mat end = flow_batch(data.x, ctrl, opt);
  return (end - data.y).rowwise().norm().maxCoeff();
}

inline int switch_bound_width(Eigen::Index N, Eigen::Index P) {
  return 2 * static_cast<int>((N + P - 1) / P) - 1;
}

namespace detail {

inline Mat random_rotation(Rng& rng, Eigen::Index d) {
  Eigen::HouseholderQR<Mat> qr(gaussian_mat(rng, d, d));
  Mat Q = qr.householderQ();
  return Q;
}

inline double min_gap(Vec v) {
  std::sort(v.begin(), v.end());
  double g = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 1; i < v.size(); ++i) g = std::min(g, v[i] - v[i - 1]);
  return g;
}

// Cut levels below each sorted coordinate; the first sits a median gap under the lowest point,
// the others a fraction of the way from the previous point.
inline Vec cut_levels(const Vec& sorted, double fraction) {
  const Eigen::Index n = sorted.size();
  Vec c(n);
  std::vector<double> gaps;
  for (Eigen::Index i = 1; i < n; ++i) gaps.push_back(sorted[i] - sorted[i - 1]);
  double first = 1.0;
  if (!gaps.empty()) {
    std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
    first = gaps[gaps.size() / 2];
  }
  c[0] = sorted[0] - first;
  for (Eigen::Index i = 1; i < n; ++i) c[i] = sorted[i - 1] + fraction * (sorted[i] - sorted[i - 1]);
  return c;
}

// One stage: points sorted along `normal` are processed in batches of P from the bottom.
// Each batch gets a parallel segment whose displacement is delta(current row) for batch rows.
// With flat_tail, one more segment cancels the slope above the highest point.
inline void shear_stage(Mat& Z, const Vec& normal, Eigen::Index P, const std::function<Vec(Eigen::Index, const Vec&)>& delta,
                        const Vec& project_out, double cut_fraction, bool flat_tail, PiecewiseConstantControl& ctrl) {
  const Eigen::Index N = Z.rows(), d = Z.cols();
  Vec level = Z * normal;
  std::vector<Eigen::Index> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return level[i] < level[j]; });
  Vec sorted(N);
  for (Eigen::Index k = 0; k < N; ++k) sorted[k] = level[order[k]];
  Vec cuts = cut_levels(sorted, cut_fraction);
  Vec slope = Vec::Zero(d);
  for (Eigen::Index start = 0; start < N; start += P) {
    Eigen::Index m = std::min(P, N - start);
    Mat D(m, d);
    for (Eigen::Index r = 0; r < m; ++r) {
      Eigen::Index i = order[start + r];
      Vec dv = delta(i, Z.row(i).transpose());
      dv -= project_out * project_out.dot(dv);
      D.row(r) = dv.transpose();
    }
    if (D.cwiseAbs().maxCoeff() == 0.0) continue;
    Mat S = Mat::Zero(m, m);
    for (Eigen::Index r = 0; r < m; ++r)
      for (Eigen::Index j = 0; j <= r; ++j) S(r, j) = sorted[start + r] - cuts[start + j];
    Mat Omega = S.triangularView<Eigen::Lower>().solve(D);  // m x d
    ControlSegment seg;
    seg.duration = 1.0;
    seg.A = normal.transpose().replicate(m, 1);
    seg.b = -cuts.segment(start, m);
    seg.W = Omega.transpose();
    slope += Omega.colwise().sum().transpose();
    for (Eigen::Index i = 0; i < N; ++i) Z.row(i) = flow_segment(Z.row(i).transpose(), seg).transpose();
    ctrl.segments.push_back(std::move(seg));
  }
  if (flat_tail && slope.norm() > 0.0) {
    ControlSegment seg = ControlSegment::zero(1.0, d, P);
    seg.A.row(0) = normal.transpose();
    seg.b[0] = -sorted[N - 1];
    seg.W.col(0) = -slope;
    for (Eigen::Index i = 0; i < N; ++i) Z.row(i) = flow_segment(Z.row(i).transpose(), seg).transpose();
    ctrl.segments.push_back(std::move(seg));
  }
}

}  // namespace detail

struct SynthesisOptions {
  std::uint64_t seed = 0;
  int frame_trials = 64;   // random frames scored by coordinate separation
  double accuracy = 1e-6;  // required endpoint error
  int attempts = 8;
  double cut_fraction = 0.0;  // kink position between consecutive points (0: at the lower point)
  bool flat_tails = false;    // one extra segment per stage; off-sample points stop shearing
                              // beyond the data range (exceeds the switch bound by 2)
  bool mean_translation = false; // leading segment moving everything by the mean displacement
};

// Two shear stages. Stage 1 sorts sources along u2 and fixes their u1 coordinate;
// stage 2 sorts by the (now exact) u1 coordinate and fixes the rest. Each batch of P
// points costs one segment, so the control has at most 2 ceil(N/P) segments.
inline PiecewiseConstantControl synthesize_width(const PointDataset& data, Eigen::Index P, double T,
                                                 const SynthesisOptions& opt = {}) {
  if (data.dim() < 2) throw Error(ErrorCode::DimensionMismatch, "simultaneous control needs d >= 2");
  if (P < 1) throw Error(ErrorCode::ConfigError, "width must be at least 1");
  if (!(T > 0)) throw Error(ErrorCode::InvalidTime, "horizon must be positive");
  if (!data.consistent()) throw Error(ErrorCode::InconsistentData, "inputs or targets repeat");
  const Eigen::Index N = data.size(), d = data.dim();

  if ((data.x - data.y).cwiseAbs().maxCoeff() == 0.0) {
    PiecewiseConstantControl id;
    id.segments.push_back(ControlSegment::zero(T, d, P));
    return id;
  }

  Rng rng(opt.seed);
  double best_err = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < opt.attempts; ++attempt) {
    Mat frame;
    double best_score = -1.0;
    for (int k = 0; k < opt.frame_trials; ++k) {
      Mat Q = detail::random_rotation(rng, d);
      double score = std::min(detail::min_gap(data.x * Q.col(1)), detail::min_gap(data.y * Q.col(0)));
      if (N < 2) score = 1.0;
      if (score > best_score) {
        best_score = score;
        frame = Q;
      }
    }
    if (!(best_score > 1e-12)) continue;
    Vec u1 = frame.col(0), u2 = frame.col(1);

    PiecewiseConstantControl ctrl;
    Mat Z = data.x;
    if (opt.mean_translation) {
      // A = 0, b = 1: the field is the constant w
      ControlSegment seg = ControlSegment::zero(1.0, d, P);
      seg.b[0] = 1.0;
      seg.W.col(0) = (data.y - data.x).colwise().mean().transpose();
      if (seg.W.norm() > 0.0) {
        Z.rowwise() += seg.W.col(0).transpose();
        ctrl.segments.push_back(std::move(seg));
      }
    }
    detail::shear_stage(
        Z, u2, P, [&](Eigen::Index i, const Vec& z) { return Vec(u1 * (u1.dot(data.y.row(i).transpose()) - u1.dot(z))); },
        Vec::Zero(d), opt.cut_fraction, opt.flat_tails, ctrl);
    detail::shear_stage(
        Z, u1, P, [&](Eigen::Index i, const Vec& z) { return Vec(data.y.row(i).transpose() - z); }, u1,
        opt.cut_fraction, opt.flat_tails, ctrl);
    if (ctrl.segments.empty()) ctrl.segments.push_back(ControlSegment::zero(1.0, d, P));
    ctrl.rescale_horizon(T);
    double err = max_endpoint_error(data, ctrl);
    if (err < opt.accuracy) return ctrl;
    best_err = std::min(best_err, err);
  }
  throw Error(ErrorCode::SynthesisFailed,
              "endpoint error " + std::to_string(best_err) + " above tolerance after " + std::to_string(opt.attempts) +
                  " frames");
}

inline PiecewiseConstantControl synthesize_p1(const PointDataset& data, double T, const SynthesisOptions& opt = {}) {
  return synthesize_width(data, 1, T, opt);
}

}  // namespace ncl
