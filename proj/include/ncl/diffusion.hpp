#pragma once

#include "common.hpp"
#include "transport.hpp"

#include <numbers>
#include <ostream>
#include <vector>

namespace ncl {

// u(x, t) = (1/I) sum_i G(x - x_i, t) started from the empirical measure of the rows.
class ScoreField {
 public:
  explicit ScoreField(Mat points) : x_(std::move(points)) {
    if (x_.rows() == 0 || x_.cols() == 0) throw Error(ErrorCode::ConfigError, "score field needs data points");
    if (!x_.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite data point");
  }
  Eigen::Index size() const { return x_.rows(); }
  Eigen::Index dim() const { return x_.cols(); }
  const Mat& points() const { return x_; }

 private:
  Mat x_;
};

namespace detail {

inline void require_time(double t) {
  if (!(t > 0) || !std::isfinite(t)) throw Error(ErrorCode::InvalidTime, "time must be positive");
}

inline void require_point(const Vec& x, const ScoreField& f) {
  if (x.size() != f.dim()) throw Error(ErrorCode::DimensionMismatch, "point dimension differs from data");
}

// Posterior weights p_i = softmax(-|x - x_i|^2 / 4t), computed in the log domain.
// Returns log sum_i exp(-|x - x_i|^2 / 4t).
inline double mixture_weights(const Vec& x, double t, const ScoreField& f, Vec& p) {
  p = -(f.points().rowwise() - x.transpose()).rowwise().squaredNorm() / (4.0 * t);
  double mx = p.maxCoeff();
  p = (p.array() - mx).exp().matrix();
  double sum = p.sum();
  p /= sum;
  return mx + std::log(sum);
}

}  // namespace detail

inline double log_heat_value(const Vec& x, double t, const ScoreField& f) {
  detail::require_time(t);
  detail::require_point(x, f);
  Vec p;
  double lse = detail::mixture_weights(x, t, f, p);
  const double d = static_cast<double>(f.dim());
  return lse - std::log(static_cast<double>(f.size())) - 0.5 * d * std::log(4.0 * std::numbers::pi * t);
}

inline double heat_value(const Vec& x, double t, const ScoreField& f) { return std::exp(log_heat_value(x, t, f)); }

// s = grad log u = sum_i p_i mu_i, mu_i = (x_i - x) / 2t
inline Vec score(const Vec& x, double t, const ScoreField& f) {
  detail::require_time(t);
  detail::require_point(x, f);
  Vec p;
  detail::mixture_weights(x, t, f, p);
  return (f.points().transpose() * p - x) / (2.0 * t);
}

// div s = sum_i p_i |mu_i|^2 - |s|^2 - d / 2t; the first two terms are evaluated as
// the weighted variance sum_i p_i |mu_i - s|^2 to avoid cancellation.
inline double div_score(const Vec& x, double t, const ScoreField& f) {
  detail::require_time(t);
  detail::require_point(x, f);
  Vec p;
  detail::mixture_weights(x, t, f, p);
  Vec mean = f.points().transpose() * p;
  double var = (p.array() * (f.points().rowwise() - mean.transpose()).rowwise().squaredNorm().array()).sum();
  return var / (4.0 * t * t) - 0.5 * static_cast<double>(f.dim()) / t;
}

struct MarginReport {
  double margin = 0.0;  // min over the grid of div s + d / 2t
  Vec location;
};

inline MarginReport li_yau_margin(const ScoreField& f, double t, const Mat& grid) {
  detail::require_time(t);
  if (grid.rows() == 0) throw Error(ErrorCode::ConfigError, "empty grid");
  if (grid.cols() != f.dim()) throw Error(ErrorCode::DimensionMismatch, "grid dimension differs from data");
  MarginReport r;
  r.margin = std::numeric_limits<double>::infinity();
  const double floor = 0.5 * static_cast<double>(f.dim()) / t;
  for (Eigen::Index k = 0; k < grid.rows(); ++k) {
    Vec x = grid.row(k).transpose();
    double m = div_score(x, t, f) + floor;
    if (m < r.margin) {
      r.margin = m;
      r.location = x;
    }
  }
  return r;
}

// Tensor grid with `per_axis` points on [lo, hi]^d.
inline Mat box_grid(Eigen::Index d, int per_axis, double lo, double hi) {
  Eigen::Index n = 1;
  for (Eigen::Index k = 0; k < d; ++k) n *= per_axis;
  Mat g(n, d);
  Vec axis = Vec::LinSpaced(per_axis, lo, hi);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index r = i;
    for (Eigen::Index k = 0; k < d; ++k) {
      g(i, k) = axis[r % per_axis];
      r /= per_axis;
    }
  }
  return g;
}

// nu(t): constant, or piecewise linear through (t_k, nu_k) and constant outside.
struct NuSchedule {
  double constant = 1.0;
  std::vector<double> t, nu;

  double operator()(double s) const {
    if (t.empty()) return constant;
    if (s <= t.front()) return nu.front();
    if (s >= t.back()) return nu.back();
    auto it = std::upper_bound(t.begin(), t.end(), s);
    std::size_t k = static_cast<std::size_t>(it - t.begin());
    double w = (s - t[k - 1]) / (t[k] - t[k - 1]);
    return (1 - w) * nu[k - 1] + w * nu[k];
  }

  void validate() const {
    if (t.size() != nu.size()) throw Error(ErrorCode::ConfigError, "nu table columns differ in length");
    if (t.empty() && !(constant >= 0)) throw Error(ErrorCode::ConfigError, "nu must be nonnegative");
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (!(nu[k] >= 0)) throw Error(ErrorCode::ConfigError, "nu must be nonnegative");
      if (k && !(t[k] > t[k - 1])) throw Error(ErrorCode::ConfigError, "nu table times must increase");
    }
  }
};

struct ReverseRunConfig {
  double T = 1.0;
  double t_min = 0.01;
  NuSchedule nu;
  int steps = 512;
  std::uint64_t seed = 0;
  bool geometric = true;  // grid in t; uniform otherwise

  void validate() const {
    if (!(T > 0) || !(t_min > 0) || !(t_min < T)) throw Error(ErrorCode::ConfigError, "need 0 < t_min < T");
    if (steps < 1) throw Error(ErrorCode::ConfigError, "steps must be at least 1");
    nu.validate();
  }

  // Decreasing times from T to t_min.
  std::vector<double> time_grid() const {
    std::vector<double> g(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
      double f = static_cast<double>(k) / steps;
      g[k] = geometric ? T * std::pow(t_min / T, f) : T + (t_min - T) * f;
    }
    g.back() = t_min;
    return g;
  }
};

// Samples of u(., t): uniform data index plus N(0, 2t) per coordinate.
inline Mat exact_samples(const ScoreField& f, double t, Eigen::Index n, Rng& rng) {
  detail::require_time(t);
  std::uniform_int_distribution<Eigen::Index> pick(0, f.size() - 1);
  std::normal_distribution<double> g(0.0, std::sqrt(2.0 * t));
  Mat X(n, f.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i) = f.points().row(pick(rng));
    for (Eigen::Index k = 0; k < f.dim(); ++k) X(i, k) += g(rng);
  }
  return X;
}

// Stochastic Heun in reverse time r = T - t, drift (1 + nu) s(X, t), noise
// sqrt(2 nu dr) xi shared by predictor and corrector. Particle i draws its noise
// from derive_seed(cfg.seed, i), so results do not depend on evaluation order.
inline Mat reverse_sample_from(const ScoreField& f, const ReverseRunConfig& cfg, Mat X) {
  cfg.validate();
  if (X.cols() != f.dim()) throw Error(ErrorCode::DimensionMismatch, "initial cloud dimension differs from data");
  auto grid = cfg.time_grid();
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    if (!(grid[k] - grid[k + 1] > 0)) throw Error(ErrorCode::StepError, "time step underflow");
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    Vec x = X.row(i).transpose();
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
      const double t = grid[k], t1 = grid[k + 1], dr = t - t1;
      const double nu = cfg.nu(t), nu1 = cfg.nu(t1);
      Vec noise = Vec::Zero(x.size());
      if (nu > 0 || nu1 > 0) noise = std::sqrt((nu + nu1) * dr) * gaussian_vec(rng, x.size());
      const Vec drift = (1.0 + nu) * score(x, t, f);
      const Vec pred = x + dr * drift + noise;
      x += 0.5 * dr * (drift + (1.0 + nu1) * score(pred, t1, f)) + noise;
    }
    X.row(i) = x.transpose();
  }
  if (!X.allFinite()) throw Error(ErrorCode::StepError, "non-finite particle");
  return X;
}

inline Mat initial_cloud(const ScoreField& f, const ReverseRunConfig& cfg, Eigen::Index n) {
  Rng rng(derive_seed(cfg.seed, 0xC10D));
  return exact_samples(f, cfg.T, n, rng);
}

inline Mat reverse_sample(const ScoreField& f, const ReverseRunConfig& cfg, Eigen::Index n) {
  cfg.validate();
  return reverse_sample_from(f, cfg, initial_cloud(f, cfg, n));
}

inline double mean_nearest_data_distance(const Mat& X, const ScoreField& f) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    s += std::sqrt((f.points().rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff());
  return X.rows() ? s / static_cast<double>(X.rows()) : 0.0;
}

struct SweepRow {
  double t_min = 0.0;
  double mean_nn_dist = 0.0;
  double w1_exact = 0.0;
};

inline std::vector<SweepRow> stopping_sweep(const ScoreField& f, const ReverseRunConfig& base,
                                            const std::vector<double>& t_mins, Eigen::Index n) {
  for (std::size_t k = 1; k < t_mins.size(); ++k)
    if (!(t_mins[k] > t_mins[k - 1])) throw Error(ErrorCode::ConfigError, "t_min values must be increasing");
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < t_mins.size(); ++k) {
    ReverseRunConfig cfg = base;
    cfg.t_min = t_mins[k];
    Mat X = reverse_sample(f, cfg, n);
    Rng rng(derive_seed(base.seed, 0xE7AC7 + k));
    Mat ref = exact_samples(f, cfg.t_min, n, rng);
    rows.push_back({cfg.t_min, mean_nearest_data_distance(X, f), w1_empirical(EmpiricalMeasure(X), EmpiricalMeasure(ref))});
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "t_min,mean_nn_dist,w1_exact\n";
  os.precision(17);
  for (const auto& r : rows) os << r.t_min << "," << r.mean_nn_dist << "," << r.w1_exact << "\n";
}

}  // namespace ncl
