#pragma once

#include "common.hpp"
#include "lp.hpp"
#include "transport.hpp"

#include <json.hpp>

#include <numbers>
#include <optional>
#include <vector>

namespace ncl {

// f(x) = sum_j w_j relu(<a_j, x> + b_j); row j of `a` is a_j.
struct ShallowParams {
  Vec w;
  Mat a;
  Vec b;

  Eigen::Index width() const { return w.size(); }
  Eigen::Index dim() const { return a.cols(); }

  static ShallowParams zeros(Eigen::Index P, Eigen::Index d) {
    return {Vec::Zero(P), Mat::Zero(P, d), Vec::Zero(P)};
  }
  double l1() const { return w.cwiseAbs().sum(); }
  // sum_j |w_j| |a_j|, the Lipschitz weight of the network up to the activation constant.
  double lipschitz_weight() const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < width(); ++j) s += std::abs(w[j]) * a.row(j).norm();
    return s;
  }
  // Largest |(a_j, b_j)|; must not exceed the admissible radius.
  double max_inner_norm() const {
    double m = 0.0;
    for (Eigen::Index j = 0; j < width(); ++j) m = std::max(m, std::hypot(a.row(j).norm(), b[j]));
    return m;
  }
};

struct LabeledDataset {
  Mat x;  // N x d
  Vec y;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }

  bool consistent() const { return size() < 2 || min_pairwise_distance(x) > 1e-12; }

  static LabeledDataset from_csv(const std::string& path) {
    Mat m = csv::read(path);
    if (m.cols() < 2) throw Error(ErrorCode::IoError, path + ": need d feature columns plus a label column");
    return {m.leftCols(m.cols() - 1), m.col(m.cols() - 1)};
  }
  void to_csv(const std::string& path) const {
    Mat m(size(), dim() + 1);
    m << x, y;
    csv::write(path, m);
  }
};

struct Atom {
  double w = 0.0;
  Vec loc;  // (a, b) in R^{d+1}
};

struct AtomicMeasure {
  std::vector<Atom> atoms;

  std::size_t size() const { return atoms.size(); }
  double tv_norm() const {
    double s = 0.0;
    for (const auto& at : atoms) s += std::abs(at.w);
    return s;
  }
  ShallowParams to_params(Eigen::Index d) const {
    auto p = ShallowParams::zeros(static_cast<Eigen::Index>(atoms.size()), d);
    for (std::size_t j = 0; j < atoms.size(); ++j) {
      p.w[j] = atoms[j].w;
      p.a.row(j) = atoms[j].loc.head(d).transpose();
      p.b[j] = atoms[j].loc[d];
    }
    return p;
  }
};

inline double eval_shallow(const Vec& x, const ShallowParams& p) {
  if (x.size() != p.dim())
    throw Error(ErrorCode::DimensionMismatch,
                "input has dimension " + std::to_string(x.size()) + ", network expects " + std::to_string(p.dim()));
  double s = 0.0;
  for (Eigen::Index j = 0; j < p.width(); ++j) s += p.w[j] * relu(p.a.row(j).dot(x) + p.b[j]);
  return s;
}

inline Vec eval_shallow_batch(const Mat& x, const ShallowParams& p) {
  if (x.cols() != p.dim()) throw Error(ErrorCode::DimensionMismatch, "input dimension does not match network");
  return feature_matrix(x, p.a, p.b) * p.w;
}

inline void require_consistent(const LabeledDataset& data) {
  if (data.y.size() != data.x.rows()) throw Error(ErrorCode::SizeMismatch, "feature and label counts differ");
  if (!data.consistent()) throw Error(ErrorCode::InconsistentData, "dataset has repeated inputs");
}

// Inner parameters are drawn from the ball one neuron at a time; a draw is kept
// while the feature columns are still short of rank N only if it raises the rank.
inline ShallowParams exact_fit(const LabeledDataset& data, Eigen::Index P, std::uint64_t seed, double radius = 1.0,
                               int max_tries = 20000) {
  require_consistent(data);
  const Eigen::Index N = data.size(), d = data.dim();
  if (P < N) throw Error(ErrorCode::DegenerateSampling, "width must be at least the number of samples");
  Rng rng(seed);
  auto p = ShallowParams::zeros(P, d);
  Mat Q(N, 0);
  for (Eigen::Index j = 0; j < P; ++j) {
    for (int attempt = 0;; ++attempt) {
      Vec th = sample_ball(rng, d + 1, radius);
      Vec f = (data.x * th.head(d)).array() + th[d];
      f = f.cwiseMax(0.0);
      bool keep = Q.cols() == N;
      if (!keep) {
        Vec r = f - Q * (Q.transpose() * f);
        r -= Q * (Q.transpose() * r);
        double fn = f.norm();
        if (fn > 0 && r.norm() > 1e-7 * fn) {
          Q.conservativeResize(N, Q.cols() + 1);
          Q.col(Q.cols() - 1) = r.normalized();
          keep = true;
        }
      }
      if (keep || attempt >= max_tries) {
        p.a.row(j) = th.head(d).transpose();
        p.b[j] = th[d];
        break;
      }
    }
  }
  Mat F = feature_matrix(data.x, p.a, p.b);
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(F);
  cod.setThreshold(1e-12);
  if (Q.cols() < N || cod.rank() < N)
    throw Error(ErrorCode::DegenerateSampling, "feature matrix stayed rank deficient after " +
                                                   std::to_string(max_tries) + " draws per neuron");
  p.w = cod.solve(data.y);
  if ((F * p.w - data.y).cwiseAbs().maxCoeff() > 1e-8)
    throw Error(ErrorCode::DegenerateSampling, "ill-conditioned feature matrix, residual above 1e-8");
  return p;
}

// Unit directions in R^k: uniform angles (k = 2), Fibonacci sphere (k = 3), seeded Gaussian otherwise.
inline Mat sphere_directions(Eigen::Index k, int count, std::uint64_t seed = 0) {
  Mat dirs(count, k);
  if (k == 1) {
    for (int i = 0; i < count; ++i) dirs(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
  } else if (k == 2) {
    for (int i = 0; i < count; ++i) {
      double t = 2.0 * std::numbers::pi * i / count;
      dirs.row(i) << std::cos(t), std::sin(t);
    }
  } else if (k == 3) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      double z = 1.0 - 2.0 * (i + 0.5) / count;
      double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      double phi = golden * i;
      dirs.row(i) << r * std::cos(phi), r * std::sin(phi), z;
    }
  } else {
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
      Vec v = gaussian_vec(rng, k);
      dirs.row(i) = v.normalized().transpose();
    }
  }
  return dirs;
}

// Sphere directions scaled to radii radius * s / shells, s = 1..shells.
inline Mat make_grid(Eigen::Index d, int directions, int shells = 1, double radius = 1.0, std::uint64_t seed = 0) {
  Mat dirs = sphere_directions(d + 1, directions, seed);
  Mat g(dirs.rows() * shells, d + 1);
  for (int s = 1; s <= shells; ++s) g.middleRows((s - 1) * dirs.rows(), dirs.rows()) = dirs * (radius * s / shells);
  return g;
}

inline Mat grid_union(const Mat& g1, const Mat& extra) {
  Mat g(g1.rows() + extra.rows(), g1.cols());
  g << g1, extra;
  return g;
}

struct RelaxedFit {
  AtomicMeasure measure;
  double value = 0.0;
  Vec w;    // signed weight per grid node
  Vec eta;  // sensitivity of the value to the i-th prediction constraint
  int lp_iterations = 0;
};

inline RelaxedFit relaxed_lp_fit(const LabeledDataset& data, const Mat& grid, double epsilon,
                                 const LpOptions& opt = {}) {
  if (data.y.size() != data.x.rows()) throw Error(ErrorCode::SizeMismatch, "feature and label counts differ");
  if (grid.rows() == 0) throw Error(ErrorCode::InfeasibleGrid, "empty grid");
  if (grid.cols() != data.dim() + 1)
    throw Error(ErrorCode::DimensionMismatch, "grid nodes must live in R^{d+1}");
  if (epsilon < 0) throw Error(ErrorCode::InvalidProgram, "epsilon must be nonnegative");
  const Eigen::Index N = data.size(), G = grid.rows();
  Mat F = feature_matrix(data.x, grid.leftCols(data.dim()), grid.col(data.dim()));

  StandardLp lp;
  lp.c = Vec::Ones(2 * G);
  if (epsilon == 0.0) {
    lp.M.resize(N, 2 * G);
    lp.M << F, -F;
    lp.r = data.y;
  } else {
    lp.M.resize(2 * N, 2 * G);
    lp.M << F, -F, -F, F;
    lp.r.resize(2 * N);
    lp.r << data.y.array() + epsilon, epsilon - data.y.array();
    lp.sense.assign(2 * N, RowSense::Le);
  }
  auto sol = solve_lp(lp, opt);
  if (sol.status == LpStatus::Infeasible)
    throw Error(ErrorCode::InfeasibleGrid, "no grid measure meets the constraints");
  if (sol.status != LpStatus::Optimal) throw Error(ErrorCode::InvalidProgram, "relaxed program is unbounded");

  RelaxedFit out;
  out.lp_iterations = sol.iterations;
  out.w = sol.x.head(G) - sol.x.tail(G);
  out.eta = epsilon == 0.0 ? Vec(sol.y) : Vec(sol.y.head(N) - sol.y.tail(N));
  // Merge split variables and coincident nodes.
  for (Eigen::Index g = 0; g < G; ++g) {
    if (std::abs(out.w[g]) <= 1e-12) continue;
    bool merged = false;
    for (auto& at : out.measure.atoms) {
      if ((at.loc - grid.row(g).transpose()).norm() <= 1e-14) {
        at.w += out.w[g];
        merged = true;
        break;
      }
    }
    if (!merged) out.measure.atoms.push_back({out.w[g], grid.row(g).transpose()});
  }
  std::erase_if(out.measure.atoms, [](const Atom& a) { return std::abs(a.w) <= 1e-12; });
  out.value = out.measure.tv_norm();
  return out;
}

struct MultistartResult {
  ShallowParams params;
  double value = std::numeric_limits<double>::infinity();
  bool feasible = false;
  int feasible_restarts = 0;
  std::vector<double> restart_values;  // +inf for restarts that never became feasible
};

struct MultistartOptions {
  double radius = 1.0;
  int iterations = 200;
  double initial_step = 0.5;
  double min_step = 1e-9;
};

namespace detail {

inline Mat project_ball(Mat th, double radius) {
  for (Eigen::Index j = 0; j < th.rows(); ++j) {
    double n = th.row(j).norm();
    if (n > radius) th.row(j) *= radius / n;
  }
  return th;
}

inline std::optional<RelaxedFit> inner_fit(const LabeledDataset& data, const Mat& th, double epsilon) {
  try {
    return relaxed_lp_fit(data, th, epsilon);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InfeasibleGrid) return std::nullopt;
    throw;
  }
}

// Gradient of the inner optimal value with respect to the atom locations.
inline Mat value_gradient(const LabeledDataset& data, const Mat& th, const RelaxedFit& fit) {
  const Eigen::Index d = data.dim();
  Mat xa(data.size(), d + 1);
  xa << data.x, Vec::Ones(data.size());
  Mat s = xa * th.transpose();
  Mat grad = Mat::Zero(th.rows(), d + 1);
  for (Eigen::Index j = 0; j < th.rows(); ++j) {
    if (fit.w[j] == 0.0) continue;
    Vec acc = Vec::Zero(d + 1);
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (s(i, j) > 0) acc += fit.eta[i] * xa.row(i).transpose();
    grad.row(j) = -fit.w[j] * acc.transpose();
  }
  return grad;
}

}  // namespace detail

// Local search over width-P networks: the amplitudes are solved exactly for fixed
// inner parameters, which then take projected gradient steps with backtracking.
inline MultistartResult nonconvex_multistart(const LabeledDataset& data, Eigen::Index P, double epsilon, int restarts,
                                             std::uint64_t seed, const MultistartOptions& opt = {}) {
  require_consistent(data);
  const Eigen::Index d = data.dim();
  MultistartResult best;
  best.params = ShallowParams::zeros(P, d);
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, r));
    Mat th(P, d + 1);
    for (Eigen::Index j = 0; j < P; ++j) th.row(j) = gaussian_vec(rng, d + 1).normalized().transpose() * opt.radius;
    auto fit = detail::inner_fit(data, th, epsilon);
    for (int retry = 0; !fit && retry < 20; ++retry) {
      for (Eigen::Index j = 0; j < P; ++j) th.row(j) = gaussian_vec(rng, d + 1).normalized().transpose() * opt.radius;
      fit = detail::inner_fit(data, th, epsilon);
    }
    if (!fit) {
      best.restart_values.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    double step = opt.initial_step;
    for (int it = 0; it < opt.iterations && step >= opt.min_step; ++it) {
      Mat g = detail::value_gradient(data, th, *fit);
      if (!g.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite gradient in local search");
      if (g.norm() == 0.0) break;
      bool accepted = false;
      while (step >= opt.min_step) {
        Mat cand = detail::project_ball(th - step * g, opt.radius);
        auto cf = detail::inner_fit(data, cand, epsilon);
        if (cf && cf->value < fit->value - 1e-14) {
          th = cand;
          fit = std::move(cf);
          accepted = true;
          step *= 2.0;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
    }
    ++best.feasible_restarts;
    best.restart_values.push_back(fit->value);
    if (fit->value < best.value) {
      best.value = fit->value;
      best.feasible = true;
      best.params.a = th.leftCols(d);
      best.params.b = th.col(d);
      best.params.w = fit->w;
    }
  }
  if (!best.feasible) throw Error(ErrorCode::LocalSearchFailed, "no restart reached a feasible network");
  return best;
}

struct GeneralizationReport {
  double irreducible = 0.0;
  double training_bias = 0.0;
  double sensitivity = 0.0;
  double bound = 0.0;
  double lhs = 0.0;
  double epsilon = 1e-8;
  // Componentwise alternatives to the joint distances.
  double irreducible_features = 0.0;
  double irreducible_labels = 0.0;

  double slack() const { return bound - lhs; }
  bool holds() const { return lhs <= bound + epsilon; }

  nlohmann::json to_json() const {
    return {{"irreducible", irreducible},
            {"training_bias", training_bias},
            {"sensitivity", sensitivity},
            {"bound", bound},
            {"lhs", lhs},
            {"epsilon", epsilon},
            {"irreducible_features", irreducible_features},
            {"irreducible_labels", irreducible_labels}};
  }
};

inline GeneralizationReport generalization_report(const LabeledDataset& train, const LabeledDataset& test,
                                                  const ShallowParams& params, double lipschitz = 1.0) {
  if (train.size() != test.size())
    throw Error(ErrorCode::SizeMismatch, "train and test sets must have equal size");
  GeneralizationReport rep;
  Vec pred_train = eval_shallow_batch(train.x, params);
  Vec pred_test = eval_shallow_batch(test.x, params);
  rep.training_bias = (pred_train - train.y).cwiseAbs().mean();
  double feat = w1_empirical(EmpiricalMeasure(train.x), EmpiricalMeasure(test.x));
  rep.sensitivity = feat * lipschitz * params.lipschitz_weight();
  auto pr = kr_pair_report({train.x, train.y}, {test.x, test.y});
  rep.irreducible = pr.joint;
  rep.irreducible_features = pr.features;
  rep.irreducible_labels = pr.labels;
  rep.lhs = kr_pair_distance({test.x, test.y}, {test.x, pred_test});
  rep.bound = rep.irreducible + rep.training_bias + rep.sensitivity;
  return rep;
}

}  // namespace ncl
