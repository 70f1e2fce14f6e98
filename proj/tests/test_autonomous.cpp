#include <gtest/gtest.h>

#include <ncl/autonomous.hpp>
#include <ncl/sanode.hpp>

#include <algorithm>
#include <cmath>

namespace {

const double kTolerance = 1e-6;

ncl::Vec v2(double a, double b) { return ncl::Vec(Eigen::Vector2d(a, b)); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

ncl::Trajectory sample_trajectory(const ncl::Vec& x0, double T, int steps, bool linear) {
  ncl::Trajectory tr;
  tr.t = ncl::Vec::LinSpaced(steps + 1, 0.0, T);
  tr.x.resize(steps + 1, x0.size());
  for (int k = 0; k <= steps; ++k) {
    double t = tr.t[k];
    if (linear)
      tr.x.row(k) = (x0 * std::exp(t)).transpose();
    else
      tr.x.row(k) = (x0 + v2(std::sin(t), std::cos(t) - 1.0)).transpose();
  }
  return tr;
}

}  // namespace

TEST(Tube, SingleCurve) {
  ncl::PointDataset data{v2(0, 0).transpose(), v2(1, 0).transpose()};
  auto f = ncl::build_autonomous_field(data, 1.0, 1);
  EXPECT_EQ(f.kind, ncl::FieldKind::TubeExact);
  ncl::Vec end = ncl::flow_autonomous(f, v2(0, 0));
  EXPECT_NEAR((end - v2(1, 0)).norm(), 0.0, kTolerance);
  // the centre line is the straight segment
  EXPECT_NEAR(f.curves[0].distance(v2(0.5, 0)), 0.0, 1e-12);
}

TEST(Tube, ParallelTranslations) {
  ncl::Mat x(2, 2), y(2, 2);
  x << 0, 0, 0, 1;
  y << 1, 0, 1, 1;
  ncl::PointDataset data{x, y};
  auto f = ncl::build_autonomous_field(data, 2.0, 3);
  for (int i = 0; i < 2; ++i) {
    ncl::Vec end = ncl::flow_autonomous(f, x.row(i).transpose());
    EXPECT_LT((end - y.row(i).transpose()).norm(), kTolerance);
  }
  EXPECT_GT(f.radius, 0.0);
  EXPECT_TRUE(std::isfinite(f.lipschitz));
}

TEST(Tube, OutsideIsStationary) {
  ncl::PointDataset data{v2(0, 0).transpose(), v2(1, 0).transpose()};
  auto f = ncl::build_autonomous_field(data, 1.0, 1);
  ncl::Vec far = v2(10, 10);
  EXPECT_EQ(f(far), v2(0, 0));
  EXPECT_EQ(ncl::flow_autonomous(f, far), far);
}

TEST(Tube, RandomDatasetsLand) {
  ncl::Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    ncl::PointDataset data{ncl::uniform_mat(rng, 5, 2, -1, 1), ncl::uniform_mat(rng, 5, 2, -1, 1)};
    auto f = ncl::build_autonomous_field(data, 1.0, trial);
    for (int i = 0; i < 5; ++i) {
      ncl::Vec end = ncl::flow_autonomous(f, data.x.row(i).transpose());
      EXPECT_LT((end - data.y.row(i).transpose()).norm(), kTolerance);
    }
  }
}

TEST(Tube, Errors) {
  ncl::Mat x(2, 2);
  x << 0, 0, 0, 0;
  EXPECT_THROW(ncl::build_autonomous_field({x, x}, 1.0, 0), ncl::Error);
  ncl::Mat one(1, 1);
  one << 0;
  try {
    ncl::build_autonomous_field({one, one}, 1.0, 0);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::DimensionMismatch);
  }
}

TEST(ShallowFit, OneTubeAccurate) {
  ncl::PointDataset data{v2(0, 0).transpose(), v2(1, 0).transpose()};
  auto tube = ncl::build_autonomous_field(data, 1.0, 1);
  auto fit = ncl::fit_autonomous_shallow(tube, 256, 5);
  EXPECT_EQ(fit.field.kappa, (2 + 2) * 2 * 256);
  EXPECT_LT(fit.sup_error, 0.05);
}

TEST(ShallowFit, ZeroField) {
  ncl::Mat x(2, 2);
  x << 0, 0, 1, 1;
  auto tube = ncl::build_autonomous_field({x, x}, 1.0, 0);
  auto fit = ncl::fit_autonomous_shallow(tube, 16, 0);
  EXPECT_EQ(fit.sup_error, 0.0);
  EXPECT_EQ(fit.field.shallow.W.norm(), 0.0);
}

TEST(ShallowFit, DecayWithWidth) {
  ncl::Mat x(2, 2), y(2, 2);
  x << 0, 0, 0, 0.5;
  y << 1, 0.2, 1, 0.8;
  ncl::PointDataset data{x, y};
  auto tube = ncl::build_autonomous_field(data, 1.0, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (int P : {32, 64, 128, 256}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 5; ++seed) errs.push_back(ncl::fit_autonomous_shallow(tube, P, seed).sup_error);
    double m = median(errs);
    EXPECT_LE(m, prev) << "P=" << P;
    prev = m;
  }
}

TEST(Sanode, LinearFieldHasNoTimeDependence) {
  std::vector<ncl::Trajectory> trajs;
  ncl::Rng rng(4);
  for (int k = 0; k < 30; ++k) trajs.push_back(sample_trajectory(ncl::uniform_mat(rng, 2, 1, -0.5, 0.5), 0.5, 40, true));
  auto fit = ncl::fit_sanode(trajs, 32, 7);
  EXPECT_LT(fit.residual, 1e-3);
  EXPECT_LE(fit.residual, fit.initial_residual);
  EXPECT_LT(fit.params.beta.cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Sanode, ZeroField) {
  ncl::Trajectory tr;
  tr.t = ncl::Vec::LinSpaced(10, 0, 1);
  tr.x = ncl::Mat::Constant(10, 2, 0.3);
  auto fit = ncl::fit_sanode({tr}, 8, 0);
  EXPECT_EQ(fit.residual, 0.0);
  EXPECT_EQ(fit.params.W.norm(), 0.0);
}

TEST(Sanode, TimeDependentResidualDecreases) {
  std::vector<ncl::Trajectory> trajs;
  ncl::Rng rng(8);
  for (int k = 0; k < 10; ++k) trajs.push_back(sample_trajectory(ncl::uniform_mat(rng, 2, 1, -1, 1), 3.0, 60, false));
  double prev = std::numeric_limits<double>::infinity();
  for (int P : {8, 16, 32}) {
    std::vector<double> r;
    for (std::uint64_t seed = 0; seed < 3; ++seed) r.push_back(ncl::fit_sanode(trajs, P, seed).residual);
    double m = median(r);
    EXPECT_LT(m, prev) << "P=" << P;
    prev = m;
  }
}

TEST(Sanode, FrozenBetaStaysZero) {
  std::vector<ncl::Trajectory> trajs;
  ncl::Rng rng(2);
  for (int k = 0; k < 5; ++k) trajs.push_back(sample_trajectory(ncl::uniform_mat(rng, 2, 1, -1, 1), 1.0, 20, false));
  ncl::SanodeOptions opt;
  opt.freeze_beta = true;
  auto fit = ncl::fit_sanode(trajs, 8, 1, opt);
  EXPECT_EQ(fit.params.beta.norm(), 0.0);
}

TEST(Sanode, TooSparse) {
  ncl::Trajectory tr;
  tr.t = ncl::Vec::LinSpaced(3, 0, 1);
  tr.x = ncl::Mat::Zero(3, 2);
  try {
    ncl::fit_sanode({tr}, 4, 0);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::DataTooSparse);
  }
}
