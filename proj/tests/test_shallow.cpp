#include <gtest/gtest.h>

#include <ncl/shallow.hpp>

namespace {

const double kTolerance = 1e-8;

ncl::ShallowParams one_neuron(double w, ncl::Vec a, double b) {
  ncl::ShallowParams p{ncl::Vec::Constant(1, w), a.transpose(), ncl::Vec::Constant(1, b)};
  return p;
}

ncl::LabeledDataset random_dataset(ncl::Rng& rng, int N, int d) {
  ncl::LabeledDataset data{ncl::uniform_mat(rng, N, d, -1.0, 1.0), ncl::uniform_mat(rng, N, 1, -1.0, 1.0)};
  return data;
}

}  // namespace

TEST(EvalShallow, SingleNeuron) {
  auto p = one_neuron(1.0, ncl::Vec::Unit(2, 0), 0.0);
  EXPECT_EQ(ncl::eval_shallow(ncl::Vec(Eigen::Vector2d(2, 0)), p), 2.0);
  EXPECT_EQ(ncl::eval_shallow(ncl::Vec(Eigen::Vector2d(-1, 0)), p), 0.0);
}

TEST(EvalShallow, Cancellation) {
  ncl::Rng rng(1);
  ncl::Vec a = ncl::gaussian_vec(rng, 3);
  ncl::ShallowParams p{ncl::Vec(2), ncl::Mat(2, 3), ncl::Vec::Constant(2, 0.4)};
  p.w << 1.0, -1.0;
  p.a << a.transpose(), a.transpose();
  for (int k = 0; k < 20; ++k) EXPECT_EQ(ncl::eval_shallow(ncl::gaussian_vec(rng, 3), p), 0.0);
}

TEST(EvalShallow, DimensionMismatch) {
  auto p = one_neuron(1.0, ncl::Vec::Unit(2, 0), 0.0);
  try {
    ncl::eval_shallow(ncl::Vec::Zero(3), p);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::DimensionMismatch);
  }
}

TEST(EvalShallow, PositiveHomogeneity) {
  ncl::Rng rng(4);
  ncl::ShallowParams p{ncl::gaussian_vec(rng, 6), ncl::gaussian_mat(rng, 6, 2), ncl::gaussian_vec(rng, 6)};
  for (double lambda : {0.3, 2.0, 17.0}) {
    ncl::ShallowParams q{p.w / lambda, p.a * lambda, p.b * lambda};
    for (int k = 0; k < 10; ++k) {
      ncl::Vec x = ncl::gaussian_vec(rng, 2);
      EXPECT_NEAR(ncl::eval_shallow(x, p), ncl::eval_shallow(x, q), 1e-12);
    }
  }
}

TEST(ExactFit, Interpolates) {
  ncl::LabeledDataset one{ncl::Mat::Zero(1, 1), ncl::Vec::Ones(1)};
  auto p1 = ncl::exact_fit(one, 1, 3);
  EXPECT_LT(std::abs(ncl::eval_shallow(ncl::Vec::Zero(1), p1) - 1.0), 1e-10);

  ncl::Rng rng(8);
  auto data = random_dataset(rng, 5, 2);
  auto p = ncl::exact_fit(data, 5, 17);
  EXPECT_LE((ncl::eval_shallow_batch(data.x, p) - data.y).cwiseAbs().maxCoeff(), kTolerance);
  EXPECT_LE(p.max_inner_norm(), 1.0 + 1e-12);

  data.y.setZero();
  auto z = ncl::exact_fit(data, 7, 1);
  EXPECT_LE(z.w.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ExactFit, Errors) {
  ncl::LabeledDataset dup{ncl::Mat::Zero(2, 2), ncl::Vec::Ones(2)};
  try {
    ncl::exact_fit(dup, 2, 1);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::InconsistentData);
  }
  // A zero-radius ball only offers the zero feature.
  ncl::LabeledDataset far{ncl::Mat::Constant(1, 1, -10.0), ncl::Vec::Ones(1)};
  try {
    ncl::exact_fit(far, 1, 1, 0.0, 50);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::DegenerateSampling);
  }
}

TEST(Grid, NodesInBall) {
  for (int d : {1, 2, 3, 4}) {
    ncl::Mat g = ncl::make_grid(d, 30, 3, 1.0, 5);
    EXPECT_EQ(g.rows(), 90);
    EXPECT_EQ(g.cols(), d + 1);
    EXPECT_LE(g.rowwise().norm().maxCoeff(), 1.0 + 1e-12);
  }
}

TEST(RelaxedLp, SingleAtom) {
  ncl::LabeledDataset data{ncl::Mat::Zero(1, 1), ncl::Vec::Ones(1)};
  ncl::Mat g = ncl::make_grid(1, 16);  // includes (a, b) = (0, 1)
  auto fit = ncl::relaxed_lp_fit(data, g, 0.0);
  ASSERT_EQ(fit.measure.size(), 1u);
  EXPECT_NEAR(fit.value, 1.0, kTolerance);
  EXPECT_NEAR(fit.measure.atoms[0].loc[0], 0.0, 1e-12);
  EXPECT_NEAR(fit.measure.atoms[0].loc[1], 1.0, 1e-12);
}

TEST(RelaxedLp, ZeroMeasureWhenEpsilonLarge) {
  ncl::Rng rng(3);
  auto data = random_dataset(rng, 4, 2);
  auto fit = ncl::relaxed_lp_fit(data, ncl::make_grid(2, 50), data.y.cwiseAbs().maxCoeff());
  EXPECT_EQ(fit.measure.size(), 0u);
  EXPECT_EQ(fit.value, 0.0);
}

TEST(RelaxedLp, FeasibleAndAtomic) {
  ncl::Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    auto data = random_dataset(rng, 5, 2);
    ncl::Mat g = ncl::make_grid(2, 400, 2);
    for (double eps : {0.0, 0.05}) {
      auto fit = ncl::relaxed_lp_fit(data, g, eps);
      auto p = fit.measure.to_params(2);
      double res = (ncl::eval_shallow_batch(data.x, p) - data.y).cwiseAbs().maxCoeff();
      EXPECT_LE(res, eps + kTolerance);
      EXPECT_LE(fit.measure.size(), static_cast<std::size_t>(eps == 0.0 ? 5 : 10));
      EXPECT_NEAR(fit.value, p.l1(), 1e-12);
    }
  }
}

TEST(RelaxedLp, NestedGridsMonotone) {
  ncl::Rng rng(5);
  auto data = random_dataset(rng, 4, 2);
  ncl::Mat g1 = ncl::make_grid(2, 100);
  ncl::Mat g2 = ncl::grid_union(g1, ncl::make_grid(2, 300, 2));
  ncl::Mat g3 = ncl::grid_union(g2, ncl::make_grid(2, 1000));
  double v1 = ncl::relaxed_lp_fit(data, g1, 0.0).value;
  double v2 = ncl::relaxed_lp_fit(data, g2, 0.0).value;
  double v3 = ncl::relaxed_lp_fit(data, g3, 0.0).value;
  EXPECT_LE(v2, v1 + kTolerance);
  EXPECT_LE(v3, v2 + kTolerance);
}

TEST(RelaxedLp, InfeasibleGrid) {
  ncl::LabeledDataset data{ncl::Mat::Constant(1, 1, -1.0), ncl::Vec::Ones(1)};
  ncl::Mat g(1, 2);
  g << 1.0, 0.0;  // relu(x) = 0 at x = -1
  try {
    ncl::relaxed_lp_fit(data, g, 0.0);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::InfeasibleGrid);
  }
}

TEST(RelaxedLp, DualsMatchFiniteDifferences) {
  ncl::Rng rng(31);
  auto data = random_dataset(rng, 3, 2);
  ncl::Mat g = ncl::make_grid(2, 60);
  for (double eps : {0.0, 0.02}) {
    auto base = ncl::relaxed_lp_fit(data, g, eps);
    const double h = 1e-7;
    for (int i = 0; i < 3; ++i) {
      auto pert = data;
      pert.y[i] += h;
      double fd = (ncl::relaxed_lp_fit(pert, g, eps).value - base.value) / h;
      EXPECT_NEAR(fd, base.eta[i], 1e-4);
    }
  }
}

TEST(Multistart, OneAtomDataset) {
  // y = relu(<a*, x> + b*) with (a*, b*) on the unit sphere.
  ncl::Vec th(3);
  th << 0.6, 0.0, 0.8;
  ncl::LabeledDataset data{ncl::Mat(3, 2), ncl::Vec(3)};
  data.x << 0.1, 0.2, -0.5, 0.3, 0.4, -0.6;
  for (int i = 0; i < 3; ++i) data.y[i] = ncl::relu(data.x.row(i).dot(th.head(2)) + th[2]);
  auto ms = ncl::nonconvex_multistart(data, 3, 0.0, 10, 4);
  ncl::Mat g = ncl::grid_union(ncl::make_grid(2, 4000), th.transpose());
  double lp = ncl::relaxed_lp_fit(data, g, 0.0).value;
  EXPECT_NEAR(lp, 1.0, 1e-9);
  EXPECT_NEAR(ms.value, lp, 1e-4);
}

TEST(Multistart, ZeroLabels) {
  ncl::Rng rng(2);
  auto data = random_dataset(rng, 3, 2);
  data.y.setZero();
  auto ms = ncl::nonconvex_multistart(data, 3, 0.0, 3, 1);
  EXPECT_EQ(ms.value, 0.0);
}

TEST(Multistart, CloseToFineGridValue) {
  ncl::Rng rng(12);
  auto data = random_dataset(rng, 3, 2);
  auto ms = ncl::nonconvex_multistart(data, 3, 0.0, 50, 99);
  ncl::Mat fine = ncl::make_grid(2, 8000);
  double lp = ncl::relaxed_lp_fit(data, fine, 0.0).value;
  EXPECT_LE(ms.value, 1.05 * lp);
  ncl::Mat snapped = ncl::grid_union(fine, (ncl::Mat(3, 3) << ms.params.a, ms.params.b).finished());
  EXPECT_LE(ncl::relaxed_lp_fit(data, snapped, 0.0).value, ms.value + 1e-6);
}

TEST(Generalization, IdenticalSets) {
  ncl::Rng rng(6);
  auto data = random_dataset(rng, 6, 2);
  auto p = ncl::exact_fit(data, 6, 3);
  auto rep = ncl::generalization_report(data, data, p);
  EXPECT_EQ(rep.irreducible, 0.0);
  EXPECT_LE(rep.training_bias, kTolerance);
  EXPECT_LE(rep.lhs, kTolerance);
  EXPECT_TRUE(rep.holds());
}

TEST(Generalization, ZeroNetwork) {
  ncl::Rng rng(7);
  auto train = random_dataset(rng, 5, 1);
  auto test = random_dataset(rng, 5, 1);
  auto zero = ncl::ShallowParams::zeros(2, 1);
  auto rep = ncl::generalization_report(train, test, zero);
  EXPECT_NEAR(rep.training_bias, train.y.cwiseAbs().mean(), 1e-15);
  EXPECT_EQ(rep.sensitivity, 0.0);
  double lhs = ncl::kr_pair_distance({test.x, test.y}, {test.x, ncl::Vec::Zero(5)});
  EXPECT_EQ(rep.lhs, lhs);
  EXPECT_TRUE(rep.holds());
}

TEST(Generalization, InequalityOnRandomDraws) {
  ncl::Rng rng(10);
  for (int seed = 0; seed < 100; ++seed) {
    int d = 1 + seed % 3, N = 4 + seed % 10;
    ncl::LabeledDataset train{ncl::uniform_mat(rng, N, d, -1, 1), ncl::Vec(N)};
    ncl::LabeledDataset test{ncl::uniform_mat(rng, N, d, -1, 1), ncl::Vec(N)};
    for (int i = 0; i < N; ++i) {
      train.y[i] = std::sin(3 * train.x.row(i).sum());
      test.y[i] = std::sin(3 * test.x.row(i).sum());
    }
    auto p = ncl::exact_fit(train, 2 * N, seed);
    auto rep = ncl::generalization_report(train, test, p);
    EXPECT_TRUE(rep.holds()) << "seed " << seed << " slack " << rep.slack();
  }
}

TEST(Generalization, SizeMismatch) {
  ncl::Rng rng(1);
  try {
    ncl::generalization_report(random_dataset(rng, 3, 1), random_dataset(rng, 4, 1), ncl::ShallowParams::zeros(1, 1));
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::SizeMismatch);
  }
}
