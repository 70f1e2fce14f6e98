#include <gtest/gtest.h>

#include <ncl/lp.hpp>

#include <algorithm>
#include <numeric>

namespace {

const double kTolerance = 1e-8;

// Optimal value by enumerating every basis of an all-equality program.
double vertex_enumeration(const ncl::StandardLp& lp, bool& feasible) {
  const int m = static_cast<int>(lp.M.rows()), n = static_cast<int>(lp.M.cols());
  std::vector<char> pick(n, 0);
  std::fill(pick.begin(), pick.begin() + m, 1);
  double best = std::numeric_limits<double>::infinity();
  feasible = false;
  do {
    std::vector<int> cols;
    for (int j = 0; j < n; ++j)
      if (pick[j]) cols.push_back(j);
    ncl::Mat B(m, m);
    for (int k = 0; k < m; ++k) B.col(k) = lp.M.col(cols[k]);
    Eigen::FullPivLU<ncl::Mat> lu(B);
    if (lu.rank() < m) continue;
    ncl::Vec xb = lu.solve(lp.r);
    if (xb.minCoeff() < -1e-12) continue;
    feasible = true;
    double v = 0.0;
    for (int k = 0; k < m; ++k) v += lp.c[cols[k]] * xb[k];
    best = std::min(best, v);
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

}  // namespace

TEST(Simplex, SingleVariable) {
  ncl::StandardLp lp{ncl::Vec::Ones(1), ncl::Mat::Ones(1, 1), ncl::Vec::Ones(1), {}};
  auto r = ncl::solve_lp(lp);
  ASSERT_EQ(r.status, ncl::LpStatus::Optimal);
  EXPECT_NEAR(r.value, 1.0, kTolerance);
}

TEST(Simplex, SymmetricTieIsBasic) {
  ncl::StandardLp lp{ncl::Vec::Ones(2), ncl::Mat::Ones(1, 2), ncl::Vec::Ones(1), {}};
  auto r = ncl::solve_lp(lp);
  ASSERT_EQ(r.status, ncl::LpStatus::Optimal);
  EXPECT_NEAR(r.value, 1.0, kTolerance);
  EXPECT_EQ((r.x.array() > 1e-10).count(), 1);
}

TEST(Simplex, InfeasibleAndUnbounded) {
  ncl::Mat M(2, 1);
  M << 1, 1;
  ncl::Vec r(2);
  r << 1, 2;
  ncl::StandardLp bad{ncl::Vec::Ones(1), M, r, {}};
  EXPECT_EQ(ncl::solve_lp(bad).status, ncl::LpStatus::Infeasible);

  ncl::Mat M2(1, 2);
  M2 << 1, -1;
  ncl::Vec c2(2);
  c2 << -1, 0;
  ncl::StandardLp unb{c2, M2, ncl::Vec::Ones(1), {}};
  EXPECT_EQ(ncl::solve_lp(unb).status, ncl::LpStatus::Unbounded);
}

TEST(Simplex, RejectsNonFinite) {
  ncl::StandardLp lp{ncl::Vec::Ones(1), ncl::Mat::Ones(1, 1), ncl::Vec::Constant(1, INFINITY), {}};
  try {
    ncl::solve_lp(lp);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::InvalidProgram);
  }
}

TEST(Simplex, InequalityRowsAndNegativeRhs) {
  // min -x1 - x2  s.t. x1 + 2x2 <= 4, -x1 <= -1 (x1 >= 1), 3x1 + x2 <= 6
  ncl::Mat M(3, 2);
  M << 1, 2, -1, 0, 3, 1;
  ncl::Vec r(3), c(2);
  r << 4, -1, 6;
  c << -1, -1;
  ncl::StandardLp lp{c, M, r, {ncl::RowSense::Le, ncl::RowSense::Le, ncl::RowSense::Le}};
  auto s = ncl::solve_lp(lp);
  ASSERT_EQ(s.status, ncl::LpStatus::Optimal);
  EXPECT_NEAR(s.value, -2.8, kTolerance);
  EXPECT_NEAR(s.x[0], 1.6, kTolerance);
  EXPECT_NEAR(s.x[1], 1.2, kTolerance);
}

TEST(Simplex, RedundantRows) {
  ncl::Mat M(3, 3);
  M << 1, 1, 0, 2, 2, 0, 0, 1, 1;
  ncl::Vec r(3), c(3);
  r << 1, 2, 1;
  c << 1, 2, 0.5;
  auto s = ncl::solve_lp({c, M, r, {}});
  ASSERT_EQ(s.status, ncl::LpStatus::Optimal);
  EXPECT_NEAR(s.value, 1.5, kTolerance);  // x = (1, 0, 1)
  EXPECT_LE((M * s.x - r).cwiseAbs().maxCoeff(), kTolerance);
}

TEST(Simplex, MatchesVertexEnumeration) {
  ncl::Rng rng(42);
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    ncl::StandardLp lp;
    lp.M = ncl::gaussian_mat(rng, 3, 7);
    ncl::Vec x0 = ncl::uniform_mat(rng, 7, 1, 0.0, 1.0);
    lp.r = lp.M * x0;  // feasible by construction
    lp.c = ncl::uniform_mat(rng, 7, 1, -0.2, 1.0);
    bool feas = false;
    double oracle = vertex_enumeration(lp, feas);
    auto s = ncl::solve_lp(lp);
    if (s.status == ncl::LpStatus::Unbounded) continue;
    ASSERT_EQ(s.status, ncl::LpStatus::Optimal);
    ASSERT_TRUE(feas);
    EXPECT_NEAR(s.value, oracle, kTolerance * (1 + std::abs(oracle)));
    EXPECT_LE((lp.M * s.x - lp.r).cwiseAbs().maxCoeff(), kTolerance);
    EXPECT_GE(s.x.minCoeff(), 0.0);
    EXPECT_LE((s.x.array() > 1e-10).count(), 3);
    ++compared;
  }
  EXPECT_GT(compared, 100);
}

TEST(Simplex, WeakDualityAgainstSampledFeasiblePoints) {
  ncl::Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    ncl::StandardLp lp;
    lp.M = ncl::uniform_mat(rng, 3, 6, 0.1, 1.0);
    lp.r = ncl::Vec::Ones(3);
    lp.c = ncl::uniform_mat(rng, 6, 1, 0.1, 1.0);
    lp.sense.assign(3, ncl::RowSense::Le);
    lp.c = -lp.c;  // maximize a positive objective under a packing polytope
    auto s = ncl::solve_lp(lp);
    ASSERT_EQ(s.status, ncl::LpStatus::Optimal);
    for (int k = 0; k < 500; ++k) {
      ncl::Vec x = ncl::uniform_mat(rng, 6, 1, 0.0, 1.0);
      double load = (lp.M * x).maxCoeff();
      x /= std::max(load, 1.0);
      EXPECT_LE(s.value, lp.c.dot(x) + 1e-12);
    }
  }
}

TEST(Simplex, DualsAreValueSensitivities) {
  ncl::Rng rng(13);
  ncl::StandardLp lp;
  lp.M = ncl::gaussian_mat(rng, 3, 8);
  lp.r = lp.M * ncl::uniform_mat(rng, 8, 1, 0.5, 1.0);
  lp.c = ncl::uniform_mat(rng, 8, 1, 0.1, 1.0);
  auto s = ncl::solve_lp(lp);
  ASSERT_EQ(s.status, ncl::LpStatus::Optimal);
  const double h = 1e-7;
  for (int i = 0; i < 3; ++i) {
    auto lp2 = lp;
    lp2.r[i] += h;
    auto s2 = ncl::solve_lp(lp2);
    EXPECT_NEAR((s2.value - s.value) / h, s.y[i], 1e-5);
  }
}

TEST(Simplex, DeterministicBasis) {
  ncl::Rng rng(1);
  ncl::StandardLp lp;
  lp.M = ncl::gaussian_mat(rng, 4, 12);
  lp.r = lp.M * ncl::uniform_mat(rng, 12, 1, 0.0, 1.0);
  lp.c = ncl::uniform_mat(rng, 12, 1, 0.0, 1.0);
  EXPECT_EQ(ncl::solve_lp(lp).basis, ncl::solve_lp(lp).basis);
}

TEST(Simplex, IterationBudget) {
  ncl::Rng rng(1);
  ncl::StandardLp lp;
  lp.M = ncl::gaussian_mat(rng, 4, 12);
  lp.r = lp.M * ncl::uniform_mat(rng, 12, 1, 0.0, 1.0);
  lp.c = ncl::uniform_mat(rng, 12, 1, 0.0, 1.0);
  ncl::LpOptions opt;
  opt.max_iterations = 0;
  try {
    ncl::solve_lp(lp, opt);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::BudgetExceeded);
  }
}
