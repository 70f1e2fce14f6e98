#include <gtest/gtest.h>

#include <ncl/node.hpp>

namespace {

const double kTolerance = 1e-6;

ncl::ControlSegment one_neuron(double T, ncl::Vec w, ncl::Vec a, double b) {
  ncl::ControlSegment s;
  s.duration = T;
  s.W = w;
  s.A = a.transpose();
  s.b = ncl::Vec::Constant(1, b);
  return s;
}

ncl::Vec v2(double a, double b) { return ncl::Vec(Eigen::Vector2d(a, b)); }

ncl::PointDataset random_points(ncl::Rng& rng, int N, int d) {
  return {ncl::uniform_mat(rng, N, d, -1, 1), ncl::uniform_mat(rng, N, d, -1, 1)};
}

}  // namespace

TEST(Field, HalfSpaces) {
  auto s = one_neuron(1.0, v2(0, 1), v2(1, 0), 0.0);
  EXPECT_EQ(ncl::eval_field(v2(-1, 0), s), v2(0, 0));
  EXPECT_EQ(ncl::eval_field(v2(1, 0), s), v2(0, 1));
  try {
    ncl::eval_field(ncl::Vec::Zero(3), s);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::DimensionMismatch);
  }
}

TEST(Field, OpposingNeuronsCancel) {
  ncl::ControlSegment s = ncl::ControlSegment::zero(1.0, 2, 2);
  s.A << 1, 0, 1, 0;
  s.W << 1, -1, 2, -2;
  ncl::Rng rng(1);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(ncl::eval_field(ncl::gaussian_vec(rng, 2), s).norm(), 0.0);
}

TEST(Flow, ClosedFormRegimes) {
  ncl::PiecewiseConstantControl drift{{one_neuron(1.0, v2(0, 1), v2(1, 0), 0.0)}};
  EXPECT_LT((ncl::flow(v2(1, 0), drift) - v2(1, 1)).norm(), 1e-15);

  ncl::PiecewiseConstantControl expand{{one_neuron(1.0, v2(1, 0), v2(1, 0), 0.0)}};
  EXPECT_NEAR(ncl::flow(v2(1, 0), expand)[0], std::exp(1.0), 1e-14);

  EXPECT_EQ(ncl::flow(v2(-0.5, 3), expand), v2(-0.5, 3));
}

TEST(Flow, ClosedFormMatchesIntegrator) {
  ncl::Rng rng(3);
  ncl::FlowOptions numeric;
  numeric.force_numeric = true;
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    auto s = one_neuron(0.7, ncl::gaussian_vec(rng, 2), ncl::gaussian_vec(rng, 2).normalized(), 0.3);
    ncl::Vec x = ncl::gaussian_vec(rng, 2);
    worst = std::max(worst, (ncl::flow_segment(x, s) - ncl::flow_segment(x, s, numeric)).norm());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Flow, StationaryPolytope) {
  ncl::ControlSegment s = ncl::ControlSegment::zero(2.0, 2, 3);
  s.A << 1, 0, 0, 1, -1, -1;
  s.b << -1, -1, -1;
  s.W = ncl::Mat::Ones(2, 3);
  ncl::PiecewiseConstantControl c{{s}};
  EXPECT_EQ(ncl::flow(v2(0.2, -0.3), c), v2(0.2, -0.3));
}

TEST(Flow, Semigroup) {
  ncl::Rng rng(5);
  ncl::PiecewiseConstantControl a, b;
  for (int k = 0; k < 3; ++k) {
    ncl::ControlSegment s{0.3, ncl::gaussian_mat(rng, 2, 3) * 0.5, ncl::gaussian_mat(rng, 3, 2), ncl::gaussian_vec(rng, 3)};
    (k < 2 ? a : b).segments.push_back(s);
  }
  ncl::Vec x = ncl::gaussian_vec(rng, 2);
  EXPECT_LT((ncl::flow(x, a.then(b)) - ncl::flow(ncl::flow(x, a), b)).norm(), 1e-9);
}

TEST(Flow, OneDimensionalOrderPreserved) {
  ncl::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    ncl::PiecewiseConstantControl c;
    for (int k = 0; k < 4; ++k)
      c.segments.push_back({0.25, ncl::gaussian_mat(rng, 1, 2), ncl::gaussian_mat(rng, 1 * 2, 1), ncl::gaussian_vec(rng, 2)});
    ncl::Mat x = ncl::uniform_mat(rng, 6, 1, -1, 1);
    ncl::Mat y = ncl::flow_batch(x, c);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        if (x(i, 0) < x(j, 0)) EXPECT_LE(y(i, 0), y(j, 0));
  }
  ncl::PointDataset line{ncl::Mat::Zero(2, 1), ncl::Mat::Zero(2, 1)};
  line.x << 0, 1;
  line.y << 1, 0;
  try {
    ncl::synthesize_p1(line, 1.0);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::DimensionMismatch);
  }
}

TEST(Synthesis, SinglePoint) {
  ncl::PointDataset data{ncl::Mat::Zero(1, 2), v2(1, 0).transpose()};
  auto c = ncl::synthesize_p1(data, 1.0);
  EXPECT_LE(c.switches(), 3);
  EXPECT_NEAR(c.horizon(), 1.0, 1e-12);
  EXPECT_LT(ncl::max_endpoint_error(data, c), kTolerance);
}

TEST(Synthesis, Swap) {
  ncl::PointDataset data{ncl::Mat(2, 2), ncl::Mat(2, 2)};
  data.x << 1, 0, -1, 0;
  data.y << -1, 0, 1, 0;
  auto c = ncl::synthesize_p1(data, 1.0);
  EXPECT_LE(c.switches(), 6);
  EXPECT_LT(ncl::max_endpoint_error(data, c), kTolerance);
}

TEST(Synthesis, IdentityNeedsNoSwitch) {
  ncl::Rng rng(2);
  ncl::Mat x = ncl::gaussian_mat(rng, 4, 2);
  auto c = ncl::synthesize_p1({x, x}, 2.0);
  EXPECT_EQ(c.switches(), 0);
  EXPECT_EQ(c.segments[0].W.norm(), 0.0);
}

TEST(Synthesis, WidthBounds) {
  ncl::Rng rng(4);
  struct Case {
    int N, P;
  };
  for (Case cs : {Case{10, 3}, Case{4, 4}, Case{6, 1}, Case{12, 5}, Case{7, 20}}) {
    auto data = random_points(rng, cs.N, 2 + cs.N % 2);
    auto c = ncl::synthesize_width(data, cs.P, 1.5);
    EXPECT_LE(c.switches(), ncl::switch_bound_width(cs.N, cs.P));
    EXPECT_LT(ncl::max_endpoint_error(data, c), kTolerance);
    EXPECT_NEAR(c.horizon(), 1.5, 1e-12);
  }
  EXPECT_EQ(ncl::switch_bound_width(10, 3), 7);
  EXPECT_EQ(ncl::switch_bound_width(4, 4), 1);
}

TEST(Synthesis, SimultaneityOnRandomDatasets) {
  ncl::Rng rng(6);
  for (int seed = 0; seed < 25; ++seed) {
    int N = 2 + seed % 19, d = 2 + seed % 2;
    auto data = random_points(rng, N, d);
    auto c = ncl::synthesize_p1(data, 1.0, {.seed = static_cast<std::uint64_t>(seed)});
    EXPECT_LE(c.switches(), 3 * N);
    EXPECT_LT(ncl::max_endpoint_error(data, c), kTolerance) << "seed " << seed;
  }
}

TEST(Synthesis, Inconsistent) {
  ncl::PointDataset data{ncl::Mat::Zero(2, 2), ncl::Mat::Identity(2, 2)};
  try {
    ncl::synthesize_p1(data, 1.0);
    FAIL();
  } catch (const ncl::Error& e) {
    EXPECT_EQ(e.code(), ncl::ErrorCode::InconsistentData);
  }
}

TEST(Control, JsonRoundTrip) {
  ncl::Rng rng(7);
  auto data = random_points(rng, 5, 3);
  auto c = ncl::synthesize_width(data, 2, 1.0);
  auto back = ncl::PiecewiseConstantControl::from_json(nlohmann::json::parse(c.to_json().dump()));
  ASSERT_EQ(back.segments.size(), c.segments.size());
  EXPECT_EQ(ncl::flow_batch(data.x, back), ncl::flow_batch(data.x, c));
}
