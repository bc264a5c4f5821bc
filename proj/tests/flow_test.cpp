#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cast/flow.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cast;
using cast::testing::Grid;

namespace {

template <typename T>
Grid<T> to_grid(const Matrix& m) {
  Grid<T> g{m.rows(), m.cols(), {}};
  for (double v : m.values()) g.v.push_back(static_cast<T>(v));
  return g;
}

template <typename T>
double max_diff(const Grid<T>& ref, const Matrix& got) {
  double d = 0.0;
  for (std::size_t i = 0; i < ref.v.size(); ++i)
    d = std::max(d, std::abs(static_cast<double>(ref.v[i]) - got[i]));
  return d;
}

struct Case {
  Matrix x0, x1, v, vu;
  double tau, w;
  std::vector<bool> mask;
};

Case random_case(Rng& rng) {
  const int rows = rng.uniform_int(1, 12);
  const int cols = rng.uniform_int(1, 16);
  Case c{cast::testing::random_matrix(rows, cols, rng), cast::testing::random_matrix(rows, cols, rng),
         cast::testing::random_matrix(rows, cols, rng), cast::testing::random_matrix(rows, cols, rng),
         rng.uniform(), rng.uniform(0.0, 5.0), {}};
  for (int r = 0; r < rows; ++r) c.mask.push_back(rng.bernoulli(0.7));
  c.mask[static_cast<std::size_t>(rng.uniform_int(0, rows - 1))] = true;
  return c;
}

}  // namespace

TEST(Flow, MatchesDoubleReference) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Case c = random_case(rng);
    const auto x0 = to_grid<double>(c.x0), x1 = to_grid<double>(c.x1);
    EXPECT_LE(max_diff(cast::testing::ref_interpolate(x0, x1, c.tau), interpolate(c.x0, c.x1, FlowStep(c.tau))), 1e-12);
    EXPECT_LE(max_diff(cast::testing::ref_target_velocity(x0, x1), target_velocity(c.x0, c.x1)), 1e-12);
    EXPECT_NEAR(cast::testing::ref_fm_loss(to_grid<double>(c.v), x0, x1, c.mask), fm_loss(c.v, c.x0, c.x1, c.mask),
                1e-12);
    EXPECT_LE(max_diff(cast::testing::ref_cfg_combine(to_grid<double>(c.vu), to_grid<double>(c.v), c.w),
                       cfg_combine(c.vu, c.v, GuidanceScale(c.w))),
              1e-12);
  }
}

// Single precision: errors are measured relative to the magnitude of the
// largest intermediate term, floored at 1.
TEST(Flow, MatchesSingleReference) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Case c = random_case(rng);
    const auto x0 = to_grid<float>(c.x0), x1 = to_grid<float>(c.x1), v = to_grid<float>(c.v),
               vu = to_grid<float>(c.vu);
    const auto tau = static_cast<float>(c.tau), w = static_cast<float>(c.w);

    const auto interp = cast::testing::ref_interpolate(x0, x1, tau);
    const Matrix interp_got = interpolate(c.x0, c.x1, FlowStep(c.tau));
    const auto vel = cast::testing::ref_target_velocity(x0, x1);
    const Matrix vel_got = target_velocity(c.x0, c.x1);
    const auto comb = cast::testing::ref_cfg_combine(vu, v, w);
    const Matrix comb_got = cfg_combine(c.vu, c.v, GuidanceScale(c.w));
    for (std::size_t k = 0; k < c.x0.size(); ++k) {
      const double a = std::abs(c.x0[k]), b = std::abs(c.x1[k]);
      EXPECT_LE(std::abs(interp.v[k] - interp_got[k]), 1e-6 * std::max({1.0, a, b}));
      EXPECT_LE(std::abs(vel.v[k] - vel_got[k]), 1e-6 * std::max({1.0, a, b}));
      const double scale = std::abs(c.vu[k]) + c.w * (std::abs(c.v[k]) + std::abs(c.vu[k]));
      EXPECT_LE(std::abs(comb.v[k] - comb_got[k]), 1e-6 * std::max(1.0, scale));
    }
    const float ref = cast::testing::ref_fm_loss(v, x0, x1, c.mask);
    EXPECT_LE(std::abs(ref - fm_loss(c.v, c.x0, c.x1, c.mask)), 1e-6 * std::max(1.0, static_cast<double>(ref)));
  }
}

TEST(Flow, InterpolateIsExactAtEndpoints) {
  Rng rng(3);
  const Matrix x0 = cast::testing::random_matrix(5, 7, rng), x1 = cast::testing::random_matrix(5, 7, rng);
  EXPECT_EQ(interpolate(x0, x1, FlowStep(0.0)), x0);
  EXPECT_EQ(interpolate(x0, x1, FlowStep(1.0)), x1);
}

TEST(Flow, VelocityIsIndependentOfTau) {
  Rng rng(4);
  const Matrix x0 = cast::testing::random_matrix(3, 4, rng), x1 = cast::testing::random_matrix(3, 4, rng);
  const Matrix v = target_velocity(x0, x1);
  for (double tau : {0.1, 0.5, 0.9}) {
    const double eps = 1e-6;
    const Matrix a = interpolate(x0, x1, FlowStep(tau - eps)), b = interpolate(x0, x1, FlowStep(tau + eps));
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR((b[i] - a[i]) / (2 * eps), v[i], 1e-8);
  }
}

TEST(Flow, FmLossIgnoresMaskedFrames) {
  Rng rng(5);
  const Matrix x0 = cast::testing::random_matrix(4, 3, rng), x1 = cast::testing::random_matrix(4, 3, rng);
  Matrix v = target_velocity(x0, x1);
  for (int c = 0; c < 3; ++c) v(3, c) += 100.0;
  EXPECT_EQ(fm_loss(v, x0, x1, {true, true, true, false}), 0.0);
  EXPECT_GT(fm_loss(v, x0, x1, {true, true, true, true}), 0.0);
}

TEST(Flow, RejectsInvalidInputs) {
  EXPECT_THROW(FlowStep(-0.01), std::invalid_argument);
  EXPECT_THROW(FlowStep(1.01), std::invalid_argument);
  EXPECT_THROW(FlowStep(std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
  EXPECT_THROW(GuidanceScale(-1.0), std::invalid_argument);
  EXPECT_THROW(GuidanceScale(std::numeric_limits<double>::infinity()), std::invalid_argument);
  const Matrix a(2, 3), b(3, 2);
  EXPECT_THROW(interpolate(a, b, FlowStep(0.5)), std::invalid_argument);
  EXPECT_THROW(cfg_combine(a, b, GuidanceScale(2.0)), std::invalid_argument);
  EXPECT_THROW(fm_loss(a, a, a, {true}), std::invalid_argument);
  EXPECT_THROW(fm_loss(a, a, a, {false, false}), std::invalid_argument);
  EXPECT_THROW(euler_sample([](const MelGrid& x, FlowStep) { return x; }, a, 0), std::invalid_argument);
}

TEST(Flow, CfgCombineEndpoints) {
  Rng rng(6);
  const Matrix u = cast::testing::random_matrix(4, 5, rng), c = cast::testing::random_matrix(4, 5, rng);
  EXPECT_EQ(cfg_combine(u, c, GuidanceScale(0.0)), u);
  EXPECT_EQ(cfg_combine(u, c, GuidanceScale(1.0)), c);
}

TEST(Flow, EulerReachesPointMass) {
  Rng rng(7);
  const Matrix x0 = cast::testing::random_matrix(6, 8, rng), x1 = cast::testing::random_matrix(6, 8, rng);
  int calls = 0;
  const VelocityFn field = [&](const MelGrid& x, FlowStep tau) {
    ++calls;
    MelGrid v(x.rows(), x.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (x[i] - x0[i]) / tau.tau();
    return v;
  };
  const Matrix out = euler_sample(field, x1, 64);
  EXPECT_EQ(calls, 64);
  EXPECT_LT(max_abs_diff(out, x0), 1e-6);
}

TEST(Flow, EulerIsFirstOrderOnCurvedField) {
  // dx/dtau = x has the solution x(0) = x(1) / e.
  const VelocityFn field = [](const MelGrid& x, FlowStep) { return x; };
  const Matrix x1{{1.0}};
  const double e32 = std::abs(euler_sample(field, x1, 32)[0] - std::exp(-1.0));
  const double e64 = std::abs(euler_sample(field, x1, 64)[0] - std::exp(-1.0));
  EXPECT_NEAR(e32 / e64, 2.0, 0.05);
}
