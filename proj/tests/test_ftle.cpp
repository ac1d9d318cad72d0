#include <gtest/gtest.h>

#include <cmath>

#include "ftnode/ftle.hpp"
#include "ftnode/model.hpp"
#include "support.hpp"

using namespace ftnode;
using testing_support::random_matrix;

namespace {

LinearField saddle() {
  LinearField f(2, ParamSchedule({0.0, 10.0}));
  f.set_matrix(0, Mat{{1.0, 0.0}, {0.0, -1.0}});
  return f;
}

GridSpec small_grid(std::size_t res = 9) {
  GridSpec g;
  g.resolution = res;
  return g;
}

Classifier trained_like(Arch a, std::uint64_t seed) {
  auto m = make_preset(a);
  he_init(m, seed);
  return m;
}

}  // namespace

TEST(Spectrum, IdentityGivesZeroExponents) {
  const auto s = spectrum_from_tangent(Mat::identity(2), {1.0, 4.0});
  EXPECT_EQ(s.exponents[0], 0.0);
  EXPECT_EQ(s.exponents[1], 0.0);
}

TEST(Spectrum, DiagonalExponentials) {
  const auto s = spectrum_from_tangent(Mat{{std::exp(2.0), 0.0}, {0.0, std::exp(-1.0)}}, {0.0, 2.0});
  EXPECT_NEAR(s.max(), 1.0, 1e-14);
  EXPECT_NEAR(s.min(), -0.5, 1e-14);
}

TEST(Spectrum, EulerSaddleClosedForm) {
  const auto f = saddle();
  const double x0[2] = {0.3, 0.7};
  const auto tf = tangent_flow(f, x0, {0.0, 10.0}, FlowConfig{});
  const auto s = spectrum_from_tangent(tf.final_jacobian, {0.0, 10.0});
  EXPECT_NEAR(s.max(), std::log(1.1) / 0.1, 1e-10);
  EXPECT_NEAR(s.min(), std::log(0.9) / 0.1, 1e-10);
  EXPECT_NEAR(s.max(), 0.95310, 1e-5);
  EXPECT_NEAR(s.min(), -1.05361, 1e-5);
}

TEST(Spectrum, SingularTangentIsDegenerate) {
  EXPECT_THROW(spectrum_from_tangent(Mat{{1.0, 0.0}, {0.0, 0.0}}, {0.0, 1.0}), DegenerateTangent);
  EXPECT_THROW(spectrum_from_tangent(Mat::identity(2), {1.0, 1.0}), InvalidInput);
}

TEST(Spectrum, LeadingExponentToleratesSingularMaps) {
  const Mat y{{3.0, 0.0}, {0.0, 0.0}};
  EXPECT_NEAR(leading_exponent(svd(y), {0.0, 2.0}), std::log(3.0) / 2.0, 1e-15);
  EXPECT_THROW(leading_exponent(svd(Mat(2, 2)), {0.0, 2.0}), DegenerateTangent);
}

TEST(CauchyGreenTensor, IdentityAndPermutedScaling) {
  const auto id = cauchy_green(Mat::identity(2), {0.0, 1.0});
  EXPECT_EQ(id.tensor, Mat::identity(2));
  EXPECT_DOUBLE_EQ(id.eigenvalues[0], 1.0);
  EXPECT_DOUBLE_EQ(id.eigenvalues[1], 1.0);

  const auto c = cauchy_green(Mat{{0.0, 2.0}, {1.0, 0.0}}, {0.0, 1.0});
  EXPECT_EQ(c.tensor, (Mat{{1.0, 0.0}, {0.0, 4.0}}));
  EXPECT_NEAR(c.eigenvalues[0], 4.0, 1e-14);
  EXPECT_NEAR(c.eigenvalues[1], 1.0, 1e-14);
  EXPECT_NEAR(std::abs(c.eigenvectors(0, 0)), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(c.eigenvectors(1, 0)), 1.0, 1e-14);
}

TEST(CauchyGreenTensor, AgreesWithSingularValueRoute) {
  Rng rng(71);
  for (int k = 0; k < 100; ++k) {
    const Mat y = random_matrix(rng, 2, 2);
    const Interval iv{0.0, 0.5 + rng.uniform(0.0, 5.0)};
    const auto cg = cauchy_green(y, iv);
    const auto sp = spectrum_from_tangent(y, iv);
    EXPECT_LT(frobenius_norm(cg.tensor - matmul(transpose(y), y)), 1e-12 * (1 + frobenius_norm(cg.tensor)));
    EXPECT_NEAR(cg.exponents()[0], sp.max(), 1e-9);
    EXPECT_NEAR(cg.exponents()[1], sp.min(), 1e-9);
    EXPECT_NEAR(cg.eigenvalues[0], sp.singular_values[0] * sp.singular_values[0], 1e-10 * cg.eigenvalues[0]);
  }
}

TEST(FtleFieldModes, FrameCounts) {
  auto m = trained_like(Arch::ex2, 4);
  const auto g = small_grid(5);
  EXPECT_EQ(ftle_field(m.field, g, FtleMode::full, 1, m.flow).frames.size(), 1u);
  EXPECT_EQ(ftle_field(m.field, g, FtleMode::growing, 1, m.flow).frames.size(), 20u);
  EXPECT_EQ(ftle_field(m.field, g, FtleMode::shrinking, 1, m.flow).frames.size(), 20u);
  EXPECT_EQ(ftle_field(m.field, g, FtleMode::subinterval, 1, m.flow).frames.size(), 5u);
  FtleFieldOptions o;
  o.stride = 30;
  const auto gr = ftle_field(m.field, g, FtleMode::growing, 1, m.flow, o);
  ASSERT_EQ(gr.frames.size(), 4u);
  EXPECT_EQ(gr.frames.back().interval.t1, 10.0);
}

TEST(FtleFieldModes, SingleBlockSubintervalIsOneFullFrame) {
  auto m = trained_like(Arch::ex1, 4);
  const auto g = small_grid(5);
  const auto sub = ftle_field(m.field, g, FtleMode::subinterval, 1, m.flow);
  const auto full = ftle_field(m.field, g, FtleMode::full, 1, m.flow);
  ASSERT_EQ(sub.frames.size(), 1u);
  for (std::size_t p = 0; p < g.size(); ++p)
    EXPECT_NEAR(sub.frames[0].field.values[p], full.frames[0].field.values[p], 1e-12);
}

TEST(FtleFieldModes, ZeroFieldIsZeroEverywhere) {
  LayeredVectorField f(2, {{2, 2, 2}}, ParamSchedule::uniform(5, 10.0));
  for (auto mode : {FtleMode::full, FtleMode::growing, FtleMode::shrinking, FtleMode::subinterval}) {
    const auto out = ftle_field(f, small_grid(4), mode, 1, FlowConfig{});
    for (const auto& fr : out.frames)
      for (double v : fr.field.values) EXPECT_EQ(v, 0.0) << to_string(mode);
  }
}

TEST(FtleFieldModes, LinearSaddleIsSpatiallyConstant) {
  const auto out = ftle_field(saddle(), small_grid(7), FtleMode::full, 1, FlowConfig{});
  for (double v : out.frames[0].field.values) EXPECT_NEAR(v, std::log(1.1) / 0.1, 1e-10);
  const auto low = ftle_field(saddle(), small_grid(7), FtleMode::full, 2, FlowConfig{});
  for (double v : low.frames[0].field.values) EXPECT_NEAR(v, std::log(0.9) / 0.1, 1e-10);
}

TEST(FtleFieldModes, GrowingLastFrameEqualsFullBitwise) {
  for (auto a : {Arch::ex1, Arch::ex2}) {
    auto m = trained_like(a, 8);
    const auto g = small_grid(11);
    const auto full = ftle_field(m.field, g, FtleMode::full, 1, m.flow);
    const auto grow = ftle_field(m.field, g, FtleMode::growing, 1, m.flow);
    EXPECT_EQ(grow.frames.back().field.values, full.frames[0].field.values);
  }
}

TEST(FtleFieldModes, ShrinkingFirstFrameEqualsFull) {
  auto m = trained_like(Arch::ex2, 9);
  const auto g = small_grid(11);
  const auto full = ftle_field(m.field, g, FtleMode::full, 2, m.flow);
  const auto shr = ftle_field(m.field, g, FtleMode::shrinking, 2, m.flow);
  EXPECT_EQ(shr.frames[0].interval.t0, 0.0);
  for (std::size_t p = 0; p < g.size(); ++p)
    EXPECT_NEAR(shr.frames[0].field.values[p], full.frames[0].field.values[p], 1e-12);
}

TEST(FtleFieldModes, SubintervalRestartsTangentAtBlockStart) {
  auto m = trained_like(Arch::ex2, 10);
  const auto g = small_grid(5);
  const auto sub = ftle_field(m.field, g, FtleMode::subinterval, 1, m.flow);
  for (std::size_t k = 0; k < sub.frames.size(); ++k) {
    const Interval iv = sub.frames[k].interval;
    EXPECT_NEAR(iv.t0, 2.0 * static_cast<double>(k), 1e-12);
    EXPECT_NEAR(iv.t1, 2.0 * static_cast<double>(k + 1), 1e-12);
    for (std::size_t p = 0; p < g.size(); p += 6) {
      const double x0[2] = {g.x(p % g.resolution), g.y(p / g.resolution)};
      const Vec start = iv.t0 == 0.0 ? Vec{x0[0], x0[1]} : flow_endpoint(m.field, x0, {0.0, iv.t0}, m.flow);
      const auto tf = tangent_flow(m.field, start, iv, m.flow);
      EXPECT_EQ(sub.frames[k].field.values[p], spectrum_from_tangent(tf.final_jacobian, iv).max());
    }
  }
}

TEST(FtleFieldModes, ExponentOrderingAndVolumeIdentity) {
  auto m = trained_like(Arch::ex1, 12);
  const auto g = small_grid(9);
  const auto hi = ftle_field(m.field, g, FtleMode::full, 1, m.flow);
  const auto lo = ftle_field(m.field, g, FtleMode::full, 2, m.flow);
  std::size_t checked = 0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double l1 = hi.frames[0].field.values[p], l2 = lo.frames[0].field.values[p];
    EXPECT_GE(l1, l2);
    // The origin is a hyperbolic fixed point here and its tangent map has
    // condition number ~1e22; rounding in Y alone swamps sigma_2 there.
    if ((l1 - l2) * 10.0 > std::log(1e6)) continue;
    const double x0[2] = {g.x(p % g.resolution), g.y(p / g.resolution)};
    EXPECT_NEAR((l1 + l2) * 10.0, testing_support::log_det_by_steps(m.field, x0, {0.0, 10.0}, m.flow), 1e-8);
    ++checked;
  }
  EXPECT_GE(checked, g.size() - 1);
}

TEST(FtleFieldModes, DivergentPointsAreNaNAndCounted) {
  LinearField f(2, ParamSchedule({0.0, 10.0}));
  f.set_matrix(0, Mat{{1e155, 0.0}, {0.0, 0.0}});
  GridSpec g = small_grid(3);
  const auto out = ftle_field(f, g, FtleMode::full, 1, FlowConfig{});
  std::size_t nan_count = 0;
  for (double v : out.frames[0].field.values) nan_count += std::isnan(v);
  EXPECT_EQ(out.failed_points, nan_count);
  EXPECT_GE(out.failed_points, 6u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_TRUE(std::isnan(out.frames[0].field.at(0, j)));
    EXPECT_TRUE(std::isnan(out.frames[0].field.at(2, j)));
  }
}

TEST(FtleFieldModes, ThreadCountDoesNotChangeResult) {
  auto m = trained_like(Arch::ex2, 13);
  const auto g = small_grid(13);
  FtleFieldOptions one, four;
  four.threads = 4;
  const auto a = ftle_field(m.field, g, FtleMode::shrinking, 1, m.flow, one);
  const auto b = ftle_field(m.field, g, FtleMode::shrinking, 1, m.flow, four);
  for (std::size_t f = 0; f < a.frames.size(); ++f) EXPECT_EQ(a.frames[f].field.values, b.frames[f].field.values);
}

TEST(FtleFieldModes, RejectsBadExponentIndexAndGrid) {
  auto m = trained_like(Arch::ex2, 1);
  EXPECT_THROW(ftle_field(m.field, small_grid(4), FtleMode::full, 3, m.flow), InvalidInput);
  EXPECT_THROW(ftle_field(m.field, small_grid(4), FtleMode::full, 0, m.flow), InvalidInput);
  EXPECT_THROW(ftle_field(m.field, small_grid(1), FtleMode::full, 1, m.flow), InvalidInput);
  EXPECT_THROW(parse_ftle_mode("sideways"), InvalidInput);
}
