#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "eside/rng.hpp"
#include "eside/schedule.hpp"
#include "eside/variance.hpp"
#include "test_util.hpp"

using namespace eside;

namespace {

std::vector<double> gaussian(std::size_t n, double mean, double sd, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal(mean, sd);
  return x;
}

}  // namespace

TEST(InterPixelVariance, HandCases) {
  EXPECT_DOUBLE_EQ(inter_pixel_variance(std::vector<double>(10, 0.3)), 0.0);
  EXPECT_DOUBLE_EQ(inter_pixel_variance(std::vector<double>{0, 1, 0, 1, 1, 0}), 0.25);
  EXPECT_THROW(inter_pixel_variance(std::vector<double>{1.0}), InvalidArgument);
}

TEST(InterPixelVariance, MatchesTwoPassOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = gaussian(1000 + 37 * s, 0.5, 0.2, s);
    EXPECT_NEAR(inter_pixel_variance(x), test::two_pass_variance(x), 1e-10);
  }
}

TEST(InterPixelVariance, TranslationAndScale) {
  const auto x = gaussian(500, 0.0, 1.0, 3);
  const double v = inter_pixel_variance(x);
  auto shifted = x;
  for (double& e : shifted) e += 1e3;
  EXPECT_NEAR(inter_pixel_variance(shifted), v, 1e-8);
  auto scaled = x;
  for (double& e : scaled) e *= -3.0;
  EXPECT_NEAR(inter_pixel_variance(scaled), 9.0 * v, 1e-10);
}

TEST(Trajectory, StepZeroIsRawVariance) {
  const auto s = NoiseSchedule::linear_default();
  const auto x = gaussian(256, 0.1, 0.4, 8);
  const std::vector<int> steps{0, 12, 24};
  const auto traj = variance_trajectory(x, s, steps, 42);
  ASSERT_EQ(traj.values.size(), 3u);
  EXPECT_EQ(traj.timesteps, steps);
  EXPECT_EQ(traj.values[0], inter_pixel_variance(x));
  for (double v : traj.values) EXPECT_GE(v, 0.0);
}

TEST(Trajectory, DeterministicAndRangeChecked) {
  const auto s = NoiseSchedule::linear_default();
  const auto x = gaussian(64, 0.0, 1.0, 1);
  const std::vector<int> steps{3, 9};
  EXPECT_EQ(variance_trajectory(x, s, steps, 5).values, variance_trajectory(x, s, steps, 5).values);
  const std::vector<int> bad{25};
  EXPECT_THROW(variance_trajectory(x, s, bad, 5), InvalidArgument);
}

TEST(Trajectory, LargeTGaussianLimit) {
  // Schedule driven to alpha_bar_T ~ 0.
  const auto s = NoiseSchedule::linear(24, 0.2, 0.6);
  ASSERT_LT(s.alpha_bar(24), 1e-5);
  const auto x = test::standardize(gaussian(20000, 0.3, 2.0, 4));
  const std::vector<int> steps{24};
  const double v = variance_trajectory(x, s, steps, 6).values[0];
  EXPECT_NEAR(v, 1.0, 3.0 * std::sqrt(2.0 / 20000));
}

TEST(Trajectory, MidTMixtureVarianceOverTrials) {
  const auto s = NoiseSchedule::linear_default();
  const int t = 12;
  const double ab = s.alpha_bar(t);
  const auto x = gaussian(400, 0.0, 0.5, 10);
  const double v0 = test::two_pass_variance(x);
  const std::vector<int> steps{t};
  const int trials = 1000;
  std::vector<double> vals;
  for (int k = 0; k < trials; ++k) vals.push_back(variance_trajectory(x, s, steps, 1000 + k).values[0]);
  const double m = test::mean(vals);
  const double se = std::sqrt(test::two_pass_variance(vals) / trials);
  // Population variance of sqrt(ab) x + sqrt(1 - ab) eps for fixed x has
  // expectation ab v0 + (1 - ab)(n - 1)/n.
  const double n = static_cast<double>(x.size());
  EXPECT_NEAR(m, ab * v0 + (1 - ab) * (n - 1) / n, 3 * se);
}

TEST(Trajectory, CsvLayout) {
  VarianceTrajectory t{{0, 6}, {0.25, 0.5}};
  std::ostringstream out;
  write_trajectory_csv(out, "img", t);
  EXPECT_EQ(out.str(), "image_id,t,variance\nimg,0,0.25\nimg,6,0.5\n");
}

TEST(Distribution, SingleValue) {
  const auto s = distribution_summary(std::vector<double>{2.5}, 4);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.stddev, 0.0);
  EXPECT_EQ(s.histogram.total(), 1u);
}

TEST(Distribution, SymmetricTwoPoint) {
  const auto s = distribution_summary(std::vector<double>{1.0, 3.0, 1.0, 3.0}, 2);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.stddev, 1.0);
}

TEST(Distribution, PeakIsModeBinCenter) {
  const auto s = distribution_summary(std::vector<double>{0.0, 0.1, 0.15, 0.9, 1.0}, 4);
  EXPECT_DOUBLE_EQ(s.peak, 0.125);
  EXPECT_THROW(distribution_summary(std::vector<double>{}, 4), InvalidArgument);
}

TEST(Distribution, GaussianSampleWithinFiveStandardErrors) {
  const double mu = 3.0;
  const double sd = 0.7;
  const std::size_t n = 1000;
  const auto s = distribution_summary(gaussian(n, mu, sd, 77), 20);
  EXPECT_NEAR(s.mean, mu, 5 * sd / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(s.stddev, sd, 5 * sd / std::sqrt(2.0 * static_cast<double>(n)));
  EXPECT_NEAR(s.peak, mu, 0.5 * sd);
}
