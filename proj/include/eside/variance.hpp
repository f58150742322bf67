#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "eside/error.hpp"
#include "eside/histogram.hpp"
#include "eside/rng.hpp"
#include "eside/schedule.hpp"

namespace eside {

// Population variance over every scalar element (channels flattened).
// Shifted single pass: stable without a second sweep.
inline double inter_pixel_variance(std::span<const double> x) {
  if (x.size() < 2) throw InvalidArgument("inter_pixel_variance: need at least 2 elements");
  const double shift = x[0];
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double v : x) {
    const double d = v - shift;
    sum += d;
    sum_sq += d * d;
  }
  const double n = static_cast<double>(x.size());
  const double mean = sum / n;
  return std::max(0.0, sum_sq / n - mean * mean);
}

struct VarianceTrajectory {
  std::vector<int> timesteps;
  std::vector<double> values;
};

// Noises x0 to each requested step with the closed-form marginal; a fresh
// standard-normal eps is drawn for every step, in request order.
inline VarianceTrajectory variance_trajectory(std::span<const double> x0, const NoiseSchedule& sched,
                                              std::span<const int> steps, std::uint64_t seed) {
  for (int t : steps) sched.check_timestep(t);
  Rng rng(seed);
  VarianceTrajectory out;
  std::vector<double> eps(x0.size());
  for (int t : steps) {
    for (double& e : eps) e = rng.normal();
    out.timesteps.push_back(t);
    out.values.push_back(inter_pixel_variance(forward_noise(x0, t, sched, eps)));
  }
  return out;
}

inline void write_trajectory_csv(std::ostream& out, const std::string& image_id, const VarianceTrajectory& traj,
                                 bool header = true) {
  const auto old_precision = out.precision(17);
  if (header) out << "image_id,t,variance\n";
  for (std::size_t i = 0; i < traj.values.size(); ++i) {
    out << image_id << ',' << traj.timesteps[i] << ',' << traj.values[i] << '\n';
  }
  out.precision(old_precision);
}

struct DistributionSummary {
  double mean = 0.0;
  double stddev = 0.0;
  Histogram histogram;
  double peak = 0.0;  // center of the most populated bin
};

inline DistributionSummary distribution_summary(std::span<const double> values, int nbins) {
  if (values.empty()) throw InvalidArgument("distribution_summary: empty input");
  DistributionSummary s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  s.histogram = make_histogram(values, nbins);
  s.peak = s.histogram.center(s.histogram.mode_bin());
  return s;
}

}  // namespace eside
