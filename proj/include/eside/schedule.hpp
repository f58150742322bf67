#pragma once

#include <cmath>
#include <concepts>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eside/error.hpp"
#include "eside/kv_file.hpp"

namespace eside {

// Diffusion noise schedule. betas()[t-1] is beta_t for t = 1..T, and
// alpha_bar(t) is the cumulative product of (1 - beta_i) for i <= t, with
// alpha_bar(0) = 1 meaning "clean image".
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw InvalidArgument("schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
      throw InvalidArgument("schedule: need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
      betas[i] = steps == 1 ? beta_start
                            : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
    }
    NoiseSchedule s(std::move(betas));
    s.kind_ = "linear";
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    return s;
  }

  static NoiseSchedule linear_default(int steps = 24) { return linear(steps, 1e-4, 0.02); }

  // Arbitrary per-step betas, e.g. to reproduce a pretrained model's schedule.
  static NoiseSchedule from_betas(std::vector<double> betas) {
    NoiseSchedule s(std::move(betas));
    s.kind_ = "custom";
    return s;
  }

  int steps() const { return static_cast<int>(betas_.size()); }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::string& kind() const { return kind_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  double alpha_bar(int t) const {
    check_timestep(t);
    return alpha_bars_[static_cast<std::size_t>(t)];
  }

  void check_timestep(int t) const {
    if (t < 0 || t > steps()) {
      throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
    }
  }

  // Only linear schedules round-trip through the key-value file.
  KvFile to_kv() const {
    if (kind_ != "linear") throw InvalidArgument("only linear schedules are serializable");
    KvFile kv;
    kv.set("T", std::to_string(steps()));
    kv.set("beta_start", format_exact(beta_start_));
    kv.set("beta_end", format_exact(beta_end_));
    kv.set("schedule_kind", kind_);
    return kv;
  }

  static NoiseSchedule from_kv(const KvFile& kv) {
    const auto kind = kv.get("schedule_kind");
    if (kind != "linear") throw FormatError(FormatCode::unsupported_format, "schedule_kind '" + kind + "'");
    return linear(kv.get_as<int>("T"), kv.get_as<double>("beta_start"), kv.get_as<double>("beta_end"));
  }

  void save(const std::filesystem::path& path) const { to_kv().save(path, "noise schedule"); }
  static NoiseSchedule load(const std::filesystem::path& path) { return from_kv(KvFile::load(path)); }

 private:
  explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw InvalidArgument("schedule: T must be >= 1");
    alpha_bars_.reserve(betas_.size() + 1);
    alpha_bars_.push_back(1.0);
    for (double b : betas_) {
      if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("schedule: every beta must lie in (0, 1)");
      alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
    }
    for (std::size_t t = 1; t < alpha_bars_.size(); ++t) {
      if (!(alpha_bars_[t] < alpha_bars_[t - 1] && alpha_bars_[t] > 0.0)) {
        throw InvalidArgument("schedule: alpha_bar must be strictly decreasing and positive");
      }
    }
  }

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::string kind_;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
};

// eps_hat = predictor(x_t, t). Must return a tensor shaped like x_t and
// be deterministic. The library calls it from one thread at a time.
template <typename P>
concept NoisePredictor = requires(const P& p, std::span<const double> x, int t) {
  { p(x, t) } -> std::convertible_to<std::vector<double>>;
};

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw InvalidArgument(std::string(what) + ": shape mismatch (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
  }
}

// x_dst = sqrt(ab_dst) * (x - sqrt(1 - ab_src) * eps) / sqrt(ab_src) + sqrt(1 - ab_dst) * eps
inline std::vector<double> ddim_move(std::span<const double> x, std::span<const double> eps, double ab_src,
                                     double ab_dst) {
  require_same_size(x.size(), eps.size(), "predictor output");
  const double keep = std::sqrt(ab_dst) / std::sqrt(ab_src);
  const double src_noise = std::sqrt(1.0 - ab_src);
  const double dst_noise = std::sqrt(1.0 - ab_dst);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = keep * (x[i] - src_noise * eps[i]) + dst_noise * eps[i];
  }
  return out;
}

}  // namespace detail

// Closed-form marginal: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
inline std::vector<double> forward_noise(std::span<const double> x0, int t, const NoiseSchedule& sched,
                                         std::span<const double> eps) {
  detail::require_same_size(x0.size(), eps.size(), "forward_noise");
  const double ab = sched.alpha_bar(t);
  const double signal = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = signal * x0[i] + noise * eps[i];
  return out;
}

// Deterministic (sigma = 0) DDIM step x_t -> x_{t-1}.
template <NoisePredictor P>
std::vector<double> ddim_denoise_step(std::span<const double> x_t, int t, const P& predictor,
                                      const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw InvalidArgument("ddim_denoise_step: t must lie in [1, T]");
  const std::vector<double> eps = predictor(x_t, t);
  return detail::ddim_move(x_t, eps, sched.alpha_bar(t), sched.alpha_bar(t - 1));
}

// DDIM inversion step x_t -> x_{t+1}. The predictor is queried at the
// destination timestep t+1, so that a denoise step from t+1 reuses the same
// noise estimate whenever the predictor ignores x; the pair is then an exact
// algebraic inverse.
template <NoisePredictor P>
std::vector<double> ddim_invert_step(std::span<const double> x_t, int t, const P& predictor,
                                     const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.steps()) throw InvalidArgument("ddim_invert_step: t must lie in [0, T-1]");
  const std::vector<double> eps = predictor(x_t, t + 1);
  return detail::ddim_move(x_t, eps, sched.alpha_bar(t), sched.alpha_bar(t + 1));
}

// Runs inversion from x0 to x_T; returns all T+1 states x_0..x_T.
template <NoisePredictor P>
std::vector<std::vector<double>> ddim_invert_chain(std::span<const double> x0, const P& predictor,
                                                   const NoiseSchedule& sched) {
  std::vector<std::vector<double>> states;
  states.reserve(static_cast<std::size_t>(sched.steps()) + 1);
  states.emplace_back(x0.begin(), x0.end());
  for (int t = 0; t < sched.steps(); ++t) states.push_back(ddim_invert_step(states.back(), t, predictor, sched));
  return states;
}

}  // namespace eside
