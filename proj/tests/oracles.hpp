#pragma once

// Reference implementations shared by the unit tests and the acceptance run.
// Each one is written from the textbook definition, not from the library.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "eside/mlp.hpp"
#include "eside/rng.hpp"
#include "eside/spectral.hpp"

namespace test {

// Central finite differences over every trainable parameter of a
// 16 -> [8, 4] -> 1 double model in batch-norm training mode, dropout off.
// Returns the worst |a - n| / max(|a|, |n|, 1e-6).
inline double gradient_check(std::uint64_t seed, int samples = 10, double h = 1e-4) {
  using namespace eside;
  using Model = mlp::MlpModel<double>;
  const std::vector<int> dims{16, 8, 4, 1};
  Model m = mlp::init_mlp<double>(dims, seed);
  m.dropout = 0.0;
  Rng rng(derive_seed(seed, 1));
  // Non-trivial batch-norm affine parameters so their gradients matter.
  for (auto& bn : m.norm) {
    for (Eigen::Index i = 0; i < bn.gamma.size(); ++i) {
      bn.gamma(i) = rng.uniform(0.5, 1.5);
      bn.beta(i) = rng.uniform(-0.3, 0.3);
    }
  }
  Eigen::MatrixXd x(16, samples);
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, c) = rng.normal();
  Eigen::MatrixXd y(1, samples);
  std::vector<double> w(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    y(0, i) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    w[static_cast<std::size_t>(i)] = rng.uniform(0.2, 1.0);
  }
  auto loss = [&](const Model& mm) {
    const auto f = mlp::forward_train(mm, x, 0);
    return mlp::weighted_bce(f.probs, y, std::span<const double>(w));
  };
  auto grads = mlp::backward(m, mlp::forward_train(m, x, 0), y, std::span<const double>(w));

  std::vector<double> analytic;
  grads.for_each_param([&](double* p, std::size_t n) { analytic.insert(analytic.end(), p, p + n); });
  std::vector<double*> params;
  m.for_each_param([&](double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) params.push_back(p + i);
  });
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double keep = *params[k];
    *params[k] = keep + h;
    const double up = loss(m);
    *params[k] = keep - h;
    const double down = loss(m);
    *params[k] = keep;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[k];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

// Textbook discrete AdaBoost round on normalized weights: alpha from the raw
// weighted error, correct samples scaled by 1/(2(1 - e)), wrong by 1/(2e).
inline std::pair<double, std::vector<double>> adaboost_round(std::span<const double> w,
                                                             std::span<const std::int8_t> preds,
                                                             std::span<const std::int8_t> labels) {
  double err = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (preds[i] != labels[i]) err += w[i];
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = preds[i] == labels[i] ? w[i] / (2 * (1 - err)) : w[i] / (2 * err);
  }
  return {0.5 * std::log((1 - err) / err), out};
}

// Rows are samples, columns labels.
inline double brute_exact_match(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& truth) {
  int ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    bool all = true;
    for (std::size_t j = 0; j < pred[i].size(); ++j) all = all && pred[i][j] == truth[i][j];
    ok += all;
  }
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

// Rank of sample i counted directly: everything scored higher, plus equal
// scores at or before row i. Precisions are summed in rank order.
inline double brute_average_precision(const std::vector<double>& s, const std::vector<bool>& truth) {
  const std::size_t n = s.size();
  std::vector<std::pair<std::size_t, double>> hits;  // (rank, precision)
  for (std::size_t i = 0; i < n; ++i) {
    if (!truth[i]) continue;
    std::size_t rank = 0;
    std::size_t pos_at_or_above = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool above = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (above) {
        ++rank;
        if (truth[j]) ++pos_at_or_above;
      }
    }
    hits.emplace_back(rank, static_cast<double>(pos_at_or_above) / static_cast<double>(rank));
  }
  if (hits.empty()) return -1.0;
  std::sort(hits.begin(), hits.end());
  double sum = 0.0;
  for (const auto& h : hits) sum += h.second;
  return sum / static_cast<double>(hits.size());
}

inline double brute_map(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<bool>>& truth) {
  const std::size_t labels = scores.front().size();
  double sum = 0.0;
  int included = 0;
  for (std::size_t j = 0; j < labels; ++j) {
    std::vector<double> col;
    std::vector<bool> t;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      col.push_back(scores[i][j]);
      t.push_back(truth[i][j]);
    }
    const double ap = brute_average_precision(col, t);
    if (ap < 0) continue;
    sum += ap;
    ++included;
  }
  return included ? sum / included : 0.0;
}

// Sort-and-slice reference for the peak rule: the k = ceil(p n) largest
// unprotected powers set the threshold, every unprotected bin at or above it
// is a peak.
inline std::vector<eside::spectral::Bin> oracle_peaks(const eside::Grid<double>& power, double percentile,
                                                      const eside::Grid<std::uint8_t>& mask) {
  std::vector<double> free;
  for (std::size_t i = 0; i < power.size(); ++i)
    if (!mask.data[i]) free.push_back(power.data[i]);
  std::sort(free.begin(), free.end(), std::greater<>());
  long k = static_cast<long>(std::ceil(percentile * static_cast<double>(free.size()) - 1e-9));
  k = std::clamp<long>(k, 1, static_cast<long>(free.size()));
  const double thr = free[static_cast<std::size_t>(k - 1)];
  std::vector<eside::spectral::Bin> out;
  for (int r = 0; r < power.height; ++r)
    for (int c = 0; c < power.width; ++c)
      if (!mask(r, c) && power(r, c) >= thr) out.push_back({r, c});
  return out;
}

// Random multilabel instance; scores are drawn from a coarse grid so ties
// actually happen and exercise the row-order rule.
struct MultilabelInstance {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<bool>> truth;
  std::vector<std::vector<bool>> preds;
};

inline MultilabelInstance random_multilabel(std::uint64_t seed, int rows = 50, int labels = 14) {
  eside::Rng rng(seed);
  MultilabelInstance m;
  for (int i = 0; i < rows; ++i) {
    std::vector<double> s;
    std::vector<bool> t;
    for (int j = 0; j < labels; ++j) {
      s.push_back(static_cast<double>(rng.below(21)) / 20.0);
      t.push_back(rng.uniform() < 0.3);
    }
    m.scores.push_back(s);
    m.truth.push_back(t);
  }
  // Mostly-correct predictions so exact match is neither always 0 nor 1.
  for (int i = 0; i < rows; ++i) {
    std::vector<bool> p = m.truth[static_cast<std::size_t>(i)];
    for (int j = 0; j < labels; ++j)
      if (rng.uniform() < 0.02) p[static_cast<std::size_t>(j)] = !p[static_cast<std::size_t>(j)];
    m.preds.push_back(p);
  }
  return m;
}

}  // namespace test
