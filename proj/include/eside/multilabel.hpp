#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <numeric>
#include <vector>

#include "eside/error.hpp"

namespace eside::mlp {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Fraction of rows (samples) whose every label matches.
inline double exact_match(const BoolMatrix& preds, const BoolMatrix& truth) {
  if (preds.rows() != truth.rows() || preds.cols() != truth.cols()) {
    throw InvalidArgument("exact_match: shape mismatch");
  }
  if (preds.rows() == 0) throw InvalidArgument("exact_match: empty input");
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < preds.rows(); ++i) hits += preds.row(i) == truth.row(i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.rows());
}

// AP of one label column: mean of precision@k over the ranks k of positive
// samples, ranked by descending score with ties broken by ascending row.
// Returns a negative value when the column has no positive.
template <typename DS, typename DT>
double average_precision(const Eigen::MatrixBase<DS>& scores, const Eigen::MatrixBase<DT>& truth) {
  const auto n = scores.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
  double sum = 0.0;
  Eigen::Index positives = 0;
  for (Eigen::Index rank = 0; rank < n; ++rank) {
    if (truth(order[static_cast<std::size_t>(rank)])) {
      ++positives;
      sum += static_cast<double>(positives) / static_cast<double>(rank + 1);
    }
  }
  return positives == 0 ? -1.0 : sum / static_cast<double>(positives);
}

struct MapResult {
  double map = 0.0;
  int labels_included = 0;
  int labels_skipped = 0;  // columns without a positive sample
};

// scores/truth are (samples x labels).
inline MapResult mean_average_precision(const Eigen::MatrixXd& scores, const BoolMatrix& truth) {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols()) {
    throw InvalidArgument("mean_average_precision: shape mismatch");
  }
  if (scores.rows() == 0 || scores.cols() == 0) throw InvalidArgument("mean_average_precision: empty input");
  MapResult r;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    const double ap = average_precision(scores.col(j), truth.col(j));
    if (ap < 0) {
      ++r.labels_skipped;
      continue;
    }
    sum += ap;
    ++r.labels_included;
  }
  r.map = r.labels_included > 0 ? sum / r.labels_included : 0.0;
  return r;
}

}  // namespace eside::mlp
