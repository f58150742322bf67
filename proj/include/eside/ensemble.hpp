#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "eside/error.hpp"
#include "eside/features.hpp"
#include "eside/kv_file.hpp"
#include "eside/mlp.hpp"
#include "eside/model_io.hpp"

namespace eside::ensemble {

using SampleWeights = std::vector<double>;

inline SampleWeights init_weights(std::size_t n) {
  if (n == 0) throw InvalidArgument("init_weights: N must be >= 1");
  return SampleWeights(n, 1.0 / static_cast<double>(n));
}

// Misclassified weight mass over total mass.
inline double weighted_error(std::span<const std::int8_t> preds, std::span<const std::int8_t> labels,
                             std::span<const double> w) {
  if (preds.size() != labels.size() || preds.size() != w.size()) {
    throw InvalidArgument("weighted_error: length mismatch");
  }
  double wrong = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    total += w[i];
    if (preds[i] != labels[i]) wrong += w[i];
  }
  if (!(total > 0.0)) throw InvalidArgument("weighted_error: weights sum to zero");
  return wrong / total;
}

inline double clamp_error(double raw, double lo = 0.001, double hi = 0.5) { return std::min(std::max(raw, lo), hi); }

// alpha = 1/2 ln((1 - eps) / eps)
inline double model_weight(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidArgument("model_weight: error must lie in (0, 1)");
  return 0.5 * std::log((1.0 - eps) / eps);
}

// w_i <- w_i exp(-eta alpha h_i y_i), then renormalized to sum 1.
inline SampleWeights update_weights(std::span<const double> w, double alpha, std::span<const std::int8_t> preds,
                                    std::span<const std::int8_t> labels, double eta) {
  if (w.size() != preds.size() || w.size() != labels.size()) throw InvalidArgument("update_weights: length mismatch");
  SampleWeights out(w.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if ((preds[i] != 1 && preds[i] != -1) || (labels[i] != 1 && labels[i] != -1)) {
      throw InvalidArgument("update_weights: predictions and labels must be +1/-1");
    }
    out[i] = w[i] * std::exp(-eta * alpha * preds[i] * labels[i]);
    sum += out[i];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) throw NumericError("update_weights: weights collapsed");
  for (double& v : out) v /= sum;
  return out;
}

struct EnsembleConfig {
  int T = 24;
  int stride = 3;
  double eta = 0.25;
  double eps_lo = 0.001;
  double eps_hi = 0.5;
  std::vector<int> hidden = {1024, 512, 256, 128};
  double dropout = 0.5;
  mlp::TrainConfig train;
  // Carry each member's final sample weights into the next member instead
  // of restarting from uniform (classical AdaBoost chaining). Forces
  // sequential training.
  bool chain_weights = false;
  int threads = 1;

  void validate() const {
    if (T < 0 || stride < 1 || T % stride != 0) throw InvalidArgument("ensemble config: stride must divide T");
    if (!(eta > 0.0)) throw InvalidArgument("ensemble config: eta must be positive");
    if (!(eps_lo > 0.0 && eps_lo < eps_hi && eps_hi <= 0.5)) {
      throw InvalidArgument("ensemble config: need 0 < eps_lo < eps_hi <= 0.5");
    }
    if (hidden.empty()) throw InvalidArgument("ensemble config: need at least one hidden layer");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("ensemble config: dropout must lie in [0, 1)");
    train.validate();
  }

  std::vector<std::uint32_t> member_timesteps() const {
    std::vector<std::uint32_t> ts;
    for (int t = 0; t <= T; t += stride) ts.push_back(static_cast<std::uint32_t>(t));
    return ts;
  }
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double weighted_error = 0.0;  // before clamping
};

struct Member {
  std::uint32_t timestep = 0;
  mlp::MlpModel<float> model;
  double alpha = 0.0;
};

struct MemberResult {
  Member member;
  SampleWeights final_weights;
  std::vector<EpochLog> log;
};

using FeatureMatrix = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>>;

// Columns are samples: maps a row-major (N x dim) buffer without copying.
inline FeatureMatrix as_columns(std::span<const float> rows, std::size_t dim) {
  return FeatureMatrix(rows.data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rows.size() / dim));
}

// Trains one timestep classifier with per-epoch reweighting rounds:
// train an epoch under w, score, clamp, take alpha, reweight. The returned
// alpha is the last round's.
inline MemberResult train_member(std::uint32_t timestep, std::span<const float> data_rows, std::size_t dim,
                                 std::span<const std::int8_t> labels, const EnsembleConfig& cfg,
                                 std::optional<SampleWeights> initial_weights = std::nullopt) {
  cfg.validate();
  const std::size_t n = labels.size();
  if (data_rows.size() != n * dim) throw InvalidArgument("train_member: data/labels length mismatch");
  const auto x = as_columns(data_rows, dim);
  Eigen::MatrixXf targets(1, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) targets(0, static_cast<Eigen::Index>(i)) = labels[i] == kSynthetic ? 1.0f : 0.0f;

  std::vector<int> dims{static_cast<int>(dim)};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  mlp::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.train.seed, timestep);
  auto model = mlp::init_mlp<float>(dims, tc.seed);
  model.dropout = static_cast<float>(cfg.dropout);
  mlp::Trainer<float> trainer(std::move(model), tc);

  SampleWeights w = initial_weights ? std::move(*initial_weights) : init_weights(n);
  if (w.size() != n) throw InvalidArgument("train_member: initial weights length mismatch");
  MemberResult res;
  res.member.timestep = timestep;
  std::vector<float> wf(n);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) wf[i] = static_cast<float>(w[i]);
    const double loss = trainer.train_epoch(x, targets, std::span<const float>(wf), epoch);
    const auto preds = mlp::predict_sign(trainer.model(), x);
    const double raw = weighted_error(preds, labels, w);
    const double alpha = model_weight(clamp_error(raw, cfg.eps_lo, cfg.eps_hi));
    w = update_weights(w, alpha, preds, labels, cfg.eta);
    res.member.alpha = alpha;
    res.log.push_back({epoch, loss, raw});
  }
  res.member.model = trainer.model();
  res.final_weights = std::move(w);
  return res;
}

struct EnsembleModel {
  int T = 24;
  int stride = 3;
  double eta = 0.25;
  std::vector<Member> members;
};

struct TrainResult {
  EnsembleModel model;
  std::vector<std::vector<EpochLog>> logs;  // per member
};

// Independent members are trained on up to cfg.threads worker threads; each
// member's seed depends only on (seed, timestep), so the result does not
// depend on scheduling.
inline TrainResult train_ensemble(const FeatureDataset& ds, const EnsembleConfig& cfg) {
  cfg.validate();
  const auto timesteps = cfg.member_timesteps();
  for (auto t : timesteps) {
    if (!ds.has_timestep(t)) throw InvalidArgument("train_ensemble: dataset lacks timestep " + std::to_string(t));
  }
  std::vector<MemberResult> results(timesteps.size());
  if (cfg.chain_weights) {
    std::optional<SampleWeights> carry;
    for (std::size_t k = 0; k < timesteps.size(); ++k) {
      const auto rows = ds.timestep_rows(timesteps[k]);
      results[k] = train_member(timesteps[k], rows, ds.dim, ds.labels, cfg, carry);
      carry = results[k].final_weights;
    }
  } else {
    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(cfg.threads, 1)), 1, timesteps.size());
    std::vector<std::exception_ptr> errors(timesteps.size());
    auto work = [&](std::size_t first) {
      for (std::size_t k = first; k < timesteps.size(); k += workers) {
        try {
          const auto rows = ds.timestep_rows(timesteps[k]);
          results[k] = train_member(timesteps[k], rows, ds.dim, ds.labels, cfg);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work, i);
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  TrainResult out;
  out.model.T = cfg.T;
  out.model.stride = cfg.stride;
  out.model.eta = cfg.eta;
  for (auto& r : results) {
    out.model.members.push_back(std::move(r.member));
    out.logs.push_back(std::move(r.log));
  }
  return out;
}

struct Prediction {
  std::int8_t label = 1;
  double score = 0.0;
};

inline std::int8_t sign_with_tie(double score) { return score >= 0.0 ? kSynthetic : kNatural; }

// Per-image signed weighted vote. Ties (score 0) go to synthetic.
inline std::vector<Prediction> predict_dataset(const EnsembleModel& e, const FeatureDataset& ds) {
  if (e.members.empty()) throw InvalidArgument("predict: ensemble has no members");
  std::vector<Prediction> out(ds.n_images());
  for (const auto& m : e.members) {
    if (!ds.has_timestep(m.timestep)) {
      throw InvalidArgument("predict: dataset lacks member timestep " + std::to_string(m.timestep));
    }
    const auto rows = ds.timestep_rows(m.timestep);
    const auto signs = mlp::predict_sign(m.model, as_columns(rows, ds.dim));
    for (std::size_t i = 0; i < out.size(); ++i) out[i].score += m.alpha * signs[i];
  }
  for (auto& p : out) p.label = sign_with_tie(p.score);
  return out;
}

// One image: features[k] must hold the vector for member k's timestep.
inline Prediction predict(const EnsembleModel& e, std::span<const std::span<const float>> features) {
  if (features.size() != e.members.size()) throw InvalidArgument("predict: missing timestep features");
  Prediction p;
  for (std::size_t k = 0; k < e.members.size(); ++k) {
    const auto x = as_columns(features[k], features[k].size());
    p.score += e.members[k].alpha * mlp::predict_sign(e.members[k].model, x)[0];
  }
  p.label = sign_with_tie(p.score);
  return p;
}

struct Tally {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
};

struct Metrics {
  Tally overall;
  Tally synthetic;
  Tally natural;
  std::map<std::string, Tally> by_tag;
  // Positive class = synthetic.
  std::size_t true_pos = 0, false_pos = 0, true_neg = 0, false_neg = 0;

  // Rows: all, synthetic, natural, then one per tag (sorted).
  void write_csv(std::ostream& out) const {
    const auto old_precision = out.precision(17);
    out << "tag,n,correct,accuracy\n";
    auto row = [&](const std::string& name, const Tally& t) {
      out << name << ',' << t.n << ',' << t.correct << ',' << t.accuracy() << '\n';
    };
    row("all", overall);
    row("synthetic", synthetic);
    row("natural", natural);
    for (const auto& [tag, t] : by_tag) row("tag:" + tag, t);
    out.precision(old_precision);
  }
};

inline Metrics score_predictions(std::span<const Prediction> preds, const FeatureDataset& ds,
                                 const std::optional<std::string>& tag_filter = std::nullopt) {
  if (preds.size() != ds.n_images()) throw InvalidArgument("evaluate: prediction count mismatch");
  Metrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (tag_filter && ds.tags[i] != *tag_filter) continue;
    const bool ok = preds[i].label == ds.labels[i];
    auto bump = [ok](Tally& t) {
      ++t.n;
      if (ok) ++t.correct;
    };
    bump(m.overall);
    bump(ds.labels[i] == kSynthetic ? m.synthetic : m.natural);
    bump(m.by_tag[ds.tags[i]]);
    if (ds.labels[i] == kSynthetic) (ok ? m.true_pos : m.false_neg)++;
    else (ok ? m.true_neg : m.false_pos)++;
  }
  if (m.overall.n == 0) throw InvalidArgument("evaluate: no images to evaluate");
  return m;
}

inline Metrics evaluate(const EnsembleModel& e, const FeatureDataset& ds,
                        const std::optional<std::string>& tag_filter = std::nullopt) {
  if (ds.n_images() == 0) throw InvalidArgument("evaluate: empty dataset");
  const auto preds = predict_dataset(e, ds);
  return score_predictions(preds, ds, tag_filter);
}

// Accuracy of a single member's hard predictions.
inline double member_accuracy(const Member& m, const FeatureDataset& ds) {
  const auto rows = ds.timestep_rows(m.timestep);
  const auto signs = mlp::predict_sign(m.model, as_columns(rows, ds.dim));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < signs.size(); ++i) ok += signs[i] == ds.labels[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(signs.size());
}

// ---- on-disk layout -----------------------------------------------------------
//
// DIR/ensemble.txt (key = value):
//   T, stride, eta, members, then member.<i> = <timestep> <alpha> <model file>
// with model files relative to DIR.

inline std::string member_filename(std::uint32_t timestep) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_t%02u.emlp", timestep);
  return buf;
}

inline void save_ensemble(const EnsembleModel& e, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KvFile kv;
  kv.set("T", std::to_string(e.T));
  kv.set("stride", std::to_string(e.stride));
  kv.set("eta", format_exact(e.eta));
  kv.set("members", std::to_string(e.members.size()));
  for (std::size_t i = 0; i < e.members.size(); ++i) {
    const auto& m = e.members[i];
    const auto file = member_filename(m.timestep);
    mlp::save_model(m.model, dir / file);
    kv.set("member." + std::to_string(i), std::to_string(m.timestep) + " " + format_exact(m.alpha) + " " + file);
  }
  kv.save(dir / "ensemble.txt", "timestep ensemble manifest");
}

inline EnsembleModel load_ensemble(const std::filesystem::path& dir) {
  const auto kv = KvFile::load(dir / "ensemble.txt");
  EnsembleModel e;
  e.T = kv.get_as<int>("T");
  e.stride = kv.get_as<int>("stride");
  e.eta = kv.get_as<double>("eta");
  const auto count = kv.get_as<std::size_t>("members");
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line(kv.get("member." + std::to_string(i)));
    std::string ts, alpha, file;
    if (!(line >> ts >> alpha >> file)) throw FormatError(FormatCode::corrupt_header, "ensemble: malformed member line");
    Member m;
    m.timestep = KvFile::parse_value<std::uint32_t>(ts, "member timestep");
    m.alpha = KvFile::parse_value<double>(alpha, "member alpha");
    if (!std::isfinite(m.alpha)) throw FormatError(FormatCode::non_finite, "ensemble: non-finite alpha");
    m.model = mlp::load_model(dir / file);
    e.members.push_back(std::move(m));
  }
  if (e.members.empty()) throw FormatError(FormatCode::corrupt_header, "ensemble: no members");
  if (e.stride < 1 || e.T < 0 || e.T % e.stride != 0 ||
      e.members.size() != static_cast<std::size_t>(e.T / e.stride + 1)) {
    throw FormatError(FormatCode::corrupt_header, "ensemble: member count does not match T / stride + 1");
  }
  for (std::size_t i = 0; i < e.members.size(); ++i) {
    if (e.members[i].timestep != i * static_cast<std::size_t>(e.stride)) {
      throw FormatError(FormatCode::corrupt_header, "ensemble: member timesteps must be 0, s, 2s, ..., T");
    }
  }
  return e;
}

inline void write_log_csv(std::ostream& out, std::span<const EpochLog> log) {
  const auto old_precision = out.precision(17);
  out << "epoch,loss,weighted_error\n";
  for (const auto& l : log) out << l.epoch << ',' << l.loss << ',' << l.weighted_error << '\n';
  out.precision(old_precision);
}

}  // namespace eside::ensemble
