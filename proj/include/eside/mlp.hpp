#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "eside/error.hpp"
#include "eside/rng.hpp"

namespace eside::mlp {

enum class Mode { train, eval };

inline constexpr double kProbClamp = 1e-7;

// Linear -> BatchNorm -> LeakyReLU -> Dropout per hidden layer, then a
// final Linear -> sigmoid. Column-major: a batch is a (features x samples)
// matrix.
template <typename Scalar>
struct MlpModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Linear {
    Matrix weight;  // out x in
    Vector bias;
  };

  struct BatchNorm {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
  };

  std::vector<int> dims;  // input, hidden..., output
  std::vector<Linear> linear;
  std::vector<BatchNorm> norm;  // one per hidden layer

  Scalar leaky_slope = Scalar(0.1);
  Scalar dropout = Scalar(0.5);
  Scalar bn_momentum = Scalar(0.1);
  Scalar bn_eps = Scalar(1e-5);

  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  std::size_t hidden_layers() const { return norm.size(); }

  // Visits every trainable tensor as (pointer, length), in a fixed order.
  template <typename F>
  void for_each_param(F&& f) {
    for (auto& l : linear) {
      f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    for (auto& n : norm) {
      f(n.gamma.data(), static_cast<std::size_t>(n.gamma.size()));
      f(n.beta.data(), static_cast<std::size_t>(n.beta.size()));
    }
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : linear) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    for (const auto& b : norm) n += static_cast<std::size_t>(b.gamma.size() + b.beta.size());
    return n;
  }

  // Same shapes, all trainable entries zero (used for gradients).
  MlpModel zeros_like() const {
    MlpModel g = *this;
    g.for_each_param([](Scalar* p, std::size_t n) { std::fill(p, p + n, Scalar(0)); });
    return g;
  }

  template <typename Other>
  MlpModel<Other> cast() const {
    MlpModel<Other> out;
    out.dims = dims;
    for (const auto& l : linear) out.linear.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>()});
    for (const auto& n : norm) {
      out.norm.push_back({n.gamma.template cast<Other>(), n.beta.template cast<Other>(),
                          n.running_mean.template cast<Other>(), n.running_var.template cast<Other>()});
    }
    out.leaky_slope = static_cast<Other>(leaky_slope);
    out.dropout = static_cast<Other>(dropout);
    out.bn_momentum = static_cast<Other>(bn_momentum);
    out.bn_eps = static_cast<Other>(bn_eps);
    return out;
  }

  bool operator==(const MlpModel& o) const {
    if (dims != o.dims || linear.size() != o.linear.size() || norm.size() != o.norm.size()) return false;
    for (std::size_t i = 0; i < linear.size(); ++i) {
      if (linear[i].weight != o.linear[i].weight || linear[i].bias != o.linear[i].bias) return false;
    }
    for (std::size_t i = 0; i < norm.size(); ++i) {
      const auto& a = norm[i];
      const auto& b = o.norm[i];
      if (a.gamma != b.gamma || a.beta != b.beta || a.running_mean != b.running_mean ||
          a.running_var != b.running_var) {
        return false;
      }
    }
    return true;
  }
};

inline void check_dims(std::span<const int> dims) {
  if (dims.size() < 3) throw InvalidArgument("mlp: need input, at least one hidden layer, and output");
  for (int d : dims)
    if (d < 1) throw InvalidArgument("mlp: every layer dimension must be positive");
}

// Kaiming bound for LeakyReLU(slope): sqrt(6 / ((1 + slope^2) fan_in)).
inline double kaiming_bound(int fan_in, double slope = 0.1) {
  return std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
}

// Kaiming-uniform weights, zero biases, identity batch-norm.
template <typename Scalar = float>
MlpModel<Scalar> init_mlp(std::span<const int> dims, std::uint64_t seed) {
  check_dims(dims);
  MlpModel<Scalar> m;
  m.dims.assign(dims.begin(), dims.end());
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    const double bound = kaiming_bound(in, static_cast<double>(m.leaky_slope));
    typename MlpModel<Scalar>::Linear lin;
    lin.weight.resize(out, in);
    // Row-major draw order so the stream matches the on-disk layout.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) lin.weight(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
    lin.bias = MlpModel<Scalar>::Vector::Zero(out);
    m.linear.push_back(std::move(lin));
    if (l + 2 < dims.size()) {
      m.norm.push_back({MlpModel<Scalar>::Vector::Ones(out), MlpModel<Scalar>::Vector::Zero(out),
                        MlpModel<Scalar>::Vector::Zero(out), MlpModel<Scalar>::Vector::Ones(out)});
    }
  }
  return m;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

// Intermediate values of one training-mode forward pass.
template <typename Scalar>
struct TrainForward {
  using Matrix = typename MlpModel<Scalar>::Matrix;
  using Vector = typename MlpModel<Scalar>::Vector;
  std::vector<Matrix> inputs;  // input to each linear layer
  std::vector<Matrix> xhat;    // normalized pre-activations per hidden layer
  std::vector<Vector> inv_std;
  std::vector<Matrix> bn_out;  // gamma * xhat + beta
  std::vector<Matrix> keep;    // dropout multiplier (0 or 1/(1-p)); empty when p = 0
  std::vector<Vector> batch_mean;
  std::vector<Vector> batch_var;  // biased
  Matrix probs;
};

template <typename Scalar, typename Derived>
void check_input(const MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() != m.input_dim()) {
    throw InvalidArgument("mlp: input dim " + std::to_string(x.rows()) + " != " + std::to_string(m.input_dim()));
  }
  if (!x.allFinite()) throw InvalidArgument("mlp: non-finite input");
}

// Batch statistics, seeded dropout. Does not touch running statistics.
template <typename Scalar, typename Derived>
TrainForward<Scalar> forward_train(const MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& x,
                                   std::uint64_t dropout_seed) {
  using Matrix = typename MlpModel<Scalar>::Matrix;
  check_input(m, x);
  const auto batch = x.cols();
  if (batch < 2) throw InvalidArgument("mlp: training mode needs a batch of at least 2");
  TrainForward<Scalar> f;
  Rng rng(dropout_seed);
  Matrix h = x.template cast<Scalar>();
  for (std::size_t l = 0; l < m.hidden_layers(); ++l) {
    const auto& lin = m.linear[l];
    const auto& bn = m.norm[l];
    f.inputs.push_back(h);
    Matrix z = lin.weight * h;
    z.colwise() += lin.bias;
    const auto mean = z.rowwise().mean().eval();
    z.colwise() -= mean;
    const auto var = (z.array().square().rowwise().sum() / static_cast<Scalar>(batch)).matrix().eval();
    const auto inv_std = (var.array() + m.bn_eps).rsqrt().matrix().eval();
    z = inv_std.asDiagonal() * z;  // now xhat
    Matrix y = bn.gamma.asDiagonal() * z;
    y.colwise() += bn.beta;
    Matrix a = y.unaryExpr([slope = m.leaky_slope](Scalar v) { return v > 0 ? v : slope * v; });
    if (m.dropout > 0) {
      Matrix keep(a.rows(), a.cols());
      const Scalar scale = Scalar(1) / (Scalar(1) - m.dropout);
      const double p = static_cast<double>(m.dropout);
      for (Eigen::Index c = 0; c < keep.cols(); ++c)
        for (Eigen::Index r = 0; r < keep.rows(); ++r) keep(r, c) = rng.uniform() < p ? Scalar(0) : scale;
      a = a.cwiseProduct(keep);
      f.keep.push_back(std::move(keep));
    }
    f.xhat.push_back(std::move(z));
    f.inv_std.push_back(inv_std);
    f.bn_out.push_back(std::move(y));
    f.batch_mean.push_back(mean);
    f.batch_var.push_back(var);
    h = std::move(a);
  }
  f.inputs.push_back(h);
  Matrix logits = m.linear.back().weight * h;
  logits.colwise() += m.linear.back().bias;
  f.probs = logits.unaryExpr([](Scalar v) { return sigmoid(v); });
  return f;
}

// Exponential moving update, unbiased batch variance (PyTorch convention).
template <typename Scalar>
void update_running_stats(MlpModel<Scalar>& m, const TrainForward<Scalar>& f) {
  const auto batch = f.probs.cols();
  const Scalar unbias = static_cast<Scalar>(batch) / static_cast<Scalar>(batch - 1);
  for (std::size_t l = 0; l < m.hidden_layers(); ++l) {
    auto& bn = m.norm[l];
    bn.running_mean = (Scalar(1) - m.bn_momentum) * bn.running_mean + m.bn_momentum * f.batch_mean[l];
    bn.running_var = (Scalar(1) - m.bn_momentum) * bn.running_var + m.bn_momentum * unbias * f.batch_var[l];
  }
}

// Running statistics, no dropout. Pure; independent of batch composition.
template <typename Scalar, typename Derived>
typename MlpModel<Scalar>::Matrix forward_eval(const MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& x) {
  using Matrix = typename MlpModel<Scalar>::Matrix;
  check_input(m, x);
  Matrix h = x.template cast<Scalar>();
  for (std::size_t l = 0; l < m.hidden_layers(); ++l) {
    const auto& lin = m.linear[l];
    const auto& bn = m.norm[l];
    Matrix z = lin.weight * h;
    z.colwise() += lin.bias - bn.running_mean;
    const auto scale = (bn.gamma.array() * (bn.running_var.array() + m.bn_eps).rsqrt()).matrix().eval();
    z = scale.asDiagonal() * z;
    z.colwise() += bn.beta;
    h = z.unaryExpr([slope = m.leaky_slope](Scalar v) { return v > 0 ? v : slope * v; });
  }
  Matrix logits = m.linear.back().weight * h;
  logits.colwise() += m.linear.back().bias;
  return logits.unaryExpr([](Scalar v) { return sigmoid(v); });
}

// Single entry point in the shape of the spec'd forward(): train mode
// mutates running statistics.
template <typename Scalar, typename Derived>
typename MlpModel<Scalar>::Matrix forward(MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& x, Mode mode,
                                          std::uint64_t seed) {
  if (mode == Mode::eval) return forward_eval(m, x);
  auto f = forward_train(m, x, seed);
  update_running_stats(m, f);
  return f.probs;
}

// L = -sum_i w_i sum_j [y_ij log p_ij + (1 - y_ij) log(1 - p_ij)], with p
// clamped to [1e-7, 1 - 1e-7]. probs/targets are (outputs x samples).
template <typename Scalar, typename DP, typename DT>
Scalar weighted_bce(const Eigen::MatrixBase<DP>& probs, const Eigen::MatrixBase<DT>& targets,
                    std::span<const Scalar> weights) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols() ||
      static_cast<std::size_t>(probs.cols()) != weights.size()) {
    throw InvalidArgument("weighted_bce: length mismatch");
  }
  const Scalar lo = static_cast<Scalar>(kProbClamp);
  const Scalar hi = Scalar(1) - lo;
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    Scalar s = 0;
    for (Eigen::Index j = 0; j < probs.rows(); ++j) {
      const Scalar p = std::clamp(static_cast<Scalar>(probs(j, i)), lo, hi);
      const Scalar y = static_cast<Scalar>(targets(j, i));
      s += y * std::log(p) + (Scalar(1) - y) * std::log(Scalar(1) - p);
    }
    loss -= weights[static_cast<std::size_t>(i)] * s;
  }
  return loss;
}

template <typename Scalar, typename DT>
MlpModel<Scalar> backward(const MlpModel<Scalar>& m, const TrainForward<Scalar>& f,
                          const Eigen::MatrixBase<DT>& targets, std::span<const Scalar> weights) {
  using Matrix = typename MlpModel<Scalar>::Matrix;
  using Vector = typename MlpModel<Scalar>::Vector;
  const auto batch = f.probs.cols();
  if (static_cast<std::size_t>(batch) != weights.size() || targets.cols() != batch ||
      targets.rows() != f.probs.rows()) {
    throw InvalidArgument("backward: length mismatch");
  }
  MlpModel<Scalar> g = m.zeros_like();
  const Scalar lo = static_cast<Scalar>(kProbClamp);
  const Scalar hi = Scalar(1) - lo;

  // d loss / d logit = w (p - y) where the clamp is inactive.
  Matrix delta(f.probs.rows(), batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    for (Eigen::Index j = 0; j < f.probs.rows(); ++j) {
      const Scalar p = f.probs(j, i);
      const bool clamped = p < lo || p > hi;
      delta(j, i) = clamped ? Scalar(0) : weights[static_cast<std::size_t>(i)] * (p - static_cast<Scalar>(targets(j, i)));
    }
  }

  std::size_t l = m.linear.size() - 1;
  g.linear[l].weight.noalias() = delta * f.inputs[l].transpose();
  g.linear[l].bias = delta.rowwise().sum();
  Matrix dh = m.linear[l].weight.transpose() * delta;

  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  for (std::size_t k = m.hidden_layers(); k-- > 0;) {
    if (!f.keep.empty()) dh = dh.cwiseProduct(f.keep[k]);
    const Scalar slope = m.leaky_slope;
    const Matrix dy = dh.binaryExpr(f.bn_out[k], [slope](Scalar d, Scalar y) { return y > 0 ? d : slope * d; });
    g.norm[k].gamma = dy.cwiseProduct(f.xhat[k]).rowwise().sum();
    g.norm[k].beta = dy.rowwise().sum();
    const Matrix dxhat = m.norm[k].gamma.asDiagonal() * dy;
    const Vector sum_dxhat = dxhat.rowwise().sum();
    const Vector sum_dxhat_xhat = dxhat.cwiseProduct(f.xhat[k]).rowwise().sum();
    // dz = inv_std / B * (B dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    Matrix dz = static_cast<Scalar>(batch) * dxhat;
    dz.colwise() -= sum_dxhat;
    dz -= sum_dxhat_xhat.asDiagonal() * f.xhat[k];
    dz = (f.inv_std[k] * inv_batch).asDiagonal() * dz;
    g.linear[k].weight.noalias() = dz * f.inputs[k].transpose();
    g.linear[k].bias = dz.rowwise().sum();
    if (k > 0) dh = m.linear[k].weight.transpose() * dz;
  }
  return g;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int epochs = 10;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0) || !(adam_eps > 0.0)) {
      throw InvalidArgument("train config: learning rate, weight decay and eps must be non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw InvalidArgument("train config: betas must lie in [0, 1)");
    }
    if (batch_size < 2) throw InvalidArgument("train config: batch size must be >= 2");
    if (epochs < 1) throw InvalidArgument("train config: epochs must be >= 1");
  }
};

// AdamW with decoupled weight decay (p -= lr * wd * p before the Adam step),
// applied to every trainable tensor.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(const MlpModel<Scalar>& model) : m_(model.zeros_like()), v_(model.zeros_like()) {}

  void step(MlpModel<Scalar>& model, MlpModel<Scalar>& grads, const TrainConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t_);
    std::vector<Scalar*> gp, mp, vp;
    std::vector<std::size_t> lens;
    grads.for_each_param([&](Scalar* p, std::size_t n) {
      gp.push_back(p);
      lens.push_back(n);
    });
    m_.for_each_param([&](Scalar* p, std::size_t) { mp.push_back(p); });
    v_.for_each_param([&](Scalar* p, std::size_t) { vp.push_back(p); });
    const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
    const Scalar decay = static_cast<Scalar>(1.0 - cfg.learning_rate * cfg.weight_decay);
    const Scalar b1 = static_cast<Scalar>(cfg.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg.beta2);
    const Scalar eps = static_cast<Scalar>(cfg.adam_eps);
    const Scalar c1 = static_cast<Scalar>(bc1);
    const Scalar c2 = static_cast<Scalar>(bc2);
    std::size_t idx = 0;
    model.for_each_param([&](Scalar* p, std::size_t n) {
      Scalar* g = gp[idx];
      Scalar* m = mp[idx];
      Scalar* v = vp[idx];
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (Scalar(1) - b1) * g[i];
        v[i] = b2 * v[i] + (Scalar(1) - b2) * g[i] * g[i];
        const Scalar mhat = m[i] / c1;
        const Scalar vhat = v[i] / c2;
        p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + eps);
      }
      ++idx;
    });
  }

  long steps() const { return t_; }

 private:
  MlpModel<Scalar> m_;
  MlpModel<Scalar> v_;
  long t_ = 0;
};

// Owns a model and its optimizer state across epochs.
template <typename Scalar>
class Trainer {
 public:
  using Matrix = typename MlpModel<Scalar>::Matrix;

  Trainer(MlpModel<Scalar> model, TrainConfig cfg) : model_(std::move(model)), cfg_(cfg), opt_(model_) {
    cfg_.validate();
  }

  const MlpModel<Scalar>& model() const { return model_; }
  MlpModel<Scalar>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

  // One pass over the data in a seeded shuffled order. data is
  // (features x N), targets01 is (outputs x N). Returns the mean batch loss.
  template <typename DX, typename DY>
  double train_epoch(const Eigen::MatrixBase<DX>& data, const Eigen::MatrixBase<DY>& targets01,
                     std::span<const Scalar> sample_weights, int epoch_index) {
    const auto n = data.cols();
    if (static_cast<std::size_t>(n) != sample_weights.size() || targets01.cols() != n) {
      throw InvalidArgument("train_epoch: data, targets and weights must have the same length");
    }
    if (targets01.rows() != model_.output_dim()) throw InvalidArgument("train_epoch: target rows != output dim");
    if (n < 2) throw InvalidArgument("train_epoch: need at least 2 samples");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch_index)));
    rng.shuffle(order.begin(), order.end());

    // Batch boundaries; a trailing single sample joins the previous batch.
    std::vector<std::size_t> bounds;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg_.batch_size)) bounds.push_back(b);
    bounds.push_back(order.size());
    if (bounds.size() > 2 && bounds[bounds.size() - 1] - bounds[bounds.size() - 2] < 2) {
      bounds.erase(bounds.end() - 2);
    }

    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
      const auto lo = bounds[b];
      const auto len = static_cast<Eigen::Index>(bounds[b + 1] - lo);
      Matrix xb(data.rows(), len);
      Matrix yb(targets01.rows(), len);
      std::vector<Scalar> wb(static_cast<std::size_t>(len));
      for (Eigen::Index j = 0; j < len; ++j) {
        const auto src = order[lo + static_cast<std::size_t>(j)];
        xb.col(j) = data.col(src).template cast<Scalar>();
        yb.col(j) = targets01.col(src).template cast<Scalar>();
        wb[static_cast<std::size_t>(j)] = sample_weights[static_cast<std::size_t>(src)];
      }
      const auto dropout_seed = derive_seed(cfg_.seed, (static_cast<std::uint64_t>(epoch_index) << 32) | b);
      auto fwd = forward_train(model_, xb, dropout_seed);
      const Scalar loss = weighted_bce(fwd.probs, yb, std::span<const Scalar>(wb));
      if (!std::isfinite(static_cast<double>(loss))) {
        throw NumericError("train_epoch: non-finite loss at epoch " + std::to_string(epoch_index) + ", batch " +
                           std::to_string(b));
      }
      auto grads = backward(model_, fwd, yb, std::span<const Scalar>(wb));
      update_running_stats(model_, fwd);
      opt_.step(model_, grads, cfg_);
      total += static_cast<double>(loss);
      ++batches;
    }
    return total / batches;
  }

 private:
  MlpModel<Scalar> model_;
  TrainConfig cfg_;
  AdamW<Scalar> opt_;
};

// +1 when p >= 0.5, else -1 (per sample, first output).
template <typename Scalar>
std::vector<std::int8_t> signs_from_probs(const typename MlpModel<Scalar>::Matrix& probs) {
  std::vector<std::int8_t> out(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index i = 0; i < probs.cols(); ++i) out[static_cast<std::size_t>(i)] = probs(0, i) >= Scalar(0.5) ? 1 : -1;
  return out;
}

template <typename Scalar, typename Derived>
std::vector<std::int8_t> predict_sign(const MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& x) {
  if (m.output_dim() != 1) throw InvalidArgument("predict_sign: model must have a scalar output");
  return signs_from_probs<Scalar>(forward_eval(m, x));
}

inline constexpr int kFlawLabels = 14;

// Per-label threshold at 0.5 (inclusive). Result is (samples x labels).
template <typename Scalar, typename Derived>
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> predict_multilabel(const MlpModel<Scalar>& m,
                                                                         const Eigen::MatrixBase<Derived>& x) {
  if (m.output_dim() != kFlawLabels) {
    throw InvalidArgument("predict_multilabel: head has " + std::to_string(m.output_dim()) + " outputs, need 14");
  }
  const auto probs = forward_eval(m, x);
  return probs.transpose().unaryExpr([](Scalar p) { return p >= Scalar(0.5); });
}

}  // namespace eside::mlp
