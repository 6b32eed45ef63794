#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcbf/error.hpp"
#include "pcbf/rng.hpp"

namespace pcbf::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Feed-forward velocity network: tanh hidden layers, linear scalar output.
///
/// Inputs are laid out as rows `[z, t, context...]`. `weights[l]` has shape
/// `layer_sizes[l] x layer_sizes[l + 1]`, so a batch is propagated as
/// `A_{l+1} = tanh(A_l * W_l + 1 b_l^T)`.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::uint64_t init_seed = 0;

  int input_dim() const { return layer_sizes.front(); }
  std::size_t num_layers() const { return weights.size(); }

  bool operator==(const Mlp& o) const {
    if (layer_sizes != o.layer_sizes || weights.size() != o.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    }
    return true;
  }
};

/// Same layout as the parameters of an Mlp.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Gradients zeros_like(const Mlp& p) {
    Gradients g;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      g.weights.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      g.biases.push_back(Vector::Zero(p.biases[l].size()));
    }
    return g;
  }
};

struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const Mlp& p) {
    AdamState s;
    s.first_moment = Gradients::zeros_like(p);
    s.second_moment = Gradients::zeros_like(p);
    return s;
  }
};

inline void validate_layer_sizes(std::span<const int> sizes) {
  if (sizes.size() < 2) throw ConfigError("layer_sizes needs at least an input and an output entry");
  for (int s : sizes) {
    if (s <= 0) throw ConfigError("layer sizes must be positive");
  }
}

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
inline Mlp init_params(std::span<const int> layer_sizes, std::uint64_t seed) {
  validate_layer_sizes(layer_sizes);
  Mlp p;
  p.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  p.init_seed = seed;
  RngStream rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    // Row-major fill so the draw order matches the checkpoint layout.
    for (int i = 0; i < fan_in; ++i) {
      for (int j = 0; j < fan_out; ++j) w(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(fan_out));
  }
  return p;
}

inline Mlp init_params(std::initializer_list<int> layer_sizes, std::uint64_t seed) {
  return init_params(std::span<const int>(layer_sizes.begin(), layer_sizes.size()), seed);
}

/// tanh(x) = 1 - 2 / (exp(2x) + 1), using Eigen's vectorized exp. Saturates
/// cleanly to ±1 for large |x|.
template <class Derived>
Matrix tanh_activation(const Eigen::MatrixBase<Derived>& z) {
  return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

/// Post-activation values of every layer, kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> activations;  // [0] = inputs, [l] = tanh output of hidden layer l
};

inline Vector forward_batch(const Mlp& p, const Matrix& inputs, ForwardCache* cache = nullptr) {
  if (inputs.cols() != p.input_dim()) {
    throw ShapeError("input width " + std::to_string(inputs.cols()) + " does not match network input " +
                     std::to_string(p.input_dim()));
  }
  const std::size_t n = p.num_layers();
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(inputs);
  }
  Matrix a = inputs;
  for (std::size_t l = 0; l < n; ++l) {
    Matrix z = a * p.weights[l];
    z.rowwise() += p.biases[l].transpose();
    if (l + 1 == n) return z.col(0);
    a = tanh_activation(z);
    if (cache) cache->activations.push_back(a);
  }
  return Vector{};  // unreachable: validated nets have >= 1 layer
}

inline double forward(const Mlp& p, std::span<const double> input) {
  if (static_cast<int>(input.size()) != p.input_dim()) {
    throw ShapeError("input length " + std::to_string(input.size()) + " does not match network input " +
                     std::to_string(p.input_dim()));
  }
  Matrix x(1, p.input_dim());
  for (int j = 0; j < p.input_dim(); ++j) x(0, j) = input[j];
  return forward_batch(p, x)(0);
}

/// Reverse-mode pass given dLoss/dOutput for each row of the cached batch.
inline Gradients backward(const Mlp& p, const ForwardCache& cache, const Vector& dout) {
  const std::size_t n = p.num_layers();
  Gradients g;
  g.weights.resize(n);
  g.biases.resize(n);
  Matrix delta = dout;  // B x 1
  for (std::size_t l = n; l-- > 0;) {
    const Matrix& a_in = cache.activations[l];
    g.weights[l] = a_in.transpose() * delta;
    g.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix back = delta * p.weights[l].transpose();
    delta = (back.array() * (1.0 - a_in.array().square())).matrix();
  }
  return g;
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/// Mean squared error of the network against constant targets, with exact
/// gradients. Targets are treated as plain data.
inline LossAndGrads loss_and_grads(const Mlp& p, const Matrix& inputs, const Vector& targets) {
  if (inputs.rows() == 0) throw UsageError("loss_and_grads: empty batch");
  if (inputs.rows() != targets.size()) throw ShapeError("loss_and_grads: inputs and targets differ in length");
  ForwardCache cache;
  const Vector out = forward_batch(p, inputs, &cache);
  const Vector resid = out - targets;
  const double b = static_cast<double>(inputs.rows());
  LossAndGrads r;
  r.loss = resid.squaredNorm() / b;
  r.grads = backward(p, cache, (2.0 / b) * resid);
  return r;
}

inline void adam_step(Mlp& p, const Gradients& g, AdamState& s, double lr) {
  const std::size_t n = p.num_layers();
  if (g.weights.size() != n || s.first_moment.weights.size() != n) {
    throw ShapeError("adam_step: layer count mismatch");
  }
  for (std::size_t l = 0; l < n; ++l) {
    if (g.weights[l].rows() != p.weights[l].rows() || g.weights[l].cols() != p.weights[l].cols() ||
        g.biases[l].size() != p.biases[l].size()) {
      throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(l));
    }
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite()) {
      throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(l), static_cast<long>(l));
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = s.beta1 * m + (1.0 - s.beta1) * grad;
    v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + s.eps);
  };
  for (std::size_t l = 0; l < n; ++l) {
    update(p.weights[l], g.weights[l], s.first_moment.weights[l], s.second_moment.weights[l]);
    update(p.biases[l], g.biases[l], s.first_moment.biases[l], s.second_moment.biases[l]);
  }
}

/// target <- tau * online + (1 - tau) * target, elementwise.
///
/// Evaluated as `target + tau * (online - target)` so that equal inputs are an
/// exact fixed point; tau == 1 is an exact copy.
inline void polyak_update(Mlp& target, const Mlp& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("polyak_update: tau must lie in (0, 1]");
  if (target.layer_sizes != online.layer_sizes) throw ShapeError("polyak_update: shape mismatch");
  if (tau == 1.0) {
    target.weights = online.weights;
    target.biases = online.biases;
    return;
  }
  for (std::size_t l = 0; l < target.num_layers(); ++l) {
    target.weights[l] += tau * (online.weights[l] - target.weights[l]);
    target.biases[l] += tau * (online.biases[l] - target.biases[l]);
  }
}

inline bool all_finite(const Mlp& p) {
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    if (!p.weights[l].allFinite() || !p.biases[l].allFinite()) return false;
  }
  return true;
}

}  // namespace pcbf::nn
