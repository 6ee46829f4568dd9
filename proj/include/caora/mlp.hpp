// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "caora/error.hpp"

namespace caora {

enum class Activation : int { Identity = 0, Tanh = 1, Relu = 2 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "?";
}

/// Fully-connected network with all parameters in one flat vector.
///
/// Layer l owns a weight block W_l (out x in, column-major) followed by its bias.
/// Inputs are batched column-wise: a batch of B samples is an (in x B) matrix.
/// `forward` optionally records a `Tape`, which `backward` consumes to produce
/// exact parameter and input gradients.
template <typename Scalar>
class BasicMlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  /// Activations recorded during a forward pass.
  struct Tape {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    std::vector<Matrix> post;    // output of each layer
    bool empty() const { return inputs.empty(); }
    Eigen::Index batch() const { return inputs.empty() ? 0 : inputs.front().cols(); }
  };

  BasicMlp() = default;

  BasicMlp(std::vector<int> dims, std::vector<Activation> activations)
      : dims_(std::move(dims)), acts_(std::move(activations)) {
    detail::require(dims_.size() >= 2, "an MLP needs at least an input and an output width");
    detail::require(acts_.size() == dims_.size() - 1, "one activation per layer is required");
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      detail::require(dims_[l] > 0 && dims_[l + 1] > 0, "layer widths must be positive");
      w_offset_.push_back(offset);
      offset += Eigen::Index(dims_[l + 1]) * dims_[l];
      b_offset_.push_back(offset);
      offset += dims_[l + 1];
    }
    params_ = Vector::Zero(offset);
  }

  /// Hidden layers share one activation; the output layer is linear.
  static BasicMlp make(int input, std::vector<int> hidden, int output, Activation hidden_act) {
    std::vector<int> dims{input};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output);
    std::vector<Activation> acts(dims.size() - 1, hidden_act);
    acts.back() = Activation::Identity;
    return BasicMlp(std::move(dims), std::move(acts));
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  template <typename Gen>
  void init_uniform(Gen& gen) {
    for (std::size_t l = 0; l < layers(); ++l) {
      const Scalar bound = Scalar(1) / std::sqrt(Scalar(dims_[l]));
      std::uniform_real_distribution<Scalar> dist(-bound, bound);
      auto w = weight(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(gen);
      auto b = bias(l);
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = dist(gen);
    }
  }

  /// Rescales the last layer, used to start policies near zero output.
  void scale_output_layer(Scalar factor) {
    weight(layers() - 1) *= factor;
    bias(layers() - 1) *= factor;
  }

  std::size_t layers() const { return acts_.size(); }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<Activation>& activations() const { return acts_; }
  Eigen::Index num_params() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  MatrixMap weight(std::size_t l) {
    return MatrixMap(params_.data() + w_offset_[l], dims_[l + 1], dims_[l]);
  }
  ConstMatrixMap weight(std::size_t l) const {
    return ConstMatrixMap(params_.data() + w_offset_[l], dims_[l + 1], dims_[l]);
  }
  VectorMap bias(std::size_t l) { return VectorMap(params_.data() + b_offset_[l], dims_[l + 1]); }
  ConstVectorMap bias(std::size_t l) const {
    return ConstVectorMap(params_.data() + b_offset_[l], dims_[l + 1]);
  }

  Matrix forward(const Matrix& input, Tape* tape = nullptr) const {
    if (input.rows() != input_dim())
      throw InvalidArgument(fmt::format("MLP input has {} rows, expected {}", input.rows(), input_dim()));
    if (tape) {
      tape->inputs.clear();
      tape->pre.clear();
      tape->post.clear();
    }
    Matrix x = input;
    for (std::size_t l = 0; l < layers(); ++l) {
      Matrix z = weight(l) * x;
      z.colwise() += bias(l);
      Matrix a = activate(acts_[l], z);
      if (tape) {
        tape->inputs.push_back(std::move(x));
        tape->pre.push_back(z);
        tape->post.push_back(a);
      }
      x = std::move(a);
    }
    return x;
  }

  Vector forward(const Vector& input) const {
    Matrix in = input;
    return forward(in).col(0);
  }

  /// Reverse pass for the forward recorded in `tape`.
  ///
  /// `upstream` is dLoss/dOutput (output x B). Parameter gradients are added into
  /// `grad` (resized and zeroed when empty); the gradient w.r.t. the input is returned.
  Matrix backward(const Tape& tape, const Matrix& upstream, Vector& grad) const {
    if (tape.empty() || tape.inputs.size() != layers())
      throw StateError("backward called without a matching forward tape");
    if (upstream.rows() != output_dim() || upstream.cols() != tape.batch())
      throw InvalidArgument(fmt::format("upstream gradient is {}x{}, expected {}x{}", upstream.rows(),
                                        upstream.cols(), output_dim(), tape.batch()));
    if (grad.size() == 0) grad = Vector::Zero(num_params());
    detail::require(grad.size() == num_params(), "gradient buffer has the wrong size");

    Matrix delta = upstream;
    for (std::size_t l = layers(); l-- > 0;) {
      delta = activation_backward(acts_[l], tape.pre[l], tape.post[l], delta);
      MatrixMap gw(grad.data() + w_offset_[l], dims_[l + 1], dims_[l]);
      VectorMap gb(grad.data() + b_offset_[l], dims_[l + 1]);
      gw.noalias() += delta * tape.inputs[l].transpose();
      gb += delta.rowwise().sum();
      Matrix next = weight(l).transpose() * delta;
      delta = std::move(next);
    }
    return delta;
  }

  bool all_finite() const { return params_.allFinite(); }

 private:
  static Matrix activate(Activation act, const Matrix& z) {
    switch (act) {
      case Activation::Identity: return z;
      case Activation::Tanh: return z.array().tanh().matrix();
      case Activation::Relu: return z.array().max(Scalar(0)).matrix();
    }
    return z;
  }

  static Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& post, const Matrix& g) {
    switch (act) {
      case Activation::Identity: return g;
      case Activation::Tanh: return (g.array() * (Scalar(1) - post.array().square())).matrix();
      case Activation::Relu: return (g.array() * (pre.array() > Scalar(0)).template cast<Scalar>()).matrix();
    }
    return g;
  }

  std::vector<int> dims_;
  std::vector<Activation> acts_;
  std::vector<Eigen::Index> w_offset_;
  std::vector<Eigen::Index> b_offset_;
  Vector params_;
};

using Mlp = BasicMlp<double>;

/// Adaptive-moment optimiser over a flat parameter vector, with optional
/// global gradient-norm clipping.
template <typename Scalar>
class BasicAdam {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BasicAdam() = default;
  BasicAdam(Eigen::Index n, Scalar lr, Scalar clip_norm = Scalar(0), Scalar beta1 = Scalar(0.9),
            Scalar beta2 = Scalar(0.999), Scalar eps = Scalar(1e-8))
      : lr_(lr), clip_(clip_norm), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

  /// Applies one descent step; returns the pre-clip gradient norm.
  Scalar step(Vector& params, Vector grad) {
    detail::require(params.size() == m_.size() && grad.size() == m_.size(), "Adam size mismatch");
    const Scalar norm = grad.norm();
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient");
    if (clip_ > Scalar(0) && norm > clip_) grad *= clip_ / norm;
    ++t_;
    m_ = beta1_ * m_ + (Scalar(1) - beta1_) * grad;
    v_ = beta2_ * v_ + (Scalar(1) - beta2_) * grad.cwiseProduct(grad);
    const Scalar c1 = Scalar(1) - std::pow(beta1_, Scalar(t_));
    const Scalar c2 = Scalar(1) - std::pow(beta2_, Scalar(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    return norm;
  }

  Scalar learning_rate() const { return lr_; }
  long long steps() const { return t_; }

 private:
  Scalar lr_ = Scalar(3e-4);
  Scalar clip_ = Scalar(0);
  Scalar beta1_ = Scalar(0.9);
  Scalar beta2_ = Scalar(0.999);
  Scalar eps_ = Scalar(1e-8);
  Vector m_;
  Vector v_;
  long long t_ = 0;
};

using Adam = BasicAdam<double>;

/// target <- target + tau * (online - target)
template <typename Scalar>
void soft_update(BasicMlp<Scalar>& target, const BasicMlp<Scalar>& online, Scalar tau) {
  detail::require(target.num_params() == online.num_params(), "soft update between mismatched nets");
  target.params() += tau * (online.params() - target.params());
}

}  // namespace caora
