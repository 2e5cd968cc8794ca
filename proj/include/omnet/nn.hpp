#pragma once

// Feed-forward network engine over a flat parameter vector: MLP with optional
// layer normalization, exact reverse-mode gradients and Adam.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "omnet/bitvector.hpp"
#include "omnet/rng.hpp"

namespace omnet {

/// Batches are column-major: one column per sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation { relu, tanh, identity };

struct LayerSpec {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Activation activation = Activation::identity;
  bool layer_norm = false;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class ParamKind { weight, bias, ln_gain, ln_bias };

struct ParamBlock {
  std::size_t layer = 0;
  ParamKind kind = ParamKind::weight;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// Variance below which a layer-norm input is treated as constant.
inline constexpr double kLayerNormVarianceFloor = 1e-8;

/// Layer specs plus the derived flat layout. Weights are stored column-major
/// (output_dim x input_dim), followed by bias, then layer-norm gain and bias.
class Architecture {
 public:
  struct Offsets {
    std::size_t weight = 0, bias = 0, ln_gain = 0, ln_bias = 0;
  };

  Architecture() = default;

  explicit Architecture(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw std::invalid_argument("Architecture: no layers");
    std::size_t offset = 0;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      const auto& s = specs_[l];
      if (s.input_dim == 0 || s.output_dim == 0)
        throw std::invalid_argument("Architecture: layer " + std::to_string(l) + " has a zero dimension");
      if (l > 0 && specs_[l - 1].output_dim != s.input_dim)
        throw std::invalid_argument("Architecture: layer " + std::to_string(l) + " input_dim " +
                                    std::to_string(s.input_dim) + " does not match previous output_dim " +
                                    std::to_string(specs_[l - 1].output_dim));
      Offsets o;
      auto add = [&](ParamKind kind, std::size_t len) {
        layout_.push_back({l, kind, offset, len});
        const auto at = offset;
        offset += len;
        return at;
      };
      o.weight = add(ParamKind::weight, s.input_dim * s.output_dim);
      o.bias = add(ParamKind::bias, s.output_dim);
      if (s.layer_norm) {
        o.ln_gain = add(ParamKind::ln_gain, s.output_dim);
        o.ln_bias = add(ParamKind::ln_bias, s.output_dim);
      }
      offsets_.push_back(o);
    }
    size_ = offset;
  }

  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  const std::vector<ParamBlock>& layout() const noexcept { return layout_; }
  const Offsets& offsets(std::size_t layer) const { return offsets_.at(layer); }
  std::size_t layers() const noexcept { return specs_.size(); }
  std::size_t size() const noexcept { return size_; }
  std::size_t input_dim() const { return specs_.front().input_dim; }
  std::size_t output_dim() const { return specs_.back().output_dim; }

  friend bool operator==(const Architecture& a, const Architecture& b) { return a.specs_ == b.specs_; }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<ParamBlock> layout_;
  std::vector<Offsets> offsets_;
  std::size_t size_ = 0;
};

/// Flat dense parameter vector theta plus its layout.
struct MlpParams {
  Architecture arch;
  std::vector<double> theta;

  std::size_t size() const noexcept { return theta.size(); }
  const std::vector<ParamBlock>& layout() const noexcept { return arch.layout(); }
};

/// Builds specs for a hidden-layer stack ending in an identity head.
inline std::vector<LayerSpec> mlp_specs(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                        std::size_t output_dim, Activation hidden_activation,
                                        bool layer_norm) {
  std::vector<LayerSpec> specs;
  std::size_t in = input_dim;
  for (auto h : hidden) {
    specs.push_back({in, h, hidden_activation, layer_norm});
    in = h;
  }
  specs.push_back({in, output_dim, Activation::identity, false});
  return specs;
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and LN bias zero; LN gain one.
inline MlpParams init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  MlpParams p{Architecture(specs), {}};
  p.theta.assign(p.arch.size(), 0.0);
  Rng rng(derive_seed(seed, 0x1417));
  for (const auto& block : p.arch.layout()) {
    const auto& spec = p.arch.specs()[block.layer];
    double* out = p.theta.data() + block.offset;
    switch (block.kind) {
      case ParamKind::weight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
        for (std::size_t k = 0; k < block.length; ++k) out[k] = rng.uniform(-bound, bound);
        break;
      }
      case ParamKind::ln_gain:
        for (std::size_t k = 0; k < block.length; ++k) out[k] = 1.0;
        break;
      case ParamKind::bias:
      case ParamKind::ln_bias:
        break;
    }
  }
  return p;
}

/// Zeroes the final layer's weight and bias (a constant-zero head).
inline void zero_output_layer(MlpParams& p) {
  const auto last = p.arch.layers() - 1;
  for (const auto& block : p.arch.layout())
    if (block.layer == last)
      std::fill_n(p.theta.begin() + static_cast<std::ptrdiff_t>(block.offset), block.length, 0.0);
}

struct LayerTrace {
  Matrix pre;          // W a + b
  Matrix normalized;   // (pre - mean) * inv_std, empty without layer norm
  RowVector inv_std;   // per-sample, 0 where the variance is below the floor
  Matrix activation_in;
  Matrix out;
};

/// Everything backward() needs; holds the input and every layer's intermediates.
struct ForwardTrace {
  std::size_t param_count = 0;
  Matrix input;
  std::vector<LayerTrace> layers;

  const Matrix& output() const { return layers.back().out; }
};

namespace detail {

// Copies into aligned storage; Eigen kernels round differently depending on operand alignment.
inline Matrix weight_block(const Architecture& arch, std::span<const double> theta, std::size_t l) {
  const auto& s = arch.specs()[l];
  return Eigen::Map<const Matrix>(theta.data() + arch.offsets(l).weight, static_cast<Eigen::Index>(s.output_dim),
                                  static_cast<Eigen::Index>(s.input_dim));
}

inline Vector vec_block(std::span<const double> theta, std::size_t offset, std::size_t len) {
  return Eigen::Map<const Vector>(theta.data() + offset, static_cast<Eigen::Index>(len));
}

template <typename Derived>
void store(std::vector<double>& into, std::size_t offset, const Eigen::MatrixBase<Derived>& block) {
  const typename Derived::PlainObject value = block;
  std::copy(value.data(), value.data() + value.size(), into.begin() + static_cast<std::ptrdiff_t>(offset));
}

inline void apply_activation(Activation act, const Matrix& in, Matrix& out) {
  switch (act) {
    case Activation::relu:
      out = in.cwiseMax(0.0);
      break;
    case Activation::tanh:
      out = in.array().tanh().matrix();
      break;
    case Activation::identity:
      out = in;
      break;
  }
}

}  // namespace detail

/// Batched forward pass on an explicit parameter vector.
inline ForwardTrace forward(const Architecture& arch, std::span<const double> theta, const Matrix& x) {
  if (theta.size() != arch.size()) throw std::invalid_argument("forward: parameter vector length mismatch");
  if (static_cast<std::size_t>(x.rows()) != arch.input_dim())
    throw std::invalid_argument("forward: input length " + std::to_string(x.rows()) + " but network expects " +
                                std::to_string(arch.input_dim()));
  ForwardTrace trace;
  trace.param_count = theta.size();
  trace.input = x;
  trace.layers.resize(arch.layers());
  const Matrix* a = &trace.input;
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    const auto& spec = arch.specs()[l];
    const auto& off = arch.offsets(l);
    auto& lt = trace.layers[l];
    lt.pre.noalias() = detail::weight_block(arch, theta, l) * *a;
    lt.pre.colwise() += detail::vec_block(theta, off.bias, spec.output_dim);
    if (spec.layer_norm) {
      const RowVector mean = lt.pre.colwise().mean();
      lt.normalized = lt.pre.rowwise() - mean;
      const RowVector var = lt.normalized.array().square().colwise().mean().matrix();
      lt.inv_std.resize(var.size());
      for (Eigen::Index c = 0; c < var.size(); ++c)
        lt.inv_std[c] = var[c] < kLayerNormVarianceFloor ? 0.0 : 1.0 / std::sqrt(var[c]);
      lt.normalized.array().rowwise() *= lt.inv_std.array();
      const auto gain = detail::vec_block(theta, off.ln_gain, spec.output_dim);
      const auto beta = detail::vec_block(theta, off.ln_bias, spec.output_dim);
      lt.activation_in = (lt.normalized.array().colwise() * gain.array()).matrix();
      lt.activation_in.colwise() += beta;
    } else {
      lt.activation_in = lt.pre;
    }
    detail::apply_activation(spec.activation, lt.activation_in, lt.out);
    a = &lt.out;
  }
  return trace;
}

inline ForwardTrace forward(const MlpParams& params, const Matrix& x) {
  return forward(params.arch, params.theta, x);
}

/// Single-sample convenience overload.
inline std::pair<std::vector<double>, ForwardTrace> forward(const MlpParams& params, std::span<const double> x) {
  const Matrix in = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  auto trace = forward(params, in);
  const auto& out = trace.output();
  return {std::vector<double>(out.data(), out.data() + out.size()), std::move(trace)};
}

struct Gradients {
  std::vector<double> params;  // empty when not requested
  Matrix input;                // d(output_grad . output)/d(input), one column per sample
};

/// Reverse pass for sum over the batch of output_grad . output.
inline Gradients backward(const Architecture& arch, std::span<const double> theta, const ForwardTrace& trace,
                          const Matrix& output_grad, bool want_params = true, bool want_input = false) {
  if (trace.param_count != theta.size() || theta.size() != arch.size() || trace.layers.size() != arch.layers())
    throw std::invalid_argument("backward: trace does not belong to these parameters");
  if (output_grad.rows() != trace.output().rows() || output_grad.cols() != trace.output().cols())
    throw std::invalid_argument("backward: output gradient shape mismatch");
  Gradients g;
  if (want_params) g.params.assign(theta.size(), 0.0);
  Matrix delta = output_grad;
  for (std::size_t l = arch.layers(); l-- > 0;) {
    const auto& spec = arch.specs()[l];
    const auto& off = arch.offsets(l);
    const auto& lt = trace.layers[l];
    switch (spec.activation) {
      case Activation::relu:
        delta = (lt.activation_in.array() > 0.0).select(delta, 0.0);
        break;
      case Activation::tanh:
        delta.array() *= 1.0 - lt.out.array().square();
        break;
      case Activation::identity:
        break;
    }
    if (spec.layer_norm) {
      const auto gain = detail::vec_block(theta, off.ln_gain, spec.output_dim);
      if (want_params) {
        detail::store(g.params, off.ln_gain, (delta.array() * lt.normalized.array()).rowwise().sum().matrix());
        detail::store(g.params, off.ln_bias, delta.rowwise().sum());
      }
      Matrix dxhat = (delta.array().colwise() * gain.array()).matrix();
      const RowVector mean_d = dxhat.colwise().mean();
      const RowVector mean_dx = (dxhat.array() * lt.normalized.array()).colwise().mean().matrix();
      delta = dxhat.rowwise() - mean_d;
      delta -= (lt.normalized.array().rowwise() * mean_dx.array()).matrix();
      delta.array().rowwise() *= lt.inv_std.array();
    }
    const Matrix& a_prev = l == 0 ? trace.input : trace.layers[l - 1].out;
    if (want_params) {
      detail::store(g.params, off.weight, delta * a_prev.transpose());
      detail::store(g.params, off.bias, delta.rowwise().sum());
    }
    if (l > 0 || want_input) {
      Matrix next = detail::weight_block(arch, theta, l).transpose() * delta;
      delta = std::move(next);
    }
  }
  if (want_input) g.input = std::move(delta);
  return g;
}

inline std::vector<double> backward(const MlpParams& params, const ForwardTrace& trace, const Matrix& output_grad) {
  return backward(params.arch, params.theta, trace, output_grad).params;
}

inline std::vector<double> backward(const MlpParams& params, const ForwardTrace& trace,
                                    std::span<const double> output_grad) {
  const Matrix og = Eigen::Map<const Vector>(output_grad.data(), static_cast<Eigen::Index>(output_grad.size()));
  return backward(params, trace, og);
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  AdamConfig config;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : m(n, 0.0), v(n, 0.0), config(cfg) {}
};

/// One Adam step. Where update_mask is 0 the parameter and both moments are left
/// untouched; the step counter is shared. Returns the number of indices written.
inline std::size_t adam_step(std::span<double> theta, std::span<const double> grad, AdamState& state,
                             const BitVector* update_mask = nullptr) {
  const auto n = theta.size();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n)
    throw std::invalid_argument("adam_step: length mismatch");
  if (update_mask && update_mask->size() != n) throw std::invalid_argument("adam_step: mask length mismatch");
  const auto& c = state.config;
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  auto update = [&](std::size_t j) {
    const double g = grad[j];
    state.m[j] = c.beta1 * state.m[j] + (1.0 - c.beta1) * g;
    state.v[j] = c.beta2 * state.v[j] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m[j] / bc1;
    const double vhat = state.v[j] / bc2;
    theta[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  };
  if (!update_mask) {
    for (std::size_t j = 0; j < n; ++j) update(j);
    return n;
  }
  std::size_t touched = 0;
  const auto& words = update_mask->words();
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::uint64_t bits = words[w];
    while (bits) {
      const auto j = w * 64 + static_cast<std::size_t>(std::countr_zero(bits));
      update(j);
      ++touched;
      bits &= bits - 1;
    }
  }
  return touched;
}

inline std::size_t adam_step(MlpParams& params, std::span<const double> grad, AdamState& state,
                             const BitVector* update_mask = nullptr) {
  return adam_step(std::span<double>(params.theta), grad, state, update_mask);
}

}  // namespace omnet
