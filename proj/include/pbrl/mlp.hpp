#pragma once

// Fixed-graph reward MLP: rectifier hidden layers, tanh output in [-1, 1].
// Everything operates on column blocks (one column per step) so a whole
// minibatch of segments goes through a handful of GEMMs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "pbrl/error.hpp"
#include "pbrl/random.hpp"

namespace pbrl::rewardnet {

struct Architecture {
  std::size_t input_dim = 0;
  std::size_t hidden_layers = 2;
  std::size_t hidden_units = 64;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <typename Scalar>
struct DenseLayer {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Matrix weight;  // out x in
  Vector bias;    // out
};

// Also used as the gradient container: same shapes, same layout.
template <typename Scalar>
struct MlpParams {
  using Layer = DenseLayer<Scalar>;
  using Matrix = typename Layer::Matrix;
  using Vector = typename Layer::Vector;

  std::vector<Layer> layers;

  std::size_t input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols());
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
  MlpParams zeros_like() const {
    MlpParams z;
    for (const auto& l : layers) {
      z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()),
                          Vector::Zero(l.bias.size())});
    }
    return z;
  }
  bool same_shape(const MlpParams& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != o.layers[i].weight.rows() ||
          layers[i].weight.cols() != o.layers[i].weight.cols() ||
          layers[i].bias.size() != o.layers[i].bias.size()) {
        return false;
      }
    }
    return true;
  }
  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }
  // Flat view helpers (weights column-major, then bias, layer by layer).
  template <typename Fn>
  void for_each_coefficient(Fn&& fn) {
    for (auto& l : layers) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) fn(l.weight.data()[i]);
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) fn(l.bias.data()[i]);
    }
  }
  Vector flatten() const {
    Vector out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers) {
      out.segment(k, l.weight.size()) = l.weight.reshaped();
      k += l.weight.size();
      out.segment(k, l.bias.size()) = l.bias;
      k += l.bias.size();
    }
    return out;
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias) {
        return false;
      }
    }
    return true;
  }
};

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
MlpParams<Scalar> init_mlp(const Architecture& arch, Rng& rng) {
  if (arch.input_dim == 0 || arch.hidden_units == 0) throw ConfigError("empty reward network");
  MlpParams<Scalar> p;
  std::size_t fan_in = arch.input_dim;
  const auto make = [&](std::size_t out, std::size_t in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    typename MlpParams<Scalar>::Layer l;
    l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    l.bias.resize(static_cast<Eigen::Index>(out));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
      l.weight.data()[i] = static_cast<Scalar>(uniform_real(rng, -bound, bound));
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      l.bias[i] = static_cast<Scalar>(uniform_real(rng, -bound, bound));
    }
    return l;
  };
  for (std::size_t k = 0; k < arch.hidden_layers; ++k) {
    p.layers.push_back(make(arch.hidden_units, fan_in));
    fan_in = arch.hidden_units;
  }
  p.layers.push_back(make(1, fan_in));
  return p;
}

// Per-column rewards for an input block (input_dim x n).
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mlp_forward(const MlpParams<Scalar>& p,
                                                      const Eigen::MatrixBase<Derived>& inputs) {
  if (p.layers.empty()) throw ConfigError("reward network has no layers");
  if (static_cast<std::size_t>(inputs.rows()) != p.input_dim()) {
    throw InputError("reward network input dimension mismatch");
  }
  using Matrix = typename MlpParams<Scalar>::Matrix;
  Matrix h = inputs.template cast<Scalar>();
  for (std::size_t k = 0; k + 1 < p.layers.size(); ++k) {
    const auto& l = p.layers[k];
    h = ((l.weight * h).colwise() + l.bias).cwiseMax(Scalar(0));
  }
  const auto& out = p.layers.back();
  return ((out.weight * h).colwise() + out.bias).array().tanh().matrix();
}

// Dropout keep-masks (already scaled by 1/(1-rate)) for each hidden layer.
// Each 64-bit draw decides four units through 16-bit lanes, so the drop
// probability is rate rounded to a multiple of 2^-16.
template <typename Scalar>
std::vector<typename MlpParams<Scalar>::Matrix> dropout_masks(const MlpParams<Scalar>& p,
                                                              Eigen::Index columns, double rate,
                                                              Rng& rng) {
  std::vector<typename MlpParams<Scalar>::Matrix> masks;
  if (rate <= 0.0) return masks;
  if (rate >= 1.0) throw InputError("dropout rate must be below one");
  const Scalar keep = Scalar(1.0 / (1.0 - rate));
  const auto cut = static_cast<std::uint64_t>(std::llround(rate * 65536.0));
  for (std::size_t k = 0; k + 1 < p.layers.size(); ++k) {
    typename MlpParams<Scalar>::Matrix m(p.layers[k].weight.rows(), columns);
    Scalar* out = m.data();
    const Eigen::Index n = m.size();
    for (Eigen::Index i = 0; i < n; i += 4) {
      std::uint64_t bits = rng();
      for (Eigen::Index j = i; j < std::min<Eigen::Index>(i + 4, n); ++j, bits >>= 16) {
        out[j] = (bits & 0xffffu) < cut ? Scalar(0) : keep;
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

// Forward pass that keeps activations for a later backward pass.
template <typename Scalar>
struct MlpTape {
  using Matrix = typename MlpParams<Scalar>::Matrix;
  std::vector<Matrix> activations;  // input, then each hidden output (post mask)
  std::vector<Matrix> masks;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> output;
};

template <typename Scalar>
MlpTape<Scalar> mlp_forward_tape(const MlpParams<Scalar>& p,
                                 const typename MlpParams<Scalar>::Matrix& inputs,
                                 std::vector<typename MlpParams<Scalar>::Matrix> masks = {}) {
  if (static_cast<std::size_t>(inputs.rows()) != p.input_dim()) {
    throw InputError("reward network input dimension mismatch");
  }
  MlpTape<Scalar> tape;
  tape.masks = std::move(masks);
  tape.activations.reserve(p.layers.size());
  tape.activations.push_back(inputs);
  for (std::size_t k = 0; k + 1 < p.layers.size(); ++k) {
    const auto& l = p.layers[k];
    typename MlpTape<Scalar>::Matrix h =
        ((l.weight * tape.activations.back()).colwise() + l.bias).cwiseMax(Scalar(0));
    if (!tape.masks.empty()) h.array() *= tape.masks[k].array();
    tape.activations.push_back(std::move(h));
  }
  const auto& out = p.layers.back();
  tape.output = ((out.weight * tape.activations.back()).colwise() + out.bias).array().tanh().matrix();
  return tape;
}

// Accumulates d(loss)/d(params) given d(loss)/d(output) per column.
template <typename Scalar>
void mlp_backward(const MlpParams<Scalar>& p, const MlpTape<Scalar>& tape,
                  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& d_output, MlpParams<Scalar>& grad) {
  using Matrix = typename MlpParams<Scalar>::Matrix;
  // tanh' = 1 - y^2
  Matrix delta = (d_output.array() * (Scalar(1) - tape.output.array().square())).matrix();
  for (std::size_t k = p.layers.size(); k-- > 0;) {
    const Matrix& input = tape.activations[k];
    grad.layers[k].weight.noalias() += delta * input.transpose();
    grad.layers[k].bias += delta.rowwise().sum();
    if (k == 0) break;
    Matrix back = p.layers[k].weight.transpose() * delta;
    // Rectifier gate: the stored activation is positive iff the unit fired
    // (and survived dropout).
    const Matrix& h = tape.activations[k];
    back.array() *= (h.array() > Scalar(0)).template cast<Scalar>();
    if (!tape.masks.empty()) back.array() *= tape.masks[k - 1].array();
    delta = std::move(back);
  }
}

}  // namespace pbrl::rewardnet
