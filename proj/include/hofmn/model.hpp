#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hofmn/common.hpp"

namespace hofmn {

/// Affine layers with ReLU between them; the last layer is linear and its
/// width is the class count.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;

  std::size_t class_count() const { return widths.empty() ? 0 : widths.back(); }
  bool operator==(const Architecture&) const = default;
};

/// A scalar function of the logits together with its gradient w.r.t. them.
struct HeadEval {
  double value = 0.0;
  Vector grad;
};

template <typename F>
concept ScalarHead = requires(F f, const Vector& logits) {
  { f(logits) } -> std::convertible_to<HeadEval>;
};

class Model {
 public:
  Model() = default;

  Model(Architecture arch, std::vector<Matrix> weights, std::vector<Vector> biases)
      : arch_(std::move(arch)), weights_(std::move(weights)), biases_(std::move(biases)) {
    validate();
  }

  static Model linear(Matrix w, Vector b) {
    Architecture arch{static_cast<std::size_t>(w.cols()),
                      {static_cast<std::size_t>(w.rows())}};
    return Model(std::move(arch), {std::move(w)}, {std::move(b)});
  }

  /// He-normal weights, zero biases.
  static Model random(const Architecture& arch, std::uint64_t seed) {
    require(!arch.widths.empty(), "architecture needs at least one layer");
    std::mt19937_64 rng(seed);
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    std::size_t fan_in = arch.input_dim;
    for (std::size_t width : arch.widths) {
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      Matrix w(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(fan_in));
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = normal(rng);
      weights.push_back(std::move(w));
      biases.push_back(Vector::Zero(static_cast<Eigen::Index>(width)));
      fan_in = width;
    }
    return Model(arch, std::move(weights), std::move(biases));
  }

  const Architecture& architecture() const { return arch_; }
  std::size_t input_dim() const { return arch_.input_dim; }
  std::size_t class_count() const { return arch_.class_count(); }
  std::size_t layer_count() const { return weights_.size(); }

  const std::vector<Matrix>& weights() const { return weights_; }
  const std::vector<Vector>& biases() const { return biases_; }
  std::vector<Matrix>& mutable_weights() { return weights_; }
  std::vector<Vector>& mutable_biases() { return biases_; }

  std::string seed_provenance;

  /// Layer inputs recorded during a forward pass; inputs[0] is x and
  /// inputs[l] is the post-ReLU activation feeding layer l.
  struct Tape {
    std::vector<Vector> inputs;
    Vector logits;
  };

  Tape forward_tape(const Vector& x) const {
    check_input(x);
    Tape tape;
    tape.inputs.reserve(weights_.size());
    Vector a = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      tape.inputs.push_back(a);
      Vector z = weights_[l] * a + biases_[l];
      if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
      a = std::move(z);
    }
    tape.logits = std::move(a);
    return tape;
  }

  Vector forward(const Vector& x) const { return forward_tape(x).logits; }

  /// Reverse pass from d(head)/d(logits) to d(head)/dx. ReLU'(0) = 0.
  Vector backprop_input(const Tape& tape, const Vector& dlogits) const {
    Vector upstream = dlogits;
    for (std::size_t l = weights_.size(); l-- > 0;) {
      upstream = weights_[l].transpose() * upstream;
      if (l > 0) {
        const Vector& act = tape.inputs[l];
        for (Eigen::Index i = 0; i < upstream.size(); ++i)
          if (act[i] <= 0.0) upstream[i] = 0.0;
      }
    }
    return upstream;
  }

  /// Accumulates parameter gradients of the head into the given buffers.
  void backprop_params(const Tape& tape, const Vector& dlogits, std::vector<Matrix>& dw,
                       std::vector<Vector>& db) const {
    Vector upstream = dlogits;
    for (std::size_t l = weights_.size(); l-- > 0;) {
      dw[l].noalias() += upstream * tape.inputs[l].transpose();
      db[l] += upstream;
      if (l == 0) break;
      upstream = weights_[l].transpose() * upstream;
      const Vector& act = tape.inputs[l];
      for (Eigen::Index i = 0; i < upstream.size(); ++i)
        if (act[i] <= 0.0) upstream[i] = 0.0;
    }
  }

  bool operator==(const Model& other) const {
    if (!(arch_ == other.arch_)) return false;
    for (std::size_t l = 0; l < weights_.size(); ++l)
      if (weights_[l] != other.weights_[l] || biases_[l] != other.biases_[l]) return false;
    return true;
  }

 private:
  void check_input(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != arch_.input_dim)
      throw rejected_input("input has dimension " + std::to_string(x.size()) +
                           ", model expects " + std::to_string(arch_.input_dim));
  }

  void validate() const {
    require(!arch_.widths.empty(), "architecture needs at least one layer");
    require(weights_.size() == arch_.widths.size() && biases_.size() == arch_.widths.size(),
            "parameter count does not match the architecture");
    std::size_t fan_in = arch_.input_dim;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const auto rows = static_cast<std::size_t>(weights_[l].rows());
      const auto cols = static_cast<std::size_t>(weights_[l].cols());
      require(rows == arch_.widths[l] && cols == fan_in,
              "layer " + std::to_string(l) + " weight shape does not chain");
      require(static_cast<std::size_t>(biases_[l].size()) == rows,
              "layer " + std::to_string(l) + " bias has wrong length");
      require(weights_[l].allFinite() && biases_[l].allFinite(), "non-finite parameter");
      fan_in = rows;
    }
  }

  Architecture arch_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

inline std::size_t predict(const Vector& logits) { return argmax_lowest(logits); }

/// Exact reverse-mode gradient of head(forward(x)) with respect to x.
template <ScalarHead Head>
Vector input_gradient(const Model& model, const Vector& x, Head&& head) {
  const auto tape = model.forward_tape(x);
  const HeadEval eval = head(tape.logits);
  return model.backprop_input(tape, eval.grad);
}

/// Central differences, one coordinate at a time. No clipping to [0,1].
template <ScalarHead Head>
Vector finite_diff_gradient(const Model& model, const Vector& x, Head&& head, double step) {
  if (!(step > 0.0)) throw rejected_input("finite-difference step must be positive");
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = head(model.forward(probe)).value;
    probe[i] = x[i] - step;
    const double down = head(model.forward(probe)).value;
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace hofmn
