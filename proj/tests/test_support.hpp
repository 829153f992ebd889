#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hofmn/dataset.hpp"
#include "hofmn/losses.hpp"
#include "hofmn/model.hpp"

namespace hofmn::testing {

inline Vector uniform_vector(std::mt19937_64& rng, Eigen::Index n, double lo = 0.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Matrix normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

/// Random MLP with non-zero biases, so ReLU kinks are not aligned with 0.
inline Model random_mlp(std::mt19937_64& rng, std::size_t d, std::size_t hidden,
                        std::size_t classes) {
  Architecture arch{d, {hidden, hidden, classes}};
  Model m = Model::random(arch, rng());
  for (auto& b : m.mutable_biases()) b = uniform_vector(rng, b.size(), -0.3, 0.3);
  return m;
}

/// Smallest |pre-activation| over all hidden units at x.
inline double kink_distance(const Model& model, const Vector& x) {
  double closest = std::numeric_limits<double>::infinity();
  Vector a = x;
  for (std::size_t l = 0; l + 1 < model.layer_count(); ++l) {
    const Vector z = model.weights()[l] * a + model.biases()[l];
    closest = std::min(closest, z.cwiseAbs().minCoeff());
    a = z.cwiseMax(0.0);
  }
  return closest;
}

/// Distance of the top-3 logits from a tie, which is where LL/DLR switch
/// branches and stop being differentiable.
inline double branch_gap(const Vector& logits, std::size_t label) {
  const auto order = sorted_logit_indices(logits);
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < order.size() && i < 3; ++i)
    gap = std::min(gap, logits[static_cast<Eigen::Index>(order[i])] -
                            logits[static_cast<Eigen::Index>(order[i + 1])]);
  (void)label;
  return gap;
}

inline double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Random linear classifier; labels are the model's own predictions so every
/// sample starts correctly classified.
struct LinearTestbed {
  Model model;
  Dataset data;
};

inline LinearTestbed make_linear_testbed(std::size_t n, std::size_t d, std::size_t classes,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix w = normal_matrix(rng, static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(d));
  Vector b = uniform_vector(rng, static_cast<Eigen::Index>(classes), -0.5, 0.5);
  LinearTestbed bed{Model::linear(w, b), {}};
  while (bed.data.size() < n) {
    Vector x = uniform_vector(rng, static_cast<Eigen::Index>(d), 0.25, 0.75);
    bed.data.samples.push_back({x, predict(bed.model.forward(x))});
  }
  return bed;
}

/// Closed-form minimum l-inf perturbation of a linear classifier, ignoring
/// the box: min over j != y of (f_y - f_j) / ||w_y - w_j||_1, and the
/// class attaining it.
inline std::pair<double, std::size_t> linear_min_linf(const Model& model, const Sample& s) {
  const Matrix& w = model.weights()[0];
  const Vector f = model.forward(s.x);
  const auto y = static_cast<Eigen::Index>(s.label);
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    if (j == y) continue;
    const double e = std::max(0.0, f[y] - f[j]) / (w.row(y) - w.row(j)).lpNorm<1>();
    if (e < best) {
      best = e;
      arg = static_cast<std::size_t>(j);
    }
  }
  return {best, arg};
}

}  // namespace hofmn::testing
