#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "hofmn/common.hpp"

namespace hofmn {

/// Kernel hyperparameters in standardized target units.
struct GpHyperparameters {
  Vector lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 1e-4;
};

/// Box bounds for the marginal-likelihood search (standardized units).
struct GpBounds {
  double lengthscale_low = 0.01;
  double lengthscale_high = 10.0;
  double signal_low = 0.05;
  double signal_high = 20.0;
  double noise_low = 1e-8;
  double noise_high = 1.0;
};

struct GpFitOptions {
  int restarts = 5;
  int max_iterations = 400;
  GpBounds bounds;
};

/// Matern-5/2 kernel with one lengthscale per input dimension.
inline double matern52(const Vector& a, const Vector& b, const GpHyperparameters& h) {
  const double r = ((a - b).array() / h.lengthscales.array()).matrix().norm();
  const double s = std::sqrt(5.0) * r;
  return h.signal_variance * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

/// Gaussian-process regression on the unit cube. Targets are standardized
/// internally; every public quantity is in the original target units.
class GpModel {
 public:
  struct Prediction {
    double mean = 0.0;
    double std = 0.0;
  };

  /// Fixed hyperparameters (standardized units). inputs holds one point per
  /// row.
  GpModel(Matrix inputs, Vector targets, GpHyperparameters hypers)
      : inputs_(std::move(inputs)), hypers_(std::move(hypers)) {
    require(inputs_.rows() >= 1 && inputs_.rows() == targets.size(), "GP needs one target per input");
    require(targets.allFinite(), "GP targets must be finite");
    require(hypers_.lengthscales.size() == inputs_.cols(), "one lengthscale per input dimension");
    standardize(targets);
    require(factorize(), "kernel matrix is not positive definite even with maximal jitter");
  }

  /// Maximum-likelihood fit, multi-start Nelder-Mead over log hyperparameters.
  /// Deterministic given seed.
  static GpModel fit(const Matrix& inputs, const Vector& targets, std::uint64_t seed,
                     const GpFitOptions& options = {}) {
    if (inputs.rows() < 2) throw not_enough_data("GP fit needs at least two finite observations");
    require(inputs.rows() == targets.size(), "GP needs one target per input");
    const auto dim = static_cast<std::size_t>(inputs.cols());
    Objective objective{inputs, standardized(targets), options.bounds, dim};

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> start(-2.0, 2.0);
    std::vector<double> best_z;
    double best_value = kInf;
    for (int r = 0; r < std::max(1, options.restarts); ++r) {
      std::vector<double> z(dim + 2, 0.0);
      if (r > 0)
        for (auto& v : z) v = start(rng);
      double value = 0.0;
      minimize(objective, z, options.max_iterations, value);
      if (value < best_value) {
        best_value = value;
        best_z = z;
      }
    }
    if (best_z.empty()) throw not_enough_data("GP marginal likelihood could not be evaluated");
    return GpModel(inputs, targets, objective.hypers(best_z.data()));
  }

  /// Latent posterior at a unit-cube point.
  Prediction posterior(const Vector& x) const {
    require(x.size() == inputs_.cols(), "query has the wrong dimension");
    const Vector k = cross(x);
    const double mean = k.dot(alpha_);
    const Vector v = chol_.matrixL().solve(k);
    const double var = std::max(0.0, hypers_.signal_variance - v.squaredNorm());
    return {y_mean_ + y_scale_ * mean, y_scale_ * std::sqrt(var)};
  }

  /// Joint latent posterior (mean, covariance) at the training inputs.
  std::pair<Vector, Matrix> training_posterior() const {
    const Matrix kf = gram();
    const Vector mean = kf * alpha_;
    const Matrix w = chol_.matrixL().solve(kf);
    Matrix cov = kf - w.transpose() * w;
    cov = 0.5 * (cov + cov.transpose());
    return {(y_mean_ + y_scale_ * mean.array()).matrix(), y_scale_ * y_scale_ * cov};
  }

  const GpHyperparameters& hyperparameters() const { return hypers_; }
  const Matrix& inputs() const { return inputs_; }
  double signal_std() const { return y_scale_ * std::sqrt(hypers_.signal_variance); }
  double noise_variance() const { return y_scale_ * y_scale_ * hypers_.noise_variance; }
  double noise_std() const { return std::sqrt(noise_variance()); }
  double jitter() const { return jitter_; }

  /// Negative log marginal likelihood of standardized targets; kInf when the
  /// kernel matrix cannot be factorized.
  static double negative_log_likelihood(const Matrix& inputs, const Vector& y,
                                        const GpHyperparameters& h) {
    Eigen::LLT<Matrix> chol;
    if (factorize_into(inputs, h, chol) < 0.0) return kInf;
    const Vector alpha = chol.solve(y);
    const double logdet = chol.matrixLLT().diagonal().array().log().sum();
    return 0.5 * y.dot(alpha) + logdet + 0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
  }

 private:
  struct Objective {
    Matrix inputs;
    Vector y;
    GpBounds bounds;
    std::size_t dim;

    static double squash(double z, double lo, double hi) {
      const double t = 1.0 / (1.0 + std::exp(-z));
      return std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
    }

    GpHyperparameters hypers(const double* z) const {
      GpHyperparameters h;
      h.lengthscales.resize(static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < dim; ++i)
        h.lengthscales[static_cast<Eigen::Index>(i)] =
            squash(z[i], bounds.lengthscale_low, bounds.lengthscale_high);
      h.signal_variance = squash(z[dim], bounds.signal_low, bounds.signal_high);
      h.noise_variance = squash(z[dim + 1], bounds.noise_low, bounds.noise_high);
      return h;
    }

    double operator()(const double* z) const {
      const double v = negative_log_likelihood(inputs, y, hypers(z));
      return std::isfinite(v) ? v : 1e300;
    }
  };

  static double gsl_objective(const gsl_vector* v, void* params) {
    return (*static_cast<const Objective*>(params))(v->data);
  }

  static void minimize(const Objective& objective, std::vector<double>& z, int max_iterations,
                       double& value) {
    const std::size_t n = z.size();
    gsl_set_error_handler_off();
    gsl_multimin_function fn{&gsl_objective, n, const_cast<Objective*>(&objective)};
    gsl_vector* x = gsl_vector_alloc(n);
    gsl_vector* step = gsl_vector_alloc(n);
    for (std::size_t i = 0; i < n; ++i) {
      gsl_vector_set(x, i, z[i]);
      gsl_vector_set(step, i, 1.0);
    }
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
    gsl_multimin_fminimizer_set(s, &fn, x, step);
    for (int it = 0; it < max_iterations; ++it) {
      if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-6) == GSL_SUCCESS) break;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = gsl_vector_get(s->x, i);
    value = s->fval;
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(step);
    gsl_vector_free(x);
  }

  static Vector standardized(const Vector& t) {
    const double mean = t.mean();
    const double sd = std::sqrt((t.array() - mean).square().mean());
    const double scale = sd > 0.0 ? sd : 1.0;
    return ((t.array() - mean) / scale).matrix();
  }

  void standardize(const Vector& t) {
    y_mean_ = t.mean();
    const double sd = std::sqrt((t.array() - y_mean_).square().mean());
    y_scale_ = sd > 0.0 ? sd : 1.0;
    y_ = ((t.array() - y_mean_) / y_scale_).matrix();
  }

  static Matrix gram_of(const Matrix& inputs, const GpHyperparameters& h) {
    const Eigen::Index n = inputs.rows();
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j)
        k(i, j) = k(j, i) = matern52(inputs.row(i).transpose(), inputs.row(j).transpose(), h);
    return k;
  }

  /// Factorizes K + noise I, escalating jitter from 1e-10 by factors of 10 up
  /// to 1e-4. Returns the jitter used (0 if none was needed), or -1.
  static double factorize_into(const Matrix& inputs, const GpHyperparameters& h,
                               Eigen::LLT<Matrix>& chol) {
    const Matrix k = gram_of(inputs, h);
    const auto n = inputs.rows();
    double jitter = 0.0;
    while (true) {
      chol.compute(k + (h.noise_variance + jitter) * Matrix::Identity(n, n));
      if (chol.info() == Eigen::Success) return jitter;
      jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
      if (jitter > 1e-4 * (1.0 + 1e-9)) return -1.0;
    }
  }

  bool factorize() {
    jitter_ = factorize_into(inputs_, hypers_, chol_);
    if (jitter_ < 0.0) return false;
    alpha_ = chol_.solve(y_);
    return true;
  }

  Matrix gram() const { return gram_of(inputs_, hypers_); }

  Vector cross(const Vector& x) const {
    Vector k(inputs_.rows());
    for (Eigen::Index i = 0; i < inputs_.rows(); ++i)
      k[i] = matern52(inputs_.row(i).transpose(), x, hypers_);
    return k;
  }

  Matrix inputs_;
  Vector y_;
  GpHyperparameters hypers_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double jitter_ = 0.0;
  Eigen::LLT<Matrix> chol_;
  Vector alpha_;
};

}  // namespace hofmn
