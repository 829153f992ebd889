#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "hofmn/common.hpp"

namespace hofmn {

/// Labels are zero-based class indices.
struct Sample {
  Vector x;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t dim() const { return samples.empty() ? 0 : static_cast<std::size_t>(samples[0].x.size()); }

  /// Throws unless every sample has the same dimension, lies in [0,1]^d and
  /// has a label below class_count (when given).
  void validate(std::size_t class_count = 0) const {
    require(!samples.empty(), "dataset is empty");
    const auto d = samples[0].x.size();
    for (const auto& s : samples) {
      require(s.x.size() == d, "dataset dimensionality is not uniform");
      require(s.x.allFinite() && s.x.minCoeff() >= 0.0 && s.x.maxCoeff() <= 1.0,
              "sample outside [0,1]^d");
      if (class_count > 0) require(s.label < class_count, "label out of range");
    }
  }

  /// Contiguous slice [begin, begin + count), clamped to the dataset size.
  Dataset slice(std::size_t begin, std::size_t count) const {
    Dataset out;
    for (std::size_t i = begin; i < samples.size() && i < begin + count; ++i)
      out.samples.push_back(samples[i]);
    return out;
  }
};

/// Two well separated Gaussian blobs in the unit square.
inline Dataset make_blobs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  Dataset data;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double center = label == 0 ? 0.3 : 0.7;
    Vector x(2);
    x << std::clamp(center + noise(rng), 0.0, 1.0), std::clamp(center + noise(rng), 0.0, 1.0);
    data.samples.push_back({x, label});
  }
  return data;
}

/// Concentric noisy rings around the centre of the unit square, one per class.
inline Dataset make_rings(std::size_t n, std::size_t classes, std::uint64_t seed) {
  require(classes >= 2, "rings need at least two classes");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> radial(0.0, 0.025);
  const double spacing = 0.36 / static_cast<double>(classes - 1);
  Dataset data;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    const double r = 0.06 + spacing * static_cast<double>(label) + radial(rng);
    const double t = angle(rng);
    Vector x(2);
    x << std::clamp(0.5 + r * std::cos(t), 0.0, 1.0), std::clamp(0.5 + r * std::sin(t), 0.0, 1.0);
    data.samples.push_back({x, label});
  }
  return data;
}

/// Two classes in d >= 2 dimensions. Coordinate 0 separates the classes by a
/// wide margin; the remaining d - 1 coordinates are only weakly correlated
/// with the label, so a standard model that leans on them is easy to flip
/// with a small l-inf perturbation.
inline Dataset make_weak_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  require(d >= 2, "weak-feature data needs at least two dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> strong(0.0, 0.03);
  std::normal_distribution<double> weak(0.0, 0.1);
  Dataset data;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double sign = label == 0 ? -1.0 : 1.0;
    Vector x(static_cast<Eigen::Index>(d));
    x[0] = std::clamp(0.5 + 0.2 * sign + strong(rng), 0.0, 1.0);
    for (Eigen::Index j = 1; j < x.size(); ++j)
      x[j] = std::clamp(0.5 + 0.06 * sign + weak(rng), 0.0, 1.0);
    data.samples.push_back({x, label});
  }
  return data;
}

}  // namespace hofmn
