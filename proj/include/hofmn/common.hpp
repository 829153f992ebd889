#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace hofmn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Malformed arguments: wrong dimensions, out-of-range values, empty inputs.
class rejected_input : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A combination that is well formed but cannot be evaluated (e.g. DLR with
// fewer than three classes).
class unsupported_configuration : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class degenerate_denominator : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class not_enough_data : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw rejected_input(message);
}

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent sub-seed from a root seed and a label, so every
/// consumer of randomness gets its own stream from one user-facing seed.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  return mix64(root ^ mix64(fnv1a(label)));
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                    std::uint64_t index) {
  return mix64(derive_seed(root, label) + mix64(index));
}

/// Median with linear interpolation for even counts. Infinite entries sort
/// last and propagate through the interpolation.
inline double median(std::vector<double> values) {
  require(!values.empty(), "median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  const double lo = values[n / 2 - 1];
  const double hi = values[n / 2];
  if (std::isinf(hi)) return kInf;
  return lo + 0.5 * (hi - lo);
}

/// Median perturbation size: finite only when strictly more than half of
/// the entries are finite.
inline double median_norm(std::span<const double> norms) {
  require(!norms.empty(), "median of an empty set");
  const auto finite = std::count_if(norms.begin(), norms.end(),
                                    [](double v) { return std::isfinite(v); });
  if (2 * static_cast<std::size_t>(finite) <= norms.size()) return kInf;
  return median(std::vector<double>(norms.begin(), norms.end()));
}

inline std::size_t argmax_lowest(const Vector& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  return best;
}

}  // namespace hofmn
