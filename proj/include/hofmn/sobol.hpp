#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <boost/random/sobol.hpp>

#include "hofmn/common.hpp"

namespace hofmn {

/// Sobol sequence in [0,1)^D with a random digital shift (each coordinate's
/// bits are XORed with a seed-dependent mask). The shift keeps the
/// low-discrepancy structure and the seed picks the shift.
class ScrambledSobol {
 public:
  ScrambledSobol(std::size_t dim, std::uint64_t seed) : engine_(dim == 0 ? 1 : dim), dim_(dim) {
    std::mt19937_64 rng(seed);
    shifts_.resize(dim_);
    for (auto& s : shifts_) s = rng();
  }

  std::size_t dim() const { return dim_; }

  /// Next point of the sequence.
  Vector next() {
    Vector u(static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < dim_; ++i) {
      const std::uint64_t bits = static_cast<std::uint64_t>(engine_()) ^ shifts_[i];
      u[static_cast<Eigen::Index>(i)] = static_cast<double>(bits >> 11) * 0x1.0p-53;
    }
    if (dim_ == 0) engine_();
    return u;
  }

  /// Point `index` (zero-based) of the sequence, independent of the
  /// current position.
  Vector at(std::size_t index) {
    engine_.seed();
    engine_.discard(static_cast<std::uintmax_t>(index) * (dim_ == 0 ? 1 : dim_));
    return next();
  }

  std::vector<Vector> take(std::size_t n) {
    std::vector<Vector> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  boost::random::sobol engine_;
  std::size_t dim_;
  std::vector<std::uint64_t> shifts_;
};

}  // namespace hofmn
