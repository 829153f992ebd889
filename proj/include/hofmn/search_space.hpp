#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "hofmn/common.hpp"
#include "hofmn/sobol.hpp"

namespace hofmn {

enum class Scale { linear, log };

struct Range {
  double low = 0.0;
  double high = 1.0;
  Scale scale = Scale::linear;
};

/// Ordered set of admissible values; encoded ordinally on [0,1].
struct Choice {
  std::vector<double> values;
};

struct Fixed {
  double value = 0.0;
};

struct ParamSpec {
  std::string name;
  std::variant<Range, Choice, Fixed> domain;

  bool free() const { return !std::holds_alternative<Fixed>(domain); }
};

/// Name -> value for every parameter of a configuration, fixed ones included.
using HyperPoint = std::map<std::string, double>;

class SearchSpace {
 public:
  SearchSpace() = default;

  explicit SearchSpace(std::vector<ParamSpec> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      require(!p.name.empty(), "parameter without a name");
      std::size_t seen = 0;
      for (const auto& q : params_) seen += q.name == p.name;
      require(seen == 1, "duplicate parameter '" + p.name + "'");
      if (const auto* r = std::get_if<Range>(&p.domain)) {
        require(r->low < r->high, "range of '" + p.name + "' is empty");
        require(r->scale == Scale::linear || r->low > 0.0,
                "logarithmic range of '" + p.name + "' must be positive");
      } else if (const auto* c = std::get_if<Choice>(&p.domain)) {
        require(!c->values.empty(), "choice set of '" + p.name + "' is empty");
        require(std::is_sorted(c->values.begin(), c->values.end()),
                "choice set of '" + p.name + "' must be sorted");
      }
    }
  }

  const std::vector<ParamSpec>& params() const { return params_; }

  /// Number of free (range or choice) parameters.
  std::size_t dim() const {
    return static_cast<std::size_t>(
        std::count_if(params_.begin(), params_.end(), [](const ParamSpec& p) { return p.free(); }));
  }

  /// Maps a point of [0,1]^dim to parameter values. Coordinates outside the
  /// cube are clamped.
  HyperPoint decode(const Vector& u) const {
    require(static_cast<std::size_t>(u.size()) == dim(), "unit point has the wrong dimension");
    HyperPoint out;
    Eigen::Index i = 0;
    for (const auto& p : params_) {
      if (const auto* f = std::get_if<Fixed>(&p.domain)) {
        out[p.name] = f->value;
        continue;
      }
      const double t = std::clamp(u[i++], 0.0, 1.0);
      if (const auto* r = std::get_if<Range>(&p.domain)) {
        if (r->scale == Scale::log) {
          const double v = std::exp(std::log(r->low) + t * (std::log(r->high) - std::log(r->low)));
          out[p.name] = std::clamp(v, r->low, r->high);
        } else {
          out[p.name] = std::clamp(r->low + t * (r->high - r->low), r->low, r->high);
        }
      } else {
        const auto& values = std::get<Choice>(p.domain).values;
        const auto last = static_cast<double>(values.size() - 1);
        out[p.name] = values[static_cast<std::size_t>(std::lround(t * last))];
      }
    }
    return out;
  }

  /// Inverse of decode on valid points.
  Vector encode(const HyperPoint& h) const {
    check(h);
    Vector u(static_cast<Eigen::Index>(dim()));
    Eigen::Index i = 0;
    for (const auto& p : params_) {
      if (!p.free()) continue;
      const double v = h.at(p.name);
      if (const auto* r = std::get_if<Range>(&p.domain)) {
        u[i++] = r->scale == Scale::log
                     ? (std::log(v) - std::log(r->low)) / (std::log(r->high) - std::log(r->low))
                     : (v - r->low) / (r->high - r->low);
      } else {
        const auto& values = std::get<Choice>(p.domain).values;
        const auto pos = std::find(values.begin(), values.end(), v) - values.begin();
        u[i++] = values.size() == 1 ? 0.0
                                    : static_cast<double>(pos) / static_cast<double>(values.size() - 1);
      }
    }
    return u;
  }

  /// Rounds a unit point onto the grid of representable configurations.
  Vector snap(const Vector& u) const { return encode(decode(u)); }

  bool contains(const HyperPoint& h) const {
    if (h.size() != params_.size()) return false;
    for (const auto& p : params_) {
      const auto it = h.find(p.name);
      if (it == h.end() || !std::isfinite(it->second)) return false;
      const double v = it->second;
      if (const auto* r = std::get_if<Range>(&p.domain)) {
        if (v < r->low || v > r->high) return false;
      } else if (const auto* c = std::get_if<Choice>(&p.domain)) {
        if (std::find(c->values.begin(), c->values.end(), v) == c->values.end()) return false;
      } else if (v != std::get<Fixed>(p.domain).value) {
        return false;
      }
    }
    return true;
  }

  void check(const HyperPoint& h) const {
    require(contains(h), "hyperparameters do not belong to the search space");
  }

 private:
  std::vector<ParamSpec> params_;
};

/// First n points of the scrambled Sobol sequence, decoded.
inline std::vector<HyperPoint> sobol_init(const SearchSpace& space, std::size_t n,
                                          std::uint64_t seed) {
  require(n >= 1, "need at least one initial point");
  ScrambledSobol sobol(space.dim(), seed);
  std::vector<HyperPoint> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(space.decode(sobol.next()));
  return out;
}

}  // namespace hofmn
