#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "hofmn/gp.hpp"
#include "hofmn/search_space.hpp"
#include "hofmn/sobol.hpp"

namespace hofmn {

/// E[(incumbent - f)^+] for f ~ N(mean, std^2). Lower is better.
inline double expected_improvement_min(double mean, double std, double incumbent) {
  const double gap = incumbent - mean;
  if (!(std > 0.0)) return std::max(0.0, gap);
  const double z = gap / std;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, gap * cdf + std * pdf);
}

/// Average closed-form EI over sampled noisy incumbents.
inline double nei_from_incumbents(double mean, double std, std::span<const double> incumbents) {
  require(!incumbents.empty(), "need at least one incumbent sample");
  double sum = 0.0;
  for (double f : incumbents) sum += expected_improvement_min(mean, std, f);
  return sum / static_cast<double>(incumbents.size());
}

struct NeiEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo noisy expected improvement for minimization. The incumbent of
/// each draw is the minimum of a joint posterior sample of the latent
/// objective at the observed inputs; draws are made once at construction.
class NoisyExpectedImprovement {
 public:
  NoisyExpectedImprovement(const GpModel& model, std::size_t mc_samples, std::uint64_t seed)
      : model_(&model) {
    require(mc_samples >= 1, "need at least one Monte-Carlo sample");
    const auto [mean, cov] = model.training_posterior();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Matrix factor = eig.eigenvectors() * root.asDiagonal();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(mean.size());
    incumbents_.reserve(mc_samples);
    for (std::size_t s = 0; s < mc_samples; ++s) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
      incumbents_.push_back((mean + factor * z).minCoeff());
    }
  }

  const std::vector<double>& incumbents() const { return incumbents_; }

  NeiEstimate estimate(const Vector& x) const {
    const auto p = model_->posterior(x);
    double sum = 0.0, sq = 0.0;
    for (double f : incumbents_) {
      const double ei = expected_improvement_min(p.mean, p.std, f);
      sum += ei;
      sq += ei * ei;
    }
    const auto n = static_cast<double>(incumbents_.size());
    const double mean = sum / n;
    const double var = n > 1 ? std::max(0.0, (sq - n * mean * mean) / (n - 1)) : 0.0;
    return {mean, std::sqrt(var / n)};
  }

  double operator()(const Vector& x) const { return estimate(x).value; }

 private:
  const GpModel* model_;
  std::vector<double> incumbents_;
};

inline double nei_acquisition(const GpModel& model, const Vector& candidate, std::size_t mc_samples,
                              std::uint64_t seed) {
  return NoisyExpectedImprovement(model, mc_samples, seed)(candidate);
}

struct Proposal {
  Vector unit;
  HyperPoint point;
  double acquisition = 0.0;
};

/// Argmax of NEI over fresh scrambled-Sobol candidates (lowest index on ties).
/// The returned unit point is snapped to what the space can represent.
inline Proposal propose_next(const GpModel& model, const SearchSpace& space,
                             std::size_t n_candidates, std::uint64_t seed,
                             std::size_t mc_samples = 256) {
  require(n_candidates >= 1, "need at least one candidate");
  require(space.dim() == static_cast<std::size_t>(model.inputs().cols()),
          "model and search space disagree on dimension");
  const NoisyExpectedImprovement nei(model, mc_samples, derive_seed(seed, "nei"));
  ScrambledSobol sobol(space.dim(), derive_seed(seed, "candidates"));
  Proposal best;
  best.acquisition = -1.0;
  for (std::size_t i = 0; i < n_candidates; ++i) {
    const Vector u = space.snap(sobol.next());
    const double a = nei(u);
    if (a > best.acquisition) {
      best.unit = u;
      best.acquisition = a;
    }
  }
  best.point = space.decode(best.unit);
  return best;
}

}  // namespace hofmn
