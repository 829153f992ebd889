#pragma once

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hofmn/acquisition.hpp"
#include "hofmn/configurations.hpp"
#include "hofmn/fmn.hpp"
#include "hofmn/gp.hpp"
#include "hofmn/search_space.hpp"
#include "hofmn/sobol.hpp"

namespace hofmn {

struct Observation {
  std::size_t trial = 0;
  std::string config_id;
  Vector unit;
  HyperPoint point;
  double median = kInf;
  double wall_time_s = 0.0;
};

struct History {
  std::vector<Observation> observations;

  std::size_t size() const { return observations.size(); }

  /// Earliest observation with the smallest finite median.
  std::optional<std::size_t> best_index() const {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < observations.size(); ++i)
      if (std::isfinite(observations[i].median) &&
          (!best || observations[i].median < observations[*best].median))
        best = i;
    return best;
  }

  double best_median() const {
    const auto i = best_index();
    return i ? observations[*i].median : kInf;
  }

  /// Running incumbent after each trial.
  std::vector<double> incumbent_trajectory() const {
    std::vector<double> out;
    double best = kInf;
    for (const auto& o : observations) {
      if (o.median < best) best = o.median;
      out.push_back(best);
    }
    return out;
  }
};

struct HoOptions {
  std::size_t trials = 32;
  std::size_t initial = 8;
  std::size_t candidates = 1024;
  std::size_t mc_samples = 256;
  std::uint64_t seed = 0;
  bool timing = false;
  GpFitOptions gp;
};

struct HoResult {
  HyperPoint best_point;
  double best_median = kInf;
  History history;
  std::string diagnostic;
};

/// Bayesian optimization of a minimized objective over a search space:
/// `initial` scrambled-Sobol trials, then GP + noisy-EI proposals. Trials with
/// an infinite objective are kept in the history but not fitted; with fewer
/// than two finite observations the next Sobol point is used instead.
/// A partial history is resumed from trial history.size().
template <typename Objective>
  requires std::invocable<Objective&, const HyperPoint&>
HoResult ho_run(const SearchSpace& space, Objective&& objective, const HoOptions& options,
                History history = {}, const std::string& config_id = {}) {
  require(options.initial >= 1, "need at least one initial trial");
  require(options.trials >= options.initial, "trial budget must cover the initial trials");
  require(history.size() <= options.trials, "history is longer than the trial budget");
  for (std::size_t i = 0; i < history.size(); ++i) {
    require(history.observations[i].trial == i, "history trial indices must be contiguous from 0");
    auto& o = history.observations[i];
    space.check(o.point);
    if (static_cast<std::size_t>(o.unit.size()) != space.dim()) o.unit = space.encode(o.point);
  }

  ScrambledSobol sobol(space.dim(), derive_seed(options.seed, "sobol"));
  for (std::size_t j = history.size(); j < options.trials; ++j) {
    Vector unit;
    if (j >= options.initial) {
      std::vector<const Observation*> finite;
      for (const auto& o : history.observations)
        if (std::isfinite(o.median)) finite.push_back(&o);
      if (finite.size() >= 2) {
        Matrix inputs(static_cast<Eigen::Index>(finite.size()), static_cast<Eigen::Index>(space.dim()));
        Vector targets(static_cast<Eigen::Index>(finite.size()));
        for (std::size_t i = 0; i < finite.size(); ++i) {
          inputs.row(static_cast<Eigen::Index>(i)) = finite[i]->unit.transpose();
          targets[static_cast<Eigen::Index>(i)] = finite[i]->median;
        }
        try {
          const auto gp = GpModel::fit(inputs, targets, derive_seed(options.seed, "gp", j), options.gp);
          unit = propose_next(gp, space, options.candidates, derive_seed(options.seed, "acquire", j),
                              options.mc_samples)
                     .unit;
        } catch (const std::exception&) {
          unit.resize(0);
        }
      }
    }
    if (unit.size() == 0 && space.dim() > 0) unit = space.snap(sobol.at(j));

    Observation obs;
    obs.trial = j;
    obs.config_id = config_id;
    obs.unit = unit;
    obs.point = space.decode(unit);
    const auto start = std::chrono::steady_clock::now();
    const double value = objective(obs.point);
    if (options.timing)
      obs.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    obs.median = std::isnan(value) ? kInf : value;
    history.observations.push_back(std::move(obs));
  }

  HoResult result;
  result.history = std::move(history);
  if (const auto best = result.history.best_index()) {
    result.best_point = result.history.observations[*best].point;
    result.best_median = result.history.observations[*best].median;
  } else {
    if (!result.history.observations.empty()) result.best_point = result.history.observations[0].point;
    result.diagnostic = "every trial left at least half of the batch unbroken; no finite median";
  }
  return result;
}

/// Median best norm of one attack run over the tuning batch.
inline double median_objective(const Model& model, const Dataset& batch,
                               const Configuration& configuration, const HyperPoint& point,
                               int steps = 200, std::size_t threads = 1) {
  return median_norm(
      fmn_run(model, batch, make_attack_config(configuration, point, steps), threads).norms());
}

inline HoResult ho_fmn_run(const Model& model, const Dataset& batch,
                           const Configuration& configuration, const HoOptions& options,
                           int steps = 200, std::size_t threads = 1, History history = {}) {
  const SearchSpace space = search_space(configuration, steps);
  const auto objective = [&](const HyperPoint& h) {
    return median_objective(model, batch, configuration, h, steps, threads);
  };
  return ho_run(space, objective, options, std::move(history), configuration.id());
}

struct RankedConfiguration {
  Configuration configuration;
  HyperPoint point;
  double median = kInf;
  History history;
};

/// Tunes every configuration (each with its own seed derived from the root
/// seed and the configuration id) and sorts by tuned median, lowest first.
/// Ties keep the input order.
inline std::vector<RankedConfiguration> rank_configurations(
    const Model& model, const Dataset& batch, const std::vector<Configuration>& configurations,
    const HoOptions& options, int steps = 200, std::size_t threads = 1,
    const std::function<void(const RankedConfiguration&)>& on_done = {}) {
  require(!configurations.empty(), "no configurations to rank");
  std::vector<RankedConfiguration> out;
  for (const auto& c : configurations) {
    HoOptions local = options;
    local.seed = derive_seed(options.seed, c.id());
    auto r = ho_fmn_run(model, batch, c, local, steps, threads);
    out.push_back({c, std::move(r.best_point), r.best_median, std::move(r.history)});
    if (on_done) on_done(out.back());
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedConfiguration& a, const RankedConfiguration& b) {
    return a.median < b.median;
  });
  return out;
}

}  // namespace hofmn
