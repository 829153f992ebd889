#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "hofmn/common.hpp"
#include "hofmn/dataset.hpp"
#include "hofmn/losses.hpp"
#include "hofmn/model.hpp"
#include "hofmn/parallel.hpp"
#include "hofmn/steppers.hpp"

namespace hofmn {

enum class Norm { linf, l2 };

inline double perturbation_norm(const Vector& delta, Norm norm) {
  if (delta.size() == 0) return 0.0;
  return norm == Norm::linf ? delta.lpNorm<Eigen::Infinity>() : delta.norm();
}

/// One FMN configuration (loss, optimizer, scheduler) plus the attack
/// length and the epsilon-step schedule. The optimizer learning rate is the
/// initial delta-step size.
struct AttackConfig {
  LossKind loss = LossKind::ll;
  OptimizerHypers optimizer;
  SchedulerHypers scheduler;
  int steps = 200;
  double gamma0 = 0.05;
  double gamma_min = 0.001;
  Norm norm = Norm::linf;
  bool record_trace = false;

  double alpha0() const { return optimizer.lr; }

  /// Throws before any model evaluation. class_count == 0 skips the
  /// class-count dependent checks.
  void validate(std::size_t class_count = 0) const {
    require(steps >= 1, "attack needs at least one iteration");
    require(gamma0 > 0.0 && gamma0 < 1.0, "gamma0 must lie in (0, 1)");
    require(gamma_min > 0.0 && gamma_min <= gamma0, "gamma floor must lie in (0, gamma0]");
    optimizer.validate();
    scheduler.validate();
    if (optimizer.kind != OptimizerKind::gd && scheduler.kind != SchedulerKind::fixed)
      throw unsupported_configuration("Adam and AdaMax schedule themselves; use the fixed scheduler");
    if (loss == LossKind::dlr && class_count > 0 && class_count < 3)
      throw unsupported_configuration("DLR loss needs at least three classes");
  }
};

/// GD + CALR + LL with lr 1 and no momentum.
inline AttackConfig default_fmn_config(int steps = 200) {
  AttackConfig config;
  config.loss = LossKind::ll;
  config.optimizer = OptimizerHypers{.kind = OptimizerKind::gd, .lr = 1.0};
  config.scheduler = SchedulerHypers{.kind = SchedulerKind::calr};
  config.steps = steps;
  return config;
}

/// sign(g), with sign(0) = 0: the maximiser of v.g over the unit l-inf ball.
inline Vector project_gradient_linf(const Vector& g) {
  return g.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
}

inline Vector project_gradient_l2(const Vector& g) {
  const double n = g.norm();
  if (n == 0.0) return Vector::Zero(g.size());
  return g / n;
}

inline Vector project_gradient(const Vector& g, Norm norm) {
  return norm == Norm::linf ? project_gradient_linf(g) : project_gradient_l2(g);
}

/// Cosine decay of the epsilon-step size from gamma0 to gamma_min, k in [1, K].
inline double gamma_schedule(double gamma0, double gamma_min, int k, int total) {
  require(total >= 1 && k >= 1 && k <= total, "gamma schedule index out of range");
  return gamma_min + (gamma0 - gamma_min) * (1.0 + std::cos(std::numbers::pi * k / total)) / 2.0;
}

inline double gamma_schedule(double gamma0, int k, int total) {
  return gamma_schedule(gamma0, 0.001, k, total);
}

/// Shrinks the bound while the current iterate is adversarial, grows it
/// otherwise. An infinite bound stays infinite until the first hit.
inline double eps_step(double eps_prev, double best_norm, double delta_norm, double gamma,
                       bool adversarial) {
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  if (adversarial) return std::min({eps_prev, best_norm, delta_norm}) * (1.0 - gamma);
  if (std::isinf(eps_prev)) return kInf;
  return eps_prev * (1.0 + gamma);
}

/// Clamps delta to the eps-ball (skipped for an infinite eps), then keeps
/// x + delta inside [0,1]^d. Coordinates already feasible are left untouched.
inline Vector project_feasible(const Vector& x, Vector delta, double eps, Norm norm = Norm::linf) {
  if (std::isfinite(eps)) {
    if (norm == Norm::linf) {
      delta = delta.cwiseMax(-eps).cwiseMin(eps);
    } else {
      const double n = delta.norm();
      if (n > eps) delta *= eps / n;
    }
  }
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    if (x[i] + delta[i] > 1.0) {
      delta[i] = std::min(delta[i], 1.0 - x[i]);
      while (x[i] + delta[i] > 1.0) delta[i] = std::nextafter(delta[i], -kInf);
    } else if (x[i] + delta[i] < 0.0) {
      delta[i] = std::max(delta[i], -x[i]);
      while (x[i] + delta[i] < 0.0) delta[i] = std::nextafter(delta[i], kInf);
    }
  }
  return delta;
}

struct TraceRow {
  std::size_t sample = 0;
  int k = 0;
  double norm = 0.0;
  double loss = 0.0;
  double eps = 0.0;
  double alpha = 0.0;
  double best_norm = kInf;
};

/// Per-input attack state.
struct PerSampleState {
  Vector delta;
  double eps = kInf;
  std::optional<Vector> best_delta;
  double best_norm = kInf;
  bool ever_adversarial = false;

  /// Strict improvement only; ties keep the earlier perturbation.
  void track(const Vector& candidate, double norm, bool adversarial) {
    if (!adversarial) return;
    ever_adversarial = true;
    if (norm < best_norm) {
      best_norm = norm;
      best_delta = candidate;
    }
  }
};

struct SampleOutcome {
  bool success = false;
  double best_norm = kInf;
  Vector best_delta;
  bool clean_correct = false;
  long gradient_evaluations = 0;
  std::vector<TraceRow> trace;
};

struct AttackResult {
  std::vector<SampleOutcome> samples;

  std::vector<double> norms() const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.best_norm);
    return out;
  }

  long gradient_evaluations() const {
    long total = 0;
    for (const auto& s : samples) total += s.gradient_evaluations;
    return total;
  }
};

/// The minimum-norm attack on a single input.
inline SampleOutcome fmn_run_sample(const Model& model, const Sample& sample,
                                    const AttackConfig& config, std::size_t index = 0) {
  const Vector& x = sample.x;
  const std::size_t y = sample.label;
  const int total = config.steps;

  PerSampleState state;
  state.delta = Vector::Zero(x.size());
  OptimizerState opt_state;
  StepSchedule schedule(config.scheduler, config.alpha0(), total);

  SampleOutcome out;
  for (int k = 1; k <= total; ++k) {
    const double gamma = gamma_schedule(config.gamma0, config.gamma_min, k, total);

    // One forward pass serves the adversarial check and the gradient.
    const auto tape = model.forward_tape(x + state.delta);
    const bool adversarial = is_adversarial(tape.logits, y);
    if (k == 1) out.clean_correct = !adversarial;
    const double delta_norm = perturbation_norm(state.delta, config.norm);
    state.track(state.delta, delta_norm, adversarial);
    state.eps = eps_step(state.eps, state.best_norm, delta_norm, gamma, adversarial);

    HeadEval head;
    try {
      head = loss_head(config.loss, tape.logits, y);
    } catch (const degenerate_denominator&) {
      // A vanishing DLR denominator freezes this sample for one step.
      head.value = std::numeric_limits<double>::quiet_NaN();
      head.grad = Vector::Zero(tape.logits.size());
    }
    const Vector grad = model.backprop_input(tape, head.grad);
    ++out.gradient_evaluations;

    const double alpha = schedule.next(k - 1, head.value);
    optimizer_step(opt_state, config.optimizer, state.delta, project_gradient(grad, config.norm),
                   alpha);
    state.delta = project_feasible(x, std::move(state.delta), state.eps, config.norm);

    if (config.record_trace)
      out.trace.push_back({index, k, delta_norm, head.value, state.eps, alpha, state.best_norm});
  }
  // The last iterate is never seen by the loop body.
  const Vector final_logits = model.forward(x + state.delta);
  state.track(state.delta, perturbation_norm(state.delta, config.norm),
              is_adversarial(final_logits, y));

  out.success = state.best_delta.has_value();
  out.best_norm = state.best_norm;
  out.best_delta = state.best_delta.value_or(Vector());
  return out;
}

/// Attacks every sample independently; batch composition and thread count
/// do not change any per-sample result.
inline AttackResult fmn_run(const Model& model, std::span<const Sample> batch,
                            const AttackConfig& config, std::size_t threads = 1) {
  require(!batch.empty(), "attack batch is empty");
  config.validate(model.class_count());
  for (const auto& s : batch) {
    require(static_cast<std::size_t>(s.x.size()) == model.input_dim(),
            "sample dimension does not match the model");
    require(s.label < model.class_count(), "label out of range");
  }
  AttackResult result;
  result.samples.resize(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    result.samples[i] = fmn_run_sample(model, batch[i], config, i);
  });
  return result;
}

inline AttackResult fmn_run(const Model& model, const Dataset& batch, const AttackConfig& config,
                            std::size_t threads = 1) {
  return fmn_run(model, std::span<const Sample>(batch.samples), config, threads);
}

}  // namespace hofmn
