#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hofmn/common.hpp"

namespace hofmn {

enum class OptimizerKind { gd, adam, adamax };
enum class SchedulerKind { calr, rlrop, fixed };

inline std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::gd: return "gd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamax: return "adamax";
  }
  return "?";
}

inline std::string_view to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::calr: return "calr";
    case SchedulerKind::rlrop: return "rlrop";
    case SchedulerKind::fixed: return "fixed";
  }
  return "?";
}

inline OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "gd") return OptimizerKind::gd;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "adamax") return OptimizerKind::adamax;
  throw rejected_input("unknown optimizer '" + std::string(name) + "'");
}

inline SchedulerKind scheduler_kind_from_string(std::string_view name) {
  if (name == "calr") return SchedulerKind::calr;
  if (name == "rlrop") return SchedulerKind::rlrop;
  if (name == "fixed") return SchedulerKind::fixed;
  throw rejected_input("unknown scheduler '" + std::string(name) + "'");
}

/// Optimizer hyperparameters. momentum/dampening only matter for GD and the
/// betas only for Adam/AdaMax. weight_decay is added to the direction, so it
/// pulls the perturbation back towards zero.
struct OptimizerHypers {
  OptimizerKind kind = OptimizerKind::gd;
  double lr = 1.0;
  double weight_decay = 0.0;
  double momentum = 0.0;
  double dampening = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
    require(weight_decay >= 0.0 && weight_decay <= 1.0, "weight decay must lie in [0, 1]");
    if (kind == OptimizerKind::gd) {
      require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
      require(dampening >= 0.0 && dampening <= 1.0, "dampening must lie in [0, 1]");
    } else {
      require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
      require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
      require(eps > 0.0, "eps must be positive");
    }
  }
};

/// T_max is the attack length and eta_min is 0 for CALR; the RLRoP fields
/// follow the reduce-on-plateau conventions (relative threshold, min mode).
struct SchedulerHypers {
  SchedulerKind kind = SchedulerKind::calr;
  double factor = 0.1;
  int patience = 10;
  double threshold = 1e-4;
  double eps = 1e-8;

  void validate() const {
    if (kind != SchedulerKind::rlrop) return;
    require(factor > 0.0 && factor < 1.0, "plateau factor must lie in (0, 1)");
    require(patience >= 0, "patience must be non-negative");
    require(threshold >= 0.0, "threshold must be non-negative");
  }
};

/// Moment buffers of one sample. Allocated lazily on the first step.
struct OptimizerState {
  Vector first;
  Vector second;
  long step = 0;
};

/// One optimizer update of delta along direction with step size alpha.
/// alpha == 0 leaves delta unchanged but still advances the buffers.
inline void optimizer_step(OptimizerState& state, const OptimizerHypers& h, Vector& delta,
                           const Vector& direction, double alpha) {
  if (alpha < 0.0) throw rejected_input("step size must be non-negative");
  require(direction.size() == delta.size(), "direction and perturbation shapes differ");
  if (state.first.size() != delta.size()) {
    state.first = Vector::Zero(delta.size());
    state.second = Vector::Zero(delta.size());
    state.step = 0;
  }
  ++state.step;
  const Vector d = direction + h.weight_decay * delta;
  switch (h.kind) {
    case OptimizerKind::gd:
      state.first = h.momentum * state.first + (1.0 - h.dampening) * d;
      delta -= alpha * state.first;
      break;
    case OptimizerKind::adam: {
      state.first = h.beta1 * state.first + (1.0 - h.beta1) * d;
      state.second = h.beta2 * state.second + (1.0 - h.beta2) * d.cwiseProduct(d);
      const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
      const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
      const Vector denom = (state.second / c2).cwiseSqrt().array() + h.eps;
      delta -= alpha * (state.first / c1).cwiseQuotient(denom);
      break;
    }
    case OptimizerKind::adamax: {
      state.first = h.beta1 * state.first + (1.0 - h.beta1) * d;
      state.second = (h.beta2 * state.second.array()).max(d.array().abs() + h.eps).matrix();
      const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
      delta -= (alpha / c1) * state.first.cwiseQuotient(state.second);
      break;
    }
  }
}

/// Cosine annealing to zero: alpha0 * (1 + cos(pi k / K)) / 2.
inline double calr_alpha(double alpha0, int k, int total) {
  require(total >= 1, "schedule length must be at least 1");
  require(k >= 0 && k <= total, "schedule index out of range");
  require(alpha0 > 0.0, "initial step size must be positive");
  return alpha0 * (1.0 + std::cos(std::numbers::pi * k / total)) / 2.0;
}

inline double fixed_alpha(double alpha0, int /*k*/, int /*total*/) { return alpha0; }

/// Sample-wise reduce-on-plateau: each sample owns its weight, best loss
/// and stall counter, so a stalled sample never slows down the others.
struct RlropState {
  double weight = 1.0;
  double best = kInf;
  int stall = 0;

  /// Feeds one observed loss and returns the weighted step size.
  double update(double loss, const SchedulerHypers& h, double alpha0) {
    if (loss < best * (1.0 - h.threshold)) {
      best = loss;
      stall = 0;
    } else {
      ++stall;
    }
    if (stall > h.patience) {
      const double reduced = weight * h.factor;
      if ((weight - reduced) * alpha0 > h.eps) weight = reduced;
      stall = 0;
    }
    return weight * alpha0;
  }
};

inline std::vector<double> rlrop_update(std::span<RlropState> states,
                                        std::span<const double> losses,
                                        const SchedulerHypers& h, double alpha0) {
  require(states.size() == losses.size(), "one loss per sample is required");
  std::vector<double> alphas(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) alphas[i] = states[i].update(losses[i], h, alpha0);
  return alphas;
}

/// Per-sample step-size source used by the attack loops. Indices are
/// zero-based: the first iteration asks for k = 0.
class StepSchedule {
 public:
  StepSchedule(const SchedulerHypers& h, double alpha0, int total)
      : hypers_(h), alpha0_(alpha0), total_(total) {}

  double next(int k, double loss) {
    switch (hypers_.kind) {
      case SchedulerKind::calr: return calr_alpha(alpha0_, k, total_);
      case SchedulerKind::rlrop: return plateau_.update(loss, hypers_, alpha0_);
      case SchedulerKind::fixed: return fixed_alpha(alpha0_, k, total_);
    }
    return alpha0_;
  }

 private:
  SchedulerHypers hypers_;
  double alpha0_;
  int total_;
  RlropState plateau_;
};

}  // namespace hofmn
