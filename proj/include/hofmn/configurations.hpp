#pragma once

#include <string>
#include <vector>

#include <fmt/format.h>

#include "hofmn/fmn.hpp"
#include "hofmn/search_space.hpp"

namespace hofmn {

/// One (loss, optimizer, scheduler) triple. Adam and AdaMax only appear with
/// the fixed scheduler.
struct Configuration {
  LossKind loss = LossKind::ll;
  OptimizerKind optimizer = OptimizerKind::gd;
  SchedulerKind scheduler = SchedulerKind::calr;

  std::string id() const {
    return fmt::format("{}-{}-{}", to_string(optimizer), to_string(scheduler), to_string(loss));
  }

  bool operator==(const Configuration&) const = default;
};

/// The twelve tunable configurations, in declaration order (ties in the
/// ranking keep this order).
inline std::vector<Configuration> all_configurations() {
  std::vector<Configuration> out;
  for (auto loss : {LossKind::ce, LossKind::ll, LossKind::dlr}) {
    out.push_back({loss, OptimizerKind::gd, SchedulerKind::calr});
    out.push_back({loss, OptimizerKind::gd, SchedulerKind::rlrop});
    out.push_back({loss, OptimizerKind::adam, SchedulerKind::fixed});
    out.push_back({loss, OptimizerKind::adamax, SchedulerKind::fixed});
  }
  return out;
}

inline Configuration configuration_from_id(std::string_view id) {
  for (const auto& c : all_configurations())
    if (c.id() == id) return c;
  throw rejected_input("unknown configuration '" + std::string(id) + "'");
}

/// Hyperparameter ranges of a configuration. T_max is tied to the attack
/// length.
inline SearchSpace search_space(const Configuration& c, int steps = 200) {
  std::vector<ParamSpec> params;
  params.push_back({"lr", Range{8.0 / 255.0, 10.0, Scale::log}});
  params.push_back({"weight_decay", Range{0.01, 1.0}});
  if (c.optimizer == OptimizerKind::gd) {
    params.push_back({"momentum", Range{0.0, 0.9}});
    params.push_back({"dampening", Range{0.0, 0.2}});
  } else {
    params.push_back({"beta1", Range{0.0, 0.999}});
    params.push_back({"beta2", Range{0.0, 0.999}});
    params.push_back({"eps", Fixed{1e-8}});
  }
  switch (c.scheduler) {
    case SchedulerKind::calr:
      params.push_back({"T_max", Fixed{static_cast<double>(steps)}});
      params.push_back({"eta_min", Fixed{0.0}});
      params.push_back({"last_epoch", Fixed{-1.0}});
      break;
    case SchedulerKind::rlrop:
      params.push_back({"factor", Range{0.1, 0.5}});
      params.push_back({"patience", Choice{{2.0, 5.0, 10.0}}});
      params.push_back({"threshold", Fixed{1e-4}});
      params.push_back({"rlrop_eps", Fixed{1e-8}});
      break;
    case SchedulerKind::fixed:
      break;
  }
  return SearchSpace(std::move(params));
}

/// Builds the attack for a configuration and a point of its space (or any
/// point carrying the same names, e.g. the untuned baseline).
inline AttackConfig make_attack_config(const Configuration& c, const HyperPoint& h, int steps = 200) {
  const auto get = [&](const char* name, double fallback) {
    const auto it = h.find(name);
    return it == h.end() ? fallback : it->second;
  };
  AttackConfig config;
  config.loss = c.loss;
  config.steps = steps;
  config.optimizer.kind = c.optimizer;
  config.optimizer.lr = get("lr", 1.0);
  config.optimizer.weight_decay = get("weight_decay", 0.0);
  config.optimizer.momentum = get("momentum", 0.0);
  config.optimizer.dampening = get("dampening", 0.0);
  config.optimizer.beta1 = get("beta1", 0.9);
  config.optimizer.beta2 = get("beta2", 0.999);
  config.optimizer.eps = get("eps", 1e-8);
  config.scheduler.kind = c.scheduler;
  config.scheduler.factor = get("factor", 0.1);
  config.scheduler.patience = static_cast<int>(get("patience", 10.0));
  config.scheduler.threshold = get("threshold", 1e-4);
  config.scheduler.eps = get("rlrop_eps", 1e-8);
  config.validate();
  return config;
}

/// Untuned reference attack: GD + CALR + LL with lr 1 and no momentum.
inline Configuration baseline_configuration() {
  return {LossKind::ll, OptimizerKind::gd, SchedulerKind::calr};
}

inline HyperPoint baseline_point(int steps = 200) {
  return {{"lr", 1.0},          {"weight_decay", 0.0}, {"momentum", 0.0},
          {"dampening", 0.0},   {"T_max", static_cast<double>(steps)},
          {"eta_min", 0.0},     {"last_epoch", -1.0}};
}

}  // namespace hofmn
