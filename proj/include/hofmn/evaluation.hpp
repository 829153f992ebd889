#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "hofmn/fmn.hpp"

namespace hofmn {

struct CurveRecord {
  double norm = kInf;
  bool success = false;
};

/// Per-sample minimum norms of one attack run. A sample counts as broken at
/// budget eps when the attack succeeded with norm strictly below eps.
class RobustnessCurve {
 public:
  explicit RobustnessCurve(std::span<const CurveRecord> records) : count_(records.size()) {
    require(!records.empty(), "robustness curve needs at least one sample");
    for (const auto& r : records) {
      require(!std::isnan(r.norm) && r.norm >= 0.0, "norms must be non-negative");
      if (r.success && std::isfinite(r.norm)) broken_.push_back(r.norm);
    }
    std::sort(broken_.begin(), broken_.end());
  }

  static RobustnessCurve from_result(const AttackResult& result) {
    std::vector<CurveRecord> records;
    for (const auto& s : result.samples) records.push_back({s.best_norm, s.success});
    return RobustnessCurve(records);
  }

  std::size_t size() const { return count_; }

  /// Fraction of samples broken with norm < eps.
  double attack_success_rate(double eps) const {
    require(eps >= 0.0, "budget must be non-negative");
    const auto below = std::lower_bound(broken_.begin(), broken_.end(), eps) - broken_.begin();
    return static_cast<double>(below) / static_cast<double>(count_);
  }

  double robust_accuracy(double eps) const { return 1.0 - attack_success_rate(eps); }

  /// Distinct norms where the curve jumps, ascending.
  std::vector<double> breakpoints() const {
    std::vector<double> out = broken_;
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  std::size_t count_;
  std::vector<double> broken_;
};

struct CurvePoint {
  double epsilon = 0.0;
  double robust_accuracy = 1.0;
};

/// Grid rows plus two rows per breakpoint (the value at the breakpoint and
/// the value just after it), sorted by epsilon. The step function is
/// recovered exactly by curve_query.
inline std::vector<CurvePoint> curve_export(const RobustnessCurve& curve, std::span<const double> grid) {
  require(std::is_sorted(grid.begin(), grid.end()), "epsilon grid must be sorted");
  for (double e : grid) require(e >= 0.0, "epsilon grid must be non-negative");
  std::vector<CurvePoint> rows;
  const auto breaks = curve.breakpoints();
  std::size_t g = 0;
  const auto emit_grid_until = [&](double limit) {
    for (; g < grid.size() && grid[g] < limit; ++g)
      if (rows.empty() || rows.back().epsilon != grid[g])
        rows.push_back({grid[g], curve.robust_accuracy(grid[g])});
  };
  for (double b : breaks) {
    emit_grid_until(b);
    while (g < grid.size() && grid[g] == b) ++g;
    rows.push_back({b, curve.robust_accuracy(b)});
    const double after = curve.robust_accuracy(std::nextafter(b, kInf));
    rows.push_back({b, after});
  }
  emit_grid_until(kInf);
  return rows;
}

/// Robust accuracy at eps from exported rows: an exact epsilon match takes
/// the first row with that epsilon, otherwise the last row below eps; below
/// every row the first row's value applies (no sample is broken there).
inline double curve_query(std::span<const CurvePoint> rows, double eps) {
  if (rows.empty()) return 1.0;
  const auto exact = std::find_if(rows.begin(), rows.end(), [&](const CurvePoint& p) { return p.epsilon == eps; });
  if (exact != rows.end()) return exact->robust_accuracy;
  const CurvePoint* below = nullptr;
  for (const auto& p : rows)
    if (p.epsilon < eps) below = &p;
  return below ? below->robust_accuracy : rows.front().robust_accuracy;
}

/// Fixed-budget PGD-style attack: projected steps on the chosen loss inside
/// the eps-ball. The initial step size is lr * eps.
struct FixedBudgetConfig {
  double eps = 8.0 / 255.0;
  int steps = 50;
  LossKind loss = LossKind::ll;
  OptimizerHypers optimizer{.kind = OptimizerKind::gd, .lr = 0.25};
  SchedulerHypers scheduler{.kind = SchedulerKind::calr};
  Norm norm = Norm::linf;

  void validate(std::size_t class_count = 0) const {
    require(eps >= 0.0 && std::isfinite(eps), "budget must be finite and non-negative");
    require(steps >= 1, "attack needs at least one step");
    optimizer.validate();
    scheduler.validate();
    if (optimizer.kind != OptimizerKind::gd && scheduler.kind != SchedulerKind::fixed)
      throw unsupported_configuration("Adam and AdaMax schedule themselves; use the fixed scheduler");
    if (loss == LossKind::dlr && class_count > 0 && class_count < 3)
      throw unsupported_configuration("DLR loss needs at least three classes");
  }
};

struct FixedBudgetOutcome {
  bool success = false;
  Vector delta;  // first adversarial iterate, empty on failure
  long gradient_evaluations = 0;
};

/// Every step is run (no early exit), so the cost of a call is always
/// `steps` gradient evaluations.
inline FixedBudgetOutcome fixed_budget_attack(const Model& model, const Sample& sample,
                                              const FixedBudgetConfig& config) {
  config.validate(model.class_count());
  const Vector& x = sample.x;
  Vector delta = Vector::Zero(x.size());
  OptimizerState opt_state;
  StepSchedule schedule(config.scheduler, config.optimizer.lr * config.eps, config.steps);
  FixedBudgetOutcome out;
  const auto note = [&](const Vector& logits) {
    if (!out.success && is_adversarial(logits, sample.label)) {
      out.success = true;
      out.delta = delta;
    }
  };
  for (int k = 0; k < config.steps; ++k) {
    const auto tape = model.forward_tape(x + delta);
    note(tape.logits);
    HeadEval head;
    try {
      head = loss_head(config.loss, tape.logits, sample.label);
    } catch (const degenerate_denominator&) {
      head.value = std::numeric_limits<double>::quiet_NaN();
      head.grad = Vector::Zero(tape.logits.size());
    }
    const Vector grad = model.backprop_input(tape, head.grad);
    ++out.gradient_evaluations;
    if (config.eps == 0.0) continue;
    const double alpha = schedule.next(k, head.value);
    optimizer_step(opt_state, config.optimizer, delta, project_gradient(grad, config.norm), alpha);
    delta = project_feasible(x, std::move(delta), config.eps, config.norm);
  }
  note(model.forward(x + delta));
  return out;
}

struct BisectionStep {
  double epsilon = 0.0;
  bool success = false;
};

struct BisectionResult {
  bool found = false;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<BisectionStep> steps;

  /// Smallest budget proven successful after the first `count` steps, or
  /// infinity when none succeeded yet.
  double best_after(std::size_t count) const {
    double best = kInf;
    for (std::size_t i = 0; i < count && i < steps.size(); ++i)
      if (steps[i].success) best = std::min(best, steps[i].epsilon);
    return best;
  }
};

/// Incremental bisection on a success predicate, so a caller can advance
/// many searches one step at a time.
class Bisection {
 public:
  Bisection(double lo, double hi, int steps) : lo_(lo), hi_(hi), high0_(hi), remaining_(steps) {
    require(lo < hi, "bisection needs lo < hi");
    require(steps >= 1, "bisection needs at least one step");
    result_.lo = lo;
    result_.hi = hi;
  }

  bool done() const { return remaining_ == 0; }
  double next_epsilon() const { return lo_ + (hi_ - lo_) / 2.0; }

  void report(bool success) {
    require(!done(), "bisection already finished");
    const double mid = next_epsilon();
    result_.steps.push_back({mid, success});
    if (success) {
      hi_ = mid;
      result_.found = true;
    } else {
      lo_ = mid;
    }
    --remaining_;
    result_.lo = lo_;
    result_.hi = hi_;
  }

  /// True when no step succeeded, so the caller must still confirm the
  /// upper end before the bracket means anything.
  bool needs_upper_check() const { return done() && !result_.found; }
  double upper() const { return high0_; }
  void report_upper(bool success) { result_.found = success; }

  const BisectionResult& result() const { return result_; }

 private:
  double lo_, hi_, high0_;
  int remaining_;
  BisectionResult result_;
};

/// Bisection of [lo, hi] for the smallest successful budget. The upper end is
/// only attacked when every midpoint failed; if it fails too the result is
/// not-found. The final bracket has width (hi - lo) / 2^steps.
template <typename Predicate>
  requires std::predicate<Predicate&, double>
BisectionResult binary_search_min_eps(Predicate&& succeeds, double lo, double hi, int steps) {
  Bisection search(lo, hi, steps);
  while (!search.done()) search.report(succeeds(search.next_epsilon()));
  if (search.needs_upper_check()) search.report_upper(succeeds(search.upper()));
  return search.result();
}

inline BisectionResult binary_search_min_eps(const Model& model, const Sample& sample,
                                             FixedBudgetConfig attack, double lo, double hi, int steps) {
  return binary_search_min_eps(
      [&](double eps) {
        attack.eps = eps;
        return fixed_budget_attack(model, sample, attack).success;
      },
      lo, hi, steps);
}

struct BisectionRun {
  std::vector<BisectionResult> searches;
  std::vector<double> step_times_s;  // wall time of each bisection step over all samples
  long fixed_budget_runs = 0;
  long gradient_evaluations = 0;
};

/// Per-sample bisection over a dataset, advanced step by step across all
/// samples so each step can be timed.
inline BisectionRun bisect_dataset(const Model& model, const Dataset& data, const FixedBudgetConfig& attack,
                                   double lo, double hi, int steps, std::size_t threads = 1,
                                   bool timing = false) {
  require(!data.empty(), "dataset is empty");
  attack.validate(model.class_count());
  std::vector<Bisection> searches(data.size(), Bisection(lo, hi, steps));
  std::vector<long> grads(data.size(), 0), runs(data.size(), 0);
  BisectionRun run;
  const auto advance = [&](bool upper) {
    const auto start = std::chrono::steady_clock::now();
    parallel_for(data.size(), threads, [&](std::size_t i) {
      auto& s = searches[i];
      if (upper && !s.needs_upper_check()) return;
      FixedBudgetConfig local = attack;
      local.eps = upper ? s.upper() : s.next_epsilon();
      const auto out = fixed_budget_attack(model, data.samples[i], local);
      grads[i] += out.gradient_evaluations;
      ++runs[i];
      if (upper)
        s.report_upper(out.success);
      else
        s.report(out.success);
    });
    return timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() : 0.0;
  };
  for (int k = 0; k < steps; ++k) run.step_times_s.push_back(advance(false));
  const double upper_time = advance(true);
  if (!run.step_times_s.empty()) run.step_times_s.back() += upper_time;
  for (std::size_t i = 0; i < data.size(); ++i) {
    run.searches.push_back(searches[i].result());
    run.gradient_evaluations += grads[i];
    run.fixed_budget_runs += runs[i];
  }
  return run;
}

struct ComparisonRow {
  std::string method;
  double total_time_s = 0.0;
  double median_norm = kInf;
};

/// One row for the minimum-norm attack and one per bisection step; a
/// bisection row reports the cumulative time and the median of the best
/// budget proven successful so far.
inline std::vector<ComparisonRow> compare_report(const AttackResult& fmn, double fmn_time_s,
                                                 const BisectionRun& bisection) {
  require(!fmn.samples.empty(), "comparison needs at least one sample");
  require(fmn.samples.size() == bisection.searches.size(),
          "both methods must cover the same samples");
  std::vector<ComparisonRow> rows;
  rows.push_back({"fmn", fmn_time_s, median_norm(fmn.norms())});
  double elapsed = 0.0;
  for (std::size_t k = 0; k < bisection.step_times_s.size(); ++k) {
    elapsed += bisection.step_times_s[k];
    std::vector<double> best;
    for (const auto& s : bisection.searches) best.push_back(s.best_after(k + 1));
    rows.push_back({fmt::format("bisection-{}", k + 1), elapsed, median_norm(best)});
  }
  return rows;
}

}  // namespace hofmn
