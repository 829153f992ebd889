// hofmn: train toy models, tune FMN configurations, attack, export curves and
// compare against bisection of a fixed-budget attack.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hofmn/evaluation.hpp"
#include "hofmn/hyperopt.hpp"
#include "hofmn/io.hpp"
#include "hofmn/train.hpp"

namespace {

using namespace hofmn;

constexpr int kExitOk = 0;
constexpr int kExitNothingFound = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool timing = false;
};

// Output paths and the thread count do not change results, so they stay out
// of the provenance header; everything else is recorded as resolved.
bool affects_results(const std::string& name) {
  return name != "threads" && name != "config" && name != "help" && name.rfind("out", 0) != 0 &&
         name.find("-out") == std::string::npos;
}

Provenance provenance(const CLI::App& root, const CLI::App& sub) {
  Provenance p{{"command", sub.get_name()}};
  for (const CLI::App* app : {&root, &sub}) {
    for (const CLI::Option* opt : app->get_options()) {
      const std::string name = opt->get_single_name();
      if (!affects_results(name)) continue;
      std::string value;
      if (opt->get_expected_max() == 0) {
        value = opt->count() > 0 ? "true" : "false";
      } else if (opt->count() > 0) {
        for (const auto& r : opt->results()) value += (value.empty() ? "" : " ") + r;
      } else {
        value = opt->get_default_str();
      }
      p.emplace_back(name, value);
    }
  }
  return p;
}

Dataset read_data(const std::string& path, const Model& model) {
  Dataset data = load_dataset(path);
  if (data.dim() != model.input_dim())
    throw rejected_input(fmt::format("dataset has dimension {} but the model expects {}", data.dim(),
                                     model.input_dim()));
  data.validate(model.class_count());
  return data;
}

void write_dataset(const std::string& path, const Dataset& data, const Provenance& prov) {
  if (std::filesystem::path(path).extension() == ".bin")
    save_dataset_binary(path, data);
  else
    save_dataset_csv(path, data, prov);
}

// CLI11 renders double defaults with six digits; record them exactly.
CLI::Option* add_real(CLI::App* app, const std::string& name, double& value, const std::string& help = {}) {
  return app->add_option(name, value, help)->default_str(format_number(value));
}

HyperPoint parse_hypers(const std::vector<std::string>& items) {
  HyperPoint h;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw rejected_input("hyperparameter '" + item + "' is not name=value");
    h[item.substr(0, eq)] = parse_number(item.substr(eq + 1));
  }
  return h;
}

std::string format_point(const HyperPoint& h) {
  std::string out;
  for (const auto& [k, v] : h) out += (out.empty() ? "" : ";") + k + "=" + format_number(v);
  return out;
}

/// Attack hyperparameters: explicit values win, then the best trial of a
/// history file, then the baseline's own point (or the defaults).
struct AttackChoice {
  std::string config_id = "gd-calr-ll";
  std::vector<std::string> hypers;
  std::string history;
  int steps = 200;

  AttackConfig resolve() const {
    const Configuration c = configuration_from_id(config_id);
    HyperPoint h;
    if (!history.empty()) h = best_point_from_history(history, config_id);
    if (hypers.empty() && history.empty() && c == baseline_configuration()) h = baseline_point(steps);
    for (const auto& [k, v] : parse_hypers(hypers)) h[k] = v;
    return make_attack_config(c, h, steps);
  }

  void add_to(CLI::App* app) {
    app->add_option("--config-id", config_id, "configuration {optimizer}-{scheduler}-{loss}");
    app->add_option("--hyper", hypers, "hyperparameter override name=value (repeatable)");
    app->add_option("--history", history, "take the best trial of --config-id from this tuning history");
    app->add_option("--steps", steps, "attack iterations K")->check(CLI::PositiveNumber);
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------- train-toy

struct TrainToyArgs {
  std::string dataset = "rings";
  std::size_t classes = 3;
  std::size_t dim = 20;
  std::size_t n_train = 1000;
  std::size_t n_test = 256;
  std::vector<std::size_t> widths{32, 32};
  std::string mode = "adversarial";
  double eps_train = 0.03;
  std::size_t pgd_steps = 10;
  std::size_t epochs = 100;
  double lr = 0.1;
  std::size_t batch_size = 32;
  std::string out_model, out_train, out_test;
};

int run_train_toy(const TrainToyArgs& a, const Common& common, const Provenance& prov) {
  const auto make = [&](std::size_t n, const char* label) {
    const auto seed = derive_seed(common.seed, label);
    if (a.dataset == "blobs") return make_blobs(n, seed);
    if (a.dataset == "rings") return make_rings(n, a.classes, seed);
    return make_weak_features(n, a.dim, seed);
  };
  const Dataset train_set = make(a.n_train, "data/train");
  const Dataset test_set = make(a.n_test, "data/test");
  std::size_t classes = 0;
  for (const auto& s : train_set.samples) classes = std::max(classes, s.label + 1);
  Architecture arch{train_set.dim(), a.widths};
  arch.widths.push_back(classes);

  TrainOptions opt{.epochs = a.epochs, .lr = a.lr, .batch_size = a.batch_size, .seed = derive_seed(common.seed, "train")};
  const auto report = a.mode == "standard"
                          ? train_standard(train_set, arch, opt)
                          : train_adversarial(train_set, arch, opt, {.eps = a.eps_train, .pgd_steps = a.pgd_steps});
  save_model(a.out_model, report.model, report.model.seed_provenance, prov);
  if (!a.out_train.empty()) write_dataset(a.out_train, train_set, prov);
  write_dataset(a.out_test, test_set, prov);
  fmt::print("train accuracy {:.4f}\ntest accuracy {:.4f}\n", report.train_accuracy, accuracy(report.model, test_set));
  return kExitOk;
}

// ---------------------------------------------------------------- tune

struct TuneArgs {
  std::string model, data;
  std::vector<std::string> configs{"all"};
  std::size_t trials = 32;
  std::size_t initial = 8;
  std::size_t batch_size = 128;
  int steps = 200;
  std::size_t candidates = 1024;
  std::size_t mc_samples = 256;
  std::string resume;
  std::string out_history, out_summary;
};

int run_tune(const TuneArgs& a, const Common& common, const Provenance& prov) {
  if (a.trials <= a.initial)
    throw rejected_input(fmt::format("trial budget T = {} must exceed the Sobol initialization P = {}", a.trials,
                                     a.initial));
  std::vector<Configuration> configs;
  for (const auto& id : a.configs) {
    if (id == "all") {
      for (const auto& c : all_configurations()) configs.push_back(c);
    } else {
      configs.push_back(configuration_from_id(id));
    }
  }
  const Model model = load_model(a.model);
  const Dataset batch = read_data(a.data, model).slice(0, a.batch_size);
  for (const auto& c : configs) make_attack_config(c, {}, a.steps).validate(model.class_count());

  std::map<std::string, History> resumed;
  if (!a.resume.empty()) resumed = load_history(a.resume);

  HoOptions options;
  options.trials = a.trials;
  options.initial = a.initial;
  options.candidates = a.candidates;
  options.mc_samples = a.mc_samples;
  options.timing = common.timing;

  HistoryWriter writer(a.out_history, prov);
  std::vector<RankedConfiguration> ranked;
  for (const auto& c : configs) {
    HoOptions local = options;
    local.seed = derive_seed(common.seed, c.id());
    History prior;
    if (const auto it = resumed.find(c.id()); it != resumed.end()) prior = it->second;
    auto r = ho_fmn_run(model, batch, c, local, a.steps, common.threads, std::move(prior));
    for (const auto& o : r.history.observations) writer.append(o);
    if (!r.diagnostic.empty()) fmt::print(stderr, "{}: {}\n", c.id(), r.diagnostic);
    fmt::print(stderr, "tuned {} median {}\n", c.id(), format_number(r.best_median));
    ranked.push_back({c, std::move(r.best_point), r.best_median, std::move(r.history)});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedConfiguration& x, const RankedConfiguration& y) { return x.median < y.median; });

  const std::string summary = a.out_summary.empty() ? a.out_history + ".summary.csv" : a.out_summary;
  auto out = detail::open_out(summary);
  detail::write_provenance(out, prov);
  out << "rank,config_id,median_norm,hyperparameters\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    out << i + 1 << ',' << r.configuration.id() << ',' << format_number(r.median) << ',' << format_point(r.point)
        << '\n';
    fmt::print("{:>2}  {:<16} {:<24} {}\n", i + 1, r.configuration.id(), format_number(r.median),
               format_point(r.point));
  }
  return kExitOk;
}

// ---------------------------------------------------------------- attack

struct AttackArgs {
  std::string model, data;
  AttackChoice choice;
  double eps = 8.0 / 255.0;
  bool with_delta = false;
  std::string out, out_trace;
};

int run_attack(const AttackArgs& a, const Common& common, const Provenance& prov) {
  AttackConfig config = a.choice.resolve();
  config.record_trace = !a.out_trace.empty();
  const Model model = load_model(a.model);
  const Dataset data = read_data(a.data, model);
  const auto result = fmn_run(model, data, config, common.threads);
  save_attack_result(a.out, result, prov, a.with_delta);
  if (!a.out_trace.empty()) save_trace(a.out_trace, result, prov);

  const auto curve = RobustnessCurve::from_result(result);
  fmt::print("samples {}\nmedian_norm {}\nrobust_accuracy@{} {}\n", result.samples.size(),
             format_number(median_norm(result.norms())), format_number(a.eps),
             format_number(curve.robust_accuracy(a.eps)));
  const bool any = std::any_of(result.samples.begin(), result.samples.end(),
                               [](const SampleOutcome& s) { return s.success; });
  if (!any) {
    fmt::print(stderr, "no adversarial example found; every sample is robust\n");
    return kExitNothingFound;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- curve

struct CurveArgs {
  std::string result;
  std::vector<double> grid;
  double grid_max = 32.0 / 255.0;
  std::size_t grid_points = 33;
  std::string out;
};

int run_curve(const CurveArgs& a, const Provenance& prov) {
  std::vector<double> grid = a.grid;
  if (grid.empty()) {
    require(a.grid_points >= 2, "grid needs at least two points");
    for (std::size_t i = 0; i < a.grid_points; ++i)
      grid.push_back(a.grid_max * static_cast<double>(i) / static_cast<double>(a.grid_points - 1));
  }
  std::sort(grid.begin(), grid.end());
  const auto result = load_attack_result(a.result);
  if (result.samples.empty()) throw rejected_input("result file has no samples");
  const auto rows = curve_export(RobustnessCurve::from_result(result), grid);
  save_curve(a.out, rows, prov);
  fmt::print("rows {}\n", rows.size());
  return kExitOk;
}

// ---------------------------------------------------------------- compare

struct CompareArgs {
  std::string model, data;
  AttackChoice choice;
  double bisect_lo = 0.0;
  double bisect_hi = 32.0 / 255.0;
  int bisect_steps = 5;
  int fb_steps = 50;
  double fb_lr = 0.25;
  std::string fb_loss = "ll";
  std::string out;
};

int run_compare(const CompareArgs& a, const Common& common, const Provenance& prov) {
  const AttackConfig config = a.choice.resolve();
  FixedBudgetConfig fb;
  fb.steps = a.fb_steps;
  fb.optimizer.lr = a.fb_lr;
  fb.loss = loss_kind_from_string(a.fb_loss);
  const Model model = load_model(a.model);
  const Dataset data = read_data(a.data, model);

  const auto start = std::chrono::steady_clock::now();
  const auto fmn = fmn_run(model, data, config, common.threads);
  const double fmn_time = common.timing ? seconds_since(start) : 0.0;
  const auto bisection =
      bisect_dataset(model, data, fb, a.bisect_lo, a.bisect_hi, a.bisect_steps, common.threads, common.timing);
  const auto rows = compare_report(fmn, fmn_time, bisection);
  save_comparison(a.out, rows, prov);
  for (const auto& r : rows)
    fmt::print("{:<14} {:>10} {}\n", r.method, format_number(r.total_time_s), format_number(r.median_norm));
  fmt::print("gradient evaluations: fmn {} bisection {}\n", fmn.gradient_evaluations(), bisection.gradient_evaluations);
  return kExitOk;
}

// ---------------------------------------------------------------- selftest

int run_selftest(const Common& common) {
  int failures = 0;
  const auto report = [&](const char* name, bool ok, const std::string& detail) {
    fmt::print("{} {} ({})\n", ok ? "PASS" : "FAIL", name, detail);
    if (!ok) ++failures;
  };

  std::mt19937_64 rng(common.seed);
  {
    Architecture arch{6, {8, 8, 4}};
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      const Model m = Model::random(arch, rng());
      Vector x = Vector::Constant(6, 0.5);
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::uniform_real_distribution<double>(0.2, 0.8)(rng);
      const std::size_t y = predict(m.forward(x));
      const auto head = [&](const Vector& z) { return loss_head(LossKind::ce, z, y); };
      const Vector g = input_gradient(m, x, head);
      const Vector fd = finite_diff_gradient(m, x, head, 1e-6);
      worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-8));
    }
    report("gradient", worst < 1e-4, fmt::format("max relative error {:.2e}", worst));
  }
  {
    Matrix w(3, 5);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
    const Model m = Model::linear(w, Vector::Zero(3));
    Vector x = Vector::Constant(5, 0.5);
    const std::size_t y = predict(m.forward(x));
    const Vector f = m.forward(x);
    double star = kInf;
    for (Eigen::Index j = 0; j < 3; ++j)
      if (j != static_cast<Eigen::Index>(y))
        star = std::min(star, (f[static_cast<Eigen::Index>(y)] - f[j]) / (w.row(static_cast<Eigen::Index>(y)) - w.row(j)).lpNorm<1>());
    const auto out = fmn_run_sample(m, {x, y}, default_fmn_config(200));
    const bool ok = out.success && std::abs(out.best_norm - star) <= 0.02 * star;
    report("linear-minimum", ok, fmt::format("found {} closed form {}", format_number(out.best_norm), format_number(star)));
  }
  {
    const std::vector<CurveRecord> records{{0.01, true}, {0.03, true}, {kInf, false}};
    const RobustnessCurve curve(records);
    report("curve", std::abs(curve.robust_accuracy(0.02) - 2.0 / 3.0) < 1e-12 && curve.robust_accuracy(0.0) == 1.0,
           "hand-counted robust accuracy");
  }
  {
    const auto r = binary_search_min_eps([](double e) { return e >= 0.07; }, 0.0, 32.0 / 255.0, 5);
    report("bisection", r.found && r.lo <= 0.07 && 0.07 <= r.hi && std::abs(r.hi - r.lo - 1.0 / 255.0) < 1e-15,
           fmt::format("[{}, {}]", format_number(r.lo), format_number(r.hi)));
  }
  return failures == 0 ? kExitOk : kExitNothingFound;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperparameter-optimized minimum-norm adversarial attacks on small classifiers"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML configuration file; command-line flags override it");
  Common common;
  app.add_option("--seed", common.seed, "root seed; every random stream is derived from it");
  app.add_option("--threads", common.threads, "worker threads for per-sample work")->check(CLI::PositiveNumber);
  app.add_flag("--timing", common.timing, "record wall-clock times (outputs are then not reproducible)");

  TrainToyArgs train;
  auto* train_cmd = app.add_subcommand("train-toy", "train a small MLP on a synthetic dataset");
  train_cmd->add_option("--dataset", train.dataset)->check(CLI::IsMember({"blobs", "rings", "weak-features"}));
  train_cmd->add_option("--classes", train.classes, "ring count for the rings dataset");
  train_cmd->add_option("--dim", train.dim, "input dimension for weak-features");
  train_cmd->add_option("--n-train", train.n_train)->check(CLI::PositiveNumber);
  train_cmd->add_option("--n-test", train.n_test)->check(CLI::PositiveNumber);
  train_cmd->add_option("--widths", train.widths, "hidden layer widths")->delimiter(',');
  train_cmd->add_option("--mode", train.mode)->check(CLI::IsMember({"standard", "adversarial"}));
  add_real(train_cmd, "--eps-train", train.eps_train, "l-inf radius of adversarial training");
  train_cmd->add_option("--pgd-steps", train.pgd_steps);
  train_cmd->add_option("--epochs", train.epochs);
  add_real(train_cmd, "--lr", train.lr);
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--out-model", train.out_model)->required();
  train_cmd->add_option("--out-train", train.out_train, "training split (.bin for binary, CSV otherwise)");
  train_cmd->add_option("--out-test", train.out_test, "held-out split (.bin for binary, CSV otherwise)")->required();

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune", "tune and rank attack configurations");
  tune_cmd->add_option("--model", tune.model)->required();
  tune_cmd->add_option("--data", tune.data, "the first --batch-size samples form the tuning batch")->required();
  tune_cmd->add_option("--configs", tune.configs, "configuration ids, or 'all'")->delimiter(',');
  tune_cmd->add_option("--trials", tune.trials, "trial budget T per configuration");
  tune_cmd->add_option("--initial", tune.initial, "Sobol initialization trials P");
  tune_cmd->add_option("--batch-size", tune.batch_size)->check(CLI::PositiveNumber);
  tune_cmd->add_option("--steps", tune.steps, "attack iterations K")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--candidates", tune.candidates, "acquisition candidates per proposal");
  tune_cmd->add_option("--mc-samples", tune.mc_samples, "Monte Carlo samples of noisy expected improvement");
  tune_cmd->add_option("--resume", tune.resume, "continue from a partial history file");
  tune_cmd->add_option("--out-history", tune.out_history, "JSON-lines trial history")->required();
  tune_cmd->add_option("--out-summary", tune.out_summary, "ranked summary CSV (default: <history>.summary.csv)");

  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "run one FMN configuration over a dataset");
  attack_cmd->add_option("--model", attack.model)->required();
  attack_cmd->add_option("--data", attack.data)->required();
  attack.choice.add_to(attack_cmd);
  add_real(attack_cmd, "--eps", attack.eps, "budget for the printed robust accuracy");
  attack_cmd->add_flag("--with-delta", attack.with_delta, "store each best perturbation");
  attack_cmd->add_option("--out", attack.out)->required();
  attack_cmd->add_option("--out-trace", attack.out_trace, "per-step trace CSV");

  CurveArgs curve;
  auto* curve_cmd = app.add_subcommand("curve", "export a robustness evaluation curve");
  curve_cmd->add_option("--result", curve.result)->required()->check(CLI::ExistingFile);
  curve_cmd->add_option("--grid", curve.grid, "explicit epsilon grid")->delimiter(',');
  add_real(curve_cmd, "--grid-max", curve.grid_max, "upper end of the default evenly spaced grid");
  curve_cmd->add_option("--grid-points", curve.grid_points);
  curve_cmd->add_option("--out", curve.out)->required();

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "FMN against bisection of a fixed-budget attack");
  compare_cmd->add_option("--model", compare.model)->required();
  compare_cmd->add_option("--data", compare.data)->required();
  compare.choice.add_to(compare_cmd);
  add_real(compare_cmd, "--bisect-lo", compare.bisect_lo);
  add_real(compare_cmd, "--bisect-hi", compare.bisect_hi);
  compare_cmd->add_option("--bisect-steps", compare.bisect_steps)->check(CLI::PositiveNumber);
  compare_cmd->add_option("--fb-steps", compare.fb_steps, "fixed-budget attack steps")->check(CLI::PositiveNumber);
  add_real(compare_cmd, "--fb-lr", compare.fb_lr, "fixed-budget step size as a fraction of epsilon");
  compare_cmd->add_option("--fb-loss", compare.fb_loss)->check(CLI::IsMember({"ce", "ll", "dlr"}));
  compare_cmd->add_option("--out", compare.out)->required();

  auto* selftest_cmd = app.add_subcommand("selftest", "quick internal consistency checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return run_train_toy(train, common, provenance(app, *train_cmd));
    if (tune_cmd->parsed()) return run_tune(tune, common, provenance(app, *tune_cmd));
    if (attack_cmd->parsed()) return run_attack(attack, common, provenance(app, *attack_cmd));
    if (curve_cmd->parsed()) return run_curve(curve, provenance(app, *curve_cmd));
    if (compare_cmd->parsed()) return run_compare(compare, common, provenance(app, *compare_cmd));
    if (selftest_cmd->parsed()) return run_selftest(common);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
