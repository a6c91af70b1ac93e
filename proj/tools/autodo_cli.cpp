// Command-line front end: dataset generation and distortion, single runs,
// ablation suites, the oracle check suite and report aggregation.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "autodo/checks.hpp"
#include "autodo/config.hpp"
#include "autodo/dataforge.hpp"
#include "autodo/runner.hpp"

namespace {

using namespace autodo;

// Flags shared by the experiment subcommands. Unset flags leave the config
// file (or the built-in defaults) alone.
struct ExperimentFlags {
  std::string config_path;
  std::optional<int> ir, epochs, ho_start, neumann_t, folds;
  std::optional<double> nr, neumann_alpha;
  std::optional<std::string> estimator, out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> arms, sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "INI-style experiment config")->check(CLI::ExistingFile);
    app->add_option("--ir", ir, "class imbalance ratio");
    app->add_option("--nr", nr, "label noise ratio");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--ho-start", ho_start, "epoch after which hyperparameters are optimised");
    app->add_option("--neumann-t", neumann_t, "Neumann series terms");
    app->add_option("--neumann-alpha", neumann_alpha, "Neumann series step size");
    app->add_option("--estimator", estimator, "ift, darts or exact")->check(CLI::IsMember({"ift", "darts", "exact"}));
    app->add_option("--arm", arms, "baseline, A_SHA, A, AW, AWS or darts (repeatable)");
    app->add_option("--seed", seed, "base seed for model init, augmentation noise and distortion");
    app->add_option("--folds", folds, "number of split folds");
    app->add_option("--out", out, "output directory");
    app->add_option("--set", sets, "override any config entry, section.key=value (repeatable)");
  }

  config::Experiment resolve() const {
    auto e = config_path.empty() ? config::desk_experiment() : config::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error("--set expects section.key=value, got " + s);
      config::set_value(e, s.substr(0, eq), s.substr(eq + 1));
    }
    auto& b = e.suite.base;
    if (ir) b.distortion.ir = *ir;
    if (nr) b.distortion.nr = *nr;
    if (epochs) {
      b.epochs = *epochs;
      if (!ho_start) b.ho_start = *epochs / 2;
    }
    if (ho_start) b.ho_start = *ho_start;
    if (neumann_t) b.neumann.terms = *neumann_t;
    if (neumann_alpha) {
      b.neumann.alpha = *neumann_alpha;
      e.neumann_alpha_set = true;
    }
    if (estimator) b.neumann.estimator = hg::parse_estimator(*estimator);
    if (seed) {
      b.model_seed = b.noise_seed = *seed;
      b.distortion.seed = *seed;
    }
    if (folds) e.suite.folds = *folds;
    if (out) b.output_dir = *out;
    if (!arms.empty()) {
      e.suite.arms.clear();
      for (const auto& a : arms) e.suite.arms.push_back(run::parse_arm(a));
    }
    e.finalize();
    return e;
  }
};

void print_suite(const std::vector<run::ArmSummary>& arms) {
  std::cout << run::summary_json(arms).dump(1) << '\n';
}

// A single run on fold 0 of the configured data.
int single_run(const config::Experiment& e, run::Arm arm) {
  auto [pool, test] = config::load_data(e.data);
  auto [train, valid] = data::stratified_split(pool, e.suite.valid_fraction, e.suite.base.distortion.seed);
  auto cfg = e.suite.base;
  cfg.arm = arm;
  auto distorted = data::distort(train, cfg.distortion);
  auto result = run::run(cfg, distorted, e.suite.valid_from_test ? test : valid, test);
  const auto& last = result.history.back();
  std::cout << run::to_json(last).dump() << '\n';
  std::cout << "test error " << 100 * result.final_eval.error << "%, pass ratio " << result.pass_ratio() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-point dataset hyperparameter optimisation by implicit differentiation"};
  app.require_subcommand(1);

  std::int64_t gen_classes = 10, gen_per_class = 200, gen_size = 16;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "write a synthetic glyph dataset container");
  generate->add_option("--classes", gen_classes, "number of classes (even)");
  generate->add_option("--n-per-class", gen_per_class, "images per class");
  generate->add_option("--size", gen_size, "image side in pixels");
  generate->add_option("--seed", gen_seed, "generation seed");
  generate->add_option("--out", gen_out, "container path")->required();

  std::string dist_in, dist_out;
  data::DistortionSpec dist_spec;
  auto* distort = app.add_subcommand("distort", "apply class imbalance then label noise to a container");
  distort->add_option("--in", dist_in, "input container")->required()->check(CLI::ExistingFile);
  distort->add_option("--out", dist_out, "output container")->required();
  distort->add_option("--ir", dist_spec.ir, "class imbalance ratio");
  distort->add_option("--nr", dist_spec.nr, "label noise ratio");
  distort->add_option("--seed", dist_spec.seed, "distortion seed");

  ExperimentFlags train_flags, autodo_flags, ablate_flags, swap_flags;
  auto* train = app.add_subcommand("train", "plain baseline training on fold 0");
  train_flags.attach(train);
  auto* autodo_cmd = app.add_subcommand("autodo", "bilevel training of one arm on fold 0 (default AWS)");
  autodo_flags.attach(autodo_cmd);
  auto* ablate = app.add_subcommand("ablate", "run every arm over the folds and print mean and std");
  ablate_flags.attach(ablate);
  bool swap = false, train_on_all = false;
  ablate->add_flag("--swap-valid-test", swap, "also supervise with the test set and report the gap");
  ablate->add_flag("--train-on-all", train_on_all, "train on the distorted split plus the validation split");

  std::string check_out;
  bool check_full = false;
  auto* check = app.add_subcommand("check", "run the oracle suite");
  check->add_option("--out", check_out, "write the JSON report here");
  check->add_flag("--full", check_full, "include the slow checks (Fisher at 50k samples)");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "aggregate summary.json files under a directory");
  report->add_option("--dir", report_dir, "directory of runs")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) {
      auto d = data::make_synthetic(gen_per_class, gen_classes, gen_size, gen_seed);
      data::save_container(d, gen_out);
      std::cout << "wrote " << d.size() << " images to " << gen_out << '\n';
    } else if (*distort) {
      auto d = data::distort(data::load_container(dist_in), dist_spec);
      data::save_container(d, dist_out);
      std::cout << "kept " << d.size() << " records, " << std::llround(dist_spec.nr * d.size()) << " relabelled\n";
    } else if (*train) {
      return single_run(train_flags.resolve(), run::Arm::baseline);
    } else if (*autodo_cmd) {
      auto e = autodo_flags.resolve();
      return single_run(e, autodo_flags.arms.empty() ? run::Arm::aws : e.suite.arms.front());
    } else if (*ablate) {
      auto e = ablate_flags.resolve();
      e.suite.train_on_all = train_on_all;
      auto [pool, test] = config::load_data(e.data);
      if (swap) {
        std::cout << run::swap_valid_for_test(e.suite, pool, test).dump(1) << '\n';
      } else {
        print_suite(run::run_ablation_suite(e.suite, pool, test));
      }
    } else if (*check) {
      auto results = checks::run_all(check_full);
      auto doc = checks::to_json(results);
      for (const auto& r : results) std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
      if (!check_out.empty()) std::ofstream(check_out) << doc.dump(1) << '\n';
      for (const auto& r : results)
        if (!r.passed) return 1;
    } else if (*report) {
      std::cout << run::report(report_dir);
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
