// Acceptance run: one PASS/FAIL line per criterion. Criteria 10 and 11 share
// the desk-scale ablation, which takes most of the wall time.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "autodo/checks.hpp"
#include "autodo/config.hpp"
#include "autodo/runner.hpp"
#include "json.hpp"

using namespace autodo;

namespace {

// Wall-time budgets in seconds; criteria without an entry are unbounded.
const std::map<int, double> kBudget = {{1, 60}, {2, 60}, {3, 10}, {4, 120}, {6, 120}};
constexpr double kExperimentBudget = 45 * 60;

void print(const checks::CheckResult& r) {
  std::printf("%s [%d] %s: %s (%.1fs)\n", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(), r.detail.c_str(),
              r.seconds);
  std::fflush(stdout);
}

std::string pct(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::fixed << 100 * v << '%';
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  bool skip_experiment = false;
  std::string out_dir;
  app.add_flag("--skip-experiment", skip_experiment, "run criteria 1-9 only");
  app.add_option("--out", out_dir, "keep the ablation outputs and a results json here");
  CLI11_PARSE(app, argc, argv);

  std::vector<checks::CheckResult> results;
  using Check = checks::CheckResult (*)();
  const Check quick[] = {checks::gradient_correctness, checks::second_order_correctness, checks::neumann_convergence,
                         checks::bilevel_oracle, checks::estimator_relationship};
  for (auto fn : quick) results.push_back(fn());
  results.push_back(checks::fisher_diagnostic(50000));
  for (auto fn : {checks::soft_label_init, checks::complexity_accounting, checks::distortion_exactness})
    results.push_back(fn());

  for (auto& r : results) {
    if (auto it = kBudget.find(r.id); it != kBudget.end() && r.seconds > it->second) {
      r.passed = false;
      r.detail += "; over the " + std::to_string(static_cast<int>(it->second)) + "s budget";
    }
    print(r);
  }

  nlohmann::json experiment;
  if (!skip_experiment) {
    auto e = config::desk_experiment();
    e.finalize();
    if (!out_dir.empty()) e.suite.base.output_dir = std::filesystem::path(out_dir) / "ablation";
    const auto started = std::chrono::steady_clock::now();
    auto [pool, test] = config::load_data(e.data);
    auto arms = run::run_ablation_suite(e.suite, pool, test);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    std::map<run::Arm, const run::ArmSummary*> by;
    for (const auto& s : arms) by[s.arm] = &s;
    const auto err = [&](run::Arm a) { return by.at(a)->mean_error; };
    using run::Arm;
    const bool ordered = err(Arm::baseline) > err(Arm::a) && err(Arm::a) >= err(Arm::aw) && err(Arm::aw) >= err(Arm::aws);
    const bool margin = err(Arm::baseline) - err(Arm::aws) >= 0.03;
    const bool shared = err(Arm::a) < err(Arm::shared_a);
    const bool in_time = seconds < kExperimentBudget;

    std::ostringstream d10;
    d10 << "mean test error baseline " << pct(err(Arm::baseline)) << ", A_SHA " << pct(err(Arm::shared_a)) << ", A "
        << pct(err(Arm::a)) << ", AW " << pct(err(Arm::aw)) << ", AWS " << pct(err(Arm::aws)) << "; ordering "
        << (ordered ? "holds" : "broken") << ", AWS margin " << pct(err(Arm::baseline) - err(Arm::aws))
        << (margin ? " >= 3" : " < 3") << " points, A vs A_SHA " << (shared ? "better" : "not better") << ", "
        << static_cast<int>(seconds) << "s" << (in_time ? "" : " over the 45 min budget");
    results.push_back({10, "directional ablation", ordered && margin && shared && in_time, d10.str(), seconds});
    print(results.back());

    const double std_base = by.at(Arm::baseline)->mean_class_std, std_aws = by.at(Arm::aws)->mean_class_std;
    std::ostringstream d11;
    d11 << "class accuracy std baseline " << pct(std_base) << ", AWS " << pct(std_aws);
    results.push_back({11, "underrepresented classes", std_aws < std_base, d11.str(), 0.0});
    print(results.back());
    experiment = run::summary_json(arms);
    experiment.push_back({{"seconds", seconds}});
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "acceptance.json")
        << nlohmann::json{{"criteria", checks::to_json(results)}, {"ablation", experiment}}.dump(1) << '\n';
  }
  bool all = true;
  for (const auto& r : results) all = all && r.passed;
  std::printf("%s\n", all ? "all criteria passed" : "some criteria failed");
  return all ? 0 : 1;
}
