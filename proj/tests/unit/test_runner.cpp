#include <cmath>
#include <filesystem>
#include <fstream>

#include "autodo/config.hpp"
#include "autodo/dataforge.hpp"
#include "autodo/runner.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace autodo;
using namespace autodo::run;

namespace {

struct Tiny {
  data::DatasetView pool = data::make_synthetic(6, 4, 8, 2);
  data::DatasetView test = data::make_synthetic(3, 4, 8, 3);
  data::DatasetView train, valid;
  RunConfig cfg;

  Tiny() {
    auto [t, v] = data::stratified_split(pool, 0.34, 1);
    train = std::move(t);  // 16 points: two batches of 8
    valid = std::move(v);
    cfg.epochs = 4;
    cfg.ho_start = 2;
    cfg.batch = 8;
    cfg.model = {task::Kind::tinycnn, 1, 8, 8, 4, {}, {2, 2}};
    cfg.record_wall_time = false;
  }
};

}  // namespace

TEST_CASE("pass counters follow the schedule") {
  Tiny t;
  REQUIRE(t.train.size() == 16);
  for (int terms : {0, 3, 5}) {
    t.cfg.neumann.terms = terms;
    t.cfg.arm = Arm::aws;
    auto r = run::run(t.cfg, t.train, t.valid, t.test);
    const auto& p = r.history.back().passes;
    CHECK(p.inner == 2 * 2 * 4);
    CHECK(p.outer == (5 + terms) * 2 * (4 - 2));
  }
  t.cfg.neumann.terms = 5;
  CHECK(run::run(t.cfg, t.train, t.valid, t.test).pass_ratio() == doctest::Approx(3.5));
  t.cfg.arm = Arm::darts;
  CHECK(run::run(t.cfg, t.train, t.valid, t.test).pass_ratio() == doctest::Approx(2.25));
  t.cfg.arm = Arm::baseline;
  CHECK(run::run(t.cfg, t.train, t.valid, t.test).pass_ratio() == 1.0);

  t.cfg.arm = Arm::aws;
  t.cfg.outer_batch_limit = 1;
  CHECK(run::run(t.cfg, t.train, t.valid, t.test).history.back().passes.outer == 10 * 1 * 2);
}

TEST_CASE("runs are deterministic") {
  Tiny t;
  auto a = run::run(t.cfg, t.train, t.valid, t.test);
  auto b = run::run(t.cfg, t.train, t.valid, t.test);
  CHECK(a.model.params() == b.model.params());
  CHECK(a.table.lambda_m == b.table.lambda_m);
  CHECK(a.table.lambda_s == b.table.lambda_s);
  REQUIRE(a.history.size() == 4);
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(to_json(a.history[i]) == to_json(b.history[i]));
  t.cfg.noise_seed = 2;
  CHECK(run::run(t.cfg, t.train, t.valid, t.test).model.params() != a.model.params());
}

TEST_CASE("no outer sweep before the start epoch") {
  Tiny t;
  t.cfg.ho_start = t.cfg.epochs;
  auto r = run::run(t.cfg, t.train, t.valid, t.test);
  auto fresh = hyper::HyperTable::create(t.train.global_index, 4, 6, arm_blocks(Arm::aws));
  hyper::init_soft_labels(fresh, t.train.labels, t.cfg.soft_label_alpha);
  CHECK(r.table.lambda_m == fresh.lambda_m);
  CHECK(r.table.lambda_b == fresh.lambda_b);
  CHECK(r.table.lambda_w == fresh.lambda_w);
  CHECK(r.table.lambda_s == fresh.lambda_s);
  CHECK(r.history.back().passes.outer == 0);

  // the inner sweeps before the start epoch do not depend on it
  Tiny u;
  auto later = run::run(u.cfg, u.train, u.valid, u.test);
  for (int e = 0; e < u.cfg.ho_start; ++e) CHECK(to_json(later.history[e]) == to_json(r.history[e]));
}

TEST_CASE("rows outside every outer batch keep their values") {
  Tiny t;
  t.cfg.outer_batch_limit = 1;
  t.cfg.epochs = 3;
  t.cfg.ho_start = 2;  // a single outer batch of 8 rows
  t.cfg.model.conv_channels = {4, 8};  // two channels leave dead input gradients
  auto r = run::run(t.cfg, t.train, t.valid, t.test);
  std::int64_t moved = 0, still = 0;
  for (std::int64_t row = 0; row < r.table.rows; ++row) {
    const bool changed = r.table.lambda_w[row] != 0.0;
    bool aug_changed = false;
    // magnitudes of ops gated off receive no gradient; gate logits always do
    for (std::int64_t k = 0; k < 6; ++k) aug_changed |= r.table.lambda_b[row * 6 + k] != hyper::initial_gate_logit();
    CHECK(changed == aug_changed);
    (changed ? moved : still) += 1;
  }
  CHECK(moved == 8);
  CHECK(still == 8);
}

TEST_CASE("shared augmentation learns one row") {
  Tiny t;
  t.cfg.arm = Arm::shared_a;
  auto r = run::run(t.cfg, t.train, t.valid, t.test);
  CHECK(r.table.aug_rows() == 1);
  bool changed = false;
  for (double v : r.table.lambda_m) changed |= v != 0.0;
  CHECK(changed);
  for (double v : r.table.lambda_w) CHECK(v == 0.0);
}

TEST_CASE("evaluation from predictions") {
  std::vector<int> truth = {0, 0, 1, 1, 2, 2, 2, 2};
  auto perfect = evaluate_predictions(truth, truth, 3);
  CHECK(perfect.error == 0.0);
  CHECK(perfect.class_accuracy_std == 0.0);
  CHECK(perfect.per_class_accuracy == std::vector<double>{1, 1, 1});

  std::vector<int> pred = {0, 1, 1, 1, 2, 2, 0, 0};
  auto e = evaluate_predictions(truth, pred, 3);
  CHECK(e.error == doctest::Approx(3.0 / 8));
  CHECK(e.confusion == std::vector<std::int64_t>{1, 1, 0, 0, 2, 0, 2, 0, 2});
  CHECK(e.per_class_accuracy == std::vector<double>{0.5, 1.0, 0.5});
  // population std of (0.5, 1, 0.5)
  CHECK(e.class_accuracy_std == doctest::Approx(std::sqrt(2.0) / 6));

  // an absent class does not enter the spread
  auto gap = evaluate_predictions(std::vector<int>{0, 0}, std::vector<int>{0, 1}, 3);
  CHECK(gap.per_class_accuracy[2] == 0.0);
  CHECK(gap.class_accuracy_std == 0.0);
}

TEST_CASE("mean and sample standard deviation") {
  std::vector<double> v = {2, 4, 4, 4, 5, 5, 7, 9};
  CHECK(mean(v) == 5.0);
  CHECK(stddev(v) == doctest::Approx(std::sqrt(32.0 / 7)));
  CHECK(stddev(std::vector<double>{3.0}) == 0.0);
  CHECK(mean(std::vector<double>{}) == 0.0);
}

TEST_CASE("validation source swap without hyper-optimisation") {
  SuiteConfig suite;
  Tiny t;
  suite.base = t.cfg;
  suite.base.ho_start = suite.base.epochs;
  suite.base.distortion = {2, 0.1, 5};
  suite.arms = {Arm::baseline, Arm::aws};
  suite.folds = 2;
  suite.valid_fraction = 0.34;
  auto doc = swap_valid_for_test(suite, t.pool, t.test);
  REQUIRE(doc.size() == 2);
  for (const auto& row : doc) CHECK(row["gap"] == 0.0);
}

TEST_CASE("ablation suite writes its outputs") {
  Tiny t;
  SuiteConfig suite;
  suite.base = t.cfg;
  suite.base.output_dir = std::filesystem::temp_directory_path() / "autodo_test_suite";
  std::filesystem::remove_all(suite.base.output_dir);
  suite.arms = {Arm::baseline, Arm::a};
  suite.folds = 2;
  suite.valid_fraction = 0.34;
  suite.base.distortion = {2, 0.0, 5};
  auto arms = run_ablation_suite(suite, t.pool, t.test);
  REQUIRE(arms.size() == 2);
  CHECK(arms[0].errors.size() == 2);
  CHECK(arms[1].mean_error == doctest::Approx(mean(arms[1].errors)));
  const auto dir = suite.base.output_dir / "A_fold1";
  for (const char* f : {"metrics.jsonl", "confusion.csv", "model.bin", "hypertable.bin", "hypertable.json", "summary.json"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream in(dir / "metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"] == ++lines);
  }
  CHECK(lines == t.cfg.epochs);
  CHECK(std::filesystem::exists(suite.base.output_dir / "suite.json"));
  auto table = report(suite.base.output_dir);
  CHECK(table.find("baseline") != std::string::npos);
  CHECK(table.find("A ") != std::string::npos);
}

TEST_CASE("configuration parsing") {
  auto e = config::parse(R"(
[run]
epochs = 12
ho_start = 4
arms = baseline, AWS
[inner]
lr = 0.02
[neumann]
terms = 3
[augment_ops]
rotate = 0 30
)");
  CHECK(e.suite.base.epochs == 12);
  CHECK(e.suite.base.ho_start == 4);
  CHECK(e.suite.arms == std::vector<Arm>{Arm::baseline, Arm::aws});
  CHECK(e.suite.base.neumann.terms == 3);
  CHECK(e.suite.base.neumann.alpha == 0.02);  // follows the inner rate
  REQUIRE(e.suite.base.aug.ops.size() == 1);
  CHECK(e.suite.base.aug.ops[0].rng == 30.0);

  auto fixed = config::parse("[inner]\nlr = 0.02\n[neumann]\nalpha = 0.5\n");
  CHECK(fixed.suite.base.neumann.alpha == 0.5);

  CHECK_THROWS_AS(config::parse("[run]\nepoch = 3\n"), Error);
  CHECK_THROWS_AS(config::parse("[run]\nepochs = many\n"), Error);
  CHECK_THROWS_AS(config::parse("[augment_ops]\nrotate = 0\n"), Error);
  CHECK_THROWS_AS(config::parse("[run]\narms = AWSS\n"), Error);

  auto d = config::desk_experiment();
  config::set_value(d, "distortion.nr", "0.2");
  CHECK(d.suite.base.distortion.nr == 0.2);
  CHECK_THROWS_AS(config::set_value(d, "distortion.gamma", "1"), Error);
}

TEST_CASE("run configuration validation") {
  Tiny t;
  t.cfg.ho_start = 5;
  CHECK_THROWS_AS(run::run(t.cfg, t.train, t.valid, t.test), Error);
  t.cfg.ho_start = 2;
  t.cfg.batch = 0;
  CHECK_THROWS_AS(run::run(t.cfg, t.train, t.valid, t.test), Error);
  CHECK_THROWS_AS(parse_arm("B"), Error);
  for (Arm a : {Arm::baseline, Arm::shared_a, Arm::a, Arm::aw, Arm::aws, Arm::darts}) CHECK(parse_arm(arm_name(a)) == a);
}

TEST_CASE("shipped desk config matches the built-in defaults") {
  auto file = config::load(AUTODO_SOURCE_DIR "/configs/desk.ini");
  auto built = config::desk_experiment();
  built.finalize();
  CHECK(file.data.n_per_class == built.data.n_per_class);
  CHECK(file.data.image_size == built.data.image_size);
  CHECK(file.data.synthetic.noise_sigma == built.data.synthetic.noise_sigma);
  CHECK(file.data.synthetic.max_rotation_deg == built.data.synthetic.max_rotation_deg);
  CHECK(file.data.synthetic.max_shift_px == built.data.synthetic.max_shift_px);
  CHECK(file.suite.arms == built.suite.arms);
  CHECK(file.suite.folds == built.suite.folds);
  const auto& a = file.suite.base;
  const auto& b = built.suite.base;
  CHECK(a.epochs == b.epochs);
  CHECK(a.ho_start == b.ho_start);
  CHECK(a.sgd.lr == b.sgd.lr);
  CHECK(a.adam.lr == b.adam.lr);
  CHECK(a.neumann.alpha == b.neumann.alpha);
  CHECK(a.neumann.terms == b.neumann.terms);
  CHECK(a.model.conv_channels == b.model.conv_channels);
  CHECK(a.distortion.ir == b.distortion.ir);
  CHECK(a.distortion.nr == b.distortion.nr);
  REQUIRE(a.aug.ops.size() == b.aug.ops.size());
  for (std::size_t i = 0; i < a.aug.ops.size(); ++i) {
    CHECK(a.aug.ops[i].kind == b.aug.ops[i].kind);
    CHECK(a.aug.ops[i].mu == b.aug.ops[i].mu);
    CHECK(a.aug.ops[i].rng == b.aug.ops[i].rng);
  }
}
