#include "autodo/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <atomic>
#include <future>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "autodo/autograd.hpp"
#include "autodo/seeding.hpp"

namespace autodo::run {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::uint64_t kInnerPhase = 0, kOuterPhase = 1, kValidPhase = 2;

std::vector<std::int64_t> permutation(std::int64_t n, std::mt19937_64 rng) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

std::vector<std::vector<std::int64_t>> batches_of(const std::vector<std::int64_t>& order, std::int64_t size) {
  std::vector<std::vector<std::int64_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(size))
    out.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + static_cast<std::size_t>(size)));
  return out;
}

// Adam whose moments and step counts live per table row, so rows outside a
// batch are left exactly as they were.
class RowAdam {
 public:
  RowAdam(std::int64_t rows, std::int64_t width, AdamConfig cfg)
      : width_(width), cfg_(cfg), m_(rows * width, 0.0), v_(m_.size(), 0.0), steps_(rows, 0) {}

  void step(std::vector<double>& block, std::span<const std::int64_t> rows, const Tensor& grad) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto row = rows[r];
      const double t = static_cast<double>(++steps_[row]);
      const double c1 = 1.0 - std::pow(cfg_.beta1, t), c2 = 1.0 - std::pow(cfg_.beta2, t);
      for (std::int64_t k = 0; k < width_; ++k) {
        const auto i = row * width_ + k;
        const double g = grad[r * width_ + k];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        block[i] -= cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
      }
    }
  }

 private:
  std::int64_t width_;
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::vector<std::int64_t> steps_;
};

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

void write_confusion(const Evaluation& e, const fs::path& path) {
  std::ofstream out(path);
  out << "true\\pred";
  for (std::int64_t c = 0; c < e.classes; ++c) out << ',' << c;
  out << '\n';
  for (std::int64_t r = 0; r < e.classes; ++r) {
    out << r;
    for (std::int64_t c = 0; c < e.classes; ++c) out << ',' << e.confusion[r * e.classes + c];
    out << '\n';
  }
}

json config_json(const RunConfig& c) {
  json ops = json::array();
  for (const auto& o : c.aug.ops) ops.push_back({{"kind", aug::op_name(o.kind)}, {"mu", o.mu}, {"rng", o.rng}});
  return {{"epochs", c.epochs},
          {"ho_start", c.ho_start},
          {"batch", c.batch},
          {"arm", arm_name(c.arm)},
          {"sgd", {{"lr", c.sgd.lr}, {"momentum", c.sgd.momentum}}},
          {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}}},
          {"neumann",
           {{"T", c.neumann.terms}, {"alpha", c.neumann.alpha}, {"estimator", hg::estimator_name(c.neumann.estimator)}}},
          {"distortion", {{"ir", c.distortion.ir}, {"nr", c.distortion.nr}, {"seed", c.distortion.seed}}},
          {"model", {{"kind", task::kind_name(c.model.kind)}, {"conv_channels", c.model.conv_channels}, {"hidden", c.model.hidden}}},
          {"aug", {{"temperature", c.aug.temperature}, {"straight_through", c.aug.straight_through}, {"ops", ops}}},
          {"seeds", {{"model", c.model_seed}, {"noise", c.noise_seed}}}};
}

}  // namespace

std::string arm_name(Arm arm) {
  switch (arm) {
    case Arm::baseline: return "baseline";
    case Arm::shared_a: return "A_SHA";
    case Arm::a: return "A";
    case Arm::aw: return "AW";
    case Arm::aws: return "AWS";
    case Arm::darts: return "darts";
  }
  return "?";
}

Arm parse_arm(const std::string& name) {
  for (Arm a : {Arm::baseline, Arm::shared_a, Arm::a, Arm::aw, Arm::aws, Arm::darts})
    if (name == arm_name(a)) return a;
  throw Error("unknown arm '" + name + "' (expected baseline, A_SHA, A, AW, AWS or darts)");
}

hyper::Enabled arm_blocks(Arm arm) {
  switch (arm) {
    case Arm::baseline: return {false, false, false, false};
    case Arm::shared_a: return {true, false, false, true};
    case Arm::a: return {true, false, false, false};
    case Arm::aw: return {true, true, false, false};
    case Arm::aws:
    case Arm::darts: return {true, true, true, false};
  }
  return {};
}

void RunConfig::validate() const {
  if (epochs < 1) throw Error("epochs must be positive");
  if (ho_start < 0 || ho_start > epochs) throw Error("ho_start must lie in [0, epochs]");
  if (batch < 1) throw Error("batch size must be positive");
  if (!(sgd.lr > 0.0)) throw Error("inner learning rate must be positive");
  distortion.validate();
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json to_json(const MetricsRecord& m) {
  json j = {{"epoch", m.epoch},
            {"train_loss", m.train_loss},
            {"valid_loss", m.valid_loss},
            {"test_error", m.test_error},
            {"per_class_accuracy", m.per_class_accuracy},
            {"class_accuracy_std", m.class_accuracy_std},
            {"passes", {{"inner", m.passes.inner}, {"outer", m.passes.outer}}}};
  if (m.wall_seconds) j["wall_seconds"] = *m.wall_seconds;
  return j;
}

Evaluation evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, std::int64_t classes) {
  Evaluation e;
  e.classes = classes;
  e.confusion.assign(static_cast<std::size_t>(classes * classes), 0);
  std::int64_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++e.confusion[truth[i] * classes + predicted[i]];
    wrong += truth[i] != predicted[i];
  }
  e.error = truth.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(truth.size());
  std::vector<double> present;
  for (std::int64_t c = 0; c < classes; ++c) {
    std::int64_t row = 0;
    for (std::int64_t k = 0; k < classes; ++k) row += e.confusion[c * classes + k];
    const double acc = row ? static_cast<double>(e.confusion[c * classes + c]) / static_cast<double>(row) : 0.0;
    e.per_class_accuracy.push_back(acc);
    if (row) present.push_back(acc);
  }
  e.class_accuracy_std = population_std(present);
  return e;
}

Evaluation evaluate(const task::TaskModel& model, const data::DatasetView& test, std::int64_t batch) {
  std::vector<int> predicted;
  predicted.reserve(static_cast<std::size_t>(test.size()));
  const auto c = model.spec().classes;
  for (std::int64_t start = 0; start < test.size(); start += batch) {
    std::vector<std::int64_t> pos;
    for (std::int64_t i = start; i < std::min(test.size(), start + batch); ++i) pos.push_back(i);
    Tensor logits = model.predict(test.batch_images(pos));
    for (std::size_t r = 0; r < pos.size(); ++r) {
      const double* row = logits.values().data() + r * c;
      predicted.push_back(static_cast<int>(std::max_element(row, row + c) - row));
    }
  }
  return evaluate_predictions(test.labels, predicted, c);
}

double RunResult::pass_ratio() const {
  if (history.empty() || history.back().passes.inner == 0) return 0.0;
  const auto& p = history.back().passes;
  return static_cast<double>(p.inner + p.outer) / static_cast<double>(p.inner);
}

RunResult run(const RunConfig& cfg, const data::DatasetView& train, const data::DatasetView& hyper_valid,
              const data::DatasetView& test) {
  cfg.validate();
  if (train.size() == 0) throw Error("empty train set");
  const auto started = std::chrono::steady_clock::now();

  task::ModelSpec spec = cfg.model;
  spec.channels = train.channels;
  spec.height = train.height;
  spec.width = train.width;
  spec.classes = train.classes;
  task::TaskModel model(spec, cfg.model_seed);

  const auto enabled = arm_blocks(cfg.arm);
  const auto aug_ops = static_cast<std::int64_t>(cfg.aug.ops.size());
  auto table = hyper::HyperTable::create(train.global_index, train.classes, aug_ops, enabled);
  if (enabled.soft_labels) hyper::init_soft_labels(table, train.labels, cfg.soft_label_alpha);
  const bool learns = enabled.augment || enabled.weights || enabled.soft_labels;
  hg::NeumannConfig neumann = cfg.neumann;
  if (cfg.arm == Arm::darts) neumann.estimator = hg::Estimator::darts_identity;

  RowAdam adam_m(table.aug_rows(), aug_ops, cfg.adam), adam_b(table.aug_rows(), aug_ops, cfg.adam);
  RowAdam adam_w(table.rows, 1, cfg.adam), adam_s(table.rows, table.classes, cfg.adam);
  std::vector<double> velocity(static_cast<std::size_t>(model.param_count()), 0.0);

  std::ofstream metrics;
  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    metrics.open(cfg.output_dir / "metrics.jsonl");
  }

  RunResult result{{}, model, table, {}};
  PassCounters passes;
  std::int64_t valid_cursor = 0;
  std::vector<std::int64_t> valid_order;
  std::uint64_t valid_cycle = 0;
  auto next_valid_batch = [&]() {
    std::vector<std::int64_t> pos;
    while (static_cast<std::int64_t>(pos.size()) < std::min(cfg.batch, hyper_valid.size())) {
      if (valid_cursor >= static_cast<std::int64_t>(valid_order.size())) {
        valid_order = permutation(hyper_valid.size(), make_rng({cfg.noise_seed, kValidPhase, valid_cycle++}));
        valid_cursor = 0;
      }
      pos.push_back(valid_order[valid_cursor++]);
    }
    return hg::ValidBatch{hyper_valid.batch_images(pos), hyper_valid.batch_labels(pos)};
  };
  auto make_train_batch = [&](const std::vector<std::int64_t>& rows, std::mt19937_64 rng) {
    hg::TrainBatch b{train.batch_images(rows), train.batch_labels(rows), rows, {}};
    if (enabled.augment) b.noise = aug::draw_noise(static_cast<std::int64_t>(rows.size()), aug_ops, rng);
    return b;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Inner sweep: update theta, hyperparameters frozen.
    const auto order = permutation(train.size(), make_rng({cfg.noise_seed, kInnerPhase, static_cast<std::uint64_t>(epoch)}));
    const auto batches = batches_of(order, cfg.batch);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      auto batch = make_train_batch(
          batches[bi], make_rng({cfg.noise_seed, kInnerPhase, static_cast<std::uint64_t>(epoch), bi}));
      Tensor theta = model.param_leaf();
      Tensor loss;
      if (cfg.arm == Arm::baseline) {
        loss = task::valid_loss(model.forward(theta, batch.images), batch.labels);
      } else {
        auto hypers = hyper::gather(table, batch.rows, /*as_leaves=*/false);
        loss = hg::batch_train_loss(model, theta, batch, table, hypers, cfg.aug);
      }
      if (!std::isfinite(loss.item()))
        throw Error("non-finite train loss at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(bi));
      Tensor g = grad(loss, theta);
      passes.inner += 2;
      loss_sum += loss.item() * static_cast<double>(batches[bi].size());
      auto& p = model.params();
      for (std::size_t i = 0; i < p.size(); ++i) {
        velocity[i] = cfg.sgd.momentum * velocity[i] + g[i];
        p[i] -= cfg.sgd.lr * velocity[i];
      }
    }

    // Outer sweep: update the hyperparameters, theta frozen.
    if (learns && epoch >= cfg.ho_start) {
      const auto outer_order =
          permutation(train.size(), make_rng({cfg.noise_seed, kOuterPhase, static_cast<std::uint64_t>(epoch)}));
      auto outer_batches = batches_of(outer_order, cfg.batch);
      if (cfg.outer_batch_limit > 0 && static_cast<std::int64_t>(outer_batches.size()) > cfg.outer_batch_limit)
        outer_batches.resize(static_cast<std::size_t>(cfg.outer_batch_limit));
      for (std::size_t bi = 0; bi < outer_batches.size(); ++bi) {
        auto batch = make_train_batch(
            outer_batches[bi], make_rng({cfg.noise_seed, kOuterPhase, static_cast<std::uint64_t>(epoch), bi}));
        auto valid = next_valid_batch();
        auto step = hg::hypergrad_step(model, table, batch, valid, cfg.aug, neumann);
        passes.outer += step.estimate.passes;
        const std::vector<std::int64_t> shared_row = {0};
        const std::span<const std::int64_t> aug_rows =
            enabled.shared_augment ? std::span<const std::int64_t>(shared_row) : std::span<const std::int64_t>(batch.rows);
        if (step.lambda_m.defined()) adam_m.step(table.lambda_m, aug_rows, step.lambda_m);
        if (step.lambda_b.defined()) adam_b.step(table.lambda_b, aug_rows, step.lambda_b);
        if (step.lambda_w.defined()) adam_w.step(table.lambda_w, batch.rows, step.lambda_w);
        if (step.lambda_s.defined()) adam_s.step(table.lambda_s, batch.rows, step.lambda_s);
      }
    }

    MetricsRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    if (hyper_valid.size() > 0) {
      NoGradGuard off;
      std::vector<std::int64_t> all(static_cast<std::size_t>(hyper_valid.size()));
      std::iota(all.begin(), all.end(), 0);
      rec.valid_loss = task::valid_loss(model.predict(hyper_valid.batch_images(all)), hyper_valid.labels).item();
    }
    const auto eval = evaluate(model, test);
    rec.test_error = eval.error;
    rec.per_class_accuracy = eval.per_class_accuracy;
    rec.class_accuracy_std = eval.class_accuracy_std;
    rec.passes = passes;
    if (cfg.record_wall_time)
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (metrics.is_open()) metrics << to_json(rec).dump() << '\n' << std::flush;
    result.history.push_back(std::move(rec));
    result.final_eval = eval;
  }

  result.model = model;
  result.table = table;
  if (!cfg.output_dir.empty()) {
    write_confusion(result.final_eval, cfg.output_dir / "confusion.csv");
    model.save(cfg.output_dir / "model.bin");
    hyper::save_table(table, cfg.output_dir / "hypertable.bin");
    hyper::write_table_summary(table, cfg.output_dir / "hypertable.json");
    json summary = {{"arm", arm_name(cfg.arm)},
                    {"config", config_json(cfg)},
                    {"test_error", result.final_eval.error},
                    {"per_class_accuracy", result.final_eval.per_class_accuracy},
                    {"class_accuracy_std", result.final_eval.class_accuracy_std},
                    {"passes", {{"inner", passes.inner}, {"outer", passes.outer}}},
                    {"pass_ratio", result.pass_ratio()}};
    std::ofstream(cfg.output_dir / "summary.json") << summary.dump(1) << '\n';
  }
  return result;
}

std::vector<ArmSummary> run_ablation_suite(const SuiteConfig& suite, const data::DatasetView& pool,
                                           const data::DatasetView& test) {
  if (suite.folds < 1) throw Error("need at least one fold");
  if (suite.arms.empty()) throw Error("no arms requested");

  struct Job {
    std::size_t arm_slot;
    int fold;
  };
  std::vector<Job> jobs;
  for (int f = 0; f < suite.folds; ++f)
    for (std::size_t a = 0; a < suite.arms.size(); ++a) jobs.push_back({a, f});

  // Folds share nothing mutable; each job rebuilds its fold deterministically.
  struct FoldData {
    data::DatasetView train, valid;
  };
  std::vector<FoldData> folds;
  for (int f = 0; f < suite.folds; ++f) {
    auto [tr, va] = data::stratified_split(pool, suite.valid_fraction, suite.base.distortion.seed + static_cast<std::uint64_t>(f));
    data::DistortionSpec spec = suite.base.distortion;
    spec.seed += static_cast<std::uint64_t>(f);
    auto distorted = data::distort(tr, spec);
    if (suite.train_on_all) distorted = data::concat(distorted, va);
    folds.push_back({std::move(distorted), std::move(va)});
  }

  std::vector<Evaluation> results(jobs.size());
  auto do_job = [&](std::size_t j) {
    const auto& job = jobs[j];
    RunConfig cfg = suite.base;
    cfg.arm = suite.arms[job.arm_slot];
    cfg.model_seed = suite.base.model_seed + static_cast<std::uint64_t>(job.fold);
    cfg.noise_seed = suite.base.noise_seed + static_cast<std::uint64_t>(job.fold);
    if (!suite.base.output_dir.empty())
      cfg.output_dir = suite.base.output_dir / (arm_name(cfg.arm) + "_fold" + std::to_string(job.fold));
    const auto& fd = folds[job.fold];
    results[j] = run(cfg, fd.train, suite.valid_from_test ? test : fd.valid, test).final_eval;
  };

  const auto workers = static_cast<std::size_t>(std::max(1, suite.workers));
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> pool_threads;
  for (std::size_t w = 0; w < std::min(workers, jobs.size()); ++w)
    pool_threads.push_back(std::async(std::launch::async, [&] {
      for (std::size_t j = next++; j < jobs.size(); j = next++) do_job(j);
    }));
  for (auto& t : pool_threads) t.get();

  std::vector<ArmSummary> out;
  for (std::size_t a = 0; a < suite.arms.size(); ++a) {
    ArmSummary s{suite.arms[a], {}, {}, 0, 0, 0};
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].arm_slot != a) continue;
      s.errors.push_back(results[j].error);
      s.class_stds.push_back(results[j].class_accuracy_std);
    }
    s.mean_error = mean(s.errors);
    s.std_error = stddev(s.errors);
    s.mean_class_std = mean(s.class_stds);
    out.push_back(std::move(s));
  }
  if (!suite.base.output_dir.empty()) {
    fs::create_directories(suite.base.output_dir);
    std::ofstream(suite.base.output_dir / "suite.json") << summary_json(out).dump(1) << '\n';
  }
  return out;
}

json swap_valid_for_test(const SuiteConfig& suite, const data::DatasetView& pool, const data::DatasetView& test) {
  SuiteConfig held = suite, swapped = suite;
  held.valid_from_test = false;
  swapped.valid_from_test = true;
  if (!suite.base.output_dir.empty()) {
    held.base.output_dir = suite.base.output_dir / "valid";
    swapped.base.output_dir = suite.base.output_dir / "test";
  }
  const auto a = run_ablation_suite(held, pool, test);
  const auto b = run_ablation_suite(swapped, pool, test);
  json rows = json::array();
  for (std::size_t i = 0; i < a.size(); ++i)
    rows.push_back({{"arm", arm_name(a[i].arm)},
                    {"valid_supervised", a[i].mean_error},
                    {"test_supervised", b[i].mean_error},
                    {"gap", b[i].mean_error - a[i].mean_error},
                    {"fold_std", a[i].std_error}});
  return rows;
}

json summary_json(const std::vector<ArmSummary>& arms) {
  json rows = json::array();
  for (const auto& s : arms)
    rows.push_back({{"arm", arm_name(s.arm)},
                    {"errors", s.errors},
                    {"mean_error", s.mean_error},
                    {"std_error", s.std_error},
                    {"class_accuracy_std", s.class_stds},
                    {"mean_class_accuracy_std", s.mean_class_std}});
  return rows;
}

std::string report(const fs::path& root) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_arm;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.path().filename() != "summary.json") continue;
    std::ifstream in(entry.path());
    auto j = json::parse(in);
    auto& slot = by_arm[j.at("arm").get<std::string>()];
    slot.first.push_back(j.at("test_error").get<double>());
    slot.second.push_back(j.at("class_accuracy_std").get<double>());
  }
  std::ostringstream out;
  out << std::left << std::setw(10) << "arm" << std::setw(6) << "runs" << std::setw(20) << "test error %"
      << "class acc std %\n";
  for (const auto& [arm, vals] : by_arm) {
    std::ostringstream err, cls;
    err << std::fixed << std::setprecision(2) << 100 * mean(vals.first) << " +- " << 100 * stddev(vals.first);
    cls << std::fixed << std::setprecision(2) << 100 * mean(vals.second);
    out << std::setw(10) << arm << std::setw(6) << vals.first.size() << std::setw(20) << err.str() << cls.str() << '\n';
  }
  return out.str();
}

}  // namespace autodo::run
