#include "autodo/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace autodo::config {

namespace {

namespace pt = boost::property_tree;

std::vector<std::int64_t> parse_int_list(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (item.find_first_not_of(" \t") != std::string::npos) out.push_back(std::stoll(item));
  return out;
}

std::vector<run::Arm> parse_arms(const std::string& text) {
  std::vector<run::Arm> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(run::parse_arm(item.substr(b, e - b + 1)));
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("expected a boolean, got '" + v + "'");
}

using Setter = std::function<void(Experiment&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.epochs", [](Experiment& e, const std::string& v) { e.suite.base.epochs = std::stoi(v); }},
      {"run.ho_start", [](Experiment& e, const std::string& v) { e.suite.base.ho_start = std::stoi(v); }},
      {"run.batch", [](Experiment& e, const std::string& v) { e.suite.base.batch = std::stoll(v); }},
      {"run.arms", [](Experiment& e, const std::string& v) { e.suite.arms = parse_arms(v); }},
      {"run.folds", [](Experiment& e, const std::string& v) { e.suite.folds = std::stoi(v); }},
      {"run.valid_fraction", [](Experiment& e, const std::string& v) { e.suite.valid_fraction = std::stod(v); }},
      {"run.workers", [](Experiment& e, const std::string& v) { e.suite.workers = std::stoi(v); }},
      {"run.output", [](Experiment& e, const std::string& v) { e.suite.base.output_dir = v; }},
      {"run.outer_batch_limit", [](Experiment& e, const std::string& v) { e.suite.base.outer_batch_limit = std::stoll(v); }},
      {"run.valid_from_test", [](Experiment& e, const std::string& v) { e.suite.valid_from_test = parse_bool(v); }},
      {"run.train_on_all", [](Experiment& e, const std::string& v) { e.suite.train_on_all = parse_bool(v); }},
      {"run.record_wall_time", [](Experiment& e, const std::string& v) { e.suite.base.record_wall_time = parse_bool(v); }},
      {"data.kind", [](Experiment& e, const std::string& v) { e.data.kind = v; }},
      {"data.n_per_class", [](Experiment& e, const std::string& v) { e.data.n_per_class = std::stoll(v); }},
      {"data.test_per_class", [](Experiment& e, const std::string& v) { e.data.test_per_class = std::stoll(v); }},
      {"data.classes", [](Experiment& e, const std::string& v) { e.data.classes = std::stoll(v); }},
      {"data.image_size", [](Experiment& e, const std::string& v) { e.data.image_size = std::stoll(v); }},
      {"data.seed", [](Experiment& e, const std::string& v) { e.data.seed = std::stoull(v); }},
      {"data.test_seed", [](Experiment& e, const std::string& v) { e.data.test_seed = std::stoull(v); }},
      {"data.images", [](Experiment& e, const std::string& v) { e.data.images = v; }},
      {"data.labels", [](Experiment& e, const std::string& v) { e.data.labels = v; }},
      {"data.test_images", [](Experiment& e, const std::string& v) { e.data.test_images = v; }},
      {"data.test_labels", [](Experiment& e, const std::string& v) { e.data.test_labels = v; }},
      {"data.container", [](Experiment& e, const std::string& v) { e.data.container = v; }},
      {"data.test_container", [](Experiment& e, const std::string& v) { e.data.test_container = v; }},
      {"data.noise_sigma", [](Experiment& e, const std::string& v) { e.data.synthetic.noise_sigma = std::stod(v); }},
      {"data.max_rotation", [](Experiment& e, const std::string& v) { e.data.synthetic.max_rotation_deg = std::stod(v); }},
      {"data.max_shift", [](Experiment& e, const std::string& v) { e.data.synthetic.max_shift_px = std::stod(v); }},
      {"distortion.ir", [](Experiment& e, const std::string& v) { e.suite.base.distortion.ir = std::stoi(v); }},
      {"distortion.nr", [](Experiment& e, const std::string& v) { e.suite.base.distortion.nr = std::stod(v); }},
      {"distortion.seed", [](Experiment& e, const std::string& v) { e.suite.base.distortion.seed = std::stoull(v); }},
      {"model.kind", [](Experiment& e, const std::string& v) { e.suite.base.model.kind = task::parse_kind(v); }},
      {"model.conv_channels", [](Experiment& e, const std::string& v) { e.suite.base.model.conv_channels = parse_int_list(v); }},
      {"model.hidden", [](Experiment& e, const std::string& v) { e.suite.base.model.hidden = parse_int_list(v); }},
      {"inner.lr", [](Experiment& e, const std::string& v) { e.suite.base.sgd.lr = std::stod(v); }},
      {"inner.momentum", [](Experiment& e, const std::string& v) { e.suite.base.sgd.momentum = std::stod(v); }},
      {"hyper.lr", [](Experiment& e, const std::string& v) { e.suite.base.adam.lr = std::stod(v); }},
      {"hyper.beta1", [](Experiment& e, const std::string& v) { e.suite.base.adam.beta1 = std::stod(v); }},
      {"hyper.beta2", [](Experiment& e, const std::string& v) { e.suite.base.adam.beta2 = std::stod(v); }},
      {"hyper.soft_label_alpha", [](Experiment& e, const std::string& v) { e.suite.base.soft_label_alpha = std::stod(v); }},
      {"neumann.terms", [](Experiment& e, const std::string& v) { e.suite.base.neumann.terms = std::stoi(v); }},
      {"neumann.alpha",
       [](Experiment& e, const std::string& v) {
         e.suite.base.neumann.alpha = std::stod(v);
         e.neumann_alpha_set = true;
       }},
      {"neumann.estimator", [](Experiment& e, const std::string& v) { e.suite.base.neumann.estimator = hg::parse_estimator(v); }},
      {"augment.temperature", [](Experiment& e, const std::string& v) { e.suite.base.aug.temperature = std::stod(v); }},
      {"augment.straight_through", [](Experiment& e, const std::string& v) { e.suite.base.aug.straight_through = parse_bool(v); }},
      {"augment.magnitude_norm", [](Experiment& e, const std::string& v) { e.suite.base.aug.magnitude_norm = std::stod(v); }},
      {"seeds.model", [](Experiment& e, const std::string& v) { e.suite.base.model_seed = std::stoull(v); }},
      {"seeds.noise", [](Experiment& e, const std::string& v) { e.suite.base.noise_seed = std::stoull(v); }},
  };
  return table;
}

}  // namespace

void Experiment::finalize() {
  if (!neumann_alpha_set) suite.base.neumann.alpha = suite.base.sgd.lr;
}

Experiment desk_experiment() {
  Experiment e;
  e.data.n_per_class = 250;  // 2500 per fold pool, 2000 train after the 20% split
  e.data.test_per_class = 100;
  e.data.image_size = 16;
  // harder than the generator defaults so the arms separate above the error floor
  e.data.synthetic.noise_sigma = 0.2;
  e.data.synthetic.max_rotation_deg = 25.0;
  e.data.synthetic.max_shift_px = 2.0;
  auto& b = e.suite.base;
  b.epochs = 60;
  b.ho_start = 30;
  b.batch = 64;
  b.sgd = {0.02, 0.9};
  b.adam.lr = 0.05;
  b.neumann.terms = 5;
  b.neumann.alpha = b.sgd.lr;
  b.distortion = {10, 0.1, 100};
  b.model.kind = task::Kind::tinycnn;
  b.model.conv_channels = {8, 16};
  e.suite.arms = {run::Arm::baseline, run::Arm::shared_a, run::Arm::a, run::Arm::aw, run::Arm::aws};
  e.suite.folds = 4;
  e.suite.valid_fraction = 0.2;
  return e;
}

void set_value(Experiment& e, const std::string& key, const std::string& value) {
  if (key.rfind("augment_ops.", 0) == 0) {
    std::istringstream in(value);
    aug::AugOpSpec spec{aug::parse_op_kind(key.substr(12)), 0.0, 0.0};
    if (!(in >> spec.mu >> spec.rng) || !(spec.rng > 0)) throw Error("augment_ops entries need `mu rng`: " + key);
    e.suite.base.aug.ops.push_back(spec);
    return;
  }
  auto it = setters().find(key);
  if (it == setters().end()) throw Error("unknown config key '" + key + "'");
  try {
    it->second(e, value);
  } catch (const std::invalid_argument&) {
    throw Error("bad value '" + value + "' for " + key);
  }
}

Experiment parse(const std::string& text, Experiment base) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& err) {
    throw Error(std::string("config: ") + err.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error("config key '" + section + "' must live inside a [section]");
    if (section == "augment_ops") base.suite.base.aug.ops.clear();
    for (const auto& [key, value] : body) set_value(base, section + "." + key, value.data());
  }
  if (base.suite.base.aug.ops.empty()) throw Error("augment_ops section is empty");
  base.finalize();
  return base;
}

Experiment load(const std::filesystem::path& path, Experiment base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse(text.str(), std::move(base));
}

std::pair<data::DatasetView, data::DatasetView> load_data(const DataSource& s) {
  if (s.kind == "synthetic") {
    auto pool = data::make_synthetic(s.n_per_class, s.classes, s.image_size, s.seed, s.synthetic);
    auto test = data::make_synthetic(s.test_per_class, s.classes, s.image_size, s.test_seed, s.synthetic);
    return {std::move(pool), std::move(test)};
  }
  if (s.kind == "idx")
    return {data::load_idx(s.images, s.labels, static_cast<int>(s.classes)),
            data::load_idx(s.test_images, s.test_labels, static_cast<int>(s.classes))};
  if (s.kind == "container") return {data::load_container(s.container), data::load_container(s.test_container)};
  throw Error("unknown data kind '" + s.kind + "' (expected synthetic, idx or container)");
}

}  // namespace autodo::config
