#include "autodo/hypermodel.hpp"

#include <cmath>
#include <fstream>

#include "autodo/ops.hpp"
#include "json.hpp"

namespace autodo::hyper {

namespace {

constexpr std::uint32_t kMagic = 0x54484441;  // "ADHT"
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated hypertable checkpoint");
  return v;
}

std::vector<double> pick_rows(const std::vector<double>& block, std::int64_t width,
                              std::span<const std::int64_t> rows) {
  std::vector<double> out;
  out.reserve(rows.size() * width);
  for (auto r : rows) out.insert(out.end(), block.begin() + r * width, block.begin() + (r + 1) * width);
  return out;
}

Tensor make_block(Shape shape, std::vector<double> data, bool leaf) {
  return leaf ? Tensor::leaf(std::move(shape), std::move(data)) : Tensor::from(std::move(shape), std::move(data));
}

}  // namespace

double initial_gate_logit() { return std::log(0.25 / 0.75); }

HyperTable HyperTable::create(std::span<const std::int64_t> global_index, std::int64_t classes,
                              std::int64_t aug_ops, Enabled enabled) {
  HyperTable t;
  t.rows = static_cast<std::int64_t>(global_index.size());
  t.classes = classes;
  t.aug_ops = aug_ops;
  t.enabled = enabled;
  t.global_index.assign(global_index.begin(), global_index.end());
  t.lambda_m.assign(static_cast<std::size_t>(t.aug_rows() * aug_ops), 0.0);
  t.lambda_b.assign(t.lambda_m.size(), initial_gate_logit());
  t.lambda_w.assign(static_cast<std::size_t>(t.rows), 0.0);
  t.lambda_s.assign(static_cast<std::size_t>(t.rows * classes), 0.0);
  return t;
}

std::vector<double> soft_label_init_row(int label, std::int64_t classes, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("label smoothing alpha must lie in (0, 1)");
  const double arg = 1.0 - static_cast<double>(classes) + static_cast<double>(classes) / alpha;
  if (!(arg > 0.0)) throw Error("label smoothing alpha too large for " + std::to_string(classes) + " classes");
  const double gap = std::log(arg);
  std::vector<double> row(static_cast<std::size_t>(classes), -0.5 * gap);
  row[label] = 0.5 * gap;
  return row;
}

void init_soft_labels(HyperTable& table, std::span<const int> labels, double alpha) {
  if (static_cast<std::int64_t>(labels.size()) != table.rows) throw Error("one label per table row expected");
  for (std::int64_t i = 0; i < table.rows; ++i) {
    auto row = soft_label_init_row(labels[i], table.classes, alpha);
    std::copy(row.begin(), row.end(), table.lambda_s.begin() + i * table.classes);
  }
}

std::vector<Tensor> BatchHypers::learned() const {
  std::vector<Tensor> out;
  for (const auto* t : {&lambda_m, &lambda_b, &lambda_w, &lambda_s})
    if (t->defined() && t->requires_grad()) out.push_back(*t);
  return out;
}

BatchHypers gather(const HyperTable& table, std::span<const std::int64_t> rows, bool as_leaves) {
  for (auto r : rows)
    if (r < 0 || r >= table.rows) throw Error("hypertable row " + std::to_string(r) + " out of range");
  BatchHypers b;
  b.rows.assign(rows.begin(), rows.end());
  const auto n = static_cast<std::int64_t>(rows.size());
  const auto a = table.aug_ops;
  const auto& en = table.enabled;
  if (en.shared_augment) {
    b.lambda_m = make_block({1, a}, table.lambda_m, as_leaves && en.augment);
    b.lambda_b = make_block({1, a}, table.lambda_b, as_leaves && en.augment);
  } else {
    b.lambda_m = make_block({n, a}, pick_rows(table.lambda_m, a, rows), as_leaves && en.augment);
    b.lambda_b = make_block({n, a}, pick_rows(table.lambda_b, a, rows), as_leaves && en.augment);
  }
  b.lambda_w = make_block({n}, pick_rows(table.lambda_w, 1, rows), as_leaves && en.weights);
  b.lambda_s = make_block({n, table.classes}, pick_rows(table.lambda_s, table.classes, rows),
                          as_leaves && en.soft_labels);
  return b;
}

Tensor weights(const Tensor& lambda_w) { return ops::scale(ops::softplus(lambda_w), kWeightScale); }

Tensor soft_labels(const Tensor& lambda_s) { return ops::softmax(lambda_s); }

Tensor batch_weights(const HyperTable&, const BatchHypers& batch) { return weights(batch.lambda_w); }

Tensor batch_targets(const HyperTable& table, const BatchHypers& batch, std::span<const int> labels) {
  if (table.enabled.soft_labels) return soft_labels(batch.lambda_s);
  const auto n = static_cast<std::int64_t>(labels.size());
  std::vector<double> onehot(static_cast<std::size_t>(n * table.classes), 0.0);
  for (std::int64_t i = 0; i < n; ++i) onehot[i * table.classes + labels[i]] = 1.0;
  return Tensor::from({n, table.classes}, std::move(onehot));
}

void save_table(const HyperTable& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::uint32_t flags = (t.enabled.augment ? 1u : 0u) | (t.enabled.weights ? 2u : 0u) |
                              (t.enabled.soft_labels ? 4u : 0u) | (t.enabled.shared_augment ? 8u : 0u);
  for (std::uint32_t v : {kMagic, kVersion, static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.classes),
                          static_cast<std::uint32_t>(t.aug_ops), flags})
    put(out, v);
  for (auto g : t.global_index) put(out, static_cast<std::uint32_t>(g));
  for (const auto* block : {&t.lambda_m, &t.lambda_b, &t.lambda_w, &t.lambda_s})
    for (double v : *block) put(out, v);
}

HyperTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  if (take<std::uint32_t>(in) != kMagic) throw Error("not a hypertable checkpoint: " + path.string());
  if (take<std::uint32_t>(in) != kVersion) throw Error("unsupported hypertable checkpoint version");
  const auto rows = take<std::uint32_t>(in), classes = take<std::uint32_t>(in), ops = take<std::uint32_t>(in);
  const auto flags = take<std::uint32_t>(in);
  std::vector<std::int64_t> index(rows);
  for (auto& g : index) g = take<std::uint32_t>(in);
  Enabled en{(flags & 1u) != 0, (flags & 2u) != 0, (flags & 4u) != 0, (flags & 8u) != 0};
  auto t = HyperTable::create(index, classes, ops, en);
  for (auto* block : {&t.lambda_m, &t.lambda_b, &t.lambda_w, &t.lambda_s})
    for (double& v : *block) v = take<double>(in);
  return t;
}

void write_table_summary(const HyperTable& t, const std::filesystem::path& path) {
  using nlohmann::json;
  json points = json::array();
  for (std::int64_t i = 0; i < t.rows; ++i) {
    const double lw = t.lambda_w[i];
    const double w = kWeightScale * (lw > 30 ? lw : std::log1p(std::exp(lw)));
    const double* s = &t.lambda_s[i * t.classes];
    double top = s[0];
    for (std::int64_t c = 1; c < t.classes; ++c) top = std::max(top, s[c]);
    double z = 0.0;
    for (std::int64_t c = 0; c < t.classes; ++c) z += std::exp(s[c] - top);
    double entropy = 0.0;
    for (std::int64_t c = 0; c < t.classes; ++c) {
      const double p = std::exp(s[c] - top) / z;
      if (p > 0) entropy -= p * std::log(p);
    }
    const auto arow = t.enabled.shared_augment ? 0 : i;
    std::vector<double> gate_p;
    for (std::int64_t k = 0; k < t.aug_ops; ++k) gate_p.push_back(1.0 / (1.0 + std::exp(-t.lambda_b[arow * t.aug_ops + k])));
    points.push_back({{"global_index", t.global_index[i]},
                      {"weight", w},
                      {"soft_label_entropy", entropy},
                      {"gate_probability", gate_p}});
  }
  json doc = {{"rows", t.rows},
              {"classes", t.classes},
              {"aug_ops", t.aug_ops},
              {"enabled",
               {{"augment", t.enabled.augment},
                {"weights", t.enabled.weights},
                {"soft_labels", t.enabled.soft_labels},
                {"shared_augment", t.enabled.shared_augment}}},
              {"points", points}};
  std::ofstream(path) << doc.dump(1) << '\n';
}

}  // namespace autodo::hyper
