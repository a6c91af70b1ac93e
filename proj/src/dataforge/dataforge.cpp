#include "autodo/dataforge.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include "json.hpp"
#include <set>

#include "autodo/seeding.hpp"

namespace autodo::data {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSplitTag = 0x53504c49;
constexpr std::uint64_t kImbalanceTag = 0x494d4241;
constexpr std::uint64_t kNoiseTag = 0x4e4f4953;

std::vector<std::vector<std::int64_t>> positions_by_class(const DatasetView& d) {
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(d.classes));
  for (std::int64_t i = 0; i < d.size(); ++i) out[d.labels[i]].push_back(i);
  return out;
}

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("truncated IDX header in " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated dataset container");
  return v;
}

json spec_json(const DistortionSpec& s) { return {{"ir", s.ir}, {"nr", s.nr}, {"seed", s.seed}}; }

}  // namespace

void DistortionSpec::validate() const {
  if (ir < 1) throw Error("imbalance ratio must be >= 1, got " + std::to_string(ir));
  if (!(nr >= 0.0 && nr < 1.0)) throw Error("noise ratio must lie in [0, 1), got " + std::to_string(nr));
}

void DatasetView::validate() const {
  const auto n = size();
  if (static_cast<std::int64_t>(global_index.size()) != n) throw Error("global_index length differs from labels");
  if (static_cast<std::int64_t>(images.size()) != n * image_numel()) throw Error("image block has the wrong size");
  for (int y : labels)
    if (y < 0 || y >= classes) throw Error("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  std::set<std::int64_t> seen(global_index.begin(), global_index.end());
  if (static_cast<std::int64_t>(seen.size()) != n) throw Error("global_index values repeat");
  for (double v : images)
    if (!(v >= 0.0 && v <= 1.0)) throw Error("pixel outside [0, 1]");
}

DatasetView DatasetView::subset(std::span<const std::int64_t> positions) const {
  DatasetView out;
  out.classes = classes;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.lineage = lineage;
  out.lineage.corrupted.clear();
  const auto stride = image_numel();
  out.images.reserve(positions.size() * stride);
  for (auto p : positions) {
    out.images.insert(out.images.end(), images.begin() + p * stride, images.begin() + (p + 1) * stride);
    out.labels.push_back(labels[p]);
    out.global_index.push_back(global_index[p]);
    if (!lineage.corrupted.empty()) out.lineage.corrupted.push_back(lineage.corrupted[p]);
  }
  return out;
}

Tensor DatasetView::batch_images(std::span<const std::int64_t> positions) const {
  const auto stride = image_numel();
  std::vector<double> block;
  block.reserve(positions.size() * stride);
  for (auto p : positions) block.insert(block.end(), images.begin() + p * stride, images.begin() + (p + 1) * stride);
  return Tensor::from(image_shape(static_cast<std::int64_t>(positions.size())), std::move(block));
}

std::vector<int> DatasetView::batch_labels(std::span<const std::int64_t> positions) const {
  std::vector<int> out;
  out.reserve(positions.size());
  for (auto p : positions) out.push_back(labels[p]);
  return out;
}

std::vector<std::int64_t> DatasetView::class_counts() const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
  for (int y : labels) ++counts[y];
  return counts;
}

std::pair<DatasetView, DatasetView> stratified_split(const DatasetView& data, double valid_fraction,
                                                     std::uint64_t fold_seed) {
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
    throw Error("valid fraction must lie in (0, 1), got " + std::to_string(valid_fraction));
  auto rng = make_rng({kSplitTag, fold_seed});
  std::vector<std::int64_t> train_pos, valid_pos;
  auto by_class = positions_by_class(data);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    const auto count = static_cast<std::int64_t>(members.size());
    if (count == 0) continue;
    if (count < 2) throw Error("class " + std::to_string(c) + " has too few examples to split");
    auto take = std::clamp<std::int64_t>(std::llround(valid_fraction * static_cast<double>(count)), 1, count - 1);
    std::shuffle(members.begin(), members.end(), rng);
    valid_pos.insert(valid_pos.end(), members.begin(), members.begin() + take);
    train_pos.insert(train_pos.end(), members.begin() + take, members.end());
  }
  std::sort(train_pos.begin(), train_pos.end());
  std::sort(valid_pos.begin(), valid_pos.end());
  auto train = data.subset(train_pos), valid = data.subset(valid_pos);
  train.lineage.split = "fold" + std::to_string(fold_seed) + "/train";
  valid.lineage.split = "fold" + std::to_string(fold_seed) + "/valid";
  return {std::move(train), std::move(valid)};
}

DatasetView apply_imbalance(const DatasetView& data, const DistortionSpec& spec) {
  spec.validate();
  if (data.classes % 2 != 0) throw Error("imbalance needs an even class count");
  DatasetView out;
  if (spec.ir == 1) {
    out = data;
  } else {
    auto rng = make_rng({kImbalanceTag, spec.seed});
    auto by_class = positions_by_class(data);
    std::vector<std::int64_t> keep;
    for (std::int64_t c = 0; c < data.classes; ++c) {
      auto& members = by_class[c];
      if (c < data.classes / 2 || members.empty()) {
        keep.insert(keep.end(), members.begin(), members.end());
        continue;
      }
      const auto kept = std::max<std::int64_t>(
          1, std::llround(static_cast<double>(members.size()) / static_cast<double>(spec.ir)));
      std::shuffle(members.begin(), members.end(), rng);
      keep.insert(keep.end(), members.begin(), members.begin() + kept);
    }
    std::sort(keep.begin(), keep.end());
    out = data.subset(keep);
  }
  out.lineage.distortions.push_back({spec.ir, 0.0, spec.seed});
  return out;
}

DatasetView apply_label_noise(const DatasetView& data, const DistortionSpec& spec) {
  spec.validate();
  if (data.classes < 2) throw Error("label noise needs at least two classes");
  DatasetView out = data;
  if (out.lineage.corrupted.empty()) out.lineage.corrupted.assign(static_cast<std::size_t>(data.size()), false);
  const auto flips = std::llround(spec.nr * static_cast<double>(data.size()));
  if (flips > 0) {
    auto rng = make_rng({kNoiseTag, spec.seed});
    std::vector<std::int64_t> order(static_cast<std::size_t>(data.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> other(0, static_cast<int>(data.classes) - 2);
    for (std::int64_t k = 0; k < flips; ++k) {
      const auto p = order[k];
      const int r = other(rng);
      out.labels[p] = r >= data.labels[p] ? r + 1 : r;
      out.lineage.corrupted[p] = true;
    }
  }
  out.lineage.distortions.push_back({1, spec.nr, spec.seed});
  return out;
}

DatasetView concat(const DatasetView& a, const DatasetView& b) {
  if (a.classes != b.classes || a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw Error("cannot concatenate datasets of different layouts");
  DatasetView out = a;
  out.images.insert(out.images.end(), b.images.begin(), b.images.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.global_index.insert(out.global_index.end(), b.global_index.begin(), b.global_index.end());
  if (!a.lineage.corrupted.empty() || !b.lineage.corrupted.empty()) {
    out.lineage.corrupted.resize(static_cast<std::size_t>(a.size()), false);
    auto tail = b.lineage.corrupted;
    tail.resize(static_cast<std::size_t>(b.size()), false);
    out.lineage.corrupted.insert(out.lineage.corrupted.end(), tail.begin(), tail.end());
  }
  out.lineage.split = a.lineage.split + "+" + b.lineage.split;
  out.validate();
  return out;
}

DatasetView distort(const DatasetView& data, const DistortionSpec& spec) {
  return apply_label_noise(apply_imbalance(data, spec), spec);
}

DatasetView load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                     int classes) {
  std::ifstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
  if (!img) throw Error("cannot open " + images_path.string());
  if (!lab) throw Error("cannot open " + labels_path.string());
  if (read_be32(img, images_path.string()) != 0x00000803) throw Error("bad image magic in " + images_path.string());
  if (read_be32(lab, labels_path.string()) != 0x00000801) throw Error("bad label magic in " + labels_path.string());
  const auto n = read_be32(img, images_path.string());
  const auto rows = read_be32(img, images_path.string());
  const auto cols = read_be32(img, images_path.string());
  const auto n_labels = read_be32(lab, labels_path.string());
  if (n != n_labels)
    throw Error("image count " + std::to_string(n) + " differs from label count " + std::to_string(n_labels));

  DatasetView out;
  out.classes = classes;
  out.height = rows;
  out.width = cols;
  out.lineage.source = "idx:" + images_path.filename().string();
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * rows * cols);
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
    throw Error("truncated image data in " + images_path.string());
  std::vector<unsigned char> labels(n);
  if (!lab.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size())))
    throw Error("truncated label data in " + labels_path.string());
  out.images.reserve(pixels.size());
  for (auto p : pixels) out.images.push_back(p / 255.0);
  for (std::uint32_t i = 0; i < n; ++i) {
    out.labels.push_back(labels[i]);
    out.global_index.push_back(i);
  }
  out.validate();
  return out;
}

void write_idx(const DatasetView& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (data.channels != 1) throw Error("IDX images are single-channel");
  std::ofstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
  if (!img || !lab) throw Error("cannot write IDX files");
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(data.height));
  write_be32(img, static_cast<std::uint32_t>(data.width));
  for (double v : data.images) img.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) lab.put(static_cast<char>(y));
}

std::vector<std::vector<int>> glyph_masks(std::int64_t classes, std::uint64_t glyph_seed) {
  auto rng = make_rng({glyph_seed, static_cast<std::uint64_t>(classes)});
  std::bernoulli_distribution on(0.5);
  std::vector<std::vector<int>> masks;
  while (static_cast<std::int64_t>(masks.size()) < classes) {
    std::vector<int> m(25);
    int lit = 0;
    for (auto& b : m) lit += (b = on(rng));
    if (lit < 9 || lit > 16) continue;
    bool far = true;
    for (const auto& other : masks) {
      int d = 0;
      for (int k = 0; k < 25; ++k) d += m[k] != other[k];
      if (d < 6) far = false;
    }
    if (far) masks.push_back(std::move(m));
  }
  return masks;
}

DatasetView make_synthetic(std::int64_t n_per_class, std::int64_t classes, std::int64_t image_size,
                           std::uint64_t seed, const SyntheticOptions& o) {
  if (classes % 2 != 0 || classes < 2) throw Error("synthetic data needs an even class count");
  if (image_size < 8) throw Error("synthetic images must be at least 8 pixels wide");
  const auto masks = glyph_masks(classes, o.glyph_seed);
  auto rng = make_rng({seed, static_cast<std::uint64_t>(classes), static_cast<std::uint64_t>(image_size)});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  DatasetView out;
  out.classes = classes;
  out.height = out.width = image_size;
  out.lineage.source = "synthetic:seed=" + std::to_string(seed);
  const double s = static_cast<double>(image_size);
  const double centre = (s - 1.0) / 2.0;
  const double cell = 0.7 * s / 5.0;  // glyph spans 70% of the frame

  auto mask_at = [](const std::vector<int>& m, int r, int c) {
    return (r < 0 || r > 4 || c < 0 || c > 4) ? 0.0 : static_cast<double>(m[r * 5 + c]);
  };
  for (std::int64_t i = 0; i < n_per_class * classes; ++i) {
    const int label = static_cast<int>(i % classes);
    const double angle = between(-o.max_rotation_deg, o.max_rotation_deg) * std::numbers::pi / 180.0;
    const double zoom = between(o.min_scale, o.max_scale);
    const double dx = between(-o.max_shift_px, o.max_shift_px), dy = between(-o.max_shift_px, o.max_shift_px);
    const double bright = between(o.min_brightness, o.max_brightness);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::int64_t y = 0; y < image_size; ++y) {
      for (std::int64_t x = 0; x < image_size; ++x) {
        const double px = x - centre - dx, py = y - centre - dy;
        const double u = (ca * px + sa * py) / zoom, v = (-sa * px + ca * py) / zoom;
        const double gc = u / cell + 2.0, gr = v / cell + 2.0;  // glyph cell coordinates, centres at 0..4
        const int c0 = static_cast<int>(std::floor(gc)), r0 = static_cast<int>(std::floor(gr));
        const double fc = gc - c0, fr = gr - r0;
        const auto& m = masks[label];
        const double ink = (1 - fr) * ((1 - fc) * mask_at(m, r0, c0) + fc * mask_at(m, r0, c0 + 1)) +
                           fr * ((1 - fc) * mask_at(m, r0 + 1, c0) + fc * mask_at(m, r0 + 1, c0 + 1));
        out.images.push_back(std::clamp(bright * ink + o.noise_sigma * gauss(rng), 0.0, 1.0));
      }
    }
    out.labels.push_back(label);
    out.global_index.push_back(i);
  }
  return out;
}

void save_container(const DatasetView& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (auto v : {data.size(), data.classes, data.channels, data.height, data.width})
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  for (double v : data.images) write_le<double>(out, v);
  for (int y : data.labels) write_le<std::uint16_t>(out, static_cast<std::uint16_t>(y));
  for (auto g : data.global_index) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(g));

  json side;
  side["source"] = data.lineage.source;
  side["split"] = data.lineage.split;
  side["distortions"] = json::array();
  for (const auto& s : data.lineage.distortions) side["distortions"].push_back(spec_json(s));
  side["corrupted"] = data.lineage.corrupted;
  std::ofstream(path.string() + ".json") << side.dump(1) << '\n';
}

DatasetView load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  DatasetView d;
  const auto n = read_le<std::uint32_t>(in);
  d.classes = read_le<std::uint32_t>(in);
  d.channels = read_le<std::uint32_t>(in);
  d.height = read_le<std::uint32_t>(in);
  d.width = read_le<std::uint32_t>(in);
  d.images.resize(static_cast<std::size_t>(n) * d.image_numel());
  for (auto& v : d.images) v = read_le<double>(in);
  for (std::uint32_t i = 0; i < n; ++i) d.labels.push_back(read_le<std::uint16_t>(in));
  for (std::uint32_t i = 0; i < n; ++i) d.global_index.push_back(read_le<std::uint32_t>(in));

  std::ifstream side_in(path.string() + ".json");
  if (side_in) {
    auto side = json::parse(side_in);
    d.lineage.source = side.value("source", "");
    d.lineage.split = side.value("split", "all");
    for (const auto& s : side.value("distortions", json::array()))
      d.lineage.distortions.push_back({s.at("ir").get<int>(), s.at("nr").get<double>(), s.at("seed").get<std::uint64_t>()});
    d.lineage.corrupted = side.value("corrupted", std::vector<bool>{});
  }
  d.validate();
  return d;
}

}  // namespace autodo::data
