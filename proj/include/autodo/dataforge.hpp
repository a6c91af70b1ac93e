#pragma once

// Datasets, splits and the train-side distortions (class imbalance, label
// noise). A DatasetView is a value: operations return new views and never
// touch the input.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "autodo/tensor.hpp"

namespace autodo::data {

struct DistortionSpec {
  int ir = 1;        // upper-half classes are this many times rarer
  double nr = 0.0;   // fraction of records whose label is flipped
  std::uint64_t seed = 0;

  void validate() const;
};

/// Where a view came from. `corrupted` is aligned with the records and only
/// meant for diagnostics; training code never reads it.
struct Lineage {
  std::string source;
  std::string split = "all";
  std::vector<DistortionSpec> distortions;
  std::vector<bool> corrupted;
};

struct DatasetView {
  std::int64_t classes = 0, channels = 1, height = 0, width = 0;
  std::vector<double> images;  // [N, channels, height, width], values in [0, 1]
  std::vector<int> labels;
  std::vector<std::int64_t> global_index;
  Lineage lineage;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t image_numel() const { return channels * height * width; }
  Shape image_shape(std::int64_t batch) const { return {batch, channels, height, width}; }

  /// Throws if labels are out of range, indices repeat, or pixels leave [0, 1].
  void validate() const;

  /// Records at the given positions, in that order, lineage carried along.
  DatasetView subset(std::span<const std::int64_t> positions) const;

  /// Images of the given positions as a constant [B, Cch, H, W] tensor.
  Tensor batch_images(std::span<const std::int64_t> positions) const;
  std::vector<int> batch_labels(std::span<const std::int64_t> positions) const;

  std::vector<std::int64_t> class_counts() const;
};

/// (train, valid); per class, valid gets round(fraction * count) records.
std::pair<DatasetView, DatasetView> stratified_split(const DatasetView& data, double valid_fraction,
                                                     std::uint64_t fold_seed);

/// Upper-half classes keep max(1, round(count / ir)) records each.
DatasetView apply_imbalance(const DatasetView& data, const DistortionSpec& spec);

/// Exactly round(nr * N) records get a label drawn uniformly from the other
/// classes.
DatasetView apply_label_noise(const DatasetView& data, const DistortionSpec& spec);

/// Records of `a` followed by those of `b`; global indices must stay unique.
DatasetView concat(const DatasetView& a, const DatasetView& b);

/// Imbalance first, then noise on what is left.
DatasetView distort(const DatasetView& data, const DistortionSpec& spec);

DatasetView load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                     int classes = 10);
void write_idx(const DatasetView& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

struct SyntheticOptions {
  double max_rotation_deg = 15.0;
  double min_scale = 0.9, max_scale = 1.1;
  double max_shift_px = 1.5;
  double min_brightness = 0.7, max_brightness = 1.0;
  double noise_sigma = 0.05;
  /// Glyph shapes depend only on this and the class count, so datasets drawn
  /// with different seeds share their classes.
  std::uint64_t glyph_seed = 0x5eed;
};

/// C distinct 5x5 glyphs rendered with random pose, brightness and pixel noise.
DatasetView make_synthetic(std::int64_t n_per_class, std::int64_t classes, std::int64_t image_size,
                           std::uint64_t seed, const SyntheticOptions& options = {});

/// The 5x5 binary glyph masks used by make_synthetic, row-major, one per class.
std::vector<std::vector<int>> glyph_masks(std::int64_t classes, std::uint64_t glyph_seed);

/// Binary container plus `<path>.json` lineage sidecar.
void save_container(const DatasetView& data, const std::filesystem::path& path);
DatasetView load_container(const std::filesystem::path& path);

}  // namespace autodo::data
