#pragma once

// Experiment configuration: an INI-style file of `key = value` lines grouped
// in [sections], every entry of which can be overridden from the command line.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "autodo/dataforge.hpp"
#include "autodo/runner.hpp"

namespace autodo::config {

struct DataSource {
  std::string kind = "synthetic";  // synthetic | idx | container
  std::int64_t n_per_class = 250;
  std::int64_t test_per_class = 100;
  std::int64_t classes = 10;
  std::int64_t image_size = 16;
  std::uint64_t seed = 7, test_seed = 8;
  data::SyntheticOptions synthetic;
  std::filesystem::path images, labels, test_images, test_labels;  // idx
  std::filesystem::path container, test_container;                 // container
};

struct Experiment {
  DataSource data;
  run::SuiteConfig suite;
  /// The Neumann step size tracks the inner learning rate until set explicitly.
  bool neumann_alpha_set = false;

  /// Applies derived defaults; call after the last override.
  void finalize();
};

/// Defaults of the desk-scale ablation: 10 glyph classes, 2000 train points
/// per fold before distortion, IR 10, NR 0.1, tinycnn, 60 epochs, 4 folds.
Experiment desk_experiment();

/// Sets one `section.key`; augment_ops.<kind> appends to the op table.
void set_value(Experiment& e, const std::string& key, const std::string& value);

/// Applies the sections of `text` on top of `base`. Unknown keys are errors.
Experiment parse(const std::string& text, Experiment base = desk_experiment());
Experiment load(const std::filesystem::path& path, Experiment base = desk_experiment());

/// (pool to split into train / valid, test set).
std::pair<data::DatasetView, data::DatasetView> load_data(const DataSource& source);

}  // namespace autodo::config
