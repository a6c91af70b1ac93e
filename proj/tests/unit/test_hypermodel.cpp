#include <cmath>
#include <filesystem>
#include <fstream>

#include "autodo/autograd.hpp"
#include "autodo/checks.hpp"
#include "autodo/hypermodel.hpp"
#include "autodo/ops.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace autodo;
using namespace autodo::hyper;

namespace {

std::vector<std::int64_t> iota(std::int64_t n, std::int64_t from = 0) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) v[i] = from + i;
  return v;
}

}  // namespace

TEST_CASE("table layout and initial values") {
  auto ids = iota(5, 100);
  auto t = HyperTable::create(ids, 10, 6, {});
  CHECK(t.rows == 5);
  CHECK(t.per_point_size() == 2 * 6 + 1 + 10);
  CHECK(t.lambda_m.size() == 30);
  CHECK(t.lambda_b.size() == 30);
  CHECK(t.lambda_w.size() == 5);
  CHECK(t.lambda_s.size() == 50);
  for (double v : t.lambda_m) CHECK(v == 0.0);
  for (double v : t.lambda_b) CHECK(v == doctest::Approx(-1.0986122886681098));
  CHECK(1.0 / (1.0 + std::exp(-initial_gate_logit())) == doctest::Approx(0.25).epsilon(1e-15));

  auto shared = HyperTable::create(ids, 10, 6, {.shared_augment = true});
  CHECK(shared.aug_rows() == 1);
  CHECK(shared.lambda_m.size() == 6);
}

TEST_CASE("weights") {
  Tensor w = weights(Tensor::from({3}, {0.0, -20.0, 50.0}));
  CHECK(w[0] == doctest::Approx(1.44 * std::log(2.0)).epsilon(1e-15));
  CHECK(w[0] == doctest::Approx(0.9981).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(1.44 * std::exp(-20.0)).epsilon(1e-6));
  CHECK(w[1] > 0.0);
  CHECK(w[2] == doctest::Approx(1.44 * 50.0).epsilon(1e-12));
  double prev = -1.0;
  for (double lam = -10; lam <= 10; lam += 0.5) {
    double cur = weights(Tensor::from({1}, {lam}))[0];
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("soft labels") {
  Tensor uniform = soft_labels(Tensor::zeros({2, 4}));
  for (double v : uniform.values()) CHECK(v == doctest::Approx(0.25));
  Tensor a = soft_labels(Tensor::from({1, 3}, {0.3, -1.0, 2.0}));
  Tensor b = soft_labels(Tensor::from({1, 3}, {5.3, 4.0, 7.0}));
  for (int k = 0; k < 3; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-14));
  double s = a[0] + a[1] + a[2];
  CHECK(std::abs(s - 1.0) < 1e-12);
}

TEST_CASE("smoothed initial soft labels") {
  auto two = soft_label_init_row(0, 2, 0.2);
  CHECK(two[0] - two[1] == doctest::Approx(std::log(9.0)).epsilon(1e-14));
  CHECK(soft_labels(Tensor::from({1, 2}, two))[0] == doctest::Approx(0.9).epsilon(1e-14));

  auto ten = soft_label_init_row(3, 10, 0.1);
  CHECK(ten[3] - ten[0] == doctest::Approx(std::log(91.0)).epsilon(1e-14));
  Tensor p = soft_labels(Tensor::from({1, 10}, ten));
  for (int c = 0; c < 10; ++c) CHECK(p[c] == doctest::Approx(c == 3 ? 0.91 : 0.01).epsilon(1e-12));

  for (std::int64_t classes = 2; classes <= 100; classes += 7)
    for (double alpha : {0.05, 0.1, 0.2}) {
      auto row = soft_label_init_row(static_cast<int>(classes - 1), classes, alpha);
      Tensor q = soft_labels(Tensor::from({1, classes}, row));
      for (std::int64_t c = 0; c < classes; ++c) {
        const double target = (c == classes - 1 ? 1 - alpha : 0.0) + alpha / static_cast<double>(classes);
        CHECK(std::abs(q[c] - target) < 1e-9);
      }
    }
  // gap vanishes as alpha reaches 1 with two classes
  auto flat = soft_label_init_row(1, 2, 1.0 - 1e-12);
  CHECK(std::abs(flat[0] - flat[1]) < 1e-9);
  CHECK_THROWS_AS(soft_label_init_row(0, 10, 0.0), Error);
  CHECK_THROWS_AS(soft_label_init_row(0, 10, 1.5), Error);

  auto t = HyperTable::create(iota(3), 4, 6, {});
  init_soft_labels(t, std::vector<int>{2, 0, 3}, 0.1);
  auto row = soft_label_init_row(0, 4, 0.1);
  CHECK(std::equal(row.begin(), row.end(), t.lambda_s.begin() + 4));
}

TEST_CASE("gather returns leaves for learned blocks only") {
  auto t = HyperTable::create(iota(6), 3, 6, {.augment = true, .weights = false, .soft_labels = true});
  t.lambda_w[4] = 2.0;
  std::vector<std::int64_t> rows = {4, 1};
  auto g = gather(t, rows, true);
  CHECK(g.lambda_m.shape() == Shape{2, 6});
  CHECK(g.lambda_w[0] == 2.0);
  CHECK(g.lambda_m.is_leaf());
  CHECK(g.lambda_m.requires_grad());
  CHECK_FALSE(g.lambda_w.requires_grad());
  CHECK(g.learned().size() == 3);

  auto frozen = gather(t, rows, false);
  CHECK(frozen.learned().empty());

  // weights disabled: stored values pass through unlearned
  Tensor w = batch_weights(t, g);
  CHECK(w[0] == doctest::Approx(1.44 * std::log1p(std::exp(2.0))));
  CHECK(w[1] == doctest::Approx(1.44 * std::log(2.0)));

  auto no_labels = HyperTable::create(iota(6), 3, 6, {.soft_labels = false});
  Tensor y = batch_targets(no_labels, gather(no_labels, rows, true), std::vector<int>{2, 0});
  CHECK(y.vec() == std::vector<double>{0, 0, 1, 1, 0, 0});

  auto shared = HyperTable::create(iota(6), 3, 6, {.shared_augment = true});
  CHECK(gather(shared, rows, true).lambda_m.shape() == Shape{1, 6});
  CHECK_THROWS_AS(gather(t, std::vector<std::int64_t>{6}, true), Error);
}

TEST_CASE("weight and soft-label gradients match finite differences") {
  CHECK(checks::max_gradient_error([](auto& in) { return weights(in[0]); },
                                   {Tensor::from({4}, {-2.0, -0.1, 0.7, 3.0})}, 1) < 1e-5);
  CHECK(checks::max_gradient_error([](auto& in) { return soft_labels(in[0]); },
                                   {Tensor::from({2, 3}, {0.2, -1.0, 1.5, 0.0, 0.3, -0.4})}, 2) < 1e-5);
}

TEST_CASE("checkpoint round trip and summary") {
  auto dir = std::filesystem::temp_directory_path() / "autodo_test_hyper";
  std::filesystem::create_directories(dir);
  auto t = HyperTable::create(iota(4, 10), 3, 6, {.weights = false});
  t.lambda_m[5] = 0.25;
  t.lambda_s[7] = -1.5;
  save_table(t, dir / "table.bin");
  auto back = load_table(dir / "table.bin");
  CHECK(back.global_index == t.global_index);
  CHECK(back.lambda_m == t.lambda_m);
  CHECK(back.lambda_b == t.lambda_b);
  CHECK(back.lambda_w == t.lambda_w);
  CHECK(back.lambda_s == t.lambda_s);
  CHECK(back.enabled.weights == false);
  CHECK(back.enabled.soft_labels == true);

  write_table_summary(t, dir / "table.json");
  std::ifstream in(dir / "table.json");
  auto doc = nlohmann::json::parse(in);
  CHECK(doc["points"].size() == 4);

  std::ofstream(dir / "junk.bin") << "not a table";
  CHECK_THROWS_AS(load_table(dir / "junk.bin"), Error);
}
