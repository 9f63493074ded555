#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "can/errors.hpp"
#include "can/localization.hpp"
#include "oracles.hpp"

using namespace can;

TEST_CASE("cam examples") {
  Tensor f({1, 2, 2}, {-1, 2, 4, 1});
  std::vector<double> one{1.0};
  CHECK(cam(f, one, 0, 0).values == Tensor({2, 2}, {0, 0.5, 1, 0.25}));
  std::vector<double> zero{0.0};
  const HeatMap blank = cam(f, zero, 0, 0);
  for (double v : blank.values.values()) CHECK(v == 0.0);

  Tensor two({2, 2, 2}, {1, 2, 3, 4, 4, 1, 1, 1});
  std::vector<double> w{1.0, -1.0};
  CHECK(cam_raw(two, w) == Tensor({2, 2}, {-3, 1, 2, 3}));
  CHECK(cam(two, w, 0, 0).values == Tensor({2, 2}, {0, 1.0 / 3, 2.0 / 3, 1}));
  std::vector<double> three{1, 2, 3};
  CHECK_THROWS_AS(cam(two, three, 0, 0), ShapeError);
}

TEST_CASE("cam is linear before clamping") {
  Rng rng(1);
  Tensor f = oracle::random_tensor({4, 3, 3}, rng);
  std::vector<double> w1{1, -2, 0.5, 3}, w2{-0.25, 1, 1, -1}, w12(4);
  for (int i = 0; i < 4; ++i) w12[i] = w1[i] + w2[i];
  Tensor a = cam_raw(f, w1), b = cam_raw(f, w2), c = cam_raw(f, w12);
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(c[i] - a[i] - b[i]) < 1e-12);
}

TEST_CASE("upsample heatmap") {
  Rng rng(2);
  HeatMap m{oracle::random_tensor({2, 2}, rng, 0, 1), 0, 0};
  CHECK(upsample_heatmap(m, 2, 2).values == m.values);
  HeatMap c{Tensor({3, 3}, 0.4), 0, 0};
  const HeatMap flat = upsample_heatmap(c, 7, 5);
  for (double v : flat.values.values()) CHECK(std::abs(v - 0.4) < 1e-15);
  Tensor want = oracle::resize_bilinear(m.values.reshaped({1, 1, 2, 2}), 4, 4);
  CHECK(oracle::max_abs_diff(upsample_heatmap(m, 4, 4).values.reshaped({1, 1, 4, 4}), want) < 1e-12);
  CHECK_THROWS_AS(upsample_heatmap(m, 1, 4), ConfigError);
}

TEST_CASE("localization hit") {
  Tensor v({8, 8}, 0.0);
  v[3 * 8 + 5] = 1.0;
  HeatMap m{v, 0, 0};
  CHECK(heatmap_argmax(m) == std::pair<std::size_t, std::size_t>{3, 5});
  CHECK(localization_hit(m, BBox{4, 2, 3, 3}));
  CHECK_FALSE(localization_hit(m, BBox{0, 0, 3, 3}));
  HeatMap z{Tensor({8, 8}, 0.0), 0, 0};
  CHECK(localization_hit(z, BBox{0, 0, 1, 1}));
  CHECK_FALSE(localization_hit(z, BBox{1, 0, 2, 2}));
  CHECK_THROWS_AS(localization_hit(m, BBox{1, 1, 0, 2}), ConfigError);

  // Strictly increasing rescaling keeps the verdict.
  Rng rng(3);
  HeatMap r{oracle::random_tensor({8, 8}, rng, 0, 1), 0, 0};
  HeatMap s = r;
  for (double& x : s.values.values()) x = x * x * 0.5 + 0.1;
  for (int bx = 0; bx < 8; bx += 2)
    for (int by = 0; by < 8; by += 2) CHECK(localization_hit(r, {bx, by, 2, 2}) == localization_hit(s, {bx, by, 2, 2}));
}

TEST_CASE("pgm output") {
  const auto path = std::filesystem::temp_directory_path() / "can_test_heatmap.pgm";
  HeatMap m{Tensor({2, 3}, {0, 0.5, 1, 1, 0.25, 0}), 0, 0};
  write_pgm(path.string(), m);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 128);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);
  std::filesystem::remove(path);
}

TEST_CASE("hit rate counts confident positives") {
  std::vector<LocalizationCase> cases(20);
  std::size_t expected_hits = 0, expected_total = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto& c = cases[i];
    c.image_id = i;
    c.prob = (i % 4) / 3.0;
    c.positive = i % 5 != 0;
    if (c.positive) c.hit = i % 3 == 0;
    if (c.positive && c.prob >= 0.5) {
      ++expected_total;
      if (i % 3 == 0) ++expected_hits;
    }
  }
  CHECK(*hit_rate(cases) == double(expected_hits) / double(expected_total));
  CHECK_FALSE(hit_rate(std::vector<LocalizationCase>{}).has_value());
}
