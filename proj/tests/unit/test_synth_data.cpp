#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"

#include "can/errors.hpp"
#include "can/losses.hpp"
#include "can/synth_data.hpp"

using namespace can;

namespace {

GenerateOptions opts(std::size_t n, std::vector<double> prev, std::size_t hw = 36) {
  GenerateOptions o;
  o.n_samples = n;
  o.hw = hw;
  o.prevalences = std::move(prev);
  return o;
}

std::string bytes_of(const Dataset& d) {
  std::stringstream ss;
  write_dataset(ss, d);
  return ss.str();
}

}  // namespace

TEST_CASE("generate validation") {
  CHECK_THROWS_AS(generate(1, opts(10, {1.0})), ConfigError);
  CHECK_THROWS_AS(generate(1, opts(10, {-0.1})), ConfigError);
  CHECK_THROWS_AS(generate(1, opts(10, {0.5}, 31)), ConfigError);
  GenerateOptions g = opts(10, {0.5});
  g.glyph_min = 8;
  g.glyph_max = 6;
  CHECK_THROWS_AS(generate(1, g), ConfigError);
}

TEST_CASE("all-negative dataset") {
  Dataset d = generate(1, opts(200, {0.0, 0.0}));
  CHECK(d.pos_counts == std::vector<std::size_t>{0, 0});
  CHECK(d.neg_counts == std::vector<std::size_t>{200, 200});
}

TEST_CASE("prevalence within binomial bounds") {
  Dataset d = generate(7, opts(10000, {0.5}, 32));
  CHECK(std::abs(double(d.pos_counts[0]) - 5000.0) <= 3 * std::sqrt(10000 * 0.25));
}

TEST_CASE("determinism") {
  GenerateOptions g = opts(50, {0.5, 0.1});
  CHECK(bytes_of(generate(3, g)) == bytes_of(generate(3, g)));
  CHECK(bytes_of(generate(3, g)) != bytes_of(generate(4, g)));
}

TEST_CASE("samples are well formed") {
  GenerateOptions g = opts(300, {0.5, 0.3, 0.2});
  Dataset d = generate(5, g);
  std::map<std::uint32_t, int> group_sizes;
  for (const Sample& s : d.samples) {
    ++group_sizes[s.group_id];
    CHECK(s.image.shape() == Shape{1, 36, 36});
    for (double v : s.image.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(s.boxes[l].has_value() == (s.labels[l] == 1));
      if (s.boxes[l]) {
        CHECK(s.boxes[l]->x >= 0);
        CHECK(s.boxes[l]->x + s.boxes[l]->w <= 36);
        CHECK(s.boxes[l]->w > 0);
      }
    }
  }
  for (auto [id, size] : group_sizes) {
    CHECK(size >= 1);
    CHECK(size <= 3);
  }
  auto [wp, wn] = balance_weights(d.pos_counts, d.neg_counts);
  for (std::size_t l = 0; l < 3; ++l) CHECK(wp[l] + wn[l] == 1.0);
}

TEST_CASE("boxes tightly contain glyphs") {
  for (std::size_t label = 0; label < 8; ++label) {
    std::vector<double> prev(8, 0.0);
    prev[label] = 0.9;
    GenerateOptions g = opts(40, prev, 48);
    g.noise = 0.0;
    g.clutter = 0;
    Dataset d = generate(11 + label, g);
    for (const Sample& s : d.samples) {
      if (!s.labels[label]) continue;
      const BBox b = *s.boxes[label];
      int min_x = 99, min_y = 99, max_x = -1, max_y = -1;
      for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
          if (s.image[y * 48 + x] <= 0.0) continue;
          CHECK(b.contains(x, y));
          min_x = std::min(min_x, x);
          min_y = std::min(min_y, y);
          max_x = std::max(max_x, x);
          max_y = std::max(max_y, y);
        }
      CHECK(b == BBox{min_x, min_y, max_x - min_x + 1, max_y - min_y + 1});
    }
  }
}

TEST_CASE("split keeps groups apart") {
  Dataset d = generate(9, opts(400, {0.3}));
  std::set<std::uint32_t> all;
  for (const auto& s : d.samples) all.insert(s.group_id);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto parts = split(d, {0.8, 0.1, 0.1}, seed);
    std::set<std::uint32_t> seen;
    std::size_t total = 0;
    for (const Dataset& p : parts) {
      std::set<std::uint32_t> mine;
      for (const auto& s : p.samples) mine.insert(s.group_id);
      for (auto id : mine) CHECK(seen.insert(id).second);
      total += p.size();
      std::size_t pos = 0;
      for (const auto& s : p.samples) pos += s.labels[0];
      CHECK(p.pos_counts[0] == pos);
      CHECK(p.pos_counts[0] + p.neg_counts[0] == p.size());
    }
    CHECK(total == d.size());
    CHECK(seen == all);
  }
  auto again = split(d, {0.8, 0.1, 0.1}, 3);
  CHECK(again[0] == split(d, {0.8, 0.1, 0.1}, 3)[0]);
}

TEST_CASE("split proportions over 100 groups") {
  Dataset d;
  d.num_labels = 1;
  d.height = d.width = 2;
  for (std::uint32_t gid = 0; gid < 100; ++gid) {
    Sample s;
    s.image = Tensor({1, 2, 2});
    s.labels = {0};
    s.boxes.resize(1);
    s.group_id = gid;
    d.samples.push_back(s);
  }
  d.recount();
  auto parts = split(d, {0.8, 0.1, 0.1}, 1);
  CHECK(std::abs(double(parts[0].size()) - 80) <= 2);
  CHECK(std::abs(double(parts[1].size()) - 10) <= 2);
  CHECK(std::abs(double(parts[2].size()) - 10) <= 2);

  d.samples.resize(2);
  d.recount();
  CHECK_THROWS_AS(split(d, {0.8, 0.1, 0.1}, 1), ConfigError);
  d.samples.resize(1);
  d.recount();
  auto one = split(d, {0.8, 0.1, 0.1}, 1, true);
  int holders = 0;
  for (const auto& p : one) holders += p.size() == 1;
  CHECK(holders == 1);
  CHECK_THROWS_AS(split(d, {0.5, 0.6, 0.1}, 1), ConfigError);
}

TEST_CASE("dataset file round trip") {
  Dataset d = generate(13, opts(25, {0.5, 0.2}));
  const std::string b = bytes_of(d);
  std::stringstream in(b);
  Dataset back = read_dataset(in);
  CHECK(back == d);
  CHECK(bytes_of(back) == b);
  CHECK(b.substr(0, 4) == "CAND");
  CHECK(b.size() == 24 + 25 * (4 + 2 + 2 * 16 + 36 * 36 * 4));
}

TEST_CASE("malformed dataset files") {
  Dataset d = generate(14, opts(5, {0.5}));
  const std::string b = bytes_of(d);
  for (std::size_t cut : {std::size_t(2), std::size_t(10), b.size() / 2, b.size() - 1}) {
    std::stringstream in(b.substr(0, cut));
    CHECK_THROWS_AS(read_dataset(in), ParseError);
  }
  std::string v2 = b;
  v2[4] = 2;
  std::stringstream in2(v2);
  CHECK_THROWS_AS(read_dataset(in2), VersionError);
  try {
    std::stringstream in3(b.substr(0, 30));
    read_dataset(in3);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() >= 24);
    CHECK(e.offset() <= 30);
  }
  std::stringstream extra(b + "x");
  CHECK_THROWS_AS(read_dataset(extra), ParseError);
  std::string bad_label = b;
  bad_label[24 + 4] = 7;
  std::stringstream in4(bad_label);
  CHECK_THROWS_AS(read_dataset(in4), ParseError);
}

TEST_CASE("batches and crops") {
  Dataset d = generate(15, opts(6, {0.9}, 36));
  std::vector<std::size_t> idx{0, 2, 4};
  Batch center = make_batch(d, idx, 32, nullptr);
  CHECK(center.images.shape() == Shape{3, 1, 32, 32});
  CHECK(center.offsets[0] == std::pair<std::size_t, std::size_t>{2, 2});
  CHECK(center.images.at(1, 0, 0, 0) == d.samples[2].image[2 * 36 + 2]);
  Rng rng(1);
  Batch random = make_batch(d, idx, 32, &rng);
  for (auto [r, c] : random.offsets) {
    CHECK(r <= 4);
    CHECK(c <= 4);
  }
  CHECK(crop_box(BBox{5, 6, 4, 4}, {2, 3}, 32) == BBox{2, 4, 4, 4});
  CHECK_FALSE(crop_box(BBox{0, 0, 2, 2}, {4, 4}, 32).has_value());
}
