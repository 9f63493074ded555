#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "can/rng.hpp"
#include "can/tensor.hpp"

namespace can {

// Axis-aligned box in pixel coordinates; covers columns [x, x + w) and rows
// [y, y + h).
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool contains(int col, int row) const {
    return col >= x && col < x + w && row >= y && row < y + h;
  }
  bool operator==(const BBox&) const = default;
};

struct Sample {
  Tensor image;  // (1, H, W), values in [0, 1]
  std::vector<std::uint8_t> labels;
  std::vector<std::optional<BBox>> boxes;  // one per label, set iff positive
  std::uint32_t group_id = 0;

  bool operator==(const Sample&) const = default;
};

struct GenerateOptions {
  std::size_t n_samples = 1000;
  std::size_t hw = 72;
  std::vector<double> prevalences{0.5};
  double noise = 0.5;  // amplitude of additive uniform background noise
  // Glyphs stay at least this far from every border so that any crop that
  // drops up to `margin` pixels per side keeps them whole. 0 means hw / 9.
  std::size_t margin = 0;
  // Number of unlabeled distractor blobs per image is uniform in [0, clutter].
  std::size_t clutter = 2;
  // Glyph side length range in pixels; 0 means hw / 9 and 2 * hw / 9.
  std::size_t glyph_min = 0;
  std::size_t glyph_max = 0;
  double intensity_lo = 0.35;
  double intensity_hi = 0.65;

  void validate() const;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_labels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> pos_counts;
  std::vector<std::size_t> neg_counts;
  // Set by generate(); not persisted.
  std::optional<std::uint64_t> seed;
  std::optional<GenerateOptions> options;

  std::size_t size() const { return samples.size(); }
  void recount();
  std::vector<std::string> label_names() const;
  // Sample content equality; provenance is ignored.
  bool operator==(const Dataset& other) const;
};

// Renders label l as glyph family l (mod the family count) at a random
// location. Deterministic in `seed`.
Dataset generate(std::uint64_t seed, const GenerateOptions& options);

// Group-level partition; no group_id lands in two splits. Group counts are
// allocated by largest remainder. With allow_empty == false every split must
// receive a group, so fewer groups than splits is a ConfigError.
std::array<Dataset, 3> split(const Dataset& dataset, std::array<double, 3> fractions,
                             std::uint64_t seed, bool allow_empty = false);

// "CAND" file, version 1.
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

struct Batch {
  Tensor images;  // (N, 1, crop, crop)
  Tensor labels;  // (N, L)
  std::vector<std::pair<std::size_t, std::size_t>> offsets;  // (row, col) crop origin
};

// Crops each image to crop x crop: random origin when `rng` is given,
// centered otherwise. crop == 0 keeps the full image.
Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices,
                 std::size_t crop, Rng* rng);

// Box translated into a crop's coordinates and clipped to it; nullopt when
// nothing remains.
std::optional<BBox> crop_box(const BBox& box, std::pair<std::size_t, std::size_t> offset,
                             std::size_t crop);

}  // namespace can
