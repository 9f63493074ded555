#include "can/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "can/errors.hpp"

namespace can {
namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr int kGlyphFamilies = 8;

// s x s occupancy mask for one glyph family.
std::vector<std::uint8_t> glyph_mask(int family, int s) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(s * s), 0);
  const double c = (s - 1) / 2.0;
  const double half = s / 2.0;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double dx = x - c, dy = y - c;
      const double d = std::sqrt(dx * dx + dy * dy);
      bool on = false;
      switch (family) {
        case 0:  // filled square
          on = true;
          break;
        case 1: {  // ring
          const double thickness = std::max(2.0, s / 5.0);
          on = d <= half && d >= half - thickness;
          break;
        }
        case 2: {  // plus
          const double t = std::max(1.0, s / 8.0);
          on = std::abs(dx) <= t || std::abs(dy) <= t;
          break;
        }
        case 3: {  // diagonal cross
          const double t = std::max(1.0, s / 8.0);
          on = std::abs(x - y) <= t || std::abs(x + y - (s - 1)) <= t;
          break;
        }
        case 4:  // upward triangle
          on = std::abs(dx) <= (y + 0.5) / 2.0;
          break;
        case 5: {  // hollow frame
          const int t = std::max(2, s / 6);
          on = x < t || y < t || x >= s - t || y >= s - t;
          break;
        }
        case 6: {  // horizontal stripes
          const int t = std::max(2, s / 5);
          on = (y / t) % 2 == 0;
          break;
        }
        default:  // disk
          on = d <= half;
          break;
      }
      mask[static_cast<std::size_t>(y * s + x)] = on ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace

void GenerateOptions::validate() const {
  if (hw < 32) throw ConfigError("image size must be >= 32, got " + std::to_string(hw));
  if (prevalences.empty()) throw ConfigError("need at least one label prevalence");
  for (double p : prevalences) {
    if (!(p >= 0.0) || p >= 1.0) {
      throw ConfigError("prevalence must lie in [0, 1), got " + std::to_string(p));
    }
  }
  if (!(noise >= 0.0) || noise > 1.0) throw ConfigError("noise must lie in [0, 1]");
  if (!(intensity_lo > 0.0) || intensity_hi > 1.0 || intensity_lo > intensity_hi) {
    throw ConfigError("glyph intensity range must satisfy 0 < lo <= hi <= 1");
  }
  const std::size_t m = margin == 0 ? hw / 9 : margin;
  const std::size_t lo = glyph_min == 0 ? hw / 9 : glyph_min;
  const std::size_t hi = glyph_max == 0 ? 2 * hw / 9 : glyph_max;
  if (lo < 3 || lo > hi) throw ConfigError("glyph size range must satisfy 3 <= min <= max");
  if (2 * m + hi > hw) throw ConfigError("margin and glyph size too large for image size");
}

void Dataset::recount() {
  pos_counts.assign(num_labels, 0);
  neg_counts.assign(num_labels, 0);
  for (const Sample& s : samples) {
    for (std::size_t l = 0; l < num_labels; ++l) {
      if (s.labels[l]) {
        ++pos_counts[l];
      } else {
        ++neg_counts[l];
      }
    }
  }
}

std::vector<std::string> Dataset::label_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < num_labels; ++l) names.push_back("label_" + std::to_string(l));
  return names;
}

bool Dataset::operator==(const Dataset& other) const {
  return num_labels == other.num_labels && height == other.height && width == other.width &&
         samples == other.samples && pos_counts == other.pos_counts &&
         neg_counts == other.neg_counts;
}

Dataset generate(std::uint64_t seed, const GenerateOptions& options) {
  options.validate();
  const int hw = static_cast<int>(options.hw);
  const int margin = static_cast<int>(options.margin == 0 ? options.hw / 9 : options.margin);
  const int glyph_min = static_cast<int>(options.glyph_min == 0 ? options.hw / 9 : options.glyph_min);
  const int glyph_max =
      static_cast<int>(options.glyph_max == 0 ? 2 * options.hw / 9 : options.glyph_max);
  const std::size_t n_labels = options.prevalences.size();

  Dataset data;
  data.num_labels = n_labels;
  data.height = data.width = options.hw;
  data.seed = seed;
  data.options = options;
  data.samples.reserve(options.n_samples);

  Rng rng(seed);
  std::uint32_t group = 0;
  int group_left = 0;
  std::vector<double> layer(options.hw * options.hw);
  for (std::size_t i = 0; i < options.n_samples; ++i) {
    if (group_left == 0) {
      if (i > 0) ++group;
      group_left = 1 + static_cast<int>(rng.index(3));
    }
    --group_left;

    Sample sample;
    sample.group_id = group;
    sample.labels.resize(n_labels);
    sample.boxes.resize(n_labels);
    for (std::size_t l = 0; l < n_labels; ++l) {
      sample.labels[l] = rng.uniform() < options.prevalences[l] ? 1 : 0;
    }

    std::fill(layer.begin(), layer.end(), 0.0);
    for (std::size_t l = 0; l < n_labels; ++l) {
      if (!sample.labels[l]) continue;
      const int s = glyph_min + static_cast<int>(rng.index(glyph_max - glyph_min + 1));
      const int span = hw - 2 * margin - s + 1;
      const int x0 = margin + static_cast<int>(rng.index(span));
      const int y0 = margin + static_cast<int>(rng.index(span));
      const double intensity = rng.uniform(options.intensity_lo, options.intensity_hi);
      const auto mask = glyph_mask(static_cast<int>(l % kGlyphFamilies), s);
      int min_x = s, min_y = s, max_x = -1, max_y = -1;
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          if (!mask[static_cast<std::size_t>(y * s + x)]) continue;
          double& px = layer[static_cast<std::size_t>((y0 + y) * hw + x0 + x)];
          px = std::max(px, intensity);
          min_x = std::min(min_x, x);
          min_y = std::min(min_y, y);
          max_x = std::max(max_x, x);
          max_y = std::max(max_y, y);
        }
      }
      sample.boxes[l] = BBox{x0 + min_x, y0 + min_y, max_x - min_x + 1, max_y - min_y + 1};
    }

    // Unlabeled soft blobs anywhere in the image.
    const std::size_t blobs = options.clutter == 0 ? 0 : rng.index(options.clutter + 1);
    for (std::size_t b = 0; b < blobs; ++b) {
      const double radius = rng.uniform(2.0, glyph_max / 3.0);
      const double cx = rng.uniform(0.0, hw - 1.0), cy = rng.uniform(0.0, hw - 1.0);
      const double intensity = rng.uniform(options.intensity_lo, options.intensity_hi);
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
          if (r2 > 9.0) continue;
          double& px = layer[static_cast<std::size_t>(y * hw + x)];
          px = std::max(px, intensity * std::exp(-0.5 * r2));
        }
      }
    }

    sample.image = Tensor({1, options.hw, options.hw});
    for (std::size_t p = 0; p < layer.size(); ++p) {
      const double v = std::clamp(layer[p] + options.noise * rng.uniform(), 0.0, 1.0);
      // Stored as float32 on disk; keep in-memory values representable.
      sample.image[p] = static_cast<double>(static_cast<float>(v));
    }
    data.samples.push_back(std::move(sample));
  }
  data.recount();
  return data;
}

std::array<Dataset, 3> split(const Dataset& dataset, std::array<double, 3> fractions,
                             std::uint64_t seed, bool allow_empty) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::vector<std::uint32_t> groups;
  std::set<std::uint32_t> seen;
  for (const Sample& s : dataset.samples) {
    if (seen.insert(s.group_id).second) groups.push_back(s.group_id);
  }
  const std::size_t n_groups = groups.size();
  if (n_groups == 0) throw ConfigError("cannot split an empty dataset");
  if (!allow_empty && n_groups < fractions.size()) {
    throw ConfigError("fewer groups (" + std::to_string(n_groups) + ") than splits");
  }
  Rng rng(seed);
  rng.shuffle(groups);

  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(n_groups);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    remainder[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n_groups; ++k, ++assigned) ++counts[order[k % 3]];
  if (!allow_empty) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (counts[k] > 0) continue;
      const auto donor = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[k];
    }
  }

  std::vector<std::pair<std::uint32_t, int>> assignment;
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < counts[k]; ++i) assignment.emplace_back(groups[pos++], k);
  }
  std::sort(assignment.begin(), assignment.end());

  std::array<Dataset, 3> out;
  for (Dataset& d : out) {
    d.num_labels = dataset.num_labels;
    d.height = dataset.height;
    d.width = dataset.width;
  }
  for (const Sample& s : dataset.samples) {
    const auto it = std::lower_bound(assignment.begin(), assignment.end(),
                                     std::make_pair(s.group_id, -1));
    out[static_cast<std::size_t>(it->second)].samples.push_back(s);
  }
  for (Dataset& d : out) d.recount();
  return out;
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  out.write("CAND", 4);
  detail::write_le<std::uint32_t>(out, kDatasetVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.samples.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.num_labels));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.height));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.width));
  for (const Sample& s : dataset.samples) {
    detail::write_le<std::uint32_t>(out, s.group_id);
    for (std::uint8_t y : s.labels) detail::write_le<std::uint8_t>(out, y);
    for (const auto& box : s.boxes) {
      const BBox b = box.value_or(BBox{});
      for (int v : {b.x, b.y, b.w, b.h}) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
      }
    }
    for (double v : s.image.values()) detail::write_le<float>(out, static_cast<float>(v));
  }
}

Dataset read_dataset(std::istream& in) {
  std::size_t offset = 0;
  detail::expect_magic(in, offset, "CAND");
  const std::size_t version_at = offset;
  const auto version = detail::read_le<std::uint32_t>(in, offset, "version");
  if (version != kDatasetVersion) {
    throw VersionError("unsupported dataset version " + std::to_string(version), version_at);
  }
  const auto n = detail::read_le<std::uint32_t>(in, offset, "sample count");
  const auto n_labels = detail::read_le<std::uint32_t>(in, offset, "label count");
  const auto height = detail::read_le<std::uint32_t>(in, offset, "height");
  const auto width = detail::read_le<std::uint32_t>(in, offset, "width");
  if (n_labels == 0 || height == 0 || width == 0) {
    throw ParseError("label count and image extents must be positive", offset);
  }

  Dataset data;
  data.num_labels = n_labels;
  data.height = height;
  data.width = width;
  data.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.group_id = detail::read_le<std::uint32_t>(in, offset, "group id");
    s.labels.resize(n_labels);
    for (auto& y : s.labels) {
      const std::size_t at = offset;
      y = detail::read_le<std::uint8_t>(in, offset, "label");
      if (y > 1) throw ParseError("label byte must be 0 or 1", at);
    }
    s.boxes.resize(n_labels);
    for (std::uint32_t l = 0; l < n_labels; ++l) {
      const std::size_t at = offset;
      BBox b;
      b.x = static_cast<int>(detail::read_le<std::uint32_t>(in, offset, "box"));
      b.y = static_cast<int>(detail::read_le<std::uint32_t>(in, offset, "box"));
      b.w = static_cast<int>(detail::read_le<std::uint32_t>(in, offset, "box"));
      b.h = static_cast<int>(detail::read_le<std::uint32_t>(in, offset, "box"));
      const bool present = b.w > 0 && b.h > 0;
      if (present != (s.labels[l] == 1)) {
        throw ParseError("box table disagrees with labels for label " + std::to_string(l), at);
      }
      if (present) {
        if (b.x < 0 || b.y < 0 || b.x + b.w > static_cast<int>(width) ||
            b.y + b.h > static_cast<int>(height)) {
          throw ParseError("box outside image bounds", at);
        }
        s.boxes[l] = b;
      } else if (b.x != 0 || b.y != 0 || b.w != 0 || b.h != 0) {
        throw ParseError("absent box must be all zero", at);
      }
    }
    std::vector<double> pixels(static_cast<std::size_t>(height) * width);
    for (double& v : pixels) v = detail::read_le<float>(in, offset, "image payload");
    s.image = Tensor({1, height, width}, std::move(pixels));
    data.samples.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("trailing bytes after dataset payload", offset);
  }
  data.recount();
  return data;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_dataset(out, dataset);
  if (!out) throw Error("failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_dataset(in);
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices,
                 std::size_t crop, Rng* rng) {
  if (crop == 0) crop = std::min(dataset.height, dataset.width);
  if (crop > dataset.height || crop > dataset.width) {
    throw ConfigError("crop " + std::to_string(crop) + " exceeds image size");
  }
  const std::size_t n = indices.size(), n_labels = dataset.num_labels;
  Batch batch;
  batch.images = Tensor({n, 1, crop, crop});
  batch.labels = Tensor({n, n_labels});
  batch.offsets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = dataset.samples.at(indices[i]);
    std::size_t oy = (dataset.height - crop) / 2, ox = (dataset.width - crop) / 2;
    if (rng != nullptr) {
      oy = rng->index(dataset.height - crop + 1);
      ox = rng->index(dataset.width - crop + 1);
    }
    batch.offsets.emplace_back(oy, ox);
    for (std::size_t y = 0; y < crop; ++y) {
      for (std::size_t x = 0; x < crop; ++x) {
        batch.images.at(i, 0, y, x) = s.image[(oy + y) * dataset.width + ox + x];
      }
    }
    for (std::size_t l = 0; l < n_labels; ++l) batch.labels[i * n_labels + l] = s.labels[l];
  }
  return batch;
}

std::optional<BBox> crop_box(const BBox& box, std::pair<std::size_t, std::size_t> offset,
                             std::size_t crop) {
  const int oy = static_cast<int>(offset.first), ox = static_cast<int>(offset.second);
  const int c = static_cast<int>(crop);
  const int x0 = std::max(box.x - ox, 0), y0 = std::max(box.y - oy, 0);
  const int x1 = std::min(box.x + box.w - ox, c), y1 = std::min(box.y + box.h - oy, c);
  if (x1 <= x0 || y1 <= y0) return std::nullopt;
  return BBox{x0, y0, x1 - x0, y1 - y0};
}

}  // namespace can
