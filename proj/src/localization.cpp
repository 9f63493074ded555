#include "can/localization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "can/errors.hpp"
#include "can/ops.hpp"

namespace can {

Tensor cam_raw(const Tensor& features, std::span<const double> weights) {
  if (features.rank() != 3) throw ShapeError("cam: expected (C, H, W) features");
  const std::size_t c = features.dim(0), area = features.dim(1) * features.dim(2);
  if (weights.size() != c) {
    throw ShapeError("cam: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(c) + " channels");
  }
  Tensor out({features.dim(1), features.dim(2)});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < area; ++i) out[i] += weights[ch] * features[ch * area + i];
  }
  return out;
}

HeatMap cam(const Tensor& features, std::span<const double> weights, std::size_t label_index,
            std::size_t image_id) {
  Tensor values = cam_raw(features, weights);
  double peak = 0.0;
  for (double& v : values.values()) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  if (peak > 0.0) {
    for (double& v : values.values()) v /= peak;
  }
  return HeatMap{std::move(values), label_index, image_id};
}

HeatMap upsample_heatmap(const HeatMap& map, std::size_t height, std::size_t width) {
  if (height < map.values.dim(0) || width < map.values.dim(1)) {
    throw ConfigError("upsample_heatmap: target smaller than source");
  }
  HeatMap out{resize_bilinear(map.values, height, width), map.label_index, map.image_id};
  for (double& v : out.values.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::pair<std::size_t, std::size_t> heatmap_argmax(const HeatMap& map) {
  const auto values = map.values.values();
  const auto it = std::max_element(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(it - values.begin());
  return {idx / map.values.dim(1), idx % map.values.dim(1)};
}

bool localization_hit(const HeatMap& map, const BBox& box) {
  if (box.w <= 0 || box.h <= 0) throw ConfigError("localization_hit: degenerate box");
  const auto [row, col] = heatmap_argmax(map);
  return box.contains(static_cast<int>(col), static_cast<int>(row));
}

void write_pgm(const std::string& path, const HeatMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "P5\n" << map.values.dim(1) << ' ' << map.values.dim(0) << "\n255\n";
  for (double v : map.values.values()) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(byte));
  }
  if (!out) throw Error("failed writing " + path);
}

std::vector<LocalizationCase> localize(CanModel& model, const Dataset& dataset,
                                       std::size_t label, std::size_t crop,
                                       std::size_t batch_size) {
  if (label >= model.config.num_labels) throw ConfigError("label index out of range");
  if (dataset.num_labels != model.config.num_labels) {
    throw ShapeError("dataset label count does not match the model");
  }
  if (crop == 0) crop = std::min(dataset.height, dataset.width);
  const std::size_t channels = model.feature_channels();
  const auto weights = model.classifier.weight.values().subspan(label * channels, channels);

  std::vector<LocalizationCase> cases;
  Rng unused(0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + batch_size, dataset.size()); ++i) {
      idx.push_back(i);
    }
    const Batch batch = make_batch(dataset, idx, crop, nullptr);
    Graph graph;
    const ForwardResult fwd = can_forward(graph, model, batch.images, false, unused);
    const Tensor& maps = fwd.assembled.value();
    const std::size_t h = maps.dim(2), w = maps.dim(3), per = channels * h * w;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Sample& sample = dataset.samples[idx[b]];
      Tensor features({channels, h, w},
                      std::vector<double>(maps.values().begin() + b * per,
                                          maps.values().begin() + (b + 1) * per));
      LocalizationCase c;
      c.image_id = idx[b];
      c.prob = fwd.probs.value()[b * model.config.num_labels + label];
      c.positive = sample.labels[label] == 1;
      c.heatmap = upsample_heatmap(cam(features, weights, label, idx[b]), crop, crop);
      c.argmax = heatmap_argmax(c.heatmap);
      if (c.positive && sample.boxes[label]) {
        c.box = crop_box(*sample.boxes[label], batch.offsets[b], crop);
        if (c.box) c.hit = localization_hit(c.heatmap, *c.box);
      }
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

std::optional<double> hit_rate(const std::vector<LocalizationCase>& cases, double threshold) {
  std::size_t hits = 0, total = 0;
  for (const auto& c : cases) {
    if (!c.hit || c.prob < threshold) continue;
    ++total;
    if (*c.hit) ++hits;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace can
