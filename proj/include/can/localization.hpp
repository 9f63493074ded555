#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "can/cross_attention.hpp"
#include "can/synth_data.hpp"
#include "can/tensor.hpp"

namespace can {

struct HeatMap {
  Tensor values;  // (H, W), in [0, 1]
  std::size_t label_index = 0;
  std::size_t image_id = 0;
};

// Weighted channel sum sum_c w_c * features_c of (C, H, W) maps, before any
// clamping.
Tensor cam_raw(const Tensor& features, std::span<const double> weights);

// Class activation map: cam_raw clamped at 0 and divided by its maximum
// (left all-zero when the maximum is 0).
HeatMap cam(const Tensor& features, std::span<const double> weights, std::size_t label_index,
            std::size_t image_id);

// Bilinear (corner-aligned) upsampling to image resolution, re-clamped to
// [0, 1]. Target extents must not be smaller than the source.
HeatMap upsample_heatmap(const HeatMap& map, std::size_t height, std::size_t width);

// (row, col) of the first row-major maximum.
std::pair<std::size_t, std::size_t> heatmap_argmax(const HeatMap& map);

// True iff the argmax pixel lies inside the box.
bool localization_hit(const HeatMap& map, const BBox& box);

// 8-bit binary PGM (P5), values scaled to 0..255.
void write_pgm(const std::string& path, const HeatMap& map);

struct LocalizationCase {
  std::size_t image_id = 0;
  double prob = 0.0;
  bool positive = false;
  HeatMap heatmap;  // at crop resolution
  std::pair<std::size_t, std::size_t> argmax{0, 0};
  std::optional<BBox> box;  // in crop coordinates, for positives
  std::optional<bool> hit;  // set for positives whose box survives the crop
};

// Heat maps for `label` over every sample of the dataset (eval mode, center
// crop).
std::vector<LocalizationCase> localize(CanModel& model, const Dataset& dataset,
                                       std::size_t label, std::size_t crop = 0,
                                       std::size_t batch_size = 64);

// Hit rate over positives with prob >= threshold; nullopt when there are
// none.
std::optional<double> hit_rate(const std::vector<LocalizationCase>& cases,
                               double threshold = 0.5);

}  // namespace can
