#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "can/cross_attention.hpp"
#include "can/synth_data.hpp"
#include "json.hpp"

namespace can {

// Mann-Whitney AUROC with midranks for ties. nullopt when either class is
// empty.
std::optional<double> auroc(std::span<const double> scores,
                            std::span<const std::uint8_t> labels);

struct EvalReport {
  std::vector<std::string> labels;
  std::vector<std::optional<double>> per_label_auroc;
  // Unweighted mean over defined labels; NaN when none is defined.
  double mean_auroc = 0.0;
  std::vector<std::size_t> pos_counts;
  std::vector<std::size_t> neg_counts;

  // {"labels": [...], "auroc": [...], "mean": x, "undefined": [...]}
  nlohmann::json to_json() const;
  std::string to_table() const;
  bool operator==(const EvalReport&) const = default;
};

// Builds a report from an (N, L) score matrix.
EvalReport report_from_scores(const Tensor& scores, const Dataset& dataset);

// Eval-mode probabilities (N, L) over the whole dataset, center-cropped.
Tensor predict(CanModel& model, const Dataset& dataset, std::size_t crop = 0,
               std::size_t batch_size = 64);

EvalReport evaluate(CanModel& model, const Dataset& dataset, std::size_t crop = 0,
                    std::size_t batch_size = 64);

}  // namespace can
