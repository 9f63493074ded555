#include "can/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "can/errors.hpp"

namespace can {

std::optional<double> auroc(std::span<const double> scores,
                            std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("auroc: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw ShapeError("auroc: empty input");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum; midranks are half-integers, so doubling
  // keeps everything integral and exact.
  std::uint64_t twice_rank_sum = 0, positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_midrank = static_cast<std::uint64_t>(i + 1 + j);  // 2 * (i+1 + j)/2
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        twice_rank_sum += twice_midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const std::uint64_t twice_u = twice_rank_sum - positives * (positives + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * positives * negatives);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["labels"] = labels;
  j["auroc"] = nlohmann::json::array();
  j["undefined"] = nlohmann::json::array();
  for (std::size_t l = 0; l < per_label_auroc.size(); ++l) {
    if (per_label_auroc[l]) {
      j["auroc"].push_back(*per_label_auroc[l]);
    } else {
      j["auroc"].push_back(nullptr);
      j["undefined"].push_back(labels[l]);
    }
  }
  j["mean"] = std::isnan(mean_auroc) ? nlohmann::json(nullptr) : nlohmann::json(mean_auroc);
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %8s %8s %8s\n", "Label", "AUROC", "P", "N");
  out << line << std::string(43, '-') << '\n';
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (per_label_auroc[l]) {
      std::snprintf(line, sizeof line, "%-16s %8.3f %8zu %8zu\n", labels[l].c_str(),
                    *per_label_auroc[l], pos_counts[l], neg_counts[l]);
    } else {
      std::snprintf(line, sizeof line, "%-16s %8s %8zu %8zu\n", labels[l].c_str(), "n/a",
                    pos_counts[l], neg_counts[l]);
    }
    out << line;
  }
  out << std::string(43, '-') << '\n';
  if (std::isnan(mean_auroc)) {
    std::snprintf(line, sizeof line, "%-16s %8s\n", "Average", "n/a");
  } else {
    std::snprintf(line, sizeof line, "%-16s %8.3f\n", "Average", mean_auroc);
  }
  out << line;
  return out.str();
}

EvalReport report_from_scores(const Tensor& scores, const Dataset& dataset) {
  if (scores.rank() != 2 || scores.dim(0) != dataset.size() ||
      scores.dim(1) != dataset.num_labels) {
    throw ShapeError("report_from_scores: scores " + shape_str(scores.shape()) +
                     " do not match dataset");
  }
  const std::size_t n = dataset.size(), n_labels = dataset.num_labels;
  EvalReport report;
  report.labels = dataset.label_names();
  report.pos_counts = dataset.pos_counts;
  report.neg_counts = dataset.neg_counts;
  double total = 0.0;
  std::size_t defined = 0;
  std::vector<double> column(n);
  std::vector<std::uint8_t> truth(n);
  for (std::size_t l = 0; l < n_labels; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores[i * n_labels + l];
      truth[i] = dataset.samples[i].labels[l];
    }
    report.per_label_auroc.push_back(auroc(column, truth));
    if (report.per_label_auroc.back()) {
      total += *report.per_label_auroc.back();
      ++defined;
    }
  }
  report.mean_auroc = defined == 0 ? std::nan("") : total / static_cast<double>(defined);
  return report;
}

Tensor predict(CanModel& model, const Dataset& dataset, std::size_t crop,
               std::size_t batch_size) {
  if (dataset.num_labels != model.config.num_labels) {
    throw ShapeError("dataset has " + std::to_string(dataset.num_labels) +
                     " labels, model predicts " + std::to_string(model.config.num_labels));
  }
  if (dataset.size() == 0) throw ShapeError("cannot evaluate an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  const std::size_t n_labels = dataset.num_labels;
  Tensor probs({dataset.size(), n_labels});
  Rng unused(0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + batch_size, dataset.size()); ++i) {
      idx.push_back(i);
    }
    const Batch batch = make_batch(dataset, idx, crop, nullptr);
    Graph graph;
    const ForwardResult out = can_forward(graph, model, batch.images, false, unused);
    const Tensor& p = out.probs.value();
    std::copy(p.values().begin(), p.values().end(),
              probs.values().begin() + static_cast<std::ptrdiff_t>(start * n_labels));
  }
  return probs;
}

EvalReport evaluate(CanModel& model, const Dataset& dataset, std::size_t crop,
                    std::size_t batch_size) {
  return report_from_scores(predict(model, dataset, crop, batch_size), dataset);
}

}  // namespace can
