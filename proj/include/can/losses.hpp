#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "can/graph.hpp"
#include "can/tensor.hpp"

namespace can {

struct LossConfig {
  double gamma = 2.0;   // focusing exponent
  double alpha = 0.01;  // attention loss trade-off
  std::vector<double> w_pos;
  std::vector<double> w_neg;
  double epsilon = 1e-12;  // log argument floor

  void validate(std::size_t num_labels) const;
};

// w_pos[l] = N_l / (P_l + N_l), w_neg[l] = P_l / (P_l + N_l).
std::pair<std::vector<double>, std::vector<double>> balance_weights(
    std::span<const std::size_t> pos_counts, std::span<const std::size_t> neg_counts);

// Mean over the batch of the per-label summed binary cross entropy.
Var bce_loss(Var probs, const Tensor& labels, double epsilon = 1e-12);

// Class-weighted focal loss summed over labels, averaged over the batch:
//   -w_pos (1-p)^g y log p - w_neg p^g (1-y) log(1-p)
Var balance_loss(Var probs, const Tensor& labels, const LossConfig& cfg);

// Channel sum, bilinear resize to (height, width), clamp at 0, per-sample
// max normalization. (N, C, H, W) -> (N, 1, height, width), values in [0, 1].
Var pathogenic_map(Var features, std::size_t height, std::size_t width);

// Attention-map extent used by attention_loss: the smaller of the two
// backbones' spatial extents per axis.
std::pair<std::size_t, std::size_t> attention_target(const Shape& a, const Shape& b);

// Batch mean of || map_a - map_b ||_2 between the two pathogenic maps.
Var attention_loss(Var features_a, Var features_b, std::size_t height, std::size_t width);
Var attention_loss(Var features_a, Var features_b);

// alpha * attention_loss + balance_loss. With alpha == 0 the attention term
// is not evaluated and the result is the balance loss node itself.
Var combined_loss(Var probs, const Tensor& labels, Var features_a, Var features_b,
                  const LossConfig& cfg);

}  // namespace can
