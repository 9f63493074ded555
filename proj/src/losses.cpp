#include "can/losses.hpp"

#include <algorithm>
#include <cmath>

#include "can/errors.hpp"
#include "can/ops.hpp"

namespace can {
namespace {

void check_labels(const Tensor& probs, const Tensor& labels, const char* op) {
  if (probs.rank() != 2 || probs.shape() != labels.shape()) {
    throw ShapeError(std::string(op) + ": probs " + shape_str(probs.shape()) +
                     " and labels " + shape_str(labels.shape()) + " must both be (N, L)");
  }
}

// log(max(v, eps)) and its derivative in v (zero where clamped).
double clamped_log(double v, double eps) { return std::log(std::max(v, eps)); }
double clamped_log_grad(double v, double eps) { return v > eps ? 1.0 / v : 0.0; }

// v^e with d/dv, defining 0^0 = 1 and the derivative of v^0 as 0.
double power(double v, double e) { return e == 0.0 ? 1.0 : std::pow(v, e); }
double power_grad(double v, double e) { return e == 0.0 ? 0.0 : e * std::pow(v, e - 1.0); }

}  // namespace

void LossConfig::validate(std::size_t num_labels) const {
  if (!std::isfinite(gamma) || gamma < 0.0) throw ConfigError("gamma must be finite and >= 0");
  if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("alpha must be finite and >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (w_pos.size() != num_labels || w_neg.size() != num_labels) {
    throw ConfigError("balance weights need one entry per label (" +
                      std::to_string(num_labels) + ")");
  }
  for (std::size_t l = 0; l < num_labels; ++l) {
    if (w_pos[l] < 0.0 || w_pos[l] > 1.0 || w_neg[l] < 0.0 || w_neg[l] > 1.0 ||
        std::abs(w_pos[l] + w_neg[l] - 1.0) > 1e-12) {
      throw ConfigError("balance weights for label " + std::to_string(l) +
                        " must lie in [0, 1] and sum to 1");
    }
  }
}

std::pair<std::vector<double>, std::vector<double>> balance_weights(
    std::span<const std::size_t> pos_counts, std::span<const std::size_t> neg_counts) {
  if (pos_counts.size() != neg_counts.size()) {
    throw ShapeError("balance_weights: count vectors differ in length");
  }
  std::vector<double> w_pos(pos_counts.size()), w_neg(pos_counts.size());
  for (std::size_t l = 0; l < pos_counts.size(); ++l) {
    const std::size_t total = pos_counts[l] + neg_counts[l];
    if (total == 0) throw ConfigError("label " + std::to_string(l) + " has no samples");
    w_pos[l] = static_cast<double>(neg_counts[l]) / static_cast<double>(total);
    w_neg[l] = static_cast<double>(pos_counts[l]) / static_cast<double>(total);
  }
  return {std::move(w_pos), std::move(w_neg)};
}

Var bce_loss(Var probs, const Tensor& labels, double epsilon) {
  const Tensor& p = probs.value();
  check_labels(p, labels, "bce_loss");
  const double inv_n = 1.0 / static_cast<double>(p.dim(0));
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double y = labels[i];
    total -= y * clamped_log(p[i], epsilon) + (1.0 - y) * clamped_log(1.0 - p[i], epsilon);
  }
  return probs.graph->record(
      Tensor::scalar(total * inv_n), {probs}, [probs, labels, epsilon, inv_n](Graph& g, int self) {
        const Tensor& p = g.value(probs);
        const double gy = g.grad(self)[0] * inv_n;
        auto gp = g.grad(probs);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double y = labels[i];
          gp[i] -= gy * (y * clamped_log_grad(p[i], epsilon) -
                         (1.0 - y) * clamped_log_grad(1.0 - p[i], epsilon));
        }
      });
}

Var balance_loss(Var probs, const Tensor& labels, const LossConfig& cfg) {
  const Tensor& p = probs.value();
  check_labels(p, labels, "balance_loss");
  const std::size_t n_labels = p.dim(1);
  cfg.validate(n_labels);
  const double inv_n = 1.0 / static_cast<double>(p.dim(0));
  const double gamma = cfg.gamma, eps = cfg.epsilon;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::size_t l = i % n_labels;
    const double y = labels[i], q = p[i];
    total -= cfg.w_pos[l] * power(1.0 - q, gamma) * y * clamped_log(q, eps) +
             cfg.w_neg[l] * power(q, gamma) * (1.0 - y) * clamped_log(1.0 - q, eps);
  }
  return probs.graph->record(
      Tensor::scalar(total * inv_n), {probs},
      [probs, labels, cfg, n_labels, inv_n](Graph& g, int self) {
        const Tensor& p = g.value(probs);
        const double gy = g.grad(self)[0] * inv_n;
        const double gamma = cfg.gamma, eps = cfg.epsilon;
        auto gp = g.grad(probs);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const std::size_t l = i % n_labels;
          const double y = labels[i], q = p[i];
          double d = 0.0;
          if (y != 0.0) {
            // d/dq of (1-q)^g log q
            d += cfg.w_pos[l] * y *
                 (-power_grad(1.0 - q, gamma) * clamped_log(q, eps) +
                  power(1.0 - q, gamma) * clamped_log_grad(q, eps));
          }
          if (y != 1.0) {
            // d/dq of q^g log(1-q)
            d += cfg.w_neg[l] * (1.0 - y) *
                 (power_grad(q, gamma) * clamped_log(1.0 - q, eps) -
                  power(q, gamma) * clamped_log_grad(1.0 - q, eps));
          }
          gp[i] -= gy * d;
        }
      });
}

Var pathogenic_map(Var features, std::size_t height, std::size_t width) {
  if (features.value().rank() != 4) throw ShapeError("pathogenic_map: expected NCHW features");
  // Negative evidence is clamped so every map pixel lies in [0, 1].
  return normalize_by_max(relu(resize_bilinear(sum_channels(features), height, width)));
}

std::pair<std::size_t, std::size_t> attention_target(const Shape& a, const Shape& b) {
  if (a.size() != 4 || b.size() != 4) throw ShapeError("attention_target: expected NCHW");
  return {std::min(a[2], b[2]), std::min(a[3], b[3])};
}

Var attention_loss(Var features_a, Var features_b, std::size_t height, std::size_t width) {
  if (features_a.shape().at(0) != features_b.shape().at(0)) {
    throw ShapeError("attention_loss: batch sizes differ");
  }
  Var map_a = pathogenic_map(features_a, height, width);
  Var map_b = pathogenic_map(features_b, height, width);
  if (map_a.shape() != map_b.shape()) {
    throw Error("attention_loss: internal error, resized maps disagree");
  }
  return mean(l2_norm_per_sample(sub(map_a, map_b)));
}

Var attention_loss(Var features_a, Var features_b) {
  const auto [h, w] = attention_target(features_a.shape(), features_b.shape());
  return attention_loss(features_a, features_b, h, w);
}

Var combined_loss(Var probs, const Tensor& labels, Var features_a, Var features_b,
                  const LossConfig& cfg) {
  Var bal = balance_loss(probs, labels, cfg);
  if (cfg.alpha == 0.0) return bal;
  return add(scale(attention_loss(features_a, features_b), cfg.alpha), bal);
}

}  // namespace can
