#include "can/cross_attention.hpp"

#include <algorithm>

#include "can/errors.hpp"

namespace can {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::hadamard:
      return "hadamard";
    case FusionMode::add:
      return "add";
    case FusionMode::max:
      return "max";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "hadamard" || name == "had") return FusionMode::hadamard;
  if (name == "add") return FusionMode::add;
  if (name == "max") return FusionMode::max;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

void ModelConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be >= 1");
  if (num_labels == 0) throw ConfigError("num_labels must be >= 1");
  if (!(dropout >= 0.0) || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  auto check = [](const BackboneSpec& spec, const char* name) {
    if (spec.widths.empty()) throw ConfigError(std::string(name) + ": needs at least one block");
    if (spec.kernel == 0 || spec.kernel % 2 == 0) {
      throw ConfigError(std::string(name) + ": kernel must be odd");
    }
    if (spec.pool == 0) throw ConfigError(std::string(name) + ": pool must be >= 1");
    for (std::size_t w : spec.widths) {
      if (w == 0) throw ConfigError(std::string(name) + ": widths must be positive");
    }
  };
  check(backbone_a, "backbone_a");
  if (dual) {
    check(backbone_b, "backbone_b");
    // Hadamard fusion needs aligned grids: same downsampling on both sides.
    if (backbone_a.widths.size() != backbone_b.widths.size() ||
        backbone_a.pool != backbone_b.pool || backbone_a.pool_last != backbone_b.pool_last) {
      throw ConfigError(
          "backbones must emit identical spatial extents (same block count and pooling)");
    }
  }
}

std::size_t CanModel::tran_n() const {
  if (!config.dual) return 0;
  return std::min(backbone_a.out_channels(), backbone_b.out_channels());
}

std::size_t CanModel::feature_channels() const {
  if (!config.dual) return backbone_a.out_channels();
  return config.concat_all ? 3 * tran_n() : tran_n();
}

std::size_t CanModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t->size();
  return total;
}

std::vector<std::pair<std::string, Tensor*>> CanModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add_backbone = [&](Backbone& b, const std::string& prefix) {
    for (std::size_t i = 0; i < b.blocks.size(); ++i) {
      out.emplace_back(prefix + std::to_string(i) + ".kernel", &b.blocks[i].kernel);
      out.emplace_back(prefix + std::to_string(i) + ".bias", &b.blocks[i].bias);
    }
  };
  add_backbone(backbone_a, "backbone_a.");
  if (config.dual) {
    add_backbone(backbone_b, "backbone_b.");
    out.emplace_back("transition_a.kernel", &transition_a.kernel);
    out.emplace_back("transition_a.bias", &transition_a.bias);
    out.emplace_back("transition_b.kernel", &transition_b.kernel);
    out.emplace_back("transition_b.bias", &transition_b.bias);
  }
  out.emplace_back("classifier.weight", &classifier.weight);
  out.emplace_back("classifier.bias", &classifier.bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> CanModel::named_parameters() const {
  auto mutable_list = const_cast<CanModel*>(this)->named_parameters();
  return {mutable_list.begin(), mutable_list.end()};
}

Backbone make_backbone(std::size_t in_channels, const BackboneSpec& spec, Rng& rng) {
  Backbone backbone;
  backbone.pool = spec.pool;
  backbone.pool_last = spec.pool_last;
  std::size_t channels = in_channels;
  for (std::size_t width : spec.widths) {
    backbone.blocks.push_back(make_conv(channels, width, spec.kernel, 1, spec.kernel / 2, rng));
    channels = width;
  }
  return backbone;
}

CanModel make_model(const ModelConfig& config, std::uint64_t seed_a, std::uint64_t seed_b,
                    std::uint64_t seed_head) {
  config.validate();
  CanModel model;
  model.config = config;
  Rng rng_a(seed_a);
  model.backbone_a = make_backbone(config.in_channels, config.backbone_a, rng_a);
  Rng rng_head(seed_head);
  if (config.dual) {
    Rng rng_b(seed_b);
    model.backbone_b = make_backbone(config.in_channels, config.backbone_b, rng_b);
    const std::size_t width = model.tran_n();
    model.transition_a = make_conv(model.backbone_a.out_channels(), width, 1, 1, 0, rng_head);
    model.transition_b = make_conv(model.backbone_b.out_channels(), width, 1, 1, 0, rng_head);
  }
  model.classifier = make_dense(model.feature_channels(), config.num_labels, rng_head);
  return model;
}

std::pair<std::size_t, std::size_t> backbone_output_hw(const Backbone& backbone,
                                                       std::size_t height, std::size_t width) {
  for (std::size_t i = 0; i < backbone.blocks.size(); ++i) {
    const ConvLayer& block = backbone.blocks[i];
    height = window_extent(height, block.kernel_size(), block.stride, block.padding);
    width = window_extent(width, block.kernel_size(), block.stride, block.padding);
    if (i + 1 == backbone.blocks.size() && !backbone.pool_last) break;
    height = window_extent(height, backbone.pool, backbone.pool, 0);
    width = window_extent(width, backbone.pool, backbone.pool, 0);
  }
  return {height, width};
}

Var backbone_forward(Backbone& backbone, Var images) {
  Var x = images;
  for (std::size_t i = 0; i < backbone.blocks.size(); ++i) {
    x = conv2d(x, backbone.blocks[i]);
    const bool last = i + 1 == backbone.blocks.size();
    if (!last) x = relu(x);
    if (!last || backbone.pool_last) x = max_pool2d(x, backbone.pool, backbone.pool);
  }
  return x;
}

Var transition(Var features, ConvLayer& layer) {
  if (layer.kernel_size() != 1) throw ConfigError("transition layers are 1x1 convolutions");
  return conv2d(features, layer);
}

Var fuse(Var fa, Var fb, FusionMode mode) {
  if (fa.shape() != fb.shape()) {
    throw ShapeError("fuse: shape mismatch " + shape_str(fa.shape()) + " vs " +
                     shape_str(fb.shape()));
  }
  switch (mode) {
    case FusionMode::hadamard:
      return mul(fa, fb);
    case FusionMode::add:
      return add(fa, fb);
    case FusionMode::max:
      return maximum(fa, fb);
  }
  throw ConfigError("unknown fusion mode");
}

Var assemble(Var f_ca, Var fa, Var fb, bool concat_all) {
  if (f_ca.shape() != fa.shape() || f_ca.shape() != fb.shape()) {
    throw ShapeError("assemble: operands must share one shape");
  }
  if (!concat_all) return f_ca;
  return concat_channels({f_ca, fa, fb});
}

ForwardResult can_forward(Graph& graph, CanModel& model, const Tensor& images, bool training,
                          Rng& rng) {
  if (images.rank() != 4 || images.dim(1) != model.config.in_channels) {
    throw ShapeError("can_forward: expected (N, " + std::to_string(model.config.in_channels) +
                     ", H, W) images, got " + shape_str(images.shape()));
  }
  ForwardResult result;
  Var x = graph.input(images);
  result.raw_a = backbone_forward(model.backbone_a, x);
  if (model.config.dual) {
    result.raw_b = backbone_forward(model.backbone_b, x);
    Var fa = transition(relu(result.raw_a), model.transition_a);
    Var fb = transition(relu(result.raw_b), model.transition_b);
    Var f_ca = fuse(fa, fb, model.config.fusion);
    result.assembled = assemble(f_ca, fa, fb, model.config.concat_all);
  } else {
    result.assembled = relu(result.raw_a);
  }
  Var pooled = global_avg_pool(result.assembled);
  pooled = dropout(pooled, model.config.dropout, training, rng);
  result.logits = dense(pooled, model.classifier);
  result.probs = sigmoid(result.logits);
  return result;
}

}  // namespace can
