#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "can/graph.hpp"
#include "can/ops.hpp"
#include "can/rng.hpp"

namespace can {

enum class FusionMode { hadamard, add, max };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& name);

// Stack of 3x3 conv blocks, one per width. Every block is
// conv -> relu -> maxpool(2); relu and maxpool commute, so the last block is
// stored as conv -> maxpool and its relu is the fusion head's gate. The
// pre-gate output is what the attention loss reads. pool_last = false drops
// the last block's pooling for a finer final grid.
struct BackboneSpec {
  std::vector<std::size_t> widths{8, 16, 24};
  std::size_t kernel = 3;
  std::size_t pool = 2;
  bool pool_last = true;
};

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t num_labels = 1;
  // false: a plain single-backbone CNN (backbone_a -> relu -> GAP -> head).
  bool dual = true;
  BackboneSpec backbone_a;
  BackboneSpec backbone_b{{8, 16, 32}, 3, 2, true};
  FusionMode fusion = FusionMode::hadamard;
  bool concat_all = true;
  double dropout = 0.2;

  void validate() const;
};

struct Backbone {
  std::vector<ConvLayer> blocks;
  std::size_t pool = 2;
  bool pool_last = true;

  std::size_t out_channels() const { return blocks.back().out_channels(); }
};

// Two-backbone cross-attention classifier.
struct CanModel {
  ModelConfig config;
  Backbone backbone_a;
  Backbone backbone_b;
  ConvLayer transition_a;
  ConvLayer transition_b;
  DenseLayer classifier;

  // Common transition width min(C_A, C_B); 0 for single-backbone models.
  std::size_t tran_n() const;
  std::size_t feature_channels() const;
  std::size_t parameter_count() const;
  // Stable name -> tensor listing used by checkpoints and the optimizer.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
};

Backbone make_backbone(std::size_t in_channels, const BackboneSpec& spec, Rng& rng);

// Initializes every parameter set from its own derived stream so the two
// backbones differ whenever seed_a != seed_b.
CanModel make_model(const ModelConfig& config, std::uint64_t seed_a, std::uint64_t seed_b,
                    std::uint64_t seed_head);

// Spatial extent of a backbone's output for a given input extent.
std::pair<std::size_t, std::size_t> backbone_output_hw(const Backbone& backbone,
                                                       std::size_t height, std::size_t width);

// Raw (pre-gate) last-block feature maps.
Var backbone_forward(Backbone& backbone, Var images);

// 1x1 convolution to the common channel width; spatial extents unchanged.
Var transition(Var features, ConvLayer& layer);

Var fuse(Var fa, Var fb, FusionMode mode);

// [F_CA | F_A | F_B] along channels when concat_all, else F_CA alone.
Var assemble(Var f_ca, Var fa, Var fb, bool concat_all);

struct ForwardResult {
  Var probs;      // (N, L)
  Var logits;     // (N, L)
  Var raw_a;      // pre-gate backbone A maps
  Var raw_b;      // pre-gate backbone B maps; invalid for single models
  Var assembled;  // maps whose GAP feeds the classifier
};

ForwardResult can_forward(Graph& graph, CanModel& model, const Tensor& images, bool training,
                          Rng& rng);

}  // namespace can
