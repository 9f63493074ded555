#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "can/cross_attention.hpp"
#include "can/losses.hpp"
#include "can/synth_data.hpp"
#include "json.hpp"

namespace can {

enum class LossKind { bce, balance, combined };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct OptimizerConfig {
  std::string name = "sgd";
  double lr = 0.001;
  double momentum = 0.9;
};

// Where training data comes from: three CAND files, or a generator spec
// that is split by group.
struct DataConfig {
  std::string train_path;
  std::string val_path;
  std::string test_path;
  std::optional<GenerateOptions> generate;
  std::uint64_t generate_seed = 0;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  // Backbone initialization seeds; derived from `seed` when unset.
  std::optional<std::uint64_t> init_seed_a;
  std::optional<std::uint64_t> init_seed_b;
  ModelConfig model;  // num_labels is taken from the data
  LossKind loss = LossKind::combined;
  LossConfig loss_config;
  bool auto_weights = true;  // w_pos / w_neg from the training split
  OptimizerConfig optimizer;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 1;
  std::size_t patience = 5;
  std::size_t crop = 64;
  std::size_t max_steps = 0;  // 0: no step limit
  std::size_t eval_batch_size = 64;
  DataConfig data;
  std::string run_dir = "runs/default";

  std::uint64_t seed_a() const;
  std::uint64_t seed_b() const;
  std::uint64_t seed_head() const;
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
// Missing keys keep their defaults; wrong types or values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Returns (train, val, test). Missing test path yields an empty test set.
std::array<Dataset, 3> load_data(const DataConfig& data);

}  // namespace can
