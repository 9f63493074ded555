#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "can/config.hpp"
#include "can/cross_attention.hpp"
#include "can/metrics.hpp"
#include "can/synth_data.hpp"

namespace can {

// Classical momentum: v <- mu v - lr g; p <- p + v.
void sgd_step(Tensor& param, const Tensor& grad, double lr, double momentum, Tensor& velocity);
// Applies sgd_step to every parameter using its accumulated grad().
void sgd_step(std::span<Tensor* const> params, double lr, double momentum,
              std::vector<Tensor>& velocity);

// Loss of one forward pass under the run's objective.
Var training_loss(LossKind kind, const LossConfig& cfg, const ForwardResult& forward,
                  const Tensor& labels);

struct WarmupResult {
  Backbone backbone_a;
  Backbone backbone_b;
  // Eval-mode balance loss of each solo network over the warmup data,
  // before and after warmup. Only filled when measured.
  std::array<double, 2> initial_loss{0.0, 0.0};
  std::array<double, 2> final_loss{0.0, 0.0};
};

// Trains each backbone alone, with a temporary GAP + dense head, on the
// balance loss for config.warmup_epochs. Heads are discarded.
WarmupResult warmup(const RunConfig& config, const LossConfig& loss, const Dataset& train,
                    bool measure = false);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;  // mean minibatch loss over the epoch
  double val_mean_auroc = 0.0;
};

// Complete training state; resuming from it reproduces the uninterrupted
// run bit for bit.
struct Checkpoint {
  RunConfig config;
  LossConfig loss;  // resolved, weights frozen
  CanModel model;
  CanModel best_model;
  std::vector<Tensor> velocity;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string rng_state;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_since_best = 0;
  bool stopped = false;
  std::vector<EpochLog> history;
};

// Directory with manifest.json and tensors.bin (CANT records in manifest
// order).
void save_checkpoint(const Checkpoint& checkpoint, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

class Trainer {
 public:
  // Fresh run: validates, freezes balance weights from `train`, initializes
  // and warms up the model.
  Trainer(RunConfig config, const Dataset& train, const Dataset& val);
  // Continues from a saved state.
  Trainer(Checkpoint checkpoint, const Dataset& train, const Dataset& val);

  bool finished() const;
  // One pass over the training split, then validation and model selection.
  void run_epoch();
  const Checkpoint& run();

  const Checkpoint& state() const { return state_; }
  Checkpoint& state() { return state_; }

  void set_log(std::ostream* log) { log_ = log; }
  // Per-step callback with the step index and minibatch loss.
  void set_step_hook(std::function<void(std::size_t, double)> hook) { hook_ = std::move(hook); }

  // Eval-mode objective averaged over the whole dataset.
  double dataset_loss(CanModel& model, const Dataset& data) const;

 private:
  void check_data() const;

  Checkpoint state_;
  const Dataset& train_;
  const Dataset& val_;
  Rng rng_;
  std::ostream* log_ = nullptr;
  std::function<void(std::size_t, double)> hook_;
};

Checkpoint train(const RunConfig& config, const Dataset& train, const Dataset& val,
                 std::ostream* log = nullptr);

// Ablation grid.
struct Variant {
  std::string name;
  std::string description;
  bool dual = true;
  FusionMode fusion = FusionMode::hadamard;
  bool concat_all = true;
  LossKind loss = LossKind::combined;
};

const std::vector<Variant>& variant_registry();
const Variant& find_variant(const std::string& name);
std::vector<std::string> default_variants();
RunConfig apply_variant(RunConfig base, const Variant& variant);

struct GridConfig {
  RunConfig base;
  std::vector<std::string> variants = default_variants();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

GridConfig grid_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GridConfig& grid);
GridConfig load_grid_config(const std::string& path);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;
  std::size_t epochs = 0;
  EvalReport test_report;
  CanModel model;  // best-validation model
};

struct AblationRow {
  std::string variant;
  std::string description;
  std::size_t parameter_count = 0;
  std::vector<double> seed_means;
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> label_means;  // per label, over seeds with defined AUROC
};

struct AblationResult {
  std::vector<AblationRun> runs;  // variant order, then seed order
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& variant) const;
  std::string to_table() const;
  nlohmann::json to_json() const;
};

// Runs every variant for every seed on fixed splits and evaluates the best
// validation checkpoint on `test`.
AblationResult ablate(const GridConfig& grid, const Dataset& train, const Dataset& val,
                      const Dataset& test, std::ostream* log = nullptr);

// Mean and standard error of the mean.
std::pair<double, double> mean_and_stderr(std::span<const double> values);

}  // namespace can
