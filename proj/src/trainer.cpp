#include "can/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "can/errors.hpp"
#include "can/losses.hpp"

namespace can {
namespace {

using nlohmann::json;

std::vector<Tensor> zero_like(const CanModel& model) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : model.named_parameters()) out.emplace_back(t->shape());
  return out;
}

std::vector<Tensor*> parameter_list(CanModel& model) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : model.named_parameters()) out.push_back(t);
  return out;
}

struct EpochOutcome {
  double mean_loss = 0.0;
  bool hit_step_limit = false;
};

// One shuffled pass of minibatch SGD.
EpochOutcome sgd_epoch(CanModel& model, std::vector<Tensor>& velocity, const Dataset& data,
                       const RunConfig& config, LossKind kind, const LossConfig& loss, Rng& rng,
                       std::size_t& step, const std::function<void(std::size_t, double)>& hook) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto params = parameter_list(model);
  EpochOutcome outcome;
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(start + config.batch_size, order.size());
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    const Batch batch = make_batch(data, idx, config.crop, &rng);
    Graph graph;
    const ForwardResult fwd = can_forward(graph, model, batch.images, true, rng);
    const Var objective = training_loss(kind, loss, fwd, batch.labels);
    const double value = objective.value()[0];
    if (!std::isfinite(value)) {
      throw DivergenceError("non-finite training loss at step " + std::to_string(step), step);
    }
    graph.backward(objective);
    sgd_step(params, config.optimizer.lr, config.optimizer.momentum, velocity);
    for (Tensor* p : params) p->zero_grad();
    total += value;
    ++batches;
    ++step;
    if (hook) hook(step, value);
    if (config.max_steps != 0 && step >= config.max_steps) {
      outcome.hit_step_limit = true;
      break;
    }
  }
  outcome.mean_loss = batches == 0 ? 0.0 : total / static_cast<double>(batches);
  return outcome;
}

double objective_over(CanModel& model, const Dataset& data, const RunConfig& config,
                      LossKind kind, const LossConfig& loss) {
  Rng unused(0);
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += config.eval_batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + config.eval_batch_size, data.size()); ++i) {
      idx.push_back(i);
    }
    const Batch batch = make_batch(data, idx, config.crop, nullptr);
    Graph graph;
    const ForwardResult fwd = can_forward(graph, model, batch.images, false, unused);
    total += training_loss(kind, loss, fwd, batch.labels).value()[0] *
             static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j, double fallback) {
  return j.is_null() ? fallback : j.get<double>();
}

void write_model_tensors(std::ostream& out, json& listing, const std::string& prefix,
                         const CanModel& model) {
  for (const auto& [name, t] : model.named_parameters()) {
    listing.push_back({{"name", prefix + name}, {"shape", t->shape()}});
    write_tensor(out, *t);
  }
}

void read_into(Tensor& target, const Tensor& loaded, const std::string& name) {
  if (loaded.shape() != target.shape()) {
    throw ConfigError("checkpoint tensor " + name + " has shape " + shape_str(loaded.shape()) +
                      ", model expects " + shape_str(target.shape()));
  }
  std::copy(loaded.values().begin(), loaded.values().end(), target.values().begin());
}

}  // namespace

void sgd_step(Tensor& param, const Tensor& grad, double lr, double momentum, Tensor& velocity) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw ShapeError("sgd_step: parameter " + shape_str(param.shape()) + ", gradient " +
                     shape_str(grad.shape()) + " and momentum " +
                     shape_str(velocity.shape()) + " must agree");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grad[i];
    param[i] += velocity[i];
  }
}

void sgd_step(std::span<Tensor* const> params, double lr, double momentum,
              std::vector<Tensor>& velocity) {
  if (params.size() != velocity.size()) throw ShapeError("sgd_step: momentum state mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (!p.has_grad()) continue;
    if (p.shape() != velocity[k].shape()) throw ShapeError("sgd_step: momentum shape mismatch");
    const auto g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      velocity[k][i] = momentum * velocity[k][i] - lr * g[i];
      p[i] += velocity[k][i];
    }
  }
}

Var training_loss(LossKind kind, const LossConfig& cfg, const ForwardResult& forward,
                  const Tensor& labels) {
  switch (kind) {
    case LossKind::bce:
      return bce_loss(forward.probs, labels, cfg.epsilon);
    case LossKind::balance:
      return balance_loss(forward.probs, labels, cfg);
    case LossKind::combined:
      if (!forward.raw_b.valid()) {
        if (cfg.alpha != 0.0) throw ConfigError("the attention loss needs two backbones");
        return balance_loss(forward.probs, labels, cfg);
      }
      return combined_loss(forward.probs, labels, forward.raw_a, forward.raw_b, cfg);
  }
  throw ConfigError("unknown loss kind");
}

WarmupResult warmup(const RunConfig& config, const LossConfig& loss, const Dataset& train,
                    bool measure) {
  WarmupResult result;
  for (int side = 0; side < 2; ++side) {
    ModelConfig solo = config.model;
    solo.dual = false;
    solo.num_labels = train.num_labels;
    if (side == 1) solo.backbone_a = config.model.backbone_b;
    const std::uint64_t init = side == 0 ? config.seed_a() : config.seed_b();
    CanModel model = make_model(solo, init, 0, derive_seed(config.seed, 10 + side));
    if (measure) {
      result.initial_loss[side] = objective_over(model, train, config, LossKind::balance, loss);
    }
    std::vector<Tensor> velocity = zero_like(model);
    Rng rng(derive_seed(config.seed, 20 + side));
    std::size_t step = 0;
    RunConfig unlimited = config;
    unlimited.max_steps = 0;
    for (std::size_t e = 0; e < config.warmup_epochs; ++e) {
      sgd_epoch(model, velocity, train, unlimited, LossKind::balance, loss, rng, step, {});
    }
    if (measure) {
      result.final_loss[side] = objective_over(model, train, config, LossKind::balance, loss);
    }
    (side == 0 ? result.backbone_a : result.backbone_b) = std::move(model.backbone_a);
  }
  return result;
}

Trainer::Trainer(RunConfig config, const Dataset& train, const Dataset& val)
    : train_(train), val_(val), rng_(derive_seed(config.seed, 4)) {
  config.validate();
  config.model.num_labels = train.num_labels;
  state_.config = config;
  check_data();

  LossConfig loss = config.loss_config;
  if (config.auto_weights) {
    auto [w_pos, w_neg] = balance_weights(train.pos_counts, train.neg_counts);
    loss.w_pos = std::move(w_pos);
    loss.w_neg = std::move(w_neg);
  }
  loss.validate(train.num_labels);
  state_.loss = loss;

  state_.model = make_model(config.model, config.seed_a(), config.seed_b(), config.seed_head());
  if (config.model.dual && config.warmup_epochs > 0) {
    WarmupResult warm = warmup(config, loss, train);
    state_.model.backbone_a = std::move(warm.backbone_a);
    state_.model.backbone_b = std::move(warm.backbone_b);
  }
  state_.best_model = state_.model;
  state_.velocity = zero_like(state_.model);
  state_.rng_state = rng_.state();
}

Trainer::Trainer(Checkpoint checkpoint, const Dataset& train, const Dataset& val)
    : state_(std::move(checkpoint)), train_(train), val_(val) {
  check_data();
  rng_.set_state(state_.rng_state);
}

void Trainer::check_data() const {
  if (train_.size() == 0 || val_.size() == 0) throw ConfigError("train and val must be non-empty");
  if (train_.num_labels != val_.num_labels) throw ConfigError("train and val label counts differ");
  if (state_.config.model.num_labels != train_.num_labels) {
    throw ConfigError("model label count does not match the data");
  }
  const std::size_t crop = state_.config.crop;
  if (crop > train_.height || crop > train_.width || crop > val_.height || crop > val_.width) {
    throw ConfigError("crop " + std::to_string(crop) + " exceeds the image size");
  }
}

bool Trainer::finished() const {
  return state_.stopped || state_.epoch >= state_.config.epochs;
}

void Trainer::run_epoch() {
  if (finished()) return;
  const RunConfig& config = state_.config;
  const EpochOutcome outcome = sgd_epoch(state_.model, state_.velocity, train_, config,
                                         config.loss, state_.loss, rng_, state_.step, hook_);
  ++state_.epoch;
  const EvalReport report = evaluate(state_.model, val_, config.crop, config.eval_batch_size);
  const double score = std::isnan(report.mean_auroc) ? -std::numeric_limits<double>::infinity()
                                                     : report.mean_auroc;
  if (state_.epoch == 1 || score > state_.best_val) {
    state_.best_val = score;
    state_.best_epoch = state_.epoch;
    state_.best_model = state_.model;
    state_.epochs_since_best = 0;
  } else {
    ++state_.epochs_since_best;
  }
  if (outcome.hit_step_limit) state_.stopped = true;
  if (config.patience > 0 && state_.epochs_since_best >= config.patience) state_.stopped = true;
  state_.history.push_back({state_.epoch, state_.step, outcome.mean_loss, report.mean_auroc});
  state_.rng_state = rng_.state();
  if (log_ != nullptr) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %3zu  step %6zu  loss %.6f  val mean AUROC %.4f%s\n",
                  state_.epoch, state_.step, outcome.mean_loss, report.mean_auroc,
                  state_.best_epoch == state_.epoch ? "  *" : "");
    *log_ << line << std::flush;
  }
}

const Checkpoint& Trainer::run() {
  while (!finished()) run_epoch();
  return state_;
}

double Trainer::dataset_loss(CanModel& model, const Dataset& data) const {
  return objective_over(model, data, state_.config, state_.config.loss, state_.loss);
}

Checkpoint train(const RunConfig& config, const Dataset& train_set, const Dataset& val,
                 std::ostream* log) {
  Trainer trainer(config, train_set, val);
  trainer.set_log(log);
  return trainer.run();
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json listing = json::array();
  {
    std::ofstream out(fs::path(dir) / "tensors.bin", std::ios::binary);
    if (!out) throw Error("cannot write checkpoint tensors in " + dir);
    write_model_tensors(out, listing, "model/", ckpt.model);
    write_model_tensors(out, listing, "best/", ckpt.best_model);
    const auto names = ckpt.model.named_parameters();
    for (std::size_t k = 0; k < ckpt.velocity.size(); ++k) {
      listing.push_back({{"name", "velocity/" + names[k].first},
                         {"shape", ckpt.velocity[k].shape()}});
      write_tensor(out, ckpt.velocity[k]);
    }
    if (!out) throw Error("failed writing checkpoint tensors in " + dir);
  }
  json history = json::array();
  for (const EpochLog& e : ckpt.history) {
    history.push_back({{"epoch", e.epoch},
                       {"steps", e.steps},
                       {"train_loss", number_or_null(e.train_loss)},
                       {"val_mean_auroc", number_or_null(e.val_mean_auroc)}});
  }
  json manifest = {
      {"format", "can-checkpoint"},
      {"version", 1},
      {"config", to_json(ckpt.config)},
      {"model",
       {{"config", to_json(ckpt.model.config)},
        {"fusion", to_string(ckpt.model.config.fusion)},
        {"num_labels", ckpt.model.config.num_labels},
        {"parameter_count", ckpt.model.parameter_count()}}},
      {"loss",
       {{"gamma", ckpt.loss.gamma},
        {"alpha", ckpt.loss.alpha},
        {"w_pos", ckpt.loss.w_pos},
        {"w_neg", ckpt.loss.w_neg},
        {"epsilon", ckpt.loss.epsilon}}},
      {"state",
       {{"epoch", ckpt.epoch},
        {"step", ckpt.step},
        {"rng", ckpt.rng_state},
        {"best_val", number_or_null(ckpt.best_val)},
        {"best_epoch", ckpt.best_epoch},
        {"epochs_since_best", ckpt.epochs_since_best},
        {"stopped", ckpt.stopped},
        {"history", history}}},
      {"tensors", listing}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("failed writing checkpoint manifest in " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw Error("no checkpoint manifest in " + dir);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint manifest is not valid JSON: ") + e.what(), e.byte);
  }
  try {
    if (manifest.at("format") != "can-checkpoint" || manifest.at("version") != 1) {
      throw VersionError("unsupported checkpoint format", 0);
    }
    Checkpoint ckpt;
    ckpt.config = run_config_from_json(manifest.at("config"));
    const ModelConfig model_config = model_config_from_json(manifest.at("model").at("config"));
    ckpt.model = make_model(model_config, 1, 2, 3);
    ckpt.best_model = make_model(model_config, 1, 2, 3);
    ckpt.velocity = zero_like(ckpt.model);
    const json& loss = manifest.at("loss");
    ckpt.loss.gamma = loss.at("gamma").get<double>();
    ckpt.loss.alpha = loss.at("alpha").get<double>();
    ckpt.loss.w_pos = loss.at("w_pos").get<std::vector<double>>();
    ckpt.loss.w_neg = loss.at("w_neg").get<std::vector<double>>();
    ckpt.loss.epsilon = loss.at("epsilon").get<double>();
    const json& state = manifest.at("state");
    ckpt.epoch = state.at("epoch").get<std::size_t>();
    ckpt.step = state.at("step").get<std::size_t>();
    ckpt.rng_state = state.at("rng").get<std::string>();
    ckpt.best_val = number_from(state.at("best_val"), -std::numeric_limits<double>::infinity());
    ckpt.best_epoch = state.at("best_epoch").get<std::size_t>();
    ckpt.epochs_since_best = state.at("epochs_since_best").get<std::size_t>();
    ckpt.stopped = state.at("stopped").get<bool>();
    for (const json& e : state.at("history")) {
      ckpt.history.push_back({e.at("epoch").get<std::size_t>(), e.at("steps").get<std::size_t>(),
                              number_from(e.at("train_loss"), std::nan("")),
                              number_from(e.at("val_mean_auroc"), std::nan(""))});
    }

    auto model_params = ckpt.model.named_parameters();
    auto best_params = ckpt.best_model.named_parameters();
    std::ifstream blobs(fs::path(dir) / "tensors.bin", std::ios::binary);
    if (!blobs) throw Error("no checkpoint tensors in " + dir);
    std::size_t offset = 0;
    std::size_t matched = 0;
    for (const json& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const Tensor loaded = read_tensor(blobs, offset);
      const auto slash = name.find('/');
      const std::string group = name.substr(0, slash), key = name.substr(slash + 1);
      bool found = false;
      for (std::size_t k = 0; k < model_params.size(); ++k) {
        if (model_params[k].first != key) continue;
        if (group == "model") {
          read_into(*model_params[k].second, loaded, name);
        } else if (group == "best") {
          read_into(*best_params[k].second, loaded, name);
        } else if (group == "velocity") {
          read_into(ckpt.velocity[k], loaded, name);
        } else {
          break;
        }
        found = true;
        break;
      }
      if (!found) throw ConfigError("unexpected checkpoint tensor " + name);
      ++matched;
    }
    if (matched != 3 * model_params.size()) throw ConfigError("checkpoint is missing tensors");
    return ckpt;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

const std::vector<Variant>& variant_registry() {
  static const std::vector<Variant> registry = {
      {"single_bce", "A + L_bce", false, FusionMode::hadamard, false, LossKind::bce},
      {"single_bal", "A + L_bal", false, FusionMode::hadamard, false, LossKind::balance},
      {"dual_had_bal", "A+B (had) + L_bal", true, FusionMode::hadamard, false, LossKind::balance},
      {"dual_had_cat_bal", "A+B (had+all_cat) + L_bal", true, FusionMode::hadamard, true,
       LossKind::balance},
      {"dual_had_bal_att", "A+B (had) + L_bal + L_att", true, FusionMode::hadamard, false,
       LossKind::combined},
      {"dual_add_cat_bal_att", "A+B (add+all_cat) + L_bal + L_att", true, FusionMode::add, true,
       LossKind::combined},
      {"dual_max_cat_bal_att", "A+B (max+all_cat) + L_bal + L_att", true, FusionMode::max, true,
       LossKind::combined},
      {"can", "Cross-attention (had+all_cat) + L_bal + L_att", true, FusionMode::hadamard, true,
       LossKind::combined},
  };
  return registry;
}

const Variant& find_variant(const std::string& name) {
  for (const Variant& v : variant_registry()) {
    if (v.name == name) return v;
  }
  throw ConfigError("unknown ablation variant '" + name + "'");
}

std::vector<std::string> default_variants() {
  return {"single_bce",           "single_bal",           "dual_had_bal", "dual_had_cat_bal",
          "dual_add_cat_bal_att", "dual_max_cat_bal_att", "can"};
}

RunConfig apply_variant(RunConfig base, const Variant& variant) {
  base.model.dual = variant.dual;
  base.model.fusion = variant.fusion;
  base.model.concat_all = variant.concat_all;
  base.loss = variant.loss;
  // Warm-up initializes the two networks of a dual model; plain CNNs skip it.
  if (!variant.dual) base.warmup_epochs = 0;
  return base;
}

GridConfig grid_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("grid config must be a JSON object");
  GridConfig grid;
  if (j.contains("base")) grid.base = run_config_from_json(j["base"]);
  try {
    if (j.contains("variants")) grid.variants = j["variants"].get<std::vector<std::string>>();
    if (j.contains("seeds")) grid.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid config: ") + e.what());
  }
  if (grid.variants.empty() || grid.seeds.empty()) {
    throw ConfigError("grid needs at least one variant and one seed");
  }
  for (const auto& name : grid.variants) {
    apply_variant(grid.base, find_variant(name)).validate();
  }
  return grid;
}

json to_json(const GridConfig& grid) {
  return {{"base", to_json(grid.base)}, {"variants", grid.variants}, {"seeds", grid.seeds}};
}

GridConfig load_grid_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("grid config " + path + " is not valid JSON: " + e.what());
  }
  return grid_config_from_json(j);
}

std::pair<double, double> mean_and_stderr(std::span<const double> values) {
  if (values.empty()) return {std::nan(""), std::nan("")};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

const AblationRow& AblationResult::row(const std::string& variant) const {
  for (const AblationRow& r : rows) {
    if (r.variant == variant) return r;
  }
  throw ConfigError("no ablation row for variant '" + variant + "'");
}

std::string AblationResult::to_table() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-48s %8s %10s %8s", "Method", "Params", "Mean AUROC",
                "s.e.");
  out << line;
  const std::size_t n_labels = rows.empty() ? 0 : rows.front().label_means.size();
  for (std::size_t l = 0; l < n_labels; ++l) {
    std::snprintf(line, sizeof line, " %9s", ("label_" + std::to_string(l)).c_str());
    out << line;
  }
  out << '\n' << std::string(76 + 10 * n_labels, '-') << '\n';
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof line, "%-48s %8zu %10.4f %8.4f", r.description.c_str(),
                  r.parameter_count, r.mean, r.std_error);
    out << line;
    for (double m : r.label_means) {
      std::snprintf(line, sizeof line, " %9.4f", m);
      out << line;
    }
    out << '\n';
  }
  return out.str();
}

json AblationResult::to_json() const {
  json j;
  j["rows"] = json::array();
  for (const AblationRow& r : rows) {
    json label_means = json::array();
    for (double m : r.label_means) label_means.push_back(number_or_null(m));
    json seed_means = json::array();
    for (double m : r.seed_means) seed_means.push_back(number_or_null(m));
    j["rows"].push_back({{"variant", r.variant},
                         {"description", r.description},
                         {"parameter_count", r.parameter_count},
                         {"mean", number_or_null(r.mean)},
                         {"std_error", number_or_null(r.std_error)},
                         {"seed_means", seed_means},
                         {"label_means", label_means}});
  }
  j["runs"] = json::array();
  for (const AblationRun& run : runs) {
    j["runs"].push_back({{"variant", run.variant},
                         {"seed", run.seed},
                         {"parameter_count", run.parameter_count},
                         {"epochs", run.epochs},
                         {"test", run.test_report.to_json()}});
  }
  return j;
}

AblationResult ablate(const GridConfig& grid, const Dataset& train_set, const Dataset& val,
                      const Dataset& test, std::ostream* log) {
  if (test.size() == 0) throw ConfigError("ablation needs a non-empty test split");
  AblationResult result;
  for (const std::string& name : grid.variants) {
    const Variant& variant = find_variant(name);
    AblationRow row;
    row.variant = variant.name;
    row.description = variant.description;
    std::vector<std::vector<double>> per_label(test.num_labels);
    for (std::uint64_t seed : grid.seeds) {
      RunConfig config = apply_variant(grid.base, variant);
      config.seed = seed;
      if (log != nullptr) *log << "== " << variant.name << " seed " << seed << '\n';
      const Checkpoint ckpt = train(config, train_set, val, log);
      AblationRun run;
      run.variant = variant.name;
      run.seed = seed;
      run.model = ckpt.best_model;
      run.parameter_count = run.model.parameter_count();
      run.epochs = ckpt.epoch;
      run.test_report = evaluate(run.model, test, config.crop, config.eval_batch_size);
      row.parameter_count = run.parameter_count;
      row.seed_means.push_back(run.test_report.mean_auroc);
      for (std::size_t l = 0; l < test.num_labels; ++l) {
        if (run.test_report.per_label_auroc[l]) {
          per_label[l].push_back(*run.test_report.per_label_auroc[l]);
        }
      }
      if (log != nullptr) *log << "   test mean AUROC " << run.test_report.mean_auroc << '\n';
      result.runs.push_back(std::move(run));
    }
    std::tie(row.mean, row.std_error) = mean_and_stderr(row.seed_means);
    for (const auto& values : per_label) row.label_means.push_back(mean_and_stderr(values).first);
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace can
