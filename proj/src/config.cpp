#include "can/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "can/errors.hpp"

namespace can {
namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

json backbone_json(const BackboneSpec& spec) {
  return {{"widths", spec.widths},
          {"kernel", spec.kernel},
          {"pool", spec.pool},
          {"pool_last", spec.pool_last}};
}

BackboneSpec backbone_from_json(const json& j, BackboneSpec spec) {
  read_key(j, "widths", spec.widths);
  read_key(j, "kernel", spec.kernel);
  read_key(j, "pool", spec.pool);
  read_key(j, "pool_last", spec.pool_last);
  return spec;
}

json generate_json(const GenerateOptions& g) {
  return {{"n", g.n_samples},          {"hw", g.hw},
          {"prevalence", g.prevalences}, {"noise", g.noise},
          {"margin", g.margin},         {"clutter", g.clutter},
          {"intensity", {g.intensity_lo, g.intensity_hi}},
          {"glyph", {g.glyph_min, g.glyph_max}}};
}

GenerateOptions generate_from_json(const json& j) {
  GenerateOptions g;
  read_key(j, "n", g.n_samples);
  read_key(j, "hw", g.hw);
  read_key(j, "prevalence", g.prevalences);
  read_key(j, "noise", g.noise);
  read_key(j, "margin", g.margin);
  read_key(j, "clutter", g.clutter);
  if (j.contains("glyph")) {
    std::vector<std::size_t> range;
    read_key(j, "glyph", range);
    if (range.size() != 2) throw ConfigError("glyph must be [min, max]");
    g.glyph_min = range[0];
    g.glyph_max = range[1];
  }
  if (j.contains("intensity")) {
    std::vector<double> range;
    read_key(j, "intensity", range);
    if (range.size() != 2) throw ConfigError("intensity must be [lo, hi]");
    g.intensity_lo = range[0];
    g.intensity_hi = range[1];
  }
  return g;
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::bce:
      return "bce";
    case LossKind::balance:
      return "balance";
    case LossKind::combined:
      return "combined";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "bce") return LossKind::bce;
  if (name == "balance") return LossKind::balance;
  if (name == "combined") return LossKind::combined;
  throw ConfigError("unknown loss kind '" + name + "'");
}

std::uint64_t RunConfig::seed_a() const { return init_seed_a.value_or(derive_seed(seed, 1)); }
std::uint64_t RunConfig::seed_b() const { return init_seed_b.value_or(derive_seed(seed, 2)); }
std::uint64_t RunConfig::seed_head() const { return derive_seed(seed, 3); }

void RunConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (optimizer.name != "sgd") throw ConfigError("unknown optimizer '" + optimizer.name + "'");
  if (!(optimizer.momentum >= 0.0) || optimizer.momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (eval_batch_size == 0) throw ConfigError("eval_batch_size must be >= 1");
  if (!std::isfinite(loss_config.gamma) || loss_config.gamma < 0.0) {
    throw ConfigError("gamma must be finite and >= 0");
  }
  if (!std::isfinite(loss_config.alpha) || loss_config.alpha < 0.0) {
    throw ConfigError("alpha must be finite and >= 0");
  }
  ModelConfig probe = model;
  probe.num_labels = std::max<std::size_t>(1, probe.num_labels);
  probe.validate();
  if (loss == LossKind::combined && !model.dual && loss_config.alpha != 0.0) {
    throw ConfigError("the attention loss needs a dual-backbone model");
  }
  if (model.dual && seed_a() == seed_b() &&
      model.backbone_a.widths == model.backbone_b.widths &&
      model.backbone_a.kernel == model.backbone_b.kernel) {
    throw ConfigError("backbones would start identical: use distinct init seeds");
  }
}

json to_json(const ModelConfig& c) {
  return {{"in_channels", c.in_channels},
          {"num_labels", c.num_labels},
          {"dual", c.dual},
          {"backbone_a", backbone_json(c.backbone_a)},
          {"backbone_b", backbone_json(c.backbone_b)},
          {"fusion", to_string(c.fusion)},
          {"concat_all", c.concat_all},
          {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  ModelConfig c;
  read_key(j, "in_channels", c.in_channels);
  read_key(j, "num_labels", c.num_labels);
  read_key(j, "dual", c.dual);
  if (j.contains("backbone_a")) c.backbone_a = backbone_from_json(j["backbone_a"], c.backbone_a);
  if (j.contains("backbone_b")) c.backbone_b = backbone_from_json(j["backbone_b"], c.backbone_b);
  std::string fusion = to_string(c.fusion);
  read_key(j, "fusion", fusion);
  c.fusion = parse_fusion_mode(fusion);
  read_key(j, "concat_all", c.concat_all);
  read_key(j, "dropout", c.dropout);
  return c;
}

json to_json(const RunConfig& c) {
  json loss = {{"kind", to_string(c.loss)},
               {"gamma", c.loss_config.gamma},
               {"alpha", c.loss_config.alpha},
               {"epsilon", c.loss_config.epsilon}};
  if (c.auto_weights) {
    loss["weights"] = "auto";
  } else {
    loss["weights"] = {{"pos", c.loss_config.w_pos}, {"neg", c.loss_config.w_neg}};
  }
  json data = {{"fractions", c.data.fractions}, {"split_seed", c.data.split_seed}};
  if (!c.data.train_path.empty()) data["train"] = c.data.train_path;
  if (!c.data.val_path.empty()) data["val"] = c.data.val_path;
  if (!c.data.test_path.empty()) data["test"] = c.data.test_path;
  if (c.data.generate) {
    data["generate"] = generate_json(*c.data.generate);
    data["generate"]["seed"] = c.data.generate_seed;
  }
  json j = {{"seed", c.seed},
            {"model", to_json(c.model)},
            {"loss", loss},
            {"optimizer",
             {{"name", c.optimizer.name},
              {"lr", c.optimizer.lr},
              {"momentum", c.optimizer.momentum}}},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"warmup_epochs", c.warmup_epochs},
            {"patience", c.patience},
            {"crop", c.crop},
            {"max_steps", c.max_steps},
            {"eval_batch_size", c.eval_batch_size},
            {"data", data},
            {"run_dir", c.run_dir}};
  if (c.init_seed_a || c.init_seed_b) j["init_seeds"] = {c.seed_a(), c.seed_b()};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  read_key(j, "seed", c.seed);
  if (j.contains("init_seeds")) {
    std::vector<std::uint64_t> seeds;
    read_key(j, "init_seeds", seeds);
    if (seeds.size() != 2) throw ConfigError("init_seeds must hold two seeds");
    c.init_seed_a = seeds[0];
    c.init_seed_b = seeds[1];
  }
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("loss")) {
    const json& l = j["loss"];
    std::string kind = to_string(c.loss);
    read_key(l, "kind", kind);
    c.loss = parse_loss_kind(kind);
    read_key(l, "gamma", c.loss_config.gamma);
    read_key(l, "alpha", c.loss_config.alpha);
    read_key(l, "epsilon", c.loss_config.epsilon);
    if (l.contains("weights")) {
      const json& w = l["weights"];
      if (w.is_string()) {
        if (w.get<std::string>() != "auto") throw ConfigError("weights must be \"auto\" or {pos, neg}");
        c.auto_weights = true;
      } else {
        c.auto_weights = false;
        read_key(w, "pos", c.loss_config.w_pos);
        read_key(w, "neg", c.loss_config.w_neg);
      }
    }
  }
  if (j.contains("optimizer")) {
    read_key(j["optimizer"], "name", c.optimizer.name);
    read_key(j["optimizer"], "lr", c.optimizer.lr);
    read_key(j["optimizer"], "momentum", c.optimizer.momentum);
  }
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "epochs", c.epochs);
  read_key(j, "warmup_epochs", c.warmup_epochs);
  read_key(j, "patience", c.patience);
  read_key(j, "crop", c.crop);
  read_key(j, "max_steps", c.max_steps);
  read_key(j, "eval_batch_size", c.eval_batch_size);
  read_key(j, "run_dir", c.run_dir);
  if (j.contains("data")) {
    const json& d = j["data"];
    read_key(d, "train", c.data.train_path);
    read_key(d, "val", c.data.val_path);
    read_key(d, "test", c.data.test_path);
    read_key(d, "fractions", c.data.fractions);
    read_key(d, "split_seed", c.data.split_seed);
    if (d.contains("generate")) {
      c.data.generate = generate_from_json(d["generate"]);
      read_key(d["generate"], "seed", c.data.generate_seed);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::array<Dataset, 3> load_data(const DataConfig& data) {
  if (data.generate) {
    const Dataset all = generate(data.generate_seed, *data.generate);
    return split(all, data.fractions, data.split_seed);
  }
  if (data.train_path.empty() || data.val_path.empty()) {
    throw ConfigError("data needs train and val paths, or a generate spec");
  }
  std::array<Dataset, 3> out;
  out[0] = load_dataset(data.train_path);
  out[1] = load_dataset(data.val_path);
  if (!data.test_path.empty()) out[2] = load_dataset(data.test_path);
  return out;
}

}  // namespace can
