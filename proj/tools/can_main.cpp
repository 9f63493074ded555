// can: command-line front end (gen, train, eval, ablate, localize).
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 numerical divergence.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "can/errors.hpp"
#include "can/localization.hpp"
#include "can/metrics.hpp"
#include "can/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw can::Error("cannot write " + path.string());
  out << text;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw can::ConfigError("not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw can::ConfigError("empty list");
  return out;
}

struct GenArgs {
  std::uint64_t seed = 0;
  std::size_t n = 1000;
  std::string prevalence = "0.5";
  std::size_t hw = 72;
  double noise = 0.5;
  std::size_t clutter = 2;
  std::size_t glyph_min = 0;
  std::size_t glyph_max = 0;
  std::string split;
  std::uint64_t split_seed = 0;
  std::string out;
};

int run_gen(const GenArgs& a) {
  can::GenerateOptions g;
  g.n_samples = a.n;
  g.hw = a.hw;
  g.prevalences = parse_list(a.prevalence);
  g.noise = a.noise;
  g.clutter = a.clutter;
  g.glyph_min = a.glyph_min;
  g.glyph_max = a.glyph_max;
  const can::Dataset data = can::generate(a.seed, g);
  if (a.split.empty()) {
    can::save_dataset(data, a.out);
    std::cout << "wrote " << a.out << " (" << data.size() << " samples)\n";
    return 0;
  }
  const auto f = parse_list(a.split);
  if (f.size() != 3) throw can::ConfigError("--split needs three fractions");
  const auto parts = can::split(data, {f[0], f[1], f[2]}, a.split_seed);
  const fs::path base(a.out);
  const char* names[] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i) {
    fs::path p = base;
    p.replace_filename(base.stem().string() + "_" + names[i] + base.extension().string());
    can::save_dataset(parts[i], p.string());
    std::cout << "wrote " << p.string() << " (" << parts[i].size() << " samples)\n";
  }
  return 0;
}

json history_json(const can::Checkpoint& c) {
  json h = json::array();
  for (const auto& e : c.history) {
    h.push_back({{"epoch", e.epoch},
                 {"steps", e.steps},
                 {"train_loss", e.train_loss},
                 {"val_mean_auroc", std::isnan(e.val_mean_auroc) ? json(nullptr)
                                                                 : json(e.val_mean_auroc)}});
  }
  return h;
}

int run_train(const std::string& config_path, const std::string& run_dir_override,
              const std::string& resume) {
  can::RunConfig config = can::load_run_config(config_path);
  if (!run_dir_override.empty()) config.run_dir = run_dir_override;
  const fs::path run_dir(config.run_dir);
  fs::create_directories(run_dir);
  auto [train, val, test] = can::load_data(config.data);
  if (config.data.generate) {
    can::save_dataset(train, (run_dir / "train.cand").string());
    can::save_dataset(val, (run_dir / "val.cand").string());
    can::save_dataset(test, (run_dir / "test.cand").string());
  }
  write_text(run_dir / "config.json", can::to_json(config).dump(2) + "\n");

  std::unique_ptr<can::Trainer> trainer;
  if (resume.empty()) {
    trainer = std::make_unique<can::Trainer>(config, train, val);
  } else {
    trainer = std::make_unique<can::Trainer>(can::load_checkpoint(resume), train, val);
  }
  trainer->set_log(&std::cout);
  const fs::path ckpt_dir = run_dir / "checkpoint";
  while (!trainer->finished()) {
    trainer->run_epoch();
    can::save_checkpoint(trainer->state(), ckpt_dir.string());
  }
  can::save_checkpoint(trainer->state(), ckpt_dir.string());

  can::Checkpoint& state = trainer->state();
  const can::Dataset& eval_set = test.size() > 0 ? test : val;
  const can::EvalReport report =
      can::evaluate(state.best_model, eval_set, state.config.crop, state.config.eval_batch_size);
  json metrics = {{"split", test.size() > 0 ? "test" : "val"},
                  {"report", report.to_json()},
                  {"best_epoch", state.best_epoch},
                  {"best_val_mean_auroc", state.best_val},
                  {"epochs", state.epoch},
                  {"steps", state.step},
                  {"history", history_json(state)}};
  write_text(run_dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(run_dir / "table.txt", report.to_table());
  std::cout << report.to_table();
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& dataset, const std::string& json_out,
             bool use_last) {
  can::Checkpoint c = can::load_checkpoint(checkpoint);
  const can::Dataset data = can::load_dataset(dataset);
  can::CanModel& model = use_last ? c.model : c.best_model;
  const can::EvalReport report = can::evaluate(model, data, c.config.crop, c.config.eval_batch_size);
  std::cout << report.to_table();
  if (!json_out.empty()) write_text(json_out, report.to_json().dump(2) + "\n");
  std::cout << report.to_json().dump() << "\n";
  return 0;
}

int run_ablate(const std::string& config_path, const std::string& run_dir_override) {
  can::GridConfig grid = can::load_grid_config(config_path);
  if (!run_dir_override.empty()) grid.base.run_dir = run_dir_override;
  const fs::path run_dir(grid.base.run_dir);
  fs::create_directories(run_dir);
  const auto [train, val, test] = can::load_data(grid.base.data);
  if (test.size() == 0) throw can::ConfigError("ablation needs a test split");
  write_text(run_dir / "config.json", can::to_json(grid).dump(2) + "\n");
  const can::AblationResult result = can::ablate(grid, train, val, test, &std::cout);
  write_text(run_dir / "metrics.json", result.to_json().dump(2) + "\n");
  write_text(run_dir / "table.txt", result.to_table());
  std::cout << result.to_table();
  return 0;
}

struct LocalizeArgs {
  std::string checkpoint;
  std::string dataset;
  std::size_t label = 0;
  std::string out;
  std::size_t limit = 0;
  double threshold = 0.5;
  bool positives_only = false;
};

int run_localize(const LocalizeArgs& a) {
  can::Checkpoint c = can::load_checkpoint(a.checkpoint);
  const can::Dataset data = can::load_dataset(a.dataset);
  const auto cases = can::localize(c.best_model, data, a.label, c.config.crop,
                                   c.config.eval_batch_size);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::size_t written = 0;
  for (const auto& lc : cases) {
    if (a.positives_only && !lc.positive) continue;
    if (a.limit != 0 && written >= a.limit) break;
    char stem[64];
    std::snprintf(stem, sizeof stem, "label%zu_image%06zu", a.label, lc.image_id);
    can::write_pgm((out / (std::string(stem) + ".pgm")).string(), lc.heatmap);
    json side = {{"label", a.label},
                 {"label_name", data.label_names()[a.label]},
                 {"image_id", lc.image_id},
                 {"prob", lc.prob},
                 {"positive", lc.positive},
                 {"argmax", {{"row", lc.argmax.first}, {"col", lc.argmax.second}}},
                 {"box", nullptr},
                 {"hit", nullptr}};
    if (lc.box) side["box"] = {{"x", lc.box->x}, {"y", lc.box->y}, {"w", lc.box->w}, {"h", lc.box->h}};
    if (lc.hit) side["hit"] = *lc.hit;
    write_text(out / (std::string(stem) + ".json"), side.dump(2) + "\n");
    ++written;
  }
  const auto rate = can::hit_rate(cases, a.threshold);
  json summary = {{"label", a.label},
                  {"threshold", a.threshold},
                  {"cases", cases.size()},
                  {"written", written},
                  {"hit_rate", rate ? json(*rate) : json(nullptr)}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-attention multi-label classifier"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--n", gen.n, "number of samples");
  g->add_option("--prevalence", gen.prevalence, "comma-separated per-label prevalences");
  g->add_option("--hw", gen.hw, "image side length");
  g->add_option("--noise", gen.noise, "background noise amplitude");
  g->add_option("--clutter", gen.clutter, "max distractor blobs per image");
  g->add_option("--glyph-min", gen.glyph_min, "smallest glyph side (0: hw/9)");
  g->add_option("--glyph-max", gen.glyph_max, "largest glyph side (0: 2*hw/9)");
  g->add_option("--split", gen.split, "train,val,test fractions; writes three files");
  g->add_option("--split-seed", gen.split_seed, "seed for the group split");
  g->add_option("--out", gen.out, "output .cand path")->required();

  std::string config_path, run_dir, resume;
  auto* t = app.add_subcommand("train", "train one model");
  t->add_option("--config", config_path, "run config JSON")->required();
  t->add_option("--run-dir", run_dir, "override the config's run_dir");
  t->add_option("--resume", resume, "checkpoint directory to continue from");

  std::string checkpoint, dataset, json_out;
  bool use_last = false;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  e->add_option("--dataset", dataset, ".cand file")->required();
  e->add_option("--json", json_out, "also write the report here");
  e->add_flag("--last", use_last, "use the final weights instead of the best-validation ones");

  std::string grid_path, grid_dir;
  auto* a = app.add_subcommand("ablate", "run the ablation grid");
  a->add_option("--config", grid_path, "grid config JSON")->required();
  a->add_option("--run-dir", grid_dir, "override the base run_dir");

  LocalizeArgs loc;
  auto* l = app.add_subcommand("localize", "write CAM heat maps");
  l->add_option("--checkpoint", loc.checkpoint, "checkpoint directory")->required();
  l->add_option("--dataset", loc.dataset, ".cand file")->required();
  l->add_option("--label", loc.label, "label index")->required();
  l->add_option("--out", loc.out, "output directory")->required();
  l->add_option("--limit", loc.limit, "write at most this many maps (0: all)");
  l->add_option("--threshold", loc.threshold, "probability counted as a positive call");
  l->add_flag("--positives-only", loc.positives_only, "skip negative samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(config_path, run_dir, resume);
    if (*e) return run_eval(checkpoint, dataset, json_out, use_last);
    if (*a) return run_ablate(grid_path, grid_dir);
    if (*l) return run_localize(loc);
  } catch (const can::DivergenceError& err) {
    std::cerr << "can: diverged: " << err.what() << "\n";
    return kExitDiverged;
  } catch (const can::ConfigError& err) {
    std::cerr << "can: config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "can: " << err.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
