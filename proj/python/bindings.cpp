// Python bindings for the core library. Configs cross the boundary as JSON
// strings; arrays as NumPy float64 / uint8.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "can/errors.hpp"
#include "can/localization.hpp"
#include "can/losses.hpp"
#include "can/metrics.hpp"
#include "can/trainer.hpp"

namespace py = pybind11;
using namespace can;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

std::vector<std::uint8_t> label_bytes(const py::array_t<double, py::array::forcecast>& a) {
  std::vector<std::uint8_t> out(a.size());
  for (py::ssize_t i = 0; i < a.size(); ++i) {
    const double v = a.data()[i];
    if (v != 0.0 && v != 1.0) throw ConfigError("labels must be 0 or 1");
    out[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

py::array_t<double> images(const Dataset& d) {
  py::array_t<double> out({d.size(), d.height, d.width});
  double* p = out.mutable_data();
  for (const Sample& s : d.samples) p = std::copy(s.image.values().begin(), s.image.values().end(), p);
  return out;
}

py::array_t<std::uint8_t> labels(const Dataset& d) {
  py::array_t<std::uint8_t> out({d.size(), d.num_labels});
  std::uint8_t* p = out.mutable_data();
  for (const Sample& s : d.samples) p = std::copy(s.labels.begin(), s.labels.end(), p);
  return out;
}

py::object box_dict(const std::optional<BBox>& b) {
  if (!b) return py::none();
  return py::dict(py::arg("x") = b->x, py::arg("y") = b->y, py::arg("w") = b->w, py::arg("h") = b->h);
}

double loss_value(const std::function<Var(Graph&, Var)>& fn, const Tensor& probs) {
  Graph g;
  return fn(g, g.input(probs)).value()[0];
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "cross-attention multi-label classifier core";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_IOError);

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("num_labels", &Dataset::num_labels)
      .def_readonly("height", &Dataset::height)
      .def_readonly("width", &Dataset::width)
      .def_readonly("pos_counts", &Dataset::pos_counts)
      .def_readonly("neg_counts", &Dataset::neg_counts)
      .def("images", &images, "(N, H, W) float64 array")
      .def("labels", &labels, "(N, L) uint8 array")
      .def("group_ids",
           [](const Dataset& d) {
             std::vector<std::uint32_t> g;
             for (const Sample& s : d.samples) g.push_back(s.group_id);
             return g;
           })
      .def("boxes",
           [](const Dataset& d, std::size_t i) {
             if (i >= d.size()) throw py::index_error("sample index out of range");
             py::list out;
             for (const auto& b : d.samples[i].boxes) out.append(box_dict(b));
             return out;
           })
      .def("save", [](const Dataset& d, const std::string& path) { save_dataset(d, path); })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def(
      "generate",
      [](std::uint64_t seed, std::size_t n, std::vector<double> prevalences, std::size_t hw, double noise,
         std::size_t clutter, std::size_t glyph_min, std::size_t glyph_max) {
        GenerateOptions o;
        o.n_samples = n;
        o.prevalences = std::move(prevalences);
        o.hw = hw;
        o.noise = noise;
        o.clutter = clutter;
        o.glyph_min = glyph_min;
        o.glyph_max = glyph_max;
        return generate(seed, o);
      },
      py::arg("seed"), py::arg("n"), py::arg("prevalences"), py::arg("hw") = 72, py::arg("noise") = 0.5,
      py::arg("clutter") = 2, py::arg("glyph_min") = 0, py::arg("glyph_max") = 0);
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def(
      "split",
      [](const Dataset& d, std::array<double, 3> fractions, std::uint64_t seed, bool allow_empty) {
        auto parts = split(d, fractions, seed, allow_empty);
        return py::make_tuple(parts[0], parts[1], parts[2]);
      },
      py::arg("dataset"), py::arg("fractions"), py::arg("seed"), py::arg("allow_empty") = false);

  m.def(
      "auroc",
      [](const py::array_t<double, py::array::forcecast>& scores, const py::array_t<double, py::array::forcecast>& y) {
        if (scores.size() != y.size()) throw ShapeError("scores and labels differ in length");
        const auto lab = label_bytes(y);
        return auroc(std::span<const double>(scores.data(), scores.size()), lab);
      },
      py::arg("scores"), py::arg("labels"), "Midrank AUROC; None when a class is missing.");
  m.def(
      "balance_weights",
      [](const std::vector<std::size_t>& pos, const std::vector<std::size_t>& neg) {
        return balance_weights(pos, neg);
      },
      py::arg("pos_counts"), py::arg("neg_counts"));
  m.def(
      "bce_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
        const Tensor labels = from_numpy(y);
        return loss_value([&](Graph&, Var v) { return bce_loss(v, labels); }, from_numpy(p));
      },
      py::arg("probs"), py::arg("labels"));
  m.def(
      "balance_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& y, std::vector<double> w_pos,
         std::vector<double> w_neg, double gamma) {
        const Tensor labels = from_numpy(y);
        LossConfig cfg;
        cfg.gamma = gamma;
        cfg.w_pos = std::move(w_pos);
        cfg.w_neg = std::move(w_neg);
        cfg.validate(labels.rank() == 2 ? labels.dim(1) : 0);
        return loss_value([&](Graph&, Var v) { return balance_loss(v, labels, cfg); }, from_numpy(p));
      },
      py::arg("probs"), py::arg("labels"), py::arg("w_pos"), py::arg("w_neg"), py::arg("gamma") = 2.0);
  m.def(
      "attention_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        Graph g;
        return attention_loss(g.input(from_numpy(a)), g.input(from_numpy(b))).value()[0];
      },
      py::arg("features_a"), py::arg("features_b"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("step", &Checkpoint::step)
      .def_readonly("best_epoch", &Checkpoint::best_epoch)
      .def_readonly("best_val", &Checkpoint::best_val)
      .def("config_json", [](const Checkpoint& c) { return to_json(c.config).dump(); })
      .def("parameter_count", [](const Checkpoint& c) { return c.model.parameter_count(); })
      .def("save", [](const Checkpoint& c, const std::string& dir) { save_checkpoint(c, dir); });

  m.def("load_checkpoint", &load_checkpoint, py::arg("dir"));
  m.def(
      "train",
      [](const std::string& config_json, const Dataset& train_set, const Dataset& val_set) {
        const RunConfig config = run_config_from_json(nlohmann::json::parse(config_json));
        py::gil_scoped_release release;
        return train(config, train_set, val_set);
      },
      py::arg("config_json"), py::arg("train"), py::arg("val"));
  m.def(
      "predict",
      [](Checkpoint& c, const Dataset& d) {
        return to_numpy(predict(c.best_model, d, c.config.crop, c.config.eval_batch_size));
      },
      py::arg("checkpoint"), py::arg("dataset"));
  m.def(
      "evaluate_json",
      [](Checkpoint& c, const Dataset& d) {
        return evaluate(c.best_model, d, c.config.crop, c.config.eval_batch_size).to_json().dump();
      },
      py::arg("checkpoint"), py::arg("dataset"));
  m.def(
      "localize",
      [](Checkpoint& c, const Dataset& d, std::size_t label) {
        if (label >= d.num_labels) throw ConfigError("label index out of range");
        py::list out;
        for (const auto& lc : localize(c.best_model, d, label, c.config.crop, c.config.eval_batch_size)) {
          py::dict item;
          item["image_id"] = lc.image_id;
          item["prob"] = lc.prob;
          item["positive"] = lc.positive;
          item["heatmap"] = to_numpy(lc.heatmap.values);
          item["argmax"] = py::make_tuple(lc.argmax.first, lc.argmax.second);
          item["box"] = box_dict(lc.box);
          item["hit"] = lc.hit ? py::cast(*lc.hit) : py::none();
          out.append(item);
        }
        return out;
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("label"));
}
