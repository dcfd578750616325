#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <utility>

#include "llp/data.hpp"
#include "llp/metrics.hpp"
#include "llp/models.hpp"
#include "llp/orbit.hpp"
#include "llp/rng.hpp"
#include "llp/synth.hpp"
#include "llp/train.hpp"

namespace py = pybind11;
using namespace llp;

namespace {

Tensor32 image_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>&
                              arr) {
  if (arr.ndim() != 3 || arr.shape(0) != 100 || arr.shape(1) != 100 || arr.shape(2) != 3)
    throw ShapeError("image must be a [100,100,3] float array");
  Tensor32 t({100, 100, 3});
  std::memcpy(t.data(), arr.data(), sizeof(float) * 100 * 100 * 3);
  return t;
}

py::array_t<float> tensor_to_array(const Tensor32& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> arr(shape);
  std::memcpy(arr.mutable_data(), t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
  return arr;
}

py::dict volumetry_dict(const VolumetryReport& r) {
  py::dict d;
  d["swath_km"] = r.swath_km;
  d["circumference_km"] = r.circumference_km;
  d["land_fraction"] = r.land_fraction;
  d["orbit_minutes"] = r.orbit_minutes;
  d["km2_per_orbit"] = r.km2_per_orbit;
  d["land_km2_per_orbit"] = r.land_km2_per_orbit;
  d["land_km2_per_min"] = r.land_km2_per_min;
  return d;
}

struct PyDataset {
  std::shared_ptr<Dataset> ds;
};

struct PyModel {
  Model<float> model;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Learning-from-label-proportions engine for satellite image chips";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "EngineError", PyExc_ValueError);

  m.def("splitmix64_next", [](uint64_t state) {
    SplitMix64 g(state);
    const uint64_t value = g.next();
    return py::make_tuple(value, g.state);
  }, py::arg("state"), "One SplitMix64 step: returns (value, next_state)");

  m.def("param_count", [](const std::string& kind, int hyper, int classes) {
    return param_count(model_kind_from_name(kind), hyper, classes);
  }, py::arg("kind"), py::arg("hyper"), py::arg("classes"));

  m.def("map_esaworldcover", &map_esaworldcover, py::arg("source_id"));
  m.def("map_humanpop", &map_humanpop, py::arg("cell_count"));

  m.def("footprint", [](int64_t classes, int64_t communes, int64_t chips) {
    const FootprintReport r = footprint(classes, communes, chips);
    py::dict d;
    d["proportions_bytes"] = r.proportions_bytes;
    d["proportions_human"] = r.proportions_human;
    d["segmentation_bytes"] = r.segmentation_bytes;
    d["segmentation_human"] = r.segmentation_human;
    return d;
  }, py::arg("classes"), py::arg("communes"), py::arg("chips") = 0);

  m.def("volumetry", [](double swath, double circumference, double land_fraction,
                        double orbit_minutes) {
    return volumetry_dict(volumetry(swath, circumference, land_fraction, orbit_minutes));
  }, py::arg("swath_km") = 290.0, py::arg("circumference_km") = 40000.0,
     py::arg("land_fraction") = 0.299, py::arg("orbit_minutes") = 100.0);

  m.def("throughput", [](double train_chips_per_sec, double infer_chips_per_sec) {
    const ThroughputReport t = throughput_report(train_chips_per_sec, volumetry(),
                                                 infer_chips_per_sec);
    py::dict d;
    d["train_chips_per_sec"] = t.train_chips_per_sec;
    d["land_km2_per_min"] = t.land_km2_per_min;
    d["train_vs_acquisition_ratio"] = t.ratio;
    if (t.infer_train_time_ratio >= 0) d["infer_train_time_ratio"] = t.infer_train_time_ratio;
    return d;
  }, py::arg("train_chips_per_sec"), py::arg("infer_chips_per_sec") = 0.0);

  m.def("uplink_encode", [](const std::vector<std::pair<uint32_t, ProportionVector>>& communes,
                            int classes) {
    const std::vector<uint8_t> bytes = uplink_encode(communes, classes);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }, py::arg("communes"), py::arg("classes"));

  m.def("uplink_decode", [](const py::bytes& packet) {
    const std::string_view view = packet;
    const std::vector<uint8_t> bytes(view.begin(), view.end());
    return uplink_decode(bytes);
  }, py::arg("packet"));

  m.def("mae_chip", &mae_chip, py::arg("pred"), py::arg("truth"));

  py::class_<PyDataset>(m, "Dataset")
      .def_static("load", [](const std::string& dir) {
        return PyDataset{std::make_shared<Dataset>(load_dataset(dir))};
      }, py::arg("directory"))
      .def_property_readonly("n_chips", [](const PyDataset& d) { return d.ds->chips.size(); })
      .def_property_readonly("n_classes", [](const PyDataset& d) { return d.ds->n_classes; })
      .def_property_readonly("class_labels",
                             [](const PyDataset& d) { return d.ds->class_labels; })
      .def_property_readonly("seed", [](const PyDataset& d) { return d.ds->seed; })
      .def("chip_image", [](const PyDataset& d, size_t i) {
        return tensor_to_array(d.ds->chips.at(i).image<float>());
      }, py::arg("index"), "Chip image as a [100,100,3] float32 array in [0,1]")
      .def("chip_labels", [](const PyDataset& d, size_t i) -> py::object {
        const Chip& chip = d.ds->chips.at(i);
        if (!chip.labels) return py::none();
        py::array_t<uint8_t> arr({static_cast<py::ssize_t>(100), static_cast<py::ssize_t>(100)});
        std::memcpy(arr.mutable_data(), chip.labels->data(), 100 * 100);
        return arr;
      }, py::arg("index"))
      .def("chip_meta", [](const PyDataset& d, size_t i) {
        const Chip& chip = d.ds->chips.at(i);
        py::dict meta;
        meta["id"] = chip.id;
        meta["grid_x"] = chip.grid_x;
        meta["grid_y"] = chip.grid_y;
        meta["split"] = split_name(chip.split);
        py::list overlaps;
        for (const Overlap& o : chip.overlaps)
          overlaps.append(py::make_tuple(o.commune_id, o.weight));
        meta["overlaps"] = overlaps;
        return meta;
      }, py::arg("index"))
      .def("chip_proportions", [](const PyDataset& d, size_t i) {
        const Chip& chip = d.ds->chips.at(i);
        if (!chip.labels) throw ValueError("chip has no labels");
        return chip_proportions(*chip.labels, d.ds->n_classes);
      }, py::arg("index"))
      .def("blended_target", [](const PyDataset& d, size_t i) {
        return blended_target(d.ds->chips.at(i), d.ds->communes);
      }, py::arg("index"))
      .def("commune_table", [](const PyDataset& d) {
        py::list out;
        for (const CommuneEntry& e : d.ds->communes.entries)
          out.append(py::make_tuple(e.id, e.proportions, e.chip_count));
        return out;
      })
      .def("split_counts", [](const PyDataset& d) {
        py::dict out;
        for (Split s : {Split::Train, Split::Validation, Split::Test, Split::Unassigned}) {
          int64_t n = 0;
          for (const Chip& chip : d.ds->chips)
            if (chip.split == s) ++n;
          out[split_name(s)] = n;
        }
        return out;
      })
      .def("assign_splits", [](PyDataset& d, int band_width_km,
                               const std::vector<std::string>& pattern) {
        std::vector<Split> splits;
        for (const std::string& name : pattern) splits.push_back(split_from_name(name));
        band_split(d.ds->chips, band_width_km, splits);
        commune_coherent_split(d.ds->chips);
      }, py::arg("band_width_km") = 15,
         py::arg("pattern") = std::vector<std::string>{"train", "test", "train", "validation",
                                                       "train"})
      .def("save", [](const PyDataset& d, const std::string& dir) { save_dataset(dir, *d.ds); },
           py::arg("directory"));

  m.def("synth_dataset", [](const std::string& dir, uint64_t seed, int width, int height,
                            int classes, int communes) {
    SynthConfig config;
    config.seed = seed;
    config.world_chips_x = width;
    config.world_chips_y = height;
    config.n_classes = classes;
    config.commune_count = communes;
    Dataset ds = generate_world(config);
    save_dataset(dir, ds);
    return PyDataset{std::make_shared<Dataset>(std::move(ds))};
  }, py::arg("directory"), py::arg("seed") = 1234, py::arg("width") = 40,
     py::arg("height") = 50, py::arg("classes") = 3, py::arg("communes") = 40);

  py::class_<PyModel>(m, "Model")
      .def_static("load", [](const std::string& path) { return PyModel{load_model(path)}; },
                  py::arg("path"))
      .def_static("init", [](const std::string& kind, int hyper, int classes, uint64_t seed) {
        return PyModel{init_model<float>(model_kind_from_name(kind), hyper, classes, seed)};
      }, py::arg("kind"), py::arg("hyper"), py::arg("classes"), py::arg("seed") = 0)
      .def_property_readonly("kind",
                             [](const PyModel& m_) { return model_kind_name(m_.model.kind()); })
      .def_property_readonly("classes", [](const PyModel& m_) { return m_.model.classes(); })
      .def_property_readonly("hyper", [](const PyModel& m_) { return m_.model.hyper(); })
      .def_property_readonly("parameters",
                             [](const PyModel& m_) { return m_.model.parameter_count(); })
      .def_property_readonly("grid_side",
                             [](const PyModel& m_) { return m_.model.grid_side(); })
      .def("predict", [](const PyModel& m_, const py::array_t<float, py::array::c_style |
                                                              py::array::forcecast>& image) {
        const ChipPrediction<float> pred = m_.model.forward(image_from_array(image));
        return py::make_tuple(tensor_to_array(pred.cell_probs),
                              tensor_to_array(pred.proportions));
      }, py::arg("image"), "Returns (cell_probs [S,S,n], proportions [n])")
      .def("save", [](const PyModel& m_, const std::string& path) { save_model(path, m_.model); },
           py::arg("path"));

  m.def("train", [](const PyDataset& data, const std::string& kind, int hyper, int epochs,
                    int batch_size, double learning_rate, uint64_t seed, int threads) {
    TrainConfig config;
    config.kind = model_kind_from_name(kind);
    config.hyper = hyper;
    config.epochs = epochs;
    config.batch_size = batch_size;
    config.learning_rate = learning_rate;
    config.seed = seed;
    config.threads = threads;
    TrainRun run = train(*data.ds, config);
    py::list history;
    for (const EpochRecord& r : run.epochs) {
      py::dict rec;
      rec["epoch"] = r.epoch;
      rec["train_loss"] = r.train_loss;
      rec["val_mae"] = r.val_mae;
      rec["seconds"] = r.seconds;
      rec["chips_per_sec"] = r.chips_per_sec;
      history.append(rec);
    }
    py::dict out;
    out["history"] = history;
    out["selected_epoch"] = run.selected_epoch;
    out["model"] = PyModel{std::move(run.best_model)};
    return out;
  }, py::arg("dataset"), py::arg("kind") = "downconv", py::arg("hyper") = 96,
     py::arg("epochs") = 50, py::arg("batch_size") = 32, py::arg("learning_rate") = 1e-3,
     py::arg("seed") = 0, py::arg("threads") = 1);

  m.def("evaluate", [](const PyDataset& data, const PyModel& model, const std::string& split,
                       int threads) {
    const EvalReport r = evaluate_model(*data.ds, model.model, split_from_name(split), threads);
    const ProportionVector baseline_pred = train_mean_target(*data.ds);
    const EvalReport baseline = evaluate_constant(*data.ds, baseline_pred, split_from_name(split));
    py::dict out;
    out["chips"] = r.chips;
    out["mean_mae"] = r.mean_mae;
    out["f1_per_class"] = r.f1.per_class;
    out["macro_f1"] = r.f1.macro;
    out["baseline_mean_mae"] = baseline.mean_mae;
    out["mae_vs_baseline"] = r.mean_mae / baseline.mean_mae;
    return out;
  }, py::arg("dataset"), py::arg("model"), py::arg("split") = "test",
     py::arg("threads") = 1);

  m.attr("__version__") = "0.1.0";
}
