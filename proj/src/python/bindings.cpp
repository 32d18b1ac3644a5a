#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mecam/cam.hpp"
#include "mecam/checkpoint.hpp"
#include "mecam/cli.hpp"
#include "mecam/error.hpp"
#include "mecam/metrics.hpp"
#include "mecam/model.hpp"
#include "mecam/scoring.hpp"
#include "mecam/synth.hpp"

namespace py = pybind11;
using namespace mecam;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Accepts H x W (single channel) or C x H x W, values in [0, 1].
Tensor image_from_array(const FloatArray& a) {
    std::size_t c = 1, h = 0, w = 0;
    if (a.ndim() == 2) {
        h = a.shape(0);
        w = a.shape(1);
    } else if (a.ndim() == 3) {
        c = a.shape(0);
        h = a.shape(1);
        w = a.shape(2);
    } else {
        throw ShapeError("image must be HxW or CxHxW");
    }
    return Tensor(Shape{1, c, h, w}, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t, std::vector<py::ssize_t> shape) {
    py::array_t<float> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::array_t<float> heat_array(const Heatmap& h) {
    py::array_t<float> out({static_cast<py::ssize_t>(h.height), static_cast<py::ssize_t>(h.width)});
    std::copy(h.values.begin(), h.values.end(), out.mutable_data());
    return out;
}

std::vector<double> as_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multi-exit CAM feature-masking OOD detection";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("in_channels", &ModelConfig::in_channels)
        .def_readwrite("num_classes", &ModelConfig::num_classes)
        .def_readwrite("stage_widths", &ModelConfig::stage_widths)
        .def_readwrite("blocks_per_stage", &ModelConfig::blocks_per_stage)
        .def_readwrite("exit_stages", &ModelConfig::exit_stages)
        .def_readwrite("input_size", &ModelConfig::input_size)
        .def("validate", &ModelConfig::validate);

    py::class_<Model>(m, "Model")
        .def_property_readonly("config", &Model::config)
        .def(
            "forward",
            [](const Model& model, const FloatArray& image) {
                const ExitOutputs out = forward(model, image_from_array(image));
                py::dict exits;
                for (const auto& e : out.exits) {
                    const auto& s = e.activation_map.shape();
                    py::dict d;
                    d["logits"] = to_array(e.logits, {static_cast<py::ssize_t>(s[1])});
                    d["activation_map"] = to_array(e.activation_map, {static_cast<py::ssize_t>(s[1]),
                                                                      static_cast<py::ssize_t>(s[2]),
                                                                      static_cast<py::ssize_t>(s[3])});
                    exits[py::int_(e.stage)] = d;
                }
                py::dict r;
                r["exits"] = exits;
                r["embedding"] = to_array(out.embedding, {static_cast<py::ssize_t>(out.embedding.dim(1))});
                r["predicted_class"] = predicted_class(out);
                return r;
            },
            py::arg("image"))
        .def("save", [](const Model& model, const std::filesystem::path& p) { save_checkpoint(model, p); });

    m.def("build", &build, py::arg("config"), py::arg("seed") = 42);
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    m.def(
        "cam",
        [](const Model& model, const FloatArray& image, const ExitMask& mask) {
            const CamResult r = cam_pipeline(model, image_from_array(image), mask);
            py::list cams;
            for (const auto& h : r.bundle.exit_cams) cams.append(heat_array(h));
            const auto& s = r.masked.shape();
            py::dict d;
            d["predicted_class"] = r.bundle.predicted_class;
            d["exit_stages"] = r.bundle.exit_stages;
            d["exit_cams"] = cams;
            d["weights"] = r.bundle.weights;
            d["aggregated"] = heat_array(r.bundle.aggregated);
            d["masked"] = to_array(r.masked, {static_cast<py::ssize_t>(s[1]), static_cast<py::ssize_t>(s[2]),
                                              static_cast<py::ssize_t>(s[3])});
            return d;
        },
        py::arg("model"), py::arg("image"), py::arg("exit_mask") = ExitMask{});

    m.def(
        "score",
        [](const Model& model, const FloatArray& image, const std::string& scorers, const ExitMask& mask,
           std::optional<int> mood_exit) {
            ScoreOptions o;
            o.exit_mask = mask;
            o.mood_stage = mood_exit;
            const auto list = parse_scorer_list(scorers);
            py::dict d;
            for (const auto& r : score_sample(model, "", image_from_array(image), Verdict::id, list, o))
                d[to_string(r.scorer)] = r.score;
            return d;
        },
        py::arg("model"), py::arg("image"), py::arg("scorers") = "mecam,msp,energy,mood_energy",
        py::arg("exit_mask") = ExitMask{}, py::arg("mood_exit") = py::none(),
        "Scores keyed by scorer name; higher means more in-distribution.");

    m.def(
        "auroc", [](py::array_t<double> id, py::array_t<double> ood) { return auroc(as_vector(id), as_vector(ood)); },
        py::arg("id_scores"), py::arg("ood_scores"));
    m.def(
        "fpr_at_tpr",
        [](py::array_t<double> id, py::array_t<double> ood, double tpr) {
            const FprAtTpr r = fpr_at_tpr(as_vector(id), as_vector(ood), tpr);
            return py::make_tuple(r.fpr, r.tau);
        },
        py::arg("id_scores"), py::arg("ood_scores"), py::arg("target_tpr") = 0.95, "Returns (fpr, tau).");
    m.def(
        "calibrate_threshold",
        [](py::array_t<double> id, double tpr) { return calibrate_threshold(as_vector(id), tpr).tau; },
        py::arg("id_scores"), py::arg("target_tpr") = 0.95);

    m.def(
        "synth_generate",
        [](const std::filesystem::path& out, std::uint64_t seed, int n_per_class, int image_size, bool force) {
            SynthOptions o{seed, n_per_class, image_size, force};
            const SynthSummary s = synth_generate(out, o);
            py::dict d;
            d["id_train"] = s.id_train;
            d["id_calib"] = s.id_calib;
            d["id_test"] = s.id_test;
            d["ood_per_family"] = s.ood_per_family;
            return d;
        },
        py::arg("out_dir"), py::arg("seed") = 42, py::arg("n_per_class") = 500, py::arg("image_size") = 32,
        py::arg("force") = false);

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "mecam");
            std::ostringstream out, err;
            const int code = run_cli(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a CLI subcommand in-process; returns (exit_code, stdout, stderr).");
}
