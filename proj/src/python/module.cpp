#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "harmony/checkpoint.hpp"
#include "harmony/config.hpp"
#include "harmony/diffusion.hpp"
#include "harmony/errors.hpp"
#include "harmony/metrics.hpp"
#include "harmony/synthworld.hpp"
#include "harmony/trainer.hpp"

namespace py = pybind11;
using namespace harmony;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D grayscale array");
    Image img = Image::black(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
    return img;
}

Array to_array(const Image& img) {
    Array out({img.height, img.width});
    std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
    return out;
}

std::vector<Image> to_images(const std::vector<Array>& arrays) {
    std::vector<Image> out;
    for (const auto& a : arrays) out.push_back(to_image(a));
    return out;
}

Box to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

// A loaded or freshly initialized model plus its generation entry points.
class PyModel {
public:
    PyModel(const std::string& config, std::uint64_t seed)
        : model_(std::make_unique<HarmonyModel>(
              config.empty() ? ModelConfig{} : model_from_json(json::parse(config)), seed)) {}
    explicit PyModel(LoadedCheckpoint ckpt) : model_(std::move(ckpt.model)), step_(ckpt.step) {}

    static PyModel load(const std::string& dir) { return PyModel(load_checkpoint(dir)); }

    std::size_t base_params() const { return model_->base_param_count(); }
    std::size_t adapter_params() const { return model_->adapter_param_count(); }
    std::size_t step() const { return step_; }

    py::dict attach_slide_lora(const std::string& config, std::uint64_t seed) {
        auto cfg = config.empty() ? SlideLoraConfig{} : slide_lora_from_json(json::parse(config));
        model_->attach_slide_lora(cfg, seed);
        const auto o = model_->overhead();
        py::dict d;
        d["added"] = o.added;
        d["base"] = o.base;
        d["ratio"] = o.ratio;
        return d;
    }

    std::string answer(const std::string& question, const std::optional<Array>& image,
                       std::size_t max_len) const {
        const auto& bb = model_->config().backbone;
        SyntheticSample s;
        s.input_image = image ? to_image(*image) : Image::black(bb.image_size, bb.image_size, bb.channels);
        s.instruction = question;
        Rng unused(0);
        py::gil_scoped_release release;
        auto g = model_->generate(answer_prompt(s, bb), GenerationMode::text, max_len, unused);
        return Vocabulary::standard().decode(g.generated);
    }

    Array draw(const std::string& caption, const std::optional<Array>& image, std::uint64_t seed) const {
        const auto& bb = model_->config().backbone;
        SyntheticSample s;
        s.task = Task::generation;
        s.input_image = image ? to_image(*image) : Image::black(bb.image_size, bb.image_size, bb.channels);
        s.instruction = "Generate an image according to the caption. " + caption;
        s.target_image = s.input_image;
        Rng rng(derive_seed(seed, "generate"));
        GenerationResult g;
        {
            py::gil_scoped_release release;
            g = model_->generate(image_prompt(s, bb), GenerationMode::image, 0, rng);
        }
        return to_array(*g.image);
    }

private:
    std::unique_ptr<HarmonyModel> model_;
    std::size_t step_ = 0;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Interleaved text/image toy model with Slide-LoRA adapters.";

    auto base = py::register_exception<Error>(m, "HarmonyError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
    py::register_exception<ShapeMismatchError>(m, "ShapeMismatchError", base.ptr());

    m.def("levenshtein", [](std::string_view a, std::string_view b) { return levenshtein(a, b); });
    m.def("ned", [](std::string_view a, std::string_view b) { return ned(a, b); },
          "1 - edit distance / longer length.");
    m.def("iou", [](const std::array<double, 4>& pred, const std::array<double, 4>& gt) {
        auto r = acc_at_05(to_box(pred), to_box(gt));
        return py::make_tuple(r.iou, r.hit);
    }, py::arg("pred"), py::arg("gt"), "(iou, iou >= 0.5) for (x0, y0, x1, y1) boxes.");
    m.def("toy_fid", [](const std::vector<Array>& a, const std::vector<Array>& b) {
        auto ia = to_images(a), ib = to_images(b);
        return toy_fid(ia, ib);
    });
    m.def("pixel_mse", [](const Array& a, const Array& b) { return pixel_mse(to_image(a), to_image(b)); });

    m.def("filter_caption", [](std::string_view text, const std::string& unit, std::size_t limit) {
        if (unit != "words" && unit != "characters") throw py::value_error("unit must be words or characters");
        auto r = filter_caption(text, unit == "words" ? LengthUnit::words : LengthUnit::characters, limit);
        return py::make_tuple(r.keep, r.reason);
    }, py::arg("text"), py::arg("unit") = "words", py::arg("limit") = 100);
    m.def("dataset_lines", [](std::uint64_t seed, std::size_t size) {
        std::vector<std::string> out;
        for (const auto& s : make_dataset({seed, size})) out.push_back(to_jsonl(s));
        return out;
    }, py::arg("seed"), py::arg("size"));
    m.def("sha256", [](const py::bytes& b) { return sha256_hex(std::string(b)); });

    m.def("schedule", [](std::size_t steps, double beta_min, double beta_max) {
        auto s = make_schedule(steps, beta_min, beta_max);
        py::dict d;
        d["beta"] = s.beta;
        d["alpha"] = s.alpha;
        d["alpha_bar"] = s.alpha_bar;
        return d;
    }, py::arg("steps") = 50, py::arg("beta_min") = 1e-4, py::arg("beta_max") = 0.05);

    m.def("default_config", [] { return to_json(ExperimentConfig{}).dump(); });
    m.def("load_config", [](const std::string& path) { return to_json(load_experiment_config(path)).dump(); });

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&, std::uint64_t>(), py::arg("config") = "", py::arg("seed") = 0,
             "Fresh model from a model-config JSON string (defaults when empty).")
        .def_static("load", &PyModel::load, py::arg("ckpt"))
        .def_property_readonly("base_params", &PyModel::base_params)
        .def_property_readonly("adapter_params", &PyModel::adapter_params)
        .def_property_readonly("step", &PyModel::step)
        .def("attach_slide_lora", &PyModel::attach_slide_lora, py::arg("config") = "", py::arg("seed") = 0)
        .def("answer", &PyModel::answer, py::arg("question"), py::arg("image") = py::none(),
             py::arg("max_len") = 32)
        .def("draw", &PyModel::draw, py::arg("caption"), py::arg("image") = py::none(), py::arg("seed") = 0);
}
