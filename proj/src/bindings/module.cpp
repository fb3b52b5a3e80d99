#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bnfk/data.hpp"
#include "bnfk/features.hpp"
#include "bnfk/metrics.hpp"
#include "bnfk/model.hpp"
#include "bnfk/train.hpp"

namespace py = pybind11;
using namespace bnfk;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[(std::size_t)i] = (std::size_t)a.shape(i);
    Tensor t(shape);
    const double* src = a.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = src[i];
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    double* dst = a.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] = t[i];
    return a;
}

TrainConfig config_from_kwargs(std::size_t img_size, bool fft, bool lbp, bool sobel) {
    TrainConfig cfg;
    cfg.channels.fft = fft;
    cfg.channels.lbp = lbp;
    cfg.channels.sobel = sobel;
    cfg.crop_size = img_size;
    cfg.resize_longest = img_size + img_size / 8;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "binary-network deepfake detector core";

    py::register_exception<data_error>(m, "DataError");
    py::register_exception<model_format_error>(m, "ModelFormatError");

    m.def("sign_quantize", [](py::array_t<double> a) {
        return array_from_tensor(unpack(sign_quantize(tensor_from_array(a))));
    });
    m.def("to_grayscale",
          [](py::array_t<double> rgb) { return array_from_tensor(to_grayscale(tensor_from_array(rgb))); });
    m.def("fft_magnitude_channel", [](py::array_t<double> rgb) {
        return array_from_tensor(fft_magnitude_channel(tensor_from_array(rgb)));
    });
    m.def("lbp_channel",
          [](py::array_t<double> rgb) { return array_from_tensor(lbp_channel(tensor_from_array(rgb))); });
    m.def("sobel_channel",
          [](py::array_t<double> rgb) { return array_from_tensor(sobel_channel(tensor_from_array(rgb))); });
    m.def(
        "build_stack",
        [](py::array_t<double> rgb, bool fft, bool lbp, bool sobel) {
            FeatureConfig cfg{fft, lbp, sobel};
            return array_from_tensor(build_stack(tensor_from_array(rgb), cfg).channels);
        },
        py::arg("rgb"), py::arg("fft") = true, py::arg("lbp") = true, py::arg("sobel") = false);

    m.def("accuracy", &accuracy);
    m.def("auc", &auc);

    m.def(
        "synthetic_image",
        [](std::size_t size, bool fake, std::uint64_t seed) {
            return array_from_tensor(synthetic_image(size, fake, seed));
        },
        py::arg("size"), py::arg("fake"), py::arg("seed"));
    m.def(
        "generate_synthetic",
        [](std::size_t n_per_class, std::size_t size, std::uint64_t seed, const std::string& out) {
            SyntheticParams p;
            p.n_per_class = n_per_class;
            p.size = size;
            p.seed = seed;
            generate_synthetic(p, out);
        },
        py::arg("n_per_class"), py::arg("size"), py::arg("seed"), py::arg("out_dir"));

    m.def(
        "init_model",
        [](std::size_t in_channels, std::size_t img_size, std::uint64_t seed,
           const std::string& path) {
            save_model(make_initial_state(default_desk_spec(in_channels, img_size, img_size), seed),
                       path);
        },
        py::arg("in_channels"), py::arg("img_size"), py::arg("seed"), py::arg("path"));

    m.def(
        "predict",
        [](const std::string& model_path, py::array_t<double> image, std::size_t img_size, bool fft,
           bool lbp, bool sobel) {
            ModelState st = load_model(model_path);
            return predict_probability(tensor_from_array(image), st,
                                       config_from_kwargs(img_size, fft, lbp, sobel));
        },
        py::arg("model_path"), py::arg("image"), py::arg("img_size") = 224, py::arg("fft") = true,
        py::arg("lbp") = true, py::arg("sobel") = false);

    m.def(
        "evaluate",
        [](const std::string& model_path, const std::string& data_dir, std::size_t img_size,
           bool fft, bool lbp, bool sobel) {
            ModelState st = load_model(model_path);
            LoadedSplit split = load_split(scan_directory(data_dir).test);
            EvalReport rep = evaluate(split, st, config_from_kwargs(img_size, fft, lbp, sobel));
            py::dict d;
            d["accuracy"] = rep.accuracy;
            d["auc"] = rep.auc;
            d["tp"] = rep.tp;
            d["tn"] = rep.tn;
            d["fp"] = rep.fp;
            d["fn"] = rep.fn;
            return d;
        },
        py::arg("model_path"), py::arg("data_dir"), py::arg("img_size") = 224,
        py::arg("fft") = true, py::arg("lbp") = true, py::arg("sobel") = false);

    m.def("count_ops", [](std::size_t in_channels, std::size_t img_size) {
        OpCounts c = count_ops(default_desk_spec(in_channels, img_size, img_size));
        py::dict d;
        d["flops"] = c.flops;
        d["bops"] = c.bops;
        d["effective_flops"] = c.effective_flops;
        return d;
    });
}
