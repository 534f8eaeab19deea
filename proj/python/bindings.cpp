#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bitkit/data.hpp"
#include "bitkit/dedup.hpp"
#include "bitkit/hyperrule.hpp"
#include "bitkit/layers.hpp"
#include "bitkit/metrics.hpp"
#include "bitkit/optim.hpp"

namespace py = pybind11;
using namespace bitkit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from_array(const FloatArray& arr) {
    std::vector<int64_t> shape;
    for (py::ssize_t d = 0; d < arr.ndim(); ++d) shape.push_back(arr.shape(d));
    Tensor<float> t = Tensor<float>::zeros(shape);
    std::memcpy(t.ptr(), arr.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    return t;
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> arr(shape);
    std::memcpy(arr.mutable_data(), t.ptr(), sizeof(float) * static_cast<size_t>(t.numel()));
    return arr;
}

py::dict plan_dict(const HyperRulePlan& p) {
    py::dict d;
    d["size_regime"] = to_string(p.size_regime);
    d["resize_to"] = p.resize_to;
    d["crop_to"] = p.crop_to;
    d["total_steps"] = p.total_steps;
    d["decay_steps"] = p.decay_steps;
    d["lr"] = p.lr;
    d["momentum"] = p.momentum;
    d["batch_size"] = p.batch_size;
    if (p.mixup_alpha)
        d["mixup_alpha"] = *p.mixup_alpha;
    else
        d["mixup_alpha"] = py::none();
    return d;
}

}  // namespace

PYBIND11_MODULE(_bitkit, m) {
    m.doc() = "bindings for the bitkit transfer-learning toolkit";

    py::register_exception<Error>(m, "BitkitError");

    m.def(
        "plan",
        [](int64_t examples, int64_t height, int64_t width, bool allow_flip, bool allow_crop,
           bool xl) {
            TaskSpec task;
            task.num_train_examples = examples;
            task.native_height = height;
            task.native_width = width;
            task.num_classes = 2;
            task.allow_flip = allow_flip;
            task.allow_crop = allow_crop;
            task.largest_model_mode = xl;
            return plan_dict(plan(task));
        },
        py::arg("examples"), py::arg("height"), py::arg("width"), py::arg("allow_flip") = true,
        py::arg("allow_crop") = true, py::arg("xl") = false,
        "Fine-tuning plan for a task's statistics.");

    m.def(
        "conv2d",
        [](const FloatArray& x, const FloatArray& w, int64_t stride, int64_t padding) {
            return array_from_tensor(
                ops::conv2d<float>(nullptr, tensor_from_array(x), tensor_from_array(w), stride,
                                   padding));
        },
        py::arg("x"), py::arg("w"), py::arg("stride") = 1, py::arg("padding") = 0);

    m.def(
        "weight_standardize",
        [](const FloatArray& w, double eps) {
            return array_from_tensor(weight_standardize<float>(nullptr, tensor_from_array(w), eps));
        },
        py::arg("w"), py::arg("eps") = 1e-6);

    m.def(
        "group_norm",
        [](const FloatArray& x, const FloatArray& gamma, const FloatArray& beta, int64_t groups,
           double eps) {
            return array_from_tensor(group_norm<float>(nullptr, tensor_from_array(x),
                                                       tensor_from_array(gamma),
                                                       tensor_from_array(beta), groups, eps));
        },
        py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("groups"), py::arg("eps") = 1e-5);

    m.def(
        "topk_accuracy",
        [](const FloatArray& logits, const std::vector<uint16_t>& labels, int64_t k) {
            return topk_accuracy(tensor_from_array(logits), labels, k);
        },
        py::arg("logits"), py::arg("labels"), py::arg("k") = 1);

    m.def(
        "effective_lr",
        [](double base_lr, int64_t batch_size, int64_t warmup_steps, bool lr_scaling,
           const std::vector<int64_t>& milestone_steps, int64_t step) {
            OptimizerConfig c;
            c.base_lr = base_lr;
            c.batch_size = batch_size;
            c.schedule = Schedule::downstream(0);
            c.schedule.warmup_steps = warmup_steps;
            c.schedule.lr_scaling = lr_scaling;
            c.schedule.kind = Schedule::Kind::UpstreamEpochs;
            c.schedule.milestone_epochs = milestone_steps;
            c.schedule.steps_per_epoch = 1;
            return effective_lr(c, step);
        },
        py::arg("base_lr"), py::arg("batch_size"), py::arg("warmup_steps"), py::arg("lr_scaling"),
        py::arg("milestone_steps"), py::arg("step"));

    m.def(
        "dhash64",
        [](const FloatArray& chw) { return dhash64(tensor_from_array(chw)); }, py::arg("image"));

    m.def("hamming_distance", &hamming_distance, py::arg("a"), py::arg("b"));

    m.def(
        "mixup_apply",
        [](const FloatArray& images, const FloatArray& labels, double lam,
           const std::vector<int64_t>& perm) {
            auto [mi, ml] = mixup_apply(tensor_from_array(images), tensor_from_array(labels), lam,
                                        perm);
            return py::make_tuple(array_from_tensor(mi), array_from_tensor(ml));
        },
        py::arg("images"), py::arg("labels"), py::arg("lam"), py::arg("perm"));

    m.def(
        "synth_dataset",
        [](const std::vector<int64_t>& class_ids, int64_t n_per_class, int64_t size, uint64_t seed,
           double noise) {
            SynthSpec spec;
            spec.class_ids = class_ids;
            spec.n_per_class = n_per_class;
            spec.size = size;
            spec.seed = seed;
            spec.noise = noise;
            Dataset d = make_synthetic_dataset(spec);
            std::vector<uint16_t> labels = d.labels;
            return py::make_tuple(array_from_tensor(d.images), labels, d.num_classes);
        },
        py::arg("class_ids"), py::arg("n_per_class"), py::arg("size") = 32, py::arg("seed") = 0,
        py::arg("noise") = 0.04);

    m.def(
        "save_bitd",
        [](const std::string& path, const FloatArray& images, const std::vector<uint16_t>& labels,
           int64_t num_classes) {
            Dataset d;
            d.images = tensor_from_array(images);
            d.labels = labels;
            d.num_classes = num_classes;
            d.name = path;
            save_dataset(d, path);
        },
        py::arg("path"), py::arg("images"), py::arg("labels"), py::arg("num_classes"));

    m.def(
        "load_bitd",
        [](const std::string& path) {
            Dataset d = load_dataset(path);
            std::vector<uint16_t> labels = d.labels;
            return py::make_tuple(array_from_tensor(d.images), labels, d.num_classes);
        },
        py::arg("path"));
}
