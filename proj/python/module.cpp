#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedsim/config.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/layers.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/serialize.hpp"

namespace py = pybind11;
using namespace fedsim;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<std::size_t> shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
        shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
    }
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
    return arr;
}

}  // namespace

PYBIND11_MODULE(_fedsim, m) {
    m.doc() = "federated learning simulator with normalization-free training";

    py::register_exception<Error>(m, "FedsimError");

    m.def(
        "ws_standardize",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> weight,
           py::array_t<double, py::array::c_style | py::array::forcecast> gain, double eps) {
            ConvParams p;
            p.weight = tensor_from_array(weight);
            p.bias = Tensor({p.weight.dim(0)});
            p.gain = tensor_from_array(gain);
            p.ws_eps = eps;
            return array_from_tensor(ws_standardize(p));
        },
        py::arg("weight"), py::arg("gain"), py::arg("eps") = 1e-4,
        "Standardize a [out,in,kh,kw] conv kernel per output channel.");

    m.def(
        "agc_clip",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> weight,
           py::array_t<double, py::array::c_style | py::array::forcecast> grad,
           double lambda_, double eps) {
            ModelState st;
            st.entries.emplace("w", ModelEntry{ParamRole::ConvWeight,
                                               tensor_from_array(weight)});
            GradientMap g;
            g.emplace("w", tensor_from_array(grad));
            GradientMap clipped = agc_clip(g, st, lambda_, eps);
            return array_from_tensor(clipped.at("w"));
        },
        py::arg("weight"), py::arg("grad"), py::arg("lam"), py::arg("eps") = 1e-3,
        "Adaptive gradient clipping per output unit.");

    m.def(
        "conv2d",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
           py::array_t<double, py::array::c_style | py::array::forcecast> weight,
           py::array_t<double, py::array::c_style | py::array::forcecast> bias,
           std::size_t stride, std::size_t padding) {
            ConvParams p;
            p.weight = tensor_from_array(weight);
            p.bias = tensor_from_array(bias);
            p.stride = stride;
            p.padding = padding;
            return array_from_tensor(conv2d_forward(tensor_from_array(x), p));
        },
        py::arg("x"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1,
        py::arg("padding") = 0);

    m.def(
        "dirichlet_partition",
        [](const std::vector<std::size_t>& labels, std::size_t num_clients, double alpha,
           std::uint64_t seed) {
            return dirichlet_partition(labels, num_clients, alpha, RngStream(seed));
        },
        py::arg("labels"), py::arg("num_clients"), py::arg("alpha"), py::arg("seed") = 0);

    m.def(
        "iid_partition",
        [](const std::vector<std::size_t>& labels, std::size_t num_clients,
           std::uint64_t seed) {
            return iid_partition(labels, num_clients, RngStream(seed));
        },
        py::arg("labels"), py::arg("num_clients"), py::arg("seed") = 0);

    m.def(
        "validate_config",
        [](const std::string& text) {
            ExperimentConfig cfg = parse_config(text);
            return cfg.resolved_json();
        },
        py::arg("text"), "Parse and validate a config, returning the resolved document.");

    m.def(
        "run_experiment",
        [](const std::string& config_text, const std::string& output_root) {
            ExperimentConfig cfg = parse_config(config_text);
            ExperimentOutput out = run_experiment(cfg, output_root);
            py::dict d;
            d["run_dir"] = out.run_dir.string();
            d["overall_mean"] = out.summary.overall_mean;
            d["overall_std"] = out.summary.overall_std;
            d["domain_mean"] = out.summary.domain_mean;
            d["per_seed_domain_acc"] = out.summary.per_seed_domain_acc;
            return d;
        },
        py::arg("config_text"), py::arg("output_root") = ".");

    m.def("checkpoint_roundtrip_ok", [](const std::string& path) {
        ModelState a = checkpoint_load(path);
        return checkpoint_to_json(a) == checkpoint_to_json(checkpoint_from_json(
                                            checkpoint_to_json(a)));
    });
}
