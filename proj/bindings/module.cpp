#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "frmlp/gradcheck.hpp"
#include "frmlp/train.hpp"
#include "frmlp/volume_io.hpp"

namespace py = pybind11;
using namespace frmlp;

namespace {

Tensor tensor_from_array(const py::array& arr) {
    Shape dims;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) dims.push_back(arr.shape(i));
    if (py::isinstance<py::array_t<float>>(arr)) {
        auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
        Tensor t = Tensor::zeros(dims, DType::F32);
        std::memcpy(t.impl()->data.data(), a.data(), static_cast<std::size_t>(a.nbytes()));
        return t;
    }
    auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(arr);
    Tensor t = Tensor::zeros(dims, DType::F64);
    std::memcpy(t.impl()->data.data(), a.data(), static_cast<std::size_t>(a.nbytes()));
    return t;
}

py::array array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    if (t.dtype() == DType::F32) {
        py::array_t<float> out(shape);
        std::memcpy(out.mutable_data(), t.impl()->data.data(), t.impl()->data.size());
        return out;
    }
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.impl()->data.data(), t.impl()->data.size());
    return out;
}

LabelMap labels_from_array(const py::array& arr) {
    if (arr.ndim() != 3) throw ShapeError("label arrays must be 3-D [H,W,D]");
    auto a = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>::ensure(arr);
    LabelMap m;
    m.dims = {arr.shape(0), arr.shape(1), arr.shape(2)};
    m.values.resize(static_cast<std::size_t>(m.numel()));
    std::memcpy(m.values.data(), a.data(), m.values.size() * sizeof(std::uint16_t));
    return m;
}

py::array labels_to_array(const LabelMap& m) {
    py::array_t<std::uint16_t> out({m.dims[0], m.dims[1], m.dims[2]});
    std::memcpy(out.mutable_data(), m.values.data(), m.values.size() * sizeof(std::uint16_t));
    return out;
}

std::array<std::int64_t, 3> dims3(const std::vector<std::int64_t>& dims) {
    if (dims.size() != 3) throw UsageError("dims must have three extents");
    return {dims[0], dims[1], dims[2]};
}

/// Thin driver for forward inference from Python.
class Model {
  public:
    explicit Model(const std::string& config_json)
        : cfg_(parse_config_json(config_json)), net_(build_network(cfg_)) {}

    py::array forward(const py::array& input) {
        NoGradGuard ng;
        return array_from_tensor(net_->forward(tensor_from_array(input)));
    }
    std::vector<py::array> encode(const py::array& input) {
        NoGradGuard ng;
        std::vector<py::array> out;
        for (const Tensor& f : net_->encode(tensor_from_array(input)))
            out.push_back(array_from_tensor(f));
        return out;
    }
    void load_checkpoint_file(const std::string& path) {
        load_params(net_->params(), io::load_checkpoint(path));
    }
    std::int64_t param_count() const { return net_->param_count(); }

  private:
    RunConfig cfg_;
    std::unique_ptr<Network> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "full-resolution hierarchical MLP framework for 3D dense prediction";

    py::register_exception<Error>(m, "FrmlpError");

    // Synthesis.
    m.def(
        "synth_phantom",
        [](const std::vector<std::int64_t>& dims, int n_blobs, std::uint64_t seed) {
            data::Phantom ph = data::synth_phantom(dims3(dims), n_blobs, seed);
            return py::make_tuple(array_from_tensor(ph.volume), labels_to_array(ph.labels));
        },
        py::arg("dims"), py::arg("n_blobs") = 5, py::arg("seed") = 1);
    m.def(
        "synth_low_dose",
        [](const py::array& clean, double drf, std::uint64_t seed, double counts) {
            return array_from_tensor(
                data::synth_low_dose(tensor_from_array(clean), drf, seed, counts));
        },
        py::arg("clean"), py::arg("drf"), py::arg("seed") = 1,
        py::arg("counts_at_full_dose") = 1e4);
    m.def(
        "synth_registration_pair",
        [](const std::vector<std::int64_t>& dims, double amplitude, std::uint64_t seed) {
            data::RegistrationPair pair = data::synth_registration_pair(dims3(dims), amplitude, seed);
            py::dict out;
            out["fixed"] = array_from_tensor(pair.fixed);
            out["moving"] = array_from_tensor(pair.moving);
            out["fixed_mask"] = labels_to_array(pair.fixed_mask);
            out["moving_mask"] = labels_to_array(pair.moving_mask);
            out["u_true"] = array_from_tensor(pair.u_true);
            return out;
        },
        py::arg("dims"), py::arg("amplitude"), py::arg("seed") = 1);
    m.def(
        "synth_smooth_field",
        [](const std::vector<std::int64_t>& dims, double amplitude, double sigma,
           std::uint64_t seed) {
            return array_from_tensor(synth_smooth_field(dims3(dims), amplitude, sigma, seed));
        },
        py::arg("dims"), py::arg("amplitude"), py::arg("smoothness_sigma") = 6.0,
        py::arg("seed") = 1);

    // Spatial operations.
    m.def("warp_trilinear", [](const py::array& volume, const py::array& field) {
        NoGradGuard ng;
        return array_from_tensor(warp_trilinear(tensor_from_array(volume), tensor_from_array(field)));
    });
    m.def("warp_nearest", [](const py::array& labels, const py::array& field) {
        return labels_to_array(warp_nearest(labels_from_array(labels), tensor_from_array(field)));
    });
    m.def("jacobian_determinants", [](const py::array& field) {
        return array_from_tensor(jacobian_determinants(tensor_from_array(field)));
    });

    // Metrics.
    m.def("nrmse", [](const py::array& x, const py::array& y) {
        return metrics::nrmse(tensor_from_array(x), tensor_from_array(y));
    });
    m.def("psnr", [](const py::array& x, const py::array& y) {
        return metrics::psnr(tensor_from_array(x), tensor_from_array(y));
    });
    m.def(
        "ssim",
        [](const py::array& x, const py::array& y, double data_range) {
            return metrics::ssim(tensor_from_array(x), tensor_from_array(y), data_range);
        },
        py::arg("x"), py::arg("y"), py::arg("data_range") = 1.0);
    m.def("weighted_score", [](const std::array<double, 5>& scores) {
        return metrics::weighted_score(scores);
    });
    m.def(
        "dsc",
        [](const py::array& a, const py::array& b, const std::set<std::uint16_t>& structures) {
            return metrics::dsc(labels_from_array(a), labels_from_array(b), structures);
        },
        py::arg("a"), py::arg("b"), py::arg("structures") = std::set<std::uint16_t>{1});
    m.def("njd", [](const py::array& field) { return metrics::njd(tensor_from_array(field)); });
    m.def("hd95", [](const py::array& a, const py::array& b) {
        return metrics::hd95(labels_from_array(a), labels_from_array(b));
    });

    // Losses (scalar evaluation).
    m.def("content_loss", [](const py::array& pred, const py::array& target) {
        NoGradGuard ng;
        return content_loss(tensor_from_array(pred), tensor_from_array(target)).item();
    });
    m.def(
        "local_ncc_loss",
        [](const py::array& fixed, const py::array& warped, int n) {
            NoGradGuard ng;
            return local_ncc_loss(tensor_from_array(fixed), tensor_from_array(warped), n).item();
        },
        py::arg("fixed"), py::arg("warped"), py::arg("n") = 9);
    m.def("diffusion_regularizer", [](const py::array& field) {
        NoGradGuard ng;
        return diffusion_regularizer(tensor_from_array(field)).item();
    });
    m.def("dice_loss", [](const py::array& logits, const py::array& labels) {
        NoGradGuard ng;
        return dice_loss(tensor_from_array(logits), tensor_from_array(labels)).item();
    });
    m.def(
        "focal_loss",
        [](const py::array& logits, const py::array& labels, double alpha, double gamma) {
            NoGradGuard ng;
            return focal_loss(tensor_from_array(logits), tensor_from_array(labels), alpha, gamma)
                .item();
        },
        py::arg("logits"), py::arg("labels"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);

    // Configs, training, evaluation.
    m.def("default_config", [](const std::string& task) {
        return config_to_json(default_config(task_from_string(task)));
    });
    m.def("train", [](const std::string& config_json) {
        RunConfig cfg = parse_config_json(config_json);
        TrainResult result = train(cfg);
        if (!cfg.out_dir.empty())
            io::save_checkpoint(cfg.out_dir + "/checkpoint.frmc", result.checkpoint);
        py::dict out;
        out["log"] = result.log;
        out["best_val_metric"] = result.best_val_metric;
        out["best_iteration"] = result.best_iteration;
        return out;
    });
    m.def("evaluate", [](const std::string& checkpoint_path, const std::string& config_json) {
        RunConfig cfg = parse_config_json(config_json);
        metrics::MetricReport report = evaluate(io::load_checkpoint(checkpoint_path), cfg);
        py::dict out;
        out["task"] = report.task;
        out["aggregate"] = report.aggregate;
        out["text"] = report.to_text();
        return out;
    });
    m.def(
        "gradcheck",
        [](const std::string& scope, bool f64, std::uint64_t seed) {
            std::vector<py::dict> out;
            for (const auto& r : gradcheck::run_scope(scope, f64 ? DType::F64 : DType::F32, seed)) {
                py::dict d;
                d["name"] = r.name;
                d["scope"] = r.scope;
                d["max_rel_err"] = r.max_rel_err;
                d["tolerance"] = r.tolerance;
                d["pass"] = r.pass;
                out.push_back(d);
            }
            return out;
        },
        py::arg("scope") = "all", py::arg("f64") = true, py::arg("seed") = 1);

    // FRV1 volume files.
    m.def("read_volume", [](const std::string& path) {
        return array_from_tensor(io::read_volume(path));
    });
    m.def("write_volume", [](const std::string& path, const py::array& volume) {
        io::write_volume(path, tensor_from_array(volume));
    });
    m.def("read_labels", [](const std::string& path) {
        return labels_to_array(io::read_labels(path));
    });
    m.def("write_labels", [](const std::string& path, const py::array& labels) {
        io::write_labels(path, labels_from_array(labels));
    });

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("config_json"))
        .def("forward", &Model::forward)
        .def("encode", &Model::encode)
        .def("load_checkpoint", &Model::load_checkpoint_file)
        .def_property_readonly("param_count", &Model::param_count);
}
