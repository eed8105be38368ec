#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include <json.hpp>

#include "error.hpp"
#include "io.hpp"
#include "mlp.hpp"
#include "ridge.hpp"
#include "tensor_store.hpp"

namespace lmprobe {

// A probe on disk is a JSON header plus float64 NPY arrays stored next to it
// as <stem>.<array>.npy. Vectors are written as 1×k arrays.

using AnyProbe = std::variant<RidgeProbe, MlpProbe>;

namespace detail {

inline Matrix as_row(const Vector& v) { return v.transpose(); }

inline Vector as_vector(const Matrix& m, const std::string& what) {
    if (m.rows() != 1) throw Error(ErrorKind::MalformedIndex, what + " must be stored as a 1×k array");
    return m.row(0).transpose();
}

inline std::string array_ref(const std::filesystem::path& header, const std::string& name) {
    return header.stem().string() + "." + name + ".npy";
}

inline nlohmann::json mlp_config_json(const MlpConfig& c) {
    return {{"hidden_units", c.hidden_units}, {"dropout", c.dropout},   {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},             {"batch_size", c.batch_size}, {"beta1", c.beta1},
            {"beta2", c.beta2},               {"epsilon", c.epsilon},    {"standardize_inputs", c.standardize_inputs},
            {"standardize_targets", c.standardize_targets}, {"optimizer", "adam"}, {"activation", "gelu"},
            {"loss", "mse"}};
}

inline MlpConfig mlp_config_from_json(const nlohmann::json& j) {
    MlpConfig c;
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    c.dropout = j.value("dropout", c.dropout);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.standardize_inputs = j.value("standardize_inputs", c.standardize_inputs);
    c.standardize_targets = j.value("standardize_targets", c.standardize_targets);
    return c;
}

}  // namespace detail

inline void save_probe(const std::filesystem::path& path, const RidgeProbe& probe) {
    const auto dir = path.parent_path();
    nlohmann::json j;
    j["probe"] = "linear";
    j["target_kind"] = target_name(probe.target_kind);
    j["lambda"] = probe.lambda;
    j["standardized"] = probe.standardized;
    j["m"] = probe.input_size();
    j["k"] = probe.output_size();
    j["arrays"] = {{"weights", detail::array_ref(path, "weights")},
                   {"intercept", detail::array_ref(path, "intercept")}};
    write_array(dir / detail::array_ref(path, "weights"), probe.weights, Dtype::f8);
    write_array(dir / detail::array_ref(path, "intercept"), detail::as_row(probe.intercept), Dtype::f8);
    write_file_atomic(path, j.dump(2) + "\n");
}

inline void save_probe(const std::filesystem::path& path, const MlpProbe& probe) {
    const auto dir = path.parent_path();
    nlohmann::json j;
    j["probe"] = "mlp";
    j["target_kind"] = target_name(probe.target_kind);
    j["seed"] = probe.seed;
    j["config"] = detail::mlp_config_json(probe.config);
    j["m"] = probe.input_size();
    j["k"] = probe.params.w2.cols();
    j["final_loss"] = probe.final_loss;
    auto& arrays = j["arrays"] = nlohmann::json::object();
    const auto put = [&](const std::string& name, const Matrix& m) {
        arrays[name] = detail::array_ref(path, name);
        write_array(dir / detail::array_ref(path, name), m, Dtype::f8);
    };
    put("w1", probe.params.w1);
    put("b1", detail::as_row(probe.params.b1));
    put("w2", probe.params.w2);
    put("b2", detail::as_row(probe.params.b2));
    put("x_mean", detail::as_row(probe.x_mean));
    put("x_scale", detail::as_row(probe.x_scale));
    put("y_mean", detail::as_row(probe.y_mean));
    put("y_scale", detail::as_row(probe.y_scale));
    write_file_atomic(path, j.dump(2) + "\n");
}

inline AnyProbe load_probe(const std::filesystem::path& path) {
    const auto dir = path.parent_path();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedIndex, path.string() + ": " + e.what());
    }
    try {
        const auto kind = parse_target_kind(j.at("target_kind").get<std::string>());
        if (!kind) throw Error(ErrorKind::MalformedIndex, path.string() + ": unknown target_kind");
        const auto array = [&](const std::string& name) {
            return read_array(dir / j.at("arrays").at(name).get<std::string>());
        };
        const auto type = j.at("probe").get<std::string>();
        if (type == "linear") {
            RidgeProbe p;
            p.target_kind = *kind;
            p.lambda = j.at("lambda").get<double>();
            p.standardized = j.value("standardized", false);
            p.weights = array("weights");
            p.intercept = detail::as_vector(array("intercept"), "intercept");
            if (p.weights.cols() != target_width(*kind) || p.intercept.size() != p.weights.cols()) {
                throw Error(ErrorKind::DimensionMismatch, path.string() + ": weight shapes disagree with target_kind");
            }
            return p;
        }
        if (type == "mlp") {
            MlpProbe p;
            p.target_kind = *kind;
            p.seed = j.at("seed").get<std::uint64_t>();
            p.config = detail::mlp_config_from_json(j.at("config"));
            p.final_loss = j.value("final_loss", 0.0);
            p.params.w1 = array("w1");
            p.params.b1 = detail::as_vector(array("b1"), "b1");
            p.params.w2 = array("w2");
            p.params.b2 = detail::as_vector(array("b2"), "b2");
            p.x_mean = detail::as_vector(array("x_mean"), "x_mean");
            p.x_scale = detail::as_vector(array("x_scale"), "x_scale");
            p.y_mean = detail::as_vector(array("y_mean"), "y_mean");
            p.y_scale = detail::as_vector(array("y_scale"), "y_scale");
            if (p.params.w2.cols() != target_width(*kind) || p.params.w1.cols() != p.params.w2.rows()) {
                throw Error(ErrorKind::DimensionMismatch, path.string() + ": weight shapes are inconsistent");
            }
            return p;
        }
        throw Error(ErrorKind::MalformedIndex, path.string() + ": unknown probe type '" + type + "'");
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedIndex, path.string() + ": " + e.what());
    }
}

}  // namespace lmprobe
