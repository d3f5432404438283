#include "calibra/model_io.hpp"

#include <fstream>

#include <json.hpp>

#include "calibra/error.hpp"
#include "calibra/npy.hpp"

namespace calibra {

using nlohmann::json;

namespace {

const char* const kFilterNames[9] = {"leaf_logits_a", "leaf_logits_b", "leaf_logits_c",
                                     "leaf_logits_d", "leaf_image",    "gate_pair_ab",
                                     "gate_pair_cd",  "gate_subtree",  "gate_root"};

Tensor3<double> to_f64(const Tensor3<float>& t) {
    Tensor3<double> out(t.channels(), t.rows(), t.cols());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
    return out;
}

Tensor3<float> to_f32(const Tensor3<double>& t) {
    Tensor3<float> out(t.channels(), t.rows(), t.cols());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
    return out;
}

}  // namespace

std::string Model::method_name() const {
    switch (kind) {
        case Kind::Ts: return "ts";
        case Kind::IbtsOpt: return "ibts-opt";
        case Kind::TreeLts: return "lts";
        case Kind::TreeIbts: return "ibts";
    }
    return "ts";
}

void save_tree_params(const TreeNetParams& params, NetMode mode,
                      const std::filesystem::path& dir) {
    params.validate();
    std::filesystem::create_directories(dir);

    const ConvFilter* filters[9] = {
        &params.logit_leaves[0], &params.logit_leaves[1], &params.logit_leaves[2],
        &params.logit_leaves[3], &params.image_leaf,      &params.gates[0],
        &params.gates[1],        &params.gates[2],        &params.gates[3]};

    json biases;
    for (int i = 0; i < 9; ++i) {
        npy::save_tensor3(dir / (std::string(kFilterNames[i]) + ".npy"),
                          to_f32(filters[i]->kernel));
        biases[kFilterNames[i]] = filters[i]->bias;
    }
    const json header{{"method", net_mode_name(mode)}, {"epsilon", params.epsilon},
                      {"classes", params.classes},     {"channels", params.image_channels},
                      {"dilation", kDilation},         {"biases", biases}};
    std::ofstream out(dir / "header.json");
    if (!out) throw IoError("model: cannot write " + (dir / "header.json").string());
    out << header.dump(2) << "\n";
}

std::pair<TreeNetParams, NetMode> load_tree_params(const std::filesystem::path& dir) {
    std::ifstream in(dir / "header.json");
    if (!in) throw IoError("model: cannot open " + (dir / "header.json").string());
    json header;
    try {
        in >> header;
    } catch (const json::exception& e) {
        throw FormatError("model: invalid header JSON: " + std::string(e.what()));
    }

    const NetMode mode = net_mode_from_name(header.at("method").get<std::string>());
    const int classes = header.at("classes").get<int>();
    const int channels = header.at("channels").get<int>();
    const double epsilon = header.at("epsilon").get<double>();
    if (header.at("dilation").get<int>() != kDilation)
        throw FormatError("model: unsupported dilation");

    TreeNetParams params = TreeNetParams::zeros(classes, channels, epsilon);
    ConvFilter* filters[9] = {&params.logit_leaves[0], &params.logit_leaves[1],
                              &params.logit_leaves[2], &params.logit_leaves[3],
                              &params.image_leaf,      &params.gates[0],
                              &params.gates[1],        &params.gates[2],
                              &params.gates[3]};
    for (int i = 0; i < 9; ++i) {
        filters[i]->kernel =
            to_f64(npy::load_tensor3(dir / (std::string(kFilterNames[i]) + ".npy")));
        filters[i]->bias = header.at("biases").at(kFilterNames[i]).get<double>();
    }
    params.validate();
    return {std::move(params), mode};
}

void save_model(const Model& model, const std::filesystem::path& path) {
    if (model.kind == Model::Kind::TreeLts || model.kind == Model::Kind::TreeIbts) {
        save_tree_params(model.params,
                         model.kind == Model::Kind::TreeLts ? NetMode::Lts : NetMode::Ibts,
                         path);
        return;
    }
    json doc{{"method", model.method_name()}};
    if (model.kind == Model::Kind::Ts) {
        doc["t_global"] = model.t_global;
    } else {
        json per;
        for (const auto& [id, t] : model.per_image) per[id] = t;
        doc["per_image"] = per;
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("model: cannot write " + path.string());
    out << doc.dump(2) << "\n";
}

Model load_model(const std::filesystem::path& path) {
    Model model;
    if (std::filesystem::is_directory(path)) {
        auto [params, mode] = load_tree_params(path);
        model.kind = mode == NetMode::Lts ? Model::Kind::TreeLts : Model::Kind::TreeIbts;
        model.params = std::move(params);
        return model;
    }
    std::ifstream in(path);
    if (!in) throw IoError("model: cannot open " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("model: invalid JSON: " + std::string(e.what()));
    }
    const std::string method = doc.at("method").get<std::string>();
    if (method == "ts") {
        model.kind = Model::Kind::Ts;
        model.t_global = doc.at("t_global").get<double>();
        if (!(model.t_global > 0.0)) throw ValidationError("model: t_global must be positive");
    } else if (method == "ibts-opt") {
        model.kind = Model::Kind::IbtsOpt;
        for (const auto& [id, t] : doc.at("per_image").items()) {
            model.per_image[id] = t.get<double>();
            if (!(model.per_image[id] > 0.0))
                throw ValidationError("model: per-image temperature must be positive");
        }
    } else {
        throw FormatError("model: unknown method '" + method + "'");
    }
    return model;
}

}  // namespace calibra
