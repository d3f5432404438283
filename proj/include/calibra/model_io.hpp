#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "calibra/tree_net.hpp"
#include "calibra/types.hpp"

namespace calibra {

// A fitted calibration model of any method.
//  - ts:       {"method": "ts", "t_global": T}
//  - ibts-opt: {"method": "ibts-opt", "per_image": {id: T, ...}}
//    (the direct per-image optimizer; applies only to the split it was fit
//     on, since it carries no predictor)
//  - lts/ibts: a directory with header.json (epsilon, classes, channels,
//    dilation, biases) plus one NPY file per convolution filter.
struct Model {
    enum class Kind { Ts, IbtsOpt, TreeLts, TreeIbts };
    Kind kind = Kind::Ts;
    double t_global = 1.0;
    std::map<std::string, double> per_image;
    TreeNetParams params;

    std::string method_name() const;
};

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

void save_tree_params(const TreeNetParams& params, NetMode mode,
                      const std::filesystem::path& dir);
std::pair<TreeNetParams, NetMode> load_tree_params(const std::filesystem::path& dir);

}  // namespace calibra
