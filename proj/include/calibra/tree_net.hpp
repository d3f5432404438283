#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "calibra/metrics.hpp"
#include "calibra/types.hpp"

namespace calibra {

// All filters are 5x5 with dilation 2 (9x9 receptive field) and zero padding.
inline constexpr int kKernelSize = 5;
inline constexpr int kDilation = 2;

struct ConvFilter {
    Tensor3<double> kernel;  // (input channels, 5, 5)
    double bias = 0.0;
};

// Parameters of the gated tree network. Four leaf filters read the logits,
// one reads the image, and four sigmoid gates (also reading the logits) mix
// them pairwise up to the root. The root is ReLU + epsilon, so the predicted
// temperature is always >= epsilon; zero-filled parameters give a constant
// field of 1 + epsilon because each leaf carries a +1 residual offset.
struct TreeNetParams {
    std::array<ConvFilter, 4> logit_leaves;  // leaves on the logit channels
    ConvFilter image_leaf;                   // leaf on the image channels
    std::array<ConvFilter, 4> gates;         // pair gates + subtree gate + root gate
    double epsilon = 1e-3;
    int classes = 0;
    int image_channels = 1;

    static TreeNetParams zeros(int classes, int image_channels, double epsilon = 1e-3);
    void validate() const;

    // Flat views over every scalar parameter, fixed order (kernels then
    // biases, leaves before gates); shared by Adam and gradient checking.
    std::vector<double*> parameter_view();
    std::vector<const double*> parameter_view() const;
};

// Gradient container with the same layout as the parameters.
using TreeNetGrads = TreeNetParams;

struct ForwardCache {
    std::array<Tensor2<double>, 4> logit_leaf_out;  // conv + bias + 1
    Tensor2<double> image_leaf_out;
    std::array<Tensor2<double>, 4> gate_out;  // sigmoid activations
    Tensor2<double> mix_a, mix_b;             // leaf-pair mixtures
    Tensor2<double> logits_subtree;           // gated mixture of mix_a / mix_b
    Tensor2<double> root_pre;                 // before ReLU
    Tensor2<double> field;                    // ReLU(root_pre) + epsilon
    int rows = 0, cols = 0, classes = 0, image_channels = 0;
};

// Dilated same-size convolution of a multi-channel input with one filter.
// Kept public: it is the building block the whole network is made of.
Tensor2<double> conv2d_dilated(const Tensor3<float>& input, const Tensor3<double>& kernel,
                               double bias);

// Full forward pass; a null image is treated as all-zero intensities (the
// image leaf then contributes bias + 1 only).
ForwardCache forward(const TreeNetParams& params, const LogitMap& logits,
                     const ImageTensor* image);

// Spatial average of the local field: the image-level temperature.
double pooled_temperature(const ForwardCache& cache);

Tensor2<float> field_as_f32(const ForwardCache& cache);

double forward_ibts(const TreeNetParams& params, const LogitMap& logits,
                    const ImageTensor* image);

enum class NetMode { Lts, Ibts };

NetMode net_mode_from_name(const std::string& name);
std::string net_mode_name(NetMode mode);

struct BackwardResult {
    double loss = 0.0;         // summed masked NLL at the predicted temperatures
    std::size_t pixels = 0;    // supervised pixels that contributed
    TreeNetGrads grads;        // d loss / d parameter
};

// Reverse-mode gradients of the masked NLL through softmax, the ReLU root
// (subgradient 0 at the kink), the gates and every convolution. The cache
// must come from forward() on the same inputs; shape drift raises StateError.
BackwardResult backward(const TreeNetParams& params, const ForwardCache& cache,
                        const LogitMap& logits, const ImageTensor* image,
                        const LabelMap& labels, const Mask* mask, NetMode mode);

// Forward-only loss in f64, bitwise the same quantity backward() reports.
// When relu_active is given it receives the ReLU on/off pattern, which lets
// finite-difference checks skip parameters that straddle a kink.
double tree_loss(const TreeNetParams& params, const LogitMap& logits,
                 const ImageTensor* image, const LabelMap& labels, const Mask* mask,
                 NetMode mode, Mask* relu_active = nullptr);

struct TrainConfig {
    int epochs = 100;
    // (start epoch, learning rate), start epochs strictly increasing.
    std::vector<std::pair<int, double>> lr_schedule = {{0, 1e-4}, {50, 1e-5}};
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    int accum_images = 4;  // images per optimizer step
    std::uint64_t seed = 0;
    MaskPolicy mask_policy = MaskPolicy::AllRegion;
    double epsilon = 1e-3;

    void validate() const;
};

struct FitArtifacts {
    TreeNetParams params;  // parameters of the best validation epoch
    std::vector<std::pair<double, double>> loss_curve;  // per epoch: (train, val) mean NLL
    int best_epoch = 0;
    int epochs_run = 0;
};

// Adam training on the train split with best-epoch selection by validation
// NLL. Deterministic for a fixed seed and config (serial reductions).
FitArtifacts train(const Dataset& train_split, const Dataset& val_split, NetMode mode,
                   const TrainConfig& config);

// Mean masked NLL of the network's predictions over a dataset.
double dataset_nll(const TreeNetParams& params, const Dataset& data, NetMode mode,
                   MaskPolicy policy);

}  // namespace calibra
