#include "calibra/tree_net.hpp"

#include <algorithm>
#include <cmath>

#include "calibra/error.hpp"
#include "calibra/rng.hpp"
#include "calibra/scaling.hpp"

namespace calibra {

namespace {

constexpr int kHalf = kKernelSize / 2;  // taps run over [-2, 2] * dilation

ConvFilter zero_filter(int channels) {
    return ConvFilter{Tensor3<double>(channels, kKernelSize, kKernelSize, 0.0), 0.0};
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void check_filter(const ConvFilter& f, int channels, const char* name) {
    if (f.kernel.channels() != channels || f.kernel.rows() != kKernelSize ||
        f.kernel.cols() != kKernelSize)
        throw ValidationError(std::string("TreeNetParams: bad kernel shape for ") + name);
    if (!all_finite(f.kernel.storage()) || !std::isfinite(f.bias))
        throw ValidationError(std::string("TreeNetParams: non-finite parameter in ") + name);
}

}  // namespace

TreeNetParams TreeNetParams::zeros(int classes, int image_channels, double epsilon) {
    TreeNetParams p;
    for (auto& leaf : p.logit_leaves) leaf = zero_filter(classes);
    p.image_leaf = zero_filter(image_channels);
    for (auto& gate : p.gates) gate = zero_filter(classes);
    p.epsilon = epsilon;
    p.classes = classes;
    p.image_channels = image_channels;
    p.validate();
    return p;
}

void TreeNetParams::validate() const {
    if (classes < 2) throw ValidationError("TreeNetParams: needs at least 2 classes");
    if (image_channels < 1) throw ValidationError("TreeNetParams: needs >= 1 image channel");
    if (!(epsilon > 0.0)) throw ValidationError("TreeNetParams: epsilon must be positive");
    for (const auto& leaf : logit_leaves) check_filter(leaf, classes, "logit leaf");
    check_filter(image_leaf, image_channels, "image leaf");
    for (const auto& gate : gates) check_filter(gate, classes, "gate");
}

std::vector<double*> TreeNetParams::parameter_view() {
    std::vector<double*> view;
    auto add = [&view](ConvFilter& f) {
        for (std::size_t i = 0; i < f.kernel.size(); ++i) view.push_back(&f.kernel[i]);
        view.push_back(&f.bias);
    };
    for (auto& leaf : logit_leaves) add(leaf);
    add(image_leaf);
    for (auto& gate : gates) add(gate);
    return view;
}

std::vector<const double*> TreeNetParams::parameter_view() const {
    auto view = const_cast<TreeNetParams*>(this)->parameter_view();
    return {view.begin(), view.end()};
}

Tensor2<double> conv2d_dilated(const Tensor3<float>& input, const Tensor3<double>& kernel,
                               double bias) {
    if (input.channels() != kernel.channels())
        throw ValidationError("conv2d_dilated: channel mismatch");
    const int H = input.rows(), W = input.cols(), C = input.channels();
    Tensor2<double> out(H, W, 0.0);
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kKernelSize; ++ky) {
            const int dy = (ky - kHalf) * kDilation;
            const int y_lo = std::max(0, -dy), y_hi = std::min(H, H - dy);
            for (int kx = 0; kx < kKernelSize; ++kx) {
                const int dx = (kx - kHalf) * kDilation;
                const double w = kernel(c, ky, kx);
                if (w == 0.0) continue;
                const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
                for (int y = y_lo; y < y_hi; ++y) {
                    const float* in_row = &input(c, y + dy, 0);
                    double* out_row = &out(y, 0);
                    for (int x = x_lo; x < x_hi; ++x)
                        out_row[x] += w * static_cast<double>(in_row[x + dx]);
                }
            }
        }
    }
    if (bias != 0.0)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias;
    return out;
}

namespace {

// Accumulates kernel/bias gradients of a convolution given the upstream
// gradient map; inputs are data, so no input gradient is needed.
void conv2d_dilated_param_grads(const Tensor3<float>& input, const Tensor2<double>& upstream,
                                ConvFilter& grads) {
    const int H = input.rows(), W = input.cols(), C = input.channels();
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kKernelSize; ++ky) {
            const int dy = (ky - kHalf) * kDilation;
            const int y_lo = std::max(0, -dy), y_hi = std::min(H, H - dy);
            for (int kx = 0; kx < kKernelSize; ++kx) {
                const int dx = (kx - kHalf) * kDilation;
                const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
                double acc = 0.0;
                for (int y = y_lo; y < y_hi; ++y) {
                    const float* in_row = &input(c, y + dy, 0);
                    const double* up_row = &upstream(y, 0);
                    for (int x = x_lo; x < x_hi; ++x)
                        acc += up_row[x] * static_cast<double>(in_row[x + dx]);
                }
                grads.kernel(c, ky, kx) += acc;
            }
        }
    }
    double bias_acc = 0.0;
    for (std::size_t i = 0; i < upstream.size(); ++i) bias_acc += upstream[i];
    grads.bias += bias_acc;
}

Tensor3<float> zero_image(int channels, int rows, int cols) {
    return Tensor3<float>(channels, rows, cols, 0.0f);
}

}  // namespace

ForwardCache forward(const TreeNetParams& params, const LogitMap& logits,
                     const ImageTensor* image) {
    params.validate();
    if (logits.classes() != params.classes)
        throw ValidationError("tree_net forward: logit class count mismatch");
    if (image && image->channels() != params.image_channels)
        throw ValidationError("tree_net forward: image channel count mismatch");
    if (image && (image->rows() != logits.rows() || image->cols() != logits.cols()))
        throw ValidationError("tree_net forward: image spatial shape mismatch");

    const int H = logits.rows(), W = logits.cols();
    ForwardCache cache;
    cache.rows = H;
    cache.cols = W;
    cache.classes = params.classes;
    cache.image_channels = params.image_channels;

    for (int m = 0; m < 4; ++m) {
        cache.logit_leaf_out[m] = conv2d_dilated(logits.tensor(), params.logit_leaves[m].kernel,
                                                 params.logit_leaves[m].bias);
        for (std::size_t i = 0; i < cache.logit_leaf_out[m].size(); ++i)
            cache.logit_leaf_out[m][i] += 1.0;  // residual offset toward T = 1
    }

    const Tensor3<float> blank =
        image ? Tensor3<float>() : zero_image(params.image_channels, H, W);
    const Tensor3<float>& img = image ? image->tensor() : blank;
    cache.image_leaf_out = conv2d_dilated(img, params.image_leaf.kernel, params.image_leaf.bias);
    for (std::size_t i = 0; i < cache.image_leaf_out.size(); ++i)
        cache.image_leaf_out[i] += 1.0;

    for (int m = 0; m < 4; ++m) {
        cache.gate_out[m] =
            conv2d_dilated(logits.tensor(), params.gates[m].kernel, params.gates[m].bias);
        for (std::size_t i = 0; i < cache.gate_out[m].size(); ++i)
            cache.gate_out[m][i] = sigmoid(cache.gate_out[m][i]);
    }

    cache.mix_a = Tensor2<double>(H, W);
    cache.mix_b = Tensor2<double>(H, W);
    cache.logits_subtree = Tensor2<double>(H, W);
    cache.root_pre = Tensor2<double>(H, W);
    cache.field = Tensor2<double>(H, W);
    for (std::size_t i = 0; i < cache.field.size(); ++i) {
        const double ga = cache.gate_out[0][i];
        const double gb = cache.gate_out[1][i];
        const double gs = cache.gate_out[2][i];
        const double gr = cache.gate_out[3][i];
        cache.mix_a[i] = ga * cache.logit_leaf_out[0][i] + (1.0 - ga) * cache.logit_leaf_out[1][i];
        cache.mix_b[i] = gb * cache.logit_leaf_out[2][i] + (1.0 - gb) * cache.logit_leaf_out[3][i];
        cache.logits_subtree[i] = gs * cache.mix_a[i] + (1.0 - gs) * cache.mix_b[i];
        cache.root_pre[i] = gr * cache.image_leaf_out[i] + (1.0 - gr) * cache.logits_subtree[i];
        cache.field[i] = (cache.root_pre[i] > 0.0 ? cache.root_pre[i] : 0.0) + params.epsilon;
    }
    return cache;
}

double pooled_temperature(const ForwardCache& cache) {
    double sum = 0.0;
    for (std::size_t i = 0; i < cache.field.size(); ++i) sum += cache.field[i];
    return sum / static_cast<double>(cache.field.size());
}

Tensor2<float> field_as_f32(const ForwardCache& cache) {
    Tensor2<float> out(cache.rows, cache.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(cache.field[i]);
    return out;
}

double forward_ibts(const TreeNetParams& params, const LogitMap& logits,
                    const ImageTensor* image) {
    return pooled_temperature(forward(params, logits, image));
}

NetMode net_mode_from_name(const std::string& name) {
    if (name == "lts") return NetMode::Lts;
    if (name == "ibts") return NetMode::Ibts;
    throw ValidationError("unknown net mode '" + name + "'");
}

std::string net_mode_name(NetMode mode) { return mode == NetMode::Lts ? "lts" : "ibts"; }

BackwardResult backward(const TreeNetParams& params, const ForwardCache& cache,
                        const LogitMap& logits, const ImageTensor* image,
                        const LabelMap& labels, const Mask* mask, NetMode mode) {
    if (cache.rows != logits.rows() || cache.cols != logits.cols() ||
        cache.classes != logits.classes() || cache.classes != params.classes ||
        cache.image_channels != params.image_channels)
        throw StateError("tree_net backward: cache does not match the given inputs");
    if (labels.rows() != logits.rows() || labels.cols() != logits.cols())
        throw ValidationError("tree_net backward: label shape mismatch");
    if (mask && (mask->rows() != logits.rows() || mask->cols() != logits.cols()))
        throw ValidationError("tree_net backward: mask shape mismatch");

    const int H = logits.rows(), W = logits.cols(), L = logits.classes();
    BackwardResult result;
    result.grads = TreeNetParams::zeros(params.classes, params.image_channels, params.epsilon);

    const double pooled = mode == NetMode::Ibts ? pooled_temperature(cache) : 0.0;

    // d loss / d temperature per pixel (LTS) or pooled (IBTS).
    Tensor2<double> d_field(H, W, 0.0);
    double d_pooled = 0.0;
    std::vector<double> e(static_cast<std::size_t>(L));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (mask && !(*mask)(y, x)) continue;
            if (!labels.supervised(y, x)) continue;
            const double t = mode == NetMode::Lts ? cache.field(y, x) : pooled;
            double m = -HUGE_VAL;
            for (int l = 0; l < L; ++l)
                m = std::max(m, static_cast<double>(logits(l, y, x)) / t);
            double denom = 0.0;
            for (int l = 0; l < L; ++l) {
                e[l] = std::exp(static_cast<double>(logits(l, y, x)) / t - m);
                denom += e[l];
            }
            double weighted = 0.0;
            for (int l = 0; l < L; ++l)
                weighted += static_cast<double>(logits(l, y, x)) * (e[l] / denom);
            const double z_true = logits(labels(y, x), y, x);

            result.loss += m + std::log(denom) - static_cast<double>(z_true) / t;
            ++result.pixels;

            const double dt = (static_cast<double>(z_true) - weighted) / (t * t);
            if (mode == NetMode::Lts)
                d_field(y, x) = dt;
            else
                d_pooled += dt;
        }
    }
    if (result.pixels == 0) throw DomainError("tree_net backward: no supervised pixels");
    if (!std::isfinite(result.loss))
        throw NumericalError("tree_net backward: non-finite loss");

    if (mode == NetMode::Ibts) {
        const double per_pixel = d_pooled / static_cast<double>(cache.field.size());
        for (std::size_t i = 0; i < d_field.size(); ++i) d_field[i] = per_pixel;
    }

    // Through the ReLU root (subgradient 0 at the kink) and the gate tree.
    Tensor2<double> d_leaf[4], d_image_leaf(H, W, 0.0), d_gate_pre[4];
    for (int m = 0; m < 4; ++m) {
        d_leaf[m] = Tensor2<double>(H, W, 0.0);
        d_gate_pre[m] = Tensor2<double>(H, W, 0.0);
    }
    for (std::size_t i = 0; i < d_field.size(); ++i) {
        double up = d_field[i];
        if (up == 0.0) continue;
        if (cache.root_pre[i] <= 0.0) continue;  // ReLU gate closed
        const double ga = cache.gate_out[0][i];
        const double gb = cache.gate_out[1][i];
        const double gs = cache.gate_out[2][i];
        const double gr = cache.gate_out[3][i];

        // root = gr * image + (1 - gr) * subtree
        d_gate_pre[3][i] = up * (cache.image_leaf_out[i] - cache.logits_subtree[i]) * gr *
                           (1.0 - gr);
        d_image_leaf[i] = up * gr;
        const double d_subtree = up * (1.0 - gr);

        // subtree = gs * mix_a + (1 - gs) * mix_b
        d_gate_pre[2][i] = d_subtree * (cache.mix_a[i] - cache.mix_b[i]) * gs * (1.0 - gs);
        const double d_mix_a = d_subtree * gs;
        const double d_mix_b = d_subtree * (1.0 - gs);

        // mix_a = ga * leaf0 + (1 - ga) * leaf1
        d_gate_pre[0][i] =
            d_mix_a * (cache.logit_leaf_out[0][i] - cache.logit_leaf_out[1][i]) * ga * (1.0 - ga);
        d_leaf[0][i] = d_mix_a * ga;
        d_leaf[1][i] = d_mix_a * (1.0 - ga);

        // mix_b = gb * leaf2 + (1 - gb) * leaf3
        d_gate_pre[1][i] =
            d_mix_b * (cache.logit_leaf_out[2][i] - cache.logit_leaf_out[3][i]) * gb * (1.0 - gb);
        d_leaf[2][i] = d_mix_b * gb;
        d_leaf[3][i] = d_mix_b * (1.0 - gb);
    }

    for (int m = 0; m < 4; ++m) {
        conv2d_dilated_param_grads(logits.tensor(), d_leaf[m], result.grads.logit_leaves[m]);
        conv2d_dilated_param_grads(logits.tensor(), d_gate_pre[m], result.grads.gates[m]);
    }
    const Tensor3<float> blank =
        image ? Tensor3<float>() : zero_image(params.image_channels, H, W);
    conv2d_dilated_param_grads(image ? image->tensor() : blank, d_image_leaf,
                               result.grads.image_leaf);
    return result;
}

double tree_loss(const TreeNetParams& params, const LogitMap& logits,
                 const ImageTensor* image, const LabelMap& labels, const Mask* mask,
                 NetMode mode, Mask* relu_active) {
    const ForwardCache cache = forward(params, logits, image);
    if (relu_active) {
        *relu_active = Mask(cache.rows, cache.cols, 0);
        for (int y = 0; y < cache.rows; ++y)
            for (int x = 0; x < cache.cols; ++x)
                (*relu_active)(y, x) = cache.root_pre(y, x) > 0.0 ? 1 : 0;
    }
    const double pooled = mode == NetMode::Ibts ? pooled_temperature(cache) : 0.0;
    const int L = logits.classes();
    double loss = 0.0;
    std::size_t pixels = 0;
    for (int y = 0; y < logits.rows(); ++y) {
        for (int x = 0; x < logits.cols(); ++x) {
            if (mask && !(*mask)(y, x)) continue;
            if (!labels.supervised(y, x)) continue;
            const double t = mode == NetMode::Lts ? cache.field(y, x) : pooled;
            double m = -HUGE_VAL;
            for (int l = 0; l < L; ++l)
                m = std::max(m, static_cast<double>(logits(l, y, x)) / t);
            double denom = 0.0;
            for (int l = 0; l < L; ++l)
                denom += std::exp(static_cast<double>(logits(l, y, x)) / t - m);
            loss += m + std::log(denom) -
                    static_cast<double>(logits(labels(y, x), y, x)) / t;
            ++pixels;
        }
    }
    if (pixels == 0) throw DomainError("tree_loss: no supervised pixels");
    return loss;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ValidationError("TrainConfig: negative epoch count");
    if (lr_schedule.empty()) throw ValidationError("TrainConfig: empty lr schedule");
    int prev = -1;
    for (const auto& [epoch, lr] : lr_schedule) {
        if (epoch <= prev) throw ValidationError("TrainConfig: schedule epochs must increase");
        if (!(lr > 0.0)) throw ValidationError("TrainConfig: learning rates must be positive");
        prev = epoch;
    }
    if (lr_schedule.front().first != 0)
        throw ValidationError("TrainConfig: schedule must start at epoch 0");
    if (accum_images < 1) throw ValidationError("TrainConfig: accum_images must be >= 1");
    if (!(epsilon > 0.0)) throw ValidationError("TrainConfig: epsilon must be positive");
}

double dataset_nll(const TreeNetParams& params, const Dataset& data, NetMode mode,
                   MaskPolicy policy) {
    double loss = 0.0;
    std::size_t pixels = 0;
    for (const Sample& s : data.samples) {
        const Mask mask = resolve_mask(policy, s.labels, 2, data.background);
        const ImageTensor* img = s.image ? &*s.image : nullptr;
        const ForwardCache cache = forward(params, s.logits, img);
        Tensor2<float> field;
        SampleTemps temps = SampleTemps::scalar(1.0);
        if (mode == NetMode::Lts) {
            field = field_as_f32(cache);
            temps = SampleTemps::local(field);
        } else {
            temps = SampleTemps::scalar(pooled_temperature(cache));
        }
        const CalibratedOutput out = softmax_temp(s.logits, temps);
        Mask supervised(mask.rows(), mask.cols(), 0);
        std::size_t n = 0;
        for (int y = 0; y < mask.rows(); ++y)
            for (int x = 0; x < mask.cols(); ++x)
                if (mask(y, x) && s.labels.supervised(y, x)) {
                    supervised(y, x) = 1;
                    ++n;
                }
        if (n == 0) continue;
        loss += nll(out.probs, s.labels, &supervised);
        pixels += n;
    }
    if (pixels == 0) throw DomainError("dataset_nll: no supervised pixels");
    return loss / static_cast<double>(pixels);
}

FitArtifacts train(const Dataset& train_split, const Dataset& val_split, NetMode mode,
                   const TrainConfig& config) {
    config.validate();
    train_split.validate();
    val_split.validate();
    if (train_split.classes != val_split.classes)
        throw ValidationError("train: class count differs between splits");

    const int image_channels =
        train_split.samples.front().image ? train_split.samples.front().image->channels() : 1;

    FitArtifacts artifacts;
    artifacts.params = TreeNetParams::zeros(train_split.classes, image_channels, config.epsilon);
    if (config.epochs == 0) return artifacts;

    TreeNetParams params = artifacts.params;
    auto view = params.parameter_view();
    const std::size_t n_params = view.size();
    std::vector<double> adam_m(n_params, 0.0), adam_v(n_params, 0.0);
    long step = 0;

    double best_val = HUGE_VAL;
    std::vector<std::size_t> order(train_split.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double lr = config.lr_schedule.front().second;
        for (const auto& [start, rate] : config.lr_schedule)
            if (epoch >= start) lr = rate;

        // Deterministic per-epoch shuffle.
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t epoch_pixels = 0;

        TreeNetGrads accum =
            TreeNetParams::zeros(params.classes, params.image_channels, params.epsilon);
        auto accum_view = accum.parameter_view();
        std::size_t accum_pixels = 0;
        int accum_count = 0;

        auto apply_step = [&]() {
            if (accum_count == 0 || accum_pixels == 0) return;
            ++step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < n_params; ++i) {
                const double g = *accum_view[i] / static_cast<double>(accum_pixels);
                adam_m[i] = config.beta1 * adam_m[i] + (1.0 - config.beta1) * g;
                adam_v[i] = config.beta2 * adam_v[i] + (1.0 - config.beta2) * g * g;
                const double m_hat = adam_m[i] / bc1;
                const double v_hat = adam_v[i] / bc2;
                *view[i] -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
                *accum_view[i] = 0.0;
            }
            accum_pixels = 0;
            accum_count = 0;
        };

        for (std::size_t idx : order) {
            const Sample& s = train_split.samples[idx];
            const Mask mask = resolve_mask(config.mask_policy, s.labels, 2,
                                           train_split.background);
            if (mask_count(mask) == 0) continue;
            const ImageTensor* img = s.image ? &*s.image : nullptr;
            const ForwardCache cache = forward(params, s.logits, img);
            BackwardResult bw;
            try {
                bw = backward(params, cache, s.logits, img, s.labels, &mask, mode);
            } catch (const DomainError&) {
                continue;  // sample fully unsupervised under this mask
            }
            if (!std::isfinite(bw.loss))
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
            epoch_loss += bw.loss;
            epoch_pixels += bw.pixels;
            auto grads_view = bw.grads.parameter_view();
            for (std::size_t i = 0; i < n_params; ++i) *accum_view[i] += *grads_view[i];
            accum_pixels += bw.pixels;
            if (++accum_count >= config.accum_images) apply_step();
        }
        apply_step();

        if (epoch_pixels == 0)
            throw DomainError("train: no supervised pixels in the train split");
        const double train_nll = epoch_loss / static_cast<double>(epoch_pixels);
        const double val_nll = dataset_nll(params, val_split, mode, config.mask_policy);
        if (!std::isfinite(train_nll) || !std::isfinite(val_nll))
            throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
        artifacts.loss_curve.emplace_back(train_nll, val_nll);

        if (val_nll < best_val) {
            best_val = val_nll;
            artifacts.best_epoch = epoch;
            artifacts.params = params;
        }
    }
    artifacts.epochs_run = config.epochs;
    return artifacts;
}

}  // namespace calibra
