#include "calibra/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "calibra/error.hpp"

namespace calibra {

void AtlasStack::validate() const {
    if (atlases.empty()) throw ValidationError("AtlasStack: needs at least one atlas");
    if (classes < 2) throw ValidationError("AtlasStack: needs at least 2 classes");
    const int H = atlases.front().labels.rows(), W = atlases.front().labels.cols();
    for (const Atlas& a : atlases) {
        if (a.labels.rows() != H || a.labels.cols() != W)
            throw ValidationError("AtlasStack: label shape mismatch");
        if (a.correctness.rows() != H || a.correctness.cols() != W)
            throw ValidationError("AtlasStack: probability shape mismatch");
        if (a.labels.classes() != classes)
            throw ValidationError("AtlasStack: class count mismatch");
        for (std::size_t i = 0; i < a.correctness.size(); ++i) {
            const float p = a.correctness[i];
            if (!(p >= 0.0f && p <= 1.0f))
                throw ValidationError("AtlasStack: correctness probability outside [0, 1]");
        }
    }
}

namespace {

// Weighted vote at a pixel; ties pick the lowest label index.
label_t weighted_winner(const AtlasStack& stack, int y, int x,
                        const std::vector<double>& weights, double* winner_score = nullptr) {
    std::vector<double> score(static_cast<std::size_t>(stack.classes), 0.0);
    for (std::size_t i = 0; i < stack.size(); ++i)
        score[stack.atlases[i].labels(y, x)] += weights[i];
    int best = 0;
    for (int l = 1; l < stack.classes; ++l)
        if (score[l] > score[best]) best = l;
    if (winner_score) *winner_score = score[best];
    return static_cast<label_t>(best);
}

}  // namespace

VoteResult fuse_vote(const AtlasStack& stack, VoteMode mode) {
    stack.validate();
    const int H = stack.rows(), W = stack.cols();
    Tensor2<label_t> fused(H, W);
    Mask majority_short(H, W, 0);
    const std::vector<double> ones(stack.size(), 1.0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double votes = 0.0;
            fused(y, x) = weighted_winner(stack, y, x, ones, &votes);
            if (mode == VoteMode::Majority && votes * 2.0 <= static_cast<double>(stack.size()))
                majority_short(y, x) = 1;
        }
    }
    return VoteResult{LabelMap(std::move(fused), stack.classes), std::move(majority_short)};
}

LabelMap fuse_svwv(const AtlasStack& stack) {
    stack.validate();
    const int H = stack.rows(), W = stack.cols();
    Tensor2<label_t> fused(H, W);
    std::vector<double> weights(stack.size());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (std::size_t i = 0; i < stack.size(); ++i)
                weights[i] = stack.atlases[i].correctness(y, x);
            fused(y, x) = weighted_winner(stack, y, x, weights);
        }
    }
    return LabelMap(std::move(fused), stack.classes);
}

std::vector<double> jlf_weights(const std::vector<double>& probs, double reg) {
    const std::size_t n = probs.size();
    if (n == 0) throw ValidationError("jlf_weights: empty probability vector");
    for (double p : probs)
        if (!(p >= 0.0 && p <= 1.0))
            throw ValidationError("jlf_weights: probability outside [0, 1]");
    if (reg < 0.0) throw ValidationError("jlf_weights: negative regularizer");

    // M = u u^t + r I with u = 1 - p, so (M^-1) 1 has the Sherman-Morrison
    // closed form; atlases with identical u get bitwise-identical weights.
    const double r = std::max(reg, 1e-6);
    double u_sum = 0.0, u_sq = 0.0;
    for (double p : probs) {
        const double u = 1.0 - p;
        u_sum += u;
        u_sq += u * u;
    }
    const double shrink = u_sum / (r + u_sq);
    std::vector<double> w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = (1.0 - (1.0 - probs[i]) * shrink) / r;
        if (!std::isfinite(w[i])) throw NumericalError("jlf_weights: non-finite weight");
        total += w[i];
    }
    if (total == 0.0 || !std::isfinite(total))
        throw NumericalError("jlf_weights: degenerate weight normalization");
    for (double& v : w) v /= total;
    return w;
}

JlfResult fuse_jlf(const AtlasStack& stack, double reg) {
    stack.validate();
    const int H = stack.rows(), W = stack.cols();
    const std::size_t n = stack.size();
    Tensor2<label_t> fused(H, W);
    std::vector<Tensor2<float>> weight_planes(n, Tensor2<float>(H, W, 0.0f));
    std::vector<double> probs(n);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (std::size_t i = 0; i < n; ++i) probs[i] = stack.atlases[i].correctness(y, x);
            std::vector<double> w;
            try {
                w = jlf_weights(probs, reg);
            } catch (const NumericalError& e) {
                throw NumericalError("fuse_jlf at (" + std::to_string(y) + ", " +
                                     std::to_string(x) + "): " + e.what());
            }
            for (std::size_t i = 0; i < n; ++i)
                weight_planes[i](y, x) = static_cast<float>(w[i]);
            fused(y, x) = weighted_winner(stack, y, x, w);
        }
    }
    return JlfResult{LabelMap(std::move(fused), stack.classes), std::move(weight_planes)};
}

VoteChangeReport vote_change_report(const LabelMap& before, const LabelMap& after,
                                    const LabelMap& truth, const Mask& changeable) {
    if (!before.tensor().same_shape(after.tensor()) ||
        !before.tensor().same_shape(truth.tensor()))
        throw ValidationError("vote_change_report: shape mismatch");
    if (changeable.rows() != before.rows() || changeable.cols() != before.cols())
        throw ValidationError("vote_change_report: mask shape mismatch");

    VoteChangeReport report;
    std::size_t w2c = 0, c2w = 0;
    for (int y = 0; y < before.rows(); ++y) {
        for (int x = 0; x < before.cols(); ++x) {
            if (!changeable(y, x)) continue;
            ++report.changeable;
            if (before(y, x) == after(y, x)) continue;
            ++report.changed;
            const bool was_correct = before(y, x) == truth(y, x);
            const bool is_correct = after(y, x) == truth(y, x);
            if (!was_correct && is_correct) ++w2c;
            if (was_correct && !is_correct) ++c2w;
        }
    }
    if (report.changeable > 0)
        report.rate =
            static_cast<double>(report.changed) / static_cast<double>(report.changeable);
    if (report.changed > 0) {
        report.wrong_to_correct =
            static_cast<double>(w2c) / static_cast<double>(report.changed);
        report.correct_to_wrong =
            static_cast<double>(c2w) / static_cast<double>(report.changed);
    }
    return report;
}

Mask disagreement_mask(const AtlasStack& stack) {
    stack.validate();
    Mask out(stack.rows(), stack.cols(), 0);
    for (int y = 0; y < stack.rows(); ++y)
        for (int x = 0; x < stack.cols(); ++x) {
            const label_t first = stack.atlases.front().labels(y, x);
            for (std::size_t i = 1; i < stack.size(); ++i)
                if (stack.atlases[i].labels(y, x) != first) {
                    out(y, x) = 1;
                    break;
                }
        }
    return out;
}

}  // namespace calibra
