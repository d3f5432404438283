#pragma once

#include <optional>
#include <vector>

#include "calibra/metrics.hpp"
#include "calibra/types.hpp"

namespace calibra {

// One registered atlas: its warped label suggestion plus the per-pixel
// probability that the suggestion matches the target's true label.
struct Atlas {
    LabelMap labels;
    Tensor2<float> correctness;  // values in [0, 1]
};

struct AtlasStack {
    std::vector<Atlas> atlases;
    int classes = 0;

    int rows() const { return atlases.front().labels.rows(); }
    int cols() const { return atlases.front().labels.cols(); }
    std::size_t size() const { return atlases.size(); }
    void validate() const;
};

enum class VoteMode { Majority, Plurality };

struct VoteResult {
    LabelMap labels;
    // Majority mode: pixels where no label reached a strict majority and the
    // plurality winner was emitted instead.
    Mask majority_short;
};

// Unweighted voting; ties pick the lowest label index.
VoteResult fuse_vote(const AtlasStack& stack, VoteMode mode);

// Spatially-varying weighted voting with the correctness probabilities as
// weights.
LabelMap fuse_svwv(const AtlasStack& stack);

// Joint-fusion weights at one pixel: builds the pairwise error-dependency
// matrix M(i, j) = (1 - p_i)(1 - p_j), adds reg to the diagonal (floored at
// 1e-6 so a certain atlas cannot make the solve singular), solves M w = 1
// and normalizes to sum(w) = 1.
std::vector<double> jlf_weights(const std::vector<double>& probs, double reg = 0.01);

struct JlfResult {
    LabelMap labels;
    std::vector<Tensor2<float>> weights;  // one (H, W) plane per atlas
};

JlfResult fuse_jlf(const AtlasStack& stack, double reg = 0.01);

struct VoteChangeReport {
    std::size_t changeable = 0;  // pixels where the atlases disagree
    std::size_t changed = 0;
    double rate = 0.0;                      // changed / changeable (0 when none)
    std::optional<double> wrong_to_correct;  // fraction of changed pixels
    std::optional<double> correct_to_wrong;
};

VoteChangeReport vote_change_report(const LabelMap& before, const LabelMap& after,
                                    const LabelMap& truth, const Mask& changeable);

// Pixels where at least two atlases disagree.
Mask disagreement_mask(const AtlasStack& stack);

}  // namespace calibra
