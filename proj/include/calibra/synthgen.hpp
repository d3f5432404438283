#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "calibra/fusion.hpp"
#include "calibra/types.hpp"

namespace calibra {

enum class Scene { Stripes, NestedSquares, VoronoiBlobs };

Scene scene_from_name(const std::string& name);
std::string scene_name(Scene scene);

// How the observable logits are distorted relative to the calibrated ones.
struct MiscalSpec {
    enum class Kind { None, Global, PerImage, SpatialHalves };
    Kind kind = Kind::None;
    double k = 1.0;                       // Global
    double k_lo = 0.5, k_hi = 2.0;        // PerImage draw range
    double k_left = 3.0, k_right = 0.5;   // SpatialHalves

    // Grammar: none | global:K | per-image:LO:HI | spatial:halves:KL:KR
    static MiscalSpec parse(const std::string& text);
    std::string to_string() const;
};

struct SynthSpec {
    int rows = 64, cols = 64;
    int classes = 4;
    Scene scene = Scene::Stripes;
    MiscalSpec miscal;
    // Confidence range the calibrated logits are drawn for. Scene-interior
    // pixels draw from [conf_lo, conf_hi]; pixels within 2 px of a scene
    // boundary draw from a range whose floor slides toward chance level as
    // boundary_noise -> 1, which concentrates label errors near boundaries.
    double conf_lo = 0.40, conf_hi = 0.90;
    double boundary_noise = 0.5;  // rho in [0, 1)
    std::uint64_t seed = 0;
    int train_count = 4, val_count = 2, test_count = 2;
    bool with_image = true;

    void validate() const;
};

struct GeneratedData {
    Dataset train, val, test;
    // Ground-truth temperature fields, parallel to each split's samples.
    std::vector<Tensor2<float>> train_temps, val_temps, test_temps;
};

// Draws scenes, calibrated logits z0 (labels are *sampled* from
// softmax(z0), so T = 1 is calibrated by construction) and emits the
// observable logits k(x) * z0 together with the injected field k.
// Deterministic per seed; samples use derived independent streams.
GeneratedData generate(const SynthSpec& spec);

// Every atlas is an expert inside its own image bands (low error rate) and
// unreliable elsewhere; errors fall mostly on a per-pixel confuser label
// (the nearest other region's class), the way registration shift errors do.
// The leading atlas pairs share their corruption draws, which makes their
// errors correlated.
struct CorruptionProfile {
    double scale = 1.0;           // multiplies every rate; 0 disables corruption
    double expert_rate = 0.05;    // error rate inside an atlas's expertise bands
    double novice_lo = 0.45, novice_hi = 0.55;  // error rate outside them
    double confuser_prob = 0.8;   // corrupted pixels take the confuser label
    double boundary_boost = 1.5;  // rate multiplier within 1 px of a boundary
    int correlated_pairs = 1;     // leading atlas pairs share corruption draws
};

struct FusionBenchSpec {
    int rows = 64, cols = 64;
    int classes = 4;
    Scene scene = Scene::VoronoiBlobs;
    int n_atlases = 5;
    CorruptionProfile corruption;
    double distort_temp = 3.0;  // binary-logit temperature for the uncal probs
    std::uint64_t seed = 0;

    void validate() const;
};

struct FusionBench {
    LabelMap truth;
    std::vector<LabelMap> atlas_labels;
    std::vector<Tensor2<float>> probs_true;   // exact generative correctness
    std::vector<Tensor2<float>> probs_uncal;  // temperature-distorted version
    int classes = 0;

    AtlasStack stack_with(const std::vector<Tensor2<float>>& probs) const;
};

// Atlases are the truth map with independent and (for the leading pairs)
// shared label corruptions; the exact per-pixel correctness probability of
// every atlas is recorded alongside a miscalibrated version of it.
FusionBench generate_fusion_bench(const FusionBenchSpec& spec);

// Reference bounds mirroring the benchmarked upper limits: the oracle label
// whenever some atlas is correct, and the probability map that is 1 when an
// atlas is correct and 1/classes otherwise.
LabelMap best_fusion_labels(const FusionBench& bench);
AtlasStack best_calibration_stack(const FusionBench& bench);

}  // namespace calibra
