#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calibra/scaling.hpp"
#include "calibra/types.hpp"

namespace calibra {

// Resolves the pixel set a loss or metric runs over.
enum class MaskPolicy { Everywhere, AllRegion, BoundaryRegion };

MaskPolicy mask_policy_from_name(const std::string& name);
std::string mask_policy_name(MaskPolicy p);

struct RegionMask {
    enum class Kind { All, Boundary, LocalPatch };
    Mask mask;
    Kind kind = Kind::All;
    int patch_y = 0, patch_x = 0, patch_size = 0;
};

// Pixels whose 4-neighborhood crosses a label boundary, dilated by Chebyshev
// distance <= radius. Ignore-labeled pixels count as their own "class" for
// boundary purposes but are still excluded from metric sums downstream.
RegionMask boundary_region(const LabelMap& labels, int radius = 2);

// Non-background pixels united with the boundary region.
RegionMask all_region(const LabelMap& labels, int radius = 2, label_t background = 0);

// Axis-aligned square patches with uniformly random valid origins.
// size > min(H, W) is clamped (recorded in patch_size). Deterministic per seed.
std::vector<RegionMask> local_patches(int rows, int cols, int count = 10, int size = 72,
                                      std::uint64_t seed = 0);

// Mask per policy; Everywhere returns an all-ones mask.
Mask resolve_mask(MaskPolicy policy, const LabelMap& labels, int radius = 2,
                  label_t background = 0);

enum class BinScheme { EqualWidth, EqualFrequency };

struct BinStat {
    double lo = 0.0, hi = 0.0;  // confidence interval covered (EqualWidth)
    std::size_t count = 0;
    double acc = 0.0;   // mean correctness over the bin
    double conf = 0.0;  // mean confidence over the bin
};

struct ReliabilityBins {
    BinScheme scheme = BinScheme::EqualWidth;
    int requested_bins = 10;
    std::size_t total = 0;
    std::vector<BinStat> bins;
};

// Bins predicted confidence against correctness over the masked supervised
// pixels. EqualWidth intervals are ((j-1)/N, j/N] with conf = 0 assigned to
// bin 1; EqualFrequency sorts and splits into groups differing by <= 1.
ReliabilityBins bin_predictions(const CalibratedOutput& output, const LabelMap& labels,
                                const Mask& mask, BinScheme scheme, int nbins = 10);

// Weighted mean |acc - conf| over bins. Empty bins contribute nothing.
double ece(const ReliabilityBins& bins);
// Max |acc - conf| over occupied bins.
double mce(const ReliabilityBins& bins);

// Static calibration error: per-class equal-width binning of the full
// probability vector; weights |bin| / (L * pixel_count).
double sce(const CalibratedOutput& output, const LabelMap& labels, const Mask& mask,
           int nbins = 10);

// Adaptive calibration error: per-class equal-frequency bins, fixed weight
// 1 / (L * R) per occupied bin.
double ace(const CalibratedOutput& output, const LabelMap& labels, const Mask& mask,
           int nbins = 10);

struct SegMetrics {
    double asd = 0.0;   // symmetric average surface distance, pixels
    double sd = 0.0;    // surface dice at 1 px tolerance
    double md95 = 0.0;  // 95th-percentile symmetric surface distance
    double vd = 0.0;    // mean volume dice over non-background classes
};

// Brute-force surface/overlap metrics between two label maps. Classes are
// the non-background labels present in either map; one with no such class
// raises EmptyRegion.
SegMetrics seg_metrics(const LabelMap& pred, const LabelMap& truth, label_t background = 0);

struct MetricSet {
    std::optional<double> ece, mce, sce, ace;
};

struct RegionConfig {
    bool all = true, boundary = true, local = true;
    int radius = 2;
    label_t background = 0;
    int bins = 10;
    int patches = 10;
    int patch_size = 72;
    std::uint64_t seed = 0;
};

struct CalibrationReport {
    MetricSet all, boundary;
    std::vector<MetricSet> per_patch;
    MetricSet local_avg, local_max;
    ReliabilityBins all_bins;  // equal-width bins over the All region
    int bins = 10;
};

// Runs every requested region; regions that select no supervised pixel
// yield null metrics instead of failing.
CalibrationReport evaluate(const CalibratedOutput& output, const LabelMap& labels,
                           const RegionConfig& config);

std::string report_to_json(const CalibrationReport& report);
CalibrationReport report_from_json(const std::string& text);

// CSV rows "bin_lo,bin_hi,count,acc,conf" for reliability-diagram plotting.
std::string bins_to_csv(const ReliabilityBins& bins);

// Pointwise merge of equal-width bin sets (counts add, means reweight).
ReliabilityBins merge_bins(const ReliabilityBins& a, const ReliabilityBins& b);

}  // namespace calibra
