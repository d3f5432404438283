#include "calibra/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "calibra/error.hpp"
#include "calibra/rng.hpp"

namespace calibra {

using nlohmann::json;

MaskPolicy mask_policy_from_name(const std::string& name) {
    if (name == "everywhere") return MaskPolicy::Everywhere;
    if (name == "all") return MaskPolicy::AllRegion;
    if (name == "boundary") return MaskPolicy::BoundaryRegion;
    throw ValidationError("unknown mask policy '" + name + "'");
}

std::string mask_policy_name(MaskPolicy p) {
    switch (p) {
        case MaskPolicy::Everywhere: return "everywhere";
        case MaskPolicy::AllRegion: return "all";
        case MaskPolicy::BoundaryRegion: return "boundary";
    }
    return "everywhere";
}

RegionMask boundary_region(const LabelMap& labels, int radius) {
    const int H = labels.rows(), W = labels.cols();
    Mask base(H, W, 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const label_t v = labels(y, x);
            const bool edge = (y > 0 && labels(y - 1, x) != v) ||
                              (y + 1 < H && labels(y + 1, x) != v) ||
                              (x > 0 && labels(y, x - 1) != v) ||
                              (x + 1 < W && labels(y, x + 1) != v);
            if (edge) base(y, x) = 1;
        }
    }
    Mask out(H, W, 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!base(y, x)) continue;
            for (int dy = -radius; dy <= radius; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= H) continue;
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int xx = x + dx;
                    if (xx >= 0 && xx < W) out(yy, xx) = 1;
                }
            }
        }
    }
    return RegionMask{std::move(out), RegionMask::Kind::Boundary, 0, 0, 0};
}

RegionMask all_region(const LabelMap& labels, int radius, label_t background) {
    RegionMask region = boundary_region(labels, radius);
    for (int y = 0; y < labels.rows(); ++y)
        for (int x = 0; x < labels.cols(); ++x)
            if (labels(y, x) != background && labels.supervised(y, x))
                region.mask(y, x) = 1;
    region.kind = RegionMask::Kind::All;
    return region;
}

std::vector<RegionMask> local_patches(int rows, int cols, int count, int size,
                                      std::uint64_t seed) {
    const int clamped = std::min(size, std::min(rows, cols));
    Rng rng(seed);
    std::vector<RegionMask> patches;
    patches.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int oy = rows == clamped ? 0 : rng.below_int(rows - clamped + 1);
        const int ox = cols == clamped ? 0 : rng.below_int(cols - clamped + 1);
        Mask m(rows, cols, 0);
        for (int y = oy; y < oy + clamped; ++y)
            for (int x = ox; x < ox + clamped; ++x) m(y, x) = 1;
        patches.push_back(RegionMask{std::move(m), RegionMask::Kind::LocalPatch, oy, ox, clamped});
    }
    return patches;
}

Mask resolve_mask(MaskPolicy policy, const LabelMap& labels, int radius, label_t background) {
    switch (policy) {
        case MaskPolicy::Everywhere: return Mask(labels.rows(), labels.cols(), 1);
        case MaskPolicy::AllRegion: return all_region(labels, radius, background).mask;
        case MaskPolicy::BoundaryRegion: return boundary_region(labels, radius).mask;
    }
    return Mask(labels.rows(), labels.cols(), 1);
}

namespace {

// Equal-width bin index in [0, nbins): intervals ((j-1)/N, j/N], conf 0 -> bin 0.
int width_bin(double conf, int nbins) {
    if (conf <= 0.0) return 0;
    const int j = static_cast<int>(std::ceil(conf * nbins));
    return std::clamp(j, 1, nbins) - 1;
}

struct Accum {
    std::size_t count = 0;
    double conf_sum = 0.0;
    double hit_sum = 0.0;
};

ReliabilityBins finalize_width_bins(const std::vector<Accum>& acc, int nbins,
                                    std::size_t total) {
    ReliabilityBins out;
    out.scheme = BinScheme::EqualWidth;
    out.requested_bins = nbins;
    out.total = total;
    out.bins.resize(static_cast<std::size_t>(nbins));
    for (int j = 0; j < nbins; ++j) {
        BinStat& b = out.bins[j];
        b.lo = static_cast<double>(j) / nbins;
        b.hi = static_cast<double>(j + 1) / nbins;
        b.count = acc[j].count;
        if (b.count > 0) {
            b.acc = acc[j].hit_sum / b.count;
            b.conf = acc[j].conf_sum / b.count;
        }
    }
    return out;
}

// Sorted (conf, hit) pairs split into nbins contiguous, near-equal groups.
ReliabilityBins frequency_bins(std::vector<std::pair<double, double>> pairs, int nbins) {
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    ReliabilityBins out;
    out.scheme = BinScheme::EqualFrequency;
    out.requested_bins = nbins;
    out.total = pairs.size();
    out.bins.resize(static_cast<std::size_t>(nbins));
    const std::size_t n = pairs.size();
    for (int r = 0; r < nbins; ++r) {
        const std::size_t begin = n * static_cast<std::size_t>(r) / nbins;
        const std::size_t end = n * static_cast<std::size_t>(r + 1) / nbins;
        BinStat& b = out.bins[r];
        b.count = end - begin;
        if (b.count == 0) continue;
        double conf_sum = 0.0, hit_sum = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            conf_sum += pairs[i].first;
            hit_sum += pairs[i].second;
        }
        b.lo = pairs[begin].first;
        b.hi = pairs[end - 1].first;
        b.acc = hit_sum / b.count;
        b.conf = conf_sum / b.count;
    }
    return out;
}

}  // namespace

ReliabilityBins bin_predictions(const CalibratedOutput& output, const LabelMap& labels,
                                const Mask& mask, BinScheme scheme, int nbins) {
    if (labels.rows() != output.confidence.rows() || labels.cols() != output.confidence.cols())
        throw ValidationError("bin_predictions: shape mismatch");
    if (mask.rows() != labels.rows() || mask.cols() != labels.cols())
        throw ValidationError("bin_predictions: mask shape mismatch");

    if (scheme == BinScheme::EqualWidth) {
        std::vector<Accum> acc(static_cast<std::size_t>(nbins));
        std::size_t total = 0;
        for (int y = 0; y < labels.rows(); ++y) {
            for (int x = 0; x < labels.cols(); ++x) {
                if (!mask(y, x) || !labels.supervised(y, x)) continue;
                const double conf = output.confidence(y, x);
                Accum& a = acc[width_bin(conf, nbins)];
                ++a.count;
                a.conf_sum += conf;
                a.hit_sum += (output.pred_labels(y, x) == labels(y, x)) ? 1.0 : 0.0;
                ++total;
            }
        }
        if (total == 0) throw EmptyRegion("bin_predictions: region selects no supervised pixel");
        return finalize_width_bins(acc, nbins, total);
    }

    std::vector<std::pair<double, double>> pairs;
    for (int y = 0; y < labels.rows(); ++y) {
        for (int x = 0; x < labels.cols(); ++x) {
            if (!mask(y, x) || !labels.supervised(y, x)) continue;
            pairs.emplace_back(static_cast<double>(output.confidence(y, x)),
                               (output.pred_labels(y, x) == labels(y, x)) ? 1.0 : 0.0);
        }
    }
    if (pairs.empty()) throw EmptyRegion("bin_predictions: region selects no supervised pixel");
    return frequency_bins(std::move(pairs), nbins);
}

double ece(const ReliabilityBins& bins) {
    if (bins.total == 0) throw EmptyRegion("ece: empty bins");
    double sum = 0.0;
    for (const BinStat& b : bins.bins)
        if (b.count > 0)
            sum += (static_cast<double>(b.count) / bins.total) * std::abs(b.acc - b.conf);
    return sum;
}

double mce(const ReliabilityBins& bins) {
    if (bins.total == 0) throw EmptyRegion("mce: empty bins");
    double worst = 0.0;
    for (const BinStat& b : bins.bins)
        if (b.count > 0) worst = std::max(worst, std::abs(b.acc - b.conf));
    return worst;
}

double sce(const CalibratedOutput& output, const LabelMap& labels, const Mask& mask,
           int nbins) {
    const int L = output.probs.classes();
    std::size_t total = 0;
    std::vector<std::vector<Accum>> acc(static_cast<std::size_t>(L),
                                        std::vector<Accum>(static_cast<std::size_t>(nbins)));
    for (int y = 0; y < labels.rows(); ++y) {
        for (int x = 0; x < labels.cols(); ++x) {
            if (!mask(y, x) || !labels.supervised(y, x)) continue;
            ++total;
            for (int l = 0; l < L; ++l) {
                const double p = output.probs(l, y, x);
                Accum& a = acc[l][width_bin(p, nbins)];
                ++a.count;
                a.conf_sum += p;
                a.hit_sum += (labels(y, x) == l) ? 1.0 : 0.0;
            }
        }
    }
    if (total == 0) throw EmptyRegion("sce: region selects no supervised pixel");
    double sum = 0.0;
    for (int l = 0; l < L; ++l)
        for (int j = 0; j < nbins; ++j) {
            const Accum& a = acc[l][j];
            if (a.count == 0) continue;
            const double gap = std::abs(a.hit_sum / a.count - a.conf_sum / a.count);
            sum += (static_cast<double>(a.count) / (static_cast<double>(L) * total)) * gap;
        }
    return sum;
}

double ace(const CalibratedOutput& output, const LabelMap& labels, const Mask& mask,
           int nbins) {
    const int L = output.probs.classes();
    std::vector<std::pair<int, int>> pixels;  // (y, x) of masked supervised pixels
    for (int y = 0; y < labels.rows(); ++y)
        for (int x = 0; x < labels.cols(); ++x)
            if (mask(y, x) && labels.supervised(y, x)) pixels.emplace_back(y, x);
    if (pixels.empty()) throw EmptyRegion("ace: region selects no supervised pixel");

    double sum = 0.0;
    for (int l = 0; l < L; ++l) {
        std::vector<std::pair<double, double>> pairs;
        pairs.reserve(pixels.size());
        for (const auto& [y, x] : pixels)
            pairs.emplace_back(static_cast<double>(output.probs(l, y, x)),
                               (labels(y, x) == l) ? 1.0 : 0.0);
        const ReliabilityBins bins = frequency_bins(std::move(pairs), nbins);
        for (const BinStat& b : bins.bins)
            if (b.count > 0)
                sum += std::abs(b.acc - b.conf) / (static_cast<double>(L) * nbins);
    }
    return sum;
}

namespace {

struct Point {
    int y, x;
};

// Boundary of a binary class region: member pixels with a 4-neighbor outside
// the region (the image border counts as outside).
std::vector<Point> class_surface(const LabelMap& labels, label_t cls) {
    std::vector<Point> pts;
    const int H = labels.rows(), W = labels.cols();
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (labels(y, x) != cls) continue;
            const bool edge = y == 0 || y + 1 == H || x == 0 || x + 1 == W ||
                              labels(y - 1, x) != cls || labels(y + 1, x) != cls ||
                              labels(y, x - 1) != cls || labels(y, x + 1) != cls;
            if (edge) pts.push_back({y, x});
        }
    }
    return pts;
}

double point_to_surface(const Point& p, const std::vector<Point>& surface, double fallback) {
    if (surface.empty()) return fallback;
    double best = std::numeric_limits<double>::infinity();
    for (const Point& q : surface) {
        const double dy = p.y - q.y, dx = p.x - q.x;
        best = std::min(best, dy * dy + dx * dx);
    }
    return std::sqrt(best);
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(values.size())));
    return values[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

SegMetrics seg_metrics(const LabelMap& pred, const LabelMap& truth, label_t background) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw ValidationError("seg_metrics: shape mismatch");
    const int H = pred.rows(), W = pred.cols();

    std::vector<label_t> classes;
    for (int c = 0; c < truth.classes(); ++c) {
        if (c == background) continue;
        bool present = false;
        for (int y = 0; y < H && !present; ++y)
            for (int x = 0; x < W && !present; ++x)
                present = (pred(y, x) == c || truth(y, x) == c);
        if (present) classes.push_back(static_cast<label_t>(c));
    }
    if (classes.empty()) throw EmptyRegion("seg_metrics: no non-background class present");

    // Distance to an absent surface falls back to the grid diagonal.
    const double far = std::hypot(static_cast<double>(H), static_cast<double>(W));
    constexpr double kTolerance = 1.0;  // surface-dice tolerance, pixels

    SegMetrics out;
    for (label_t cls : classes) {
        const auto sp = class_surface(pred, cls);
        const auto st = class_surface(truth, cls);

        // ASD & pooled distances for the 95th percentile.
        double dist_sum = 0.0;
        std::vector<double> pooled;
        pooled.reserve(sp.size() + st.size());
        for (const Point& p : st) {
            const double d = point_to_surface(p, sp, far);
            dist_sum += d;
            pooled.push_back(d);
        }
        for (const Point& p : sp) {
            const double d = point_to_surface(p, st, far);
            dist_sum += d;
            pooled.push_back(d);
        }
        const std::size_t denom = sp.size() + st.size();
        out.asd += denom > 0 ? dist_sum / static_cast<double>(denom) : far;
        out.md95 += nearest_rank_percentile(pooled, 95.0);

        // Surface dice over tolerance bands around each surface.
        std::size_t near_truth = 0, near_pred = 0, near_both = 0;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const Point p{y, x};
                const bool nt = !st.empty() && point_to_surface(p, st, far) <= kTolerance;
                const bool np = !sp.empty() && point_to_surface(p, sp, far) <= kTolerance;
                near_truth += nt;
                near_pred += np;
                near_both += (nt && np);
            }
        }
        out.sd += (near_truth + near_pred) > 0
                      ? 2.0 * static_cast<double>(near_both) /
                            static_cast<double>(near_truth + near_pred)
                      : 0.0;

        std::size_t vol_pred = 0, vol_truth = 0, vol_both = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const bool ip = pred(y, x) == cls, it = truth(y, x) == cls;
                vol_pred += ip;
                vol_truth += it;
                vol_both += (ip && it);
            }
        out.vd += (vol_pred + vol_truth) > 0
                      ? 2.0 * static_cast<double>(vol_both) /
                            static_cast<double>(vol_pred + vol_truth)
                      : 0.0;
    }

    const double n = static_cast<double>(classes.size());
    out.asd /= n;
    out.sd /= n;
    out.md95 /= n;
    out.vd /= n;
    return out;
}

namespace {

MetricSet region_metrics(const CalibratedOutput& output, const LabelMap& labels,
                         const Mask& mask, int nbins) {
    MetricSet m;
    try {
        const ReliabilityBins bins =
            bin_predictions(output, labels, mask, BinScheme::EqualWidth, nbins);
        m.ece = ece(bins);
        m.mce = mce(bins);
        m.sce = sce(output, labels, mask, nbins);
        m.ace = ace(output, labels, mask, nbins);
    } catch (const EmptyRegion&) {
        // Recorded as null: an empty region is data, not a failure.
    }
    return m;
}

json metric_set_to_json(const MetricSet& m) {
    auto opt = [](const std::optional<double>& v) {
        return v ? json(*v) : json(nullptr);
    };
    return json{{"ece", opt(m.ece)}, {"mce", opt(m.mce)}, {"sce", opt(m.sce)},
                {"ace", opt(m.ace)}};
}

MetricSet metric_set_from_json(const json& j) {
    MetricSet m;
    auto opt = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<double>();
    };
    m.ece = opt("ece");
    m.mce = opt("mce");
    m.sce = opt("sce");
    m.ace = opt("ace");
    return m;
}

json bins_to_json(const ReliabilityBins& bins) {
    json arr = json::array();
    for (const BinStat& b : bins.bins)
        arr.push_back(json{{"lo", b.lo},
                           {"hi", b.hi},
                           {"count", b.count},
                           {"acc", b.acc},
                           {"conf", b.conf}});
    return json{{"scheme", bins.scheme == BinScheme::EqualWidth ? "equal_width"
                                                                : "equal_frequency"},
                {"requested_bins", bins.requested_bins},
                {"total", bins.total},
                {"bins", arr}};
}

ReliabilityBins bins_from_json(const json& j) {
    ReliabilityBins bins;
    bins.scheme = j.at("scheme").get<std::string>() == "equal_width"
                      ? BinScheme::EqualWidth
                      : BinScheme::EqualFrequency;
    bins.requested_bins = j.at("requested_bins").get<int>();
    bins.total = j.at("total").get<std::size_t>();
    for (const auto& e : j.at("bins")) {
        BinStat b;
        b.lo = e.at("lo").get<double>();
        b.hi = e.at("hi").get<double>();
        b.count = e.at("count").get<std::size_t>();
        b.acc = e.at("acc").get<double>();
        b.conf = e.at("conf").get<double>();
        bins.bins.push_back(b);
    }
    return bins;
}

}  // namespace

CalibrationReport evaluate(const CalibratedOutput& output, const LabelMap& labels,
                           const RegionConfig& config) {
    CalibrationReport report;
    report.bins = config.bins;

    if (config.all) {
        const RegionMask region = all_region(labels, config.radius, config.background);
        report.all = region_metrics(output, labels, region.mask, config.bins);
        try {
            report.all_bins = bin_predictions(output, labels, region.mask,
                                              BinScheme::EqualWidth, config.bins);
        } catch (const EmptyRegion&) {
        }
    }
    if (config.boundary) {
        const RegionMask region = boundary_region(labels, config.radius);
        report.boundary = region_metrics(output, labels, region.mask, config.bins);
    }
    if (config.local) {
        const auto patches = local_patches(labels.rows(), labels.cols(), config.patches,
                                           config.patch_size, config.seed);
        for (const RegionMask& patch : patches)
            report.per_patch.push_back(region_metrics(output, labels, patch.mask, config.bins));

        auto aggregate = [&](auto pick) -> std::pair<std::optional<double>, std::optional<double>> {
            double sum = 0.0, worst = -1.0;
            int n = 0;
            for (const MetricSet& m : report.per_patch) {
                const std::optional<double> v = pick(m);
                if (!v) continue;
                sum += *v;
                worst = std::max(worst, *v);
                ++n;
            }
            if (n == 0) return {std::nullopt, std::nullopt};
            return {sum / n, worst};
        };
        std::tie(report.local_avg.ece, report.local_max.ece) =
            aggregate([](const MetricSet& m) { return m.ece; });
        std::tie(report.local_avg.mce, report.local_max.mce) =
            aggregate([](const MetricSet& m) { return m.mce; });
        std::tie(report.local_avg.sce, report.local_max.sce) =
            aggregate([](const MetricSet& m) { return m.sce; });
        std::tie(report.local_avg.ace, report.local_max.ace) =
            aggregate([](const MetricSet& m) { return m.ace; });
    }
    return report;
}

std::string report_to_json(const CalibrationReport& report) {
    json per_patch = json::array();
    for (const MetricSet& m : report.per_patch) per_patch.push_back(metric_set_to_json(m));
    const json doc{
        {"regions",
         {{"all", metric_set_to_json(report.all)},
          {"boundary", metric_set_to_json(report.boundary)},
          {"local",
           {{"avg", metric_set_to_json(report.local_avg)},
            {"max", metric_set_to_json(report.local_max)},
            {"per_patch", per_patch}}}}},
        {"bins", bins_to_json(report.all_bins)},
        {"bin_count", report.bins}};
    return doc.dump(2);
}

CalibrationReport report_from_json(const std::string& text) {
    const json doc = json::parse(text);
    CalibrationReport report;
    const json& regions = doc.at("regions");
    report.all = metric_set_from_json(regions.at("all"));
    report.boundary = metric_set_from_json(regions.at("boundary"));
    report.local_avg = metric_set_from_json(regions.at("local").at("avg"));
    report.local_max = metric_set_from_json(regions.at("local").at("max"));
    for (const auto& e : regions.at("local").at("per_patch"))
        report.per_patch.push_back(metric_set_from_json(e));
    report.all_bins = bins_from_json(doc.at("bins"));
    report.bins = doc.at("bin_count").get<int>();
    return report;
}

std::string bins_to_csv(const ReliabilityBins& bins) {
    std::ostringstream out;
    out << "bin_lo,bin_hi,count,acc,conf\n";
    out.precision(17);
    for (const BinStat& b : bins.bins)
        out << b.lo << "," << b.hi << "," << b.count << "," << b.acc << "," << b.conf << "\n";
    return out.str();
}

ReliabilityBins merge_bins(const ReliabilityBins& a, const ReliabilityBins& b) {
    if (a.total == 0) return b;
    if (b.total == 0) return a;
    if (a.scheme != BinScheme::EqualWidth || b.scheme != BinScheme::EqualWidth ||
        a.bins.size() != b.bins.size())
        throw ValidationError("merge_bins: incompatible bin sets");
    ReliabilityBins out = a;
    out.total = a.total + b.total;
    for (std::size_t j = 0; j < out.bins.size(); ++j) {
        const BinStat& x = a.bins[j];
        const BinStat& y = b.bins[j];
        BinStat& o = out.bins[j];
        o.count = x.count + y.count;
        if (o.count > 0) {
            o.acc = (x.acc * x.count + y.acc * y.count) / o.count;
            o.conf = (x.conf * x.count + y.conf * y.count) / o.count;
        }
    }
    return out;
}

}  // namespace calibra
