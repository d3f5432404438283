#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "calibra/error.hpp"
#include "calibra/metrics.hpp"
#include "calibra/rng.hpp"
#include "calibra/scaling.hpp"
#include "calibra/synthgen.hpp"
#include "oracles.hpp"

using namespace calibra;

namespace {

LabelMap labels_of(std::initializer_list<std::initializer_list<int>> rows, int classes) {
    const int H = static_cast<int>(rows.size());
    const int W = static_cast<int>(rows.begin()->size());
    Tensor2<label_t> t(H, W);
    int y = 0;
    for (const auto& row : rows) {
        int x = 0;
        for (int v : row) t(y, x++) = static_cast<label_t>(v);
        ++y;
    }
    return LabelMap(std::move(t), classes);
}

CalibratedOutput output_two_class(const std::vector<double>& confidences) {
    const int W = static_cast<int>(confidences.size());
    Tensor3<float> p(2, 1, W);
    for (int x = 0; x < W; ++x) {
        p(0, 0, x) = static_cast<float>(confidences[x]);
        p(1, 0, x) = static_cast<float>(1.0 - confidences[x]);
    }
    return output_from_probs(ProbMap(std::move(p)));
}

CalibratedOutput random_output(Rng& rng, int classes, int rows, int cols) {
    Tensor3<float> z(classes, rows, cols);
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = static_cast<float>(rng.normal(0.0, 1.5));
    return softmax_temp(LogitMap(std::move(z)), SampleTemps::scalar(1.0));
}

}  // namespace

TEST_CASE("boundary region definition") {
    SUBCASE("constant labels give an empty region and EmptyRegion downstream") {
        const LabelMap labels(Tensor2<label_t>(6, 6, 2), 3);
        const RegionMask region = boundary_region(labels, 2);
        CHECK(mask_count(region.mask) == 0);
        const auto out = output_two_class({0.7});
        const LabelMap one(Tensor2<label_t>(1, 1, 0), 2);
        CHECK_THROWS_AS(
            bin_predictions(out, one, Mask(1, 1, 0), BinScheme::EqualWidth, 10),
            EmptyRegion);
    }
    SUBCASE("vertical edge with radius 2 covers two extra columns per side") {
        Tensor2<label_t> t(8, 8, 0);
        for (int y = 0; y < 8; ++y)
            for (int x = 4; x < 8; ++x) t(y, x) = 1;
        const RegionMask region = boundary_region(LabelMap(t, 2), 2);
        // edge pair is columns 3 and 4; dilation adds columns 1..6
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(static_cast<bool>(region.mask(y, x)) == (x >= 1 && x <= 6));
    }
    SUBCASE("radius 0 keeps exactly the 4-neighborhood boundary pixels") {
        Tensor2<label_t> t(8, 8, 0);
        for (int y = 0; y < 8; ++y)
            for (int x = 4; x < 8; ++x) t(y, x) = 1;
        const RegionMask region = boundary_region(LabelMap(t, 2), 0);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(static_cast<bool>(region.mask(y, x)) == (x == 3 || x == 4));
    }
}

TEST_CASE("all region definition") {
    SUBCASE("all background means empty") {
        const LabelMap labels(Tensor2<label_t>(5, 5, 0), 2);
        CHECK(mask_count(all_region(labels, 2).mask) == 0);
    }
    SUBCASE("foreground square plus its halo") {
        Tensor2<label_t> t(10, 10, 0);
        for (int y = 4; y < 6; ++y)
            for (int x = 4; x < 6; ++x) t(y, x) = 1;
        const RegionMask region = all_region(LabelMap(t, 2), 2);
        // Boundary base is the square plus its 4-neighbors (a cross shape);
        // its Chebyshev-2 dilation enumerates to this union of two slabs.
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) {
                const bool in_halo = (y >= 1 && y <= 8 && x >= 2 && x <= 7) ||
                                     (y >= 2 && y <= 7 && x >= 1 && x <= 8);
                CHECK(static_cast<bool>(region.mask(y, x)) == in_halo);
            }
    }
    SUBCASE("no background present selects the full image") {
        Tensor2<label_t> t(6, 6, 1);
        for (int x = 0; x < 6; ++x) t(3, x) = 2;
        const RegionMask region = all_region(LabelMap(t, 3), 2);
        CHECK(mask_count(region.mask) == 36);
    }
}

TEST_CASE("local patches") {
    SUBCASE("patch size equal to the image selects everything, every time") {
        const auto patches = local_patches(64, 64, 10, 72, 5);
        CHECK(patches.size() == 10);
        for (const auto& p : patches) {
            CHECK(p.patch_size == 64);
            CHECK(mask_count(p.mask) == 64u * 64u);
        }
    }
    SUBCASE("same seed gives identical origins") {
        const auto a = local_patches(100, 100, 10, 72, 123);
        const auto b = local_patches(100, 100, 10, 72, 123);
        for (int i = 0; i < 10; ++i) {
            CHECK(a[i].patch_y == b[i].patch_y);
            CHECK(a[i].patch_x == b[i].patch_x);
        }
    }
    SUBCASE("origins stay within the valid range") {
        for (const auto& p : local_patches(100, 100, 10, 72, 9)) {
            CHECK(p.patch_y >= 0);
            CHECK(p.patch_y <= 28);
            CHECK(p.patch_x >= 0);
            CHECK(p.patch_x <= 28);
        }
    }
}

TEST_CASE("reliability binning against hand-computed cases") {
    SUBCASE("two pixels at 0.9, one correct") {
        const auto out = output_two_class({0.9, 0.9});
        const LabelMap labels = labels_of({{0, 1}}, 2);  // first correct, second wrong
        const auto bins =
            bin_predictions(out, labels, Mask(1, 2, 1), BinScheme::EqualWidth, 10);
        int occupied = 0;
        for (const auto& b : bins.bins)
            if (b.count > 0) ++occupied;
        CHECK(occupied == 1);
        const BinStat& b = bins.bins[8];  // (0.8, 0.9]
        CHECK(b.count == 2);
        CHECK(b.acc == doctest::Approx(0.5));
        CHECK(b.conf == doctest::Approx(0.9).epsilon(1e-6));
        CHECK(ece(bins) == doctest::Approx(0.4).epsilon(1e-6));
        CHECK(mce(bins) == doctest::Approx(0.4).epsilon(1e-6));
    }
    SUBCASE("all certain and correct fills only the top bin") {
        const auto out = output_two_class({1.0, 1.0, 1.0});
        const LabelMap labels = labels_of({{0, 0, 0}}, 2);
        const auto bins =
            bin_predictions(out, labels, Mask(1, 3, 1), BinScheme::EqualWidth, 10);
        CHECK(bins.bins[9].count == 3);
        CHECK(bins.bins[9].acc == doctest::Approx(1.0));
        CHECK(bins.bins[9].conf == doctest::Approx(1.0));
        for (int j = 0; j < 9; ++j) CHECK(bins.bins[j].count == 0);
        CHECK(ece(bins) == doctest::Approx(0.0));
    }
    SUBCASE("equal-frequency split of four confidences") {
        const auto out = output_two_class({0.6, 0.7, 0.8, 0.9});
        const LabelMap labels = labels_of({{0, 0, 0, 0}}, 2);
        const auto bins =
            bin_predictions(out, labels, Mask(1, 4, 1), BinScheme::EqualFrequency, 2);
        REQUIRE(bins.bins.size() == 2);
        CHECK(bins.bins[0].count == 2);
        CHECK(bins.bins[0].conf == doctest::Approx(0.65).epsilon(1e-6));
        CHECK(bins.bins[1].count == 2);
        CHECK(bins.bins[1].conf == doctest::Approx(0.85).epsilon(1e-6));
    }
    SUBCASE("weighted gaps: 0.1 at weight 3/4, 0.5 at weight 1/4") {
        const auto out = output_two_class({0.9, 0.9, 0.9, 0.5});
        const LabelMap labels = labels_of({{0, 0, 0, 0}}, 2);
        const auto bins =
            bin_predictions(out, labels, Mask(1, 4, 1), BinScheme::EqualWidth, 10);
        CHECK(ece(bins) == doctest::Approx(0.2).epsilon(1e-6));
        CHECK(mce(bins) == doctest::Approx(0.5).epsilon(1e-6));
    }
}

TEST_CASE("per-class calibration errors on single pixels") {
    SUBCASE("a certain correct pixel has zero static error") {
        const auto out = output_two_class({1.0});
        const LabelMap labels = labels_of({{0}}, 2);
        CHECK(sce(out, labels, Mask(1, 1, 1), 10) == doctest::Approx(0.0));
    }
    SUBCASE("a 0.7/0.3 pixel has static error 0.3") {
        const auto out = output_two_class({0.7});
        const LabelMap labels = labels_of({{0}}, 2);
        CHECK(sce(out, labels, Mask(1, 1, 1), 10) == doctest::Approx(0.3).epsilon(1e-6));
    }
}

TEST_CASE("segmentation metrics") {
    SUBCASE("identical maps score perfectly") {
        Tensor2<label_t> t(8, 8, 0);
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x) t(y, x) = 1;
        const LabelMap a(t, 2);
        const SegMetrics m = seg_metrics(a, a);
        CHECK(m.asd == doctest::Approx(0.0));
        CHECK(m.sd == doctest::Approx(1.0));
        CHECK(m.md95 == doctest::Approx(0.0));
        CHECK(m.vd == doctest::Approx(1.0));
    }
    SUBCASE("two 4x4 squares offset by one pixel overlap at dice 0.75") {
        Tensor2<label_t> truth(16, 16, 0), pred(16, 16, 0);
        for (int y = 4; y < 8; ++y)
            for (int x = 4; x < 8; ++x) truth(y, x) = 1;
        for (int y = 4; y < 8; ++y)
            for (int x = 5; x < 9; ++x) pred(y, x) = 1;
        const SegMetrics m = seg_metrics(LabelMap(pred, 2), LabelMap(truth, 2));
        CHECK(m.vd == doctest::Approx(0.75));
    }
    SUBCASE("single-point surfaces use the nearest-rank percentile") {
        Tensor2<label_t> truth(6, 6, 0), pred(6, 6, 0);
        truth(0, 0) = 1;
        pred(0, 3) = 1;
        const SegMetrics m = seg_metrics(LabelMap(pred, 2), LabelMap(truth, 2));
        CHECK(m.asd == doctest::Approx(3.0));
        CHECK(m.md95 == doctest::Approx(3.0));  // percentile of {3, 3} = max
        CHECK(m.sd == doctest::Approx(0.0));
        CHECK(m.vd == doctest::Approx(0.0));
    }
    SUBCASE("no non-background class raises EmptyRegion") {
        const LabelMap empty(Tensor2<label_t>(4, 4, 0), 2);
        CHECK_THROWS_AS(seg_metrics(empty, empty), EmptyRegion);
    }
}

TEST_CASE("oracle agreement on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const int L = 2 + rng.below_int(4);
        const int H = 4 + rng.below_int(61), W = 4 + rng.below_int(61);
        const CalibratedOutput out = random_output(rng, L, H, W);
        Tensor2<label_t> s(H, W);
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = static_cast<label_t>(rng.below_int(L));
        const LabelMap labels(s, L);
        Mask mask(H, W, 0);
        std::size_t selected = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = rng.uniform() < 0.7 ? 1 : 0;
            selected += mask[i];
        }
        if (selected == 0) mask(0, 0) = 1;

        const int nbins = 10;
        const auto bins = bin_predictions(out, labels, mask, BinScheme::EqualWidth, nbins);
        const auto records = oracles::collect(out, labels, mask);
        const auto [oece, omce] = oracles::ece_mce(records, nbins);

        CHECK(std::abs(ece(bins) - oece) < 1e-12);
        CHECK(std::abs(mce(bins) - omce) < 1e-12);
        CHECK(ece(bins) <= mce(bins) + 1e-15);
        CHECK(ece(bins) >= 0.0);
        CHECK(mce(bins) <= 1.0);

        CHECK(std::abs(sce(out, labels, mask, nbins) -
                       oracles::sce(out, labels, mask, nbins)) < 1e-12);
        CHECK(std::abs(ace(out, labels, mask, nbins) -
                       oracles::ace(out, labels, mask, nbins)) < 1e-12);
    }
}

TEST_CASE("relabeling permutation leaves calibration metrics unchanged") {
    Rng rng(81);
    const int L = 4, H = 12, W = 12;
    const CalibratedOutput out = random_output(rng, L, H, W);
    Tensor2<label_t> s(H, W);
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = static_cast<label_t>(rng.below_int(L));
    const LabelMap labels(s, L);
    const Mask mask(H, W, 1);

    const int perm[4] = {2, 0, 3, 1};
    Tensor3<float> permuted(L, H, W);
    Tensor2<label_t> perm_labels(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int l = 0; l < L; ++l) permuted(perm[l], y, x) = out.probs(l, y, x);
            perm_labels(y, x) = static_cast<label_t>(perm[labels(y, x)]);
        }
    const CalibratedOutput out2 = output_from_probs(ProbMap(std::move(permuted)));
    const LabelMap labels2(perm_labels, L);

    const auto bins1 = bin_predictions(out, labels, mask, BinScheme::EqualWidth, 10);
    const auto bins2 = bin_predictions(out2, labels2, mask, BinScheme::EqualWidth, 10);
    CHECK(ece(bins1) == doctest::Approx(ece(bins2)).epsilon(1e-12));
    CHECK(mce(bins1) == doctest::Approx(mce(bins2)).epsilon(1e-12));
    CHECK(sce(out, labels, mask, 10) ==
          doctest::Approx(sce(out2, labels2, mask, 10)).epsilon(1e-12));
    CHECK(ace(out, labels, mask, 10) ==
          doctest::Approx(ace(out2, labels2, mask, 10)).epsilon(1e-12));
}

TEST_CASE("region nesting properties") {
    Rng rng(82);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor2<label_t> t(16, 16);
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<label_t>(rng.below_int(3));
        const LabelMap labels(t, 3);
        const Mask b1 = boundary_region(labels, 1).mask;
        const Mask b2 = boundary_region(labels, 2).mask;
        const Mask all2 = all_region(labels, 2).mask;
        for (std::size_t i = 0; i < b1.size(); ++i) {
            if (b1[i]) CHECK(b2[i]);
            if (b2[i]) CHECK(all2[i]);
        }
    }
}

TEST_CASE("full evaluation report") {
    SUBCASE("identity-calibrated synthetic data has tiny ECE everywhere") {
        SynthSpec spec;
        spec.rows = 128;
        spec.cols = 128;
        spec.miscal = MiscalSpec::parse("none");
        spec.train_count = 0;
        spec.val_count = 0;
        spec.test_count = 1;
        spec.seed = 17;
        spec.with_image = false;
        const GeneratedData data = generate(spec);
        const Sample& s = data.test.samples[0];
        const auto out = softmax_temp(s.logits, SampleTemps::scalar(1.0));

        RegionConfig config;
        config.seed = 3;
        const CalibrationReport report = evaluate(out, s.labels, config);
        REQUIRE(report.all.ece.has_value());
        CHECK(*report.all.ece < 0.02);
        REQUIRE(report.local_avg.ece.has_value());
        CHECK(*report.local_avg.ece < 0.02);
    }
    SUBCASE("local max dominates local avg") {
        Rng rng(83);
        const CalibratedOutput out = random_output(rng, 3, 32, 32);
        Tensor2<label_t> s(32, 32);
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = static_cast<label_t>(rng.below_int(3));
        RegionConfig config;
        config.patch_size = 12;
        config.seed = 4;
        const CalibrationReport report = evaluate(out, LabelMap(s, 3), config);
        REQUIRE(report.local_avg.ece.has_value());
        CHECK(*report.local_max.ece >= *report.local_avg.ece);
        CHECK(*report.local_max.mce >= *report.local_avg.mce);
    }
    SUBCASE("report JSON round-trips losslessly") {
        Rng rng(84);
        const CalibratedOutput out = random_output(rng, 3, 24, 24);
        Tensor2<label_t> s(24, 24);
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = static_cast<label_t>(rng.below_int(3));
        RegionConfig config;
        config.patch_size = 10;
        config.seed = 5;
        const CalibrationReport report = evaluate(out, LabelMap(s, 3), config);
        const std::string text = report_to_json(report);
        const CalibrationReport back = report_from_json(text);
        CHECK(report_to_json(back) == text);
    }
    SUBCASE("an empty region yields null metrics, not an error") {
        const auto out = output_two_class({0.9, 0.8});
        const LabelMap labels = labels_of({{0, 0}}, 2);  // constant: no boundary
        RegionConfig config;
        config.background = 0;
        const CalibrationReport report = evaluate(out, labels, config);
        CHECK_FALSE(report.boundary.ece.has_value());
        CHECK_FALSE(report.all.ece.has_value());  // all-background map
    }
}
