#include "calibra/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "calibra/error.hpp"
#include "calibra/rng.hpp"
#include "calibra/synthgen.hpp"
#include "calibra/tree_net.hpp"
#include "calibra/ts_opt.hpp"

namespace calibra::verify {

namespace {

double weighted_logits(const std::vector<double>& z, double alpha) {
    double m = -HUGE_VAL;
    for (double v : z) m = std::max(m, alpha * v);
    double denom = 0.0, num = 0.0;
    for (double v : z) {
        const double e = std::exp(alpha * v - m);
        denom += e;
        num += v * e;
    }
    return num / denom;
}

SynthSpec preset_global(double k, std::uint64_t seed) {
    SynthSpec spec;
    spec.rows = 64;
    spec.cols = 64;
    spec.classes = 4;
    spec.scene = Scene::Stripes;
    spec.miscal = MiscalSpec::parse("global:" + std::to_string(k));
    spec.seed = seed;
    spec.train_count = 0;
    spec.val_count = 20;
    spec.test_count = 0;
    spec.with_image = false;
    return spec;
}

const double kGlobalPresets[4] = {0.5, 2.0, 3.0, 5.0};

}  // namespace

SuiteResult check_lemma1(std::uint64_t seed, bool sabotage) {
    Rng rng(mix_seed(seed, 1));
    constexpr int kVectors = 1000;
    constexpr int kGridPoints = 50;
    constexpr double kTol = 1e-9;

    std::vector<double> grid(kGridPoints);
    for (int i = 0; i < kGridPoints; ++i)
        grid[i] = std::pow(10.0, -4.0 + 8.0 * i / (kGridPoints - 1));

    int monotonic_failures = 0, bound_failures = 0;
    for (int v = 0; v < kVectors; ++v) {
        const int L = 2 + rng.below_int(5);
        std::vector<double> z(static_cast<std::size_t>(L));
        for (double& zi : z) zi = rng.normal(0.0, 2.0);
        const double mean = std::accumulate(z.begin(), z.end(), 0.0) / L;
        const double peak = *std::max_element(z.begin(), z.end());

        double prev = -HUGE_VAL;
        for (double alpha : grid) {
            const double w = weighted_logits(z, alpha);
            const bool decreased = sabotage ? w > prev + kTol : w < prev - kTol;
            if (decreased) ++monotonic_failures;
            prev = w;
            if (w < mean - kTol || w > peak + kTol) ++bound_failures;
        }
    }

    SuiteResult result;
    result.name = "lemma1";
    result.pass = monotonic_failures == 0 && bound_failures == 0;
    std::ostringstream detail;
    detail << kVectors << " vectors x " << kGridPoints << " grid points; "
           << monotonic_failures << " monotonicity violations, " << bound_failures
           << " bound violations";
    result.detail = detail.str();
    return result;
}

SuiteResult check_thm1(std::uint64_t seed) {
    SuiteResult result;
    result.name = "thm1";
    result.pass = true;
    std::ostringstream detail;

    for (double k : kGlobalPresets) {
        const GeneratedData data = generate(preset_global(k, seed));
        const TsObjective objective(data.val, MaskPolicy::Everywhere);
        const ScalarFitResult bisect = fit_ts_bisection(data.val);
        const ScalarFitResult grad = fit_ts_gradient(data.val);

        const double residual =
            std::abs(objective.weighted_sum(1.0 / bisect.temperature) -
                     objective.true_class_sum());
        const double residual_limit = 1e-8 * std::abs(objective.true_class_sum());
        const double method_gap =
            std::abs(grad.temperature - bisect.temperature) / bisect.temperature;
        const double recovery = std::abs(bisect.temperature - k) / k;

        const bool ok = residual < residual_limit && method_gap < 1e-3 && recovery < 1e-2;
        result.pass = result.pass && ok;
        detail << "k=" << k << ": T=" << bisect.temperature << " residual=" << residual
               << " gap=" << method_gap << " recovery=" << recovery << (ok ? " ok" : " FAIL")
               << "; ";
    }
    result.detail = detail.str();
    return result;
}

SuiteResult check_thm3(std::uint64_t seed) {
    SuiteResult result;
    result.name = "thm3";
    result.pass = true;
    std::ostringstream detail;

    for (double k : kGlobalPresets) {
        const GeneratedData data = generate(preset_global(k, seed));
        const ScalarFitResult fit = fit_ts_bisection(data.val);
        if (!fit.converged) {
            result.pass = false;
            detail << "k=" << k << ": clamped fit; ";
            continue;
        }
        const TsObjective objective(data.val, MaskPolicy::Everywhere);
        const TemperatureField temps = TemperatureField::global(fit.temperature);
        const double residual = equilibrium_residual(data.val, temps) /
                                static_cast<double>(objective.pixel_count());
        const bool ok = std::abs(residual) < 1e-4;
        result.pass = result.pass && ok;
        detail << "k=" << k << ": |nll-entropy|/px=" << std::abs(residual)
               << (ok ? " ok" : " FAIL") << "; ";
    }
    result.detail = detail.str();
    return result;
}

SuiteResult check_gradcheck(std::uint64_t seed) {
    constexpr int kSeeds = 20;
    constexpr double kStep = 1e-4;
    constexpr double kRelTol = 1e-4;

    std::size_t checked = 0, passed = 0, excluded = 0;
    for (int trial = 0; trial < kSeeds; ++trial) {
        Rng rng(mix_seed(seed, 100 + static_cast<std::uint64_t>(trial)));
        const int L = 3, H = 8, W = 8, C = 1;

        Tensor3<float> z(L, H, W);
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] = static_cast<float>(rng.normal(0.0, 1.0));
        Tensor3<float> img(C, H, W);
        for (std::size_t i = 0; i < img.size(); ++i)
            img[i] = static_cast<float>(rng.normal(0.0, 1.0));
        Tensor2<label_t> labels(H, W);
        for (std::size_t i = 0; i < labels.size(); ++i)
            labels[i] = static_cast<label_t>(rng.below_int(L));

        const LogitMap logits(std::move(z));
        const ImageTensor image(std::move(img));
        const LabelMap label_map(std::move(labels), L);

        TreeNetParams params = TreeNetParams::zeros(L, C);
        for (double* p : params.parameter_view()) *p = rng.normal(0.0, 0.1);

        const ForwardCache cache = forward(params, logits, &image);
        const BackwardResult bw =
            backward(params, cache, logits, &image, label_map, nullptr, NetMode::Lts);

        auto param_view = params.parameter_view();
        auto grad_view = bw.grads.parameter_view();
        for (std::size_t i = 0; i < param_view.size(); ++i) {
            const double original = *param_view[i];
            Mask active_hi, active_lo;
            *param_view[i] = original + kStep;
            const double hi =
                tree_loss(params, logits, &image, label_map, nullptr, NetMode::Lts, &active_hi);
            *param_view[i] = original - kStep;
            const double lo =
                tree_loss(params, logits, &image, label_map, nullptr, NetMode::Lts, &active_lo);
            *param_view[i] = original;

            if (!(active_hi == active_lo)) {  // perturbation crossed a ReLU kink
                ++excluded;
                continue;
            }
            const double fd = (hi - lo) / (2.0 * kStep);
            const double an = *grad_view[i];
            ++checked;
            const double scale = std::max(std::abs(fd), std::abs(an));
            if (scale < 1e-7 || std::abs(fd - an) <= kRelTol * scale) ++passed;
        }
    }

    SuiteResult result;
    result.name = "gradcheck";
    const double fraction =
        checked > 0 ? static_cast<double>(passed) / static_cast<double>(checked) : 0.0;
    result.pass = checked > 0 && fraction >= 0.99;
    std::ostringstream detail;
    detail << passed << "/" << checked << " parameters within " << kRelTol
           << " relative (" << excluded << " kink-adjacent excluded)";
    result.detail = detail.str();
    return result;
}

std::vector<SuiteResult> run_suites(const std::vector<std::string>& names, std::uint64_t seed,
                                    bool sabotage) {
    std::vector<SuiteResult> results;
    for (const std::string& name : names) {
        if (name == "lemma1")
            results.push_back(check_lemma1(seed, sabotage));
        else if (name == "thm1")
            results.push_back(check_thm1(seed));
        else if (name == "thm3")
            results.push_back(check_thm3(seed));
        else if (name == "gradcheck")
            results.push_back(check_gradcheck(seed));
        else
            throw ValidationError("unknown verify suite '" + name + "'");
    }
    return results;
}

}  // namespace calibra::verify
