#include "calibra/ts_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "calibra/error.hpp"
#include "calibra/scaling.hpp"

namespace calibra {

TsObjective::TsObjective(const Dataset& data, MaskPolicy policy) : data_(data) {
    pixels_by_sample_.reserve(data.samples.size());
    for (const Sample& s : data.samples) {
        const Mask mask = resolve_mask(policy, s.labels, 2, data.background);
        std::vector<Pixel> pixels;
        const int H = s.labels.rows(), W = s.labels.cols(), L = s.logits.classes();
        const std::size_t plane = s.logits.tensor().plane();
        const float* z = s.logits.tensor().data();
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!mask(y, x) || !s.labels.supervised(y, x)) continue;
                const std::size_t off = static_cast<std::size_t>(y) * W + x;
                const label_t lab = s.labels(y, x);
                pixels.push_back(Pixel{off, lab});
                true_sum_ += z[lab * plane + off];
                double mean = 0.0;
                for (int l = 0; l < L; ++l) mean += z[l * plane + off];
                mean_sum_ += mean / L;
            }
        }
        pixels_ += pixels.size();
        pixels_by_sample_.push_back(std::move(pixels));
    }
    if (pixels_ == 0) throw DomainError("ts fit: no supervised pixels");
}

double TsObjective::nll(double alpha) const {
    double total = 0.0;
    for (std::size_t i = 0; i < data_.samples.size(); ++i) {
        const Sample& s = data_.samples[i];
        const int L = s.logits.classes();
        const std::size_t plane = s.logits.tensor().plane();
        const float* z = s.logits.tensor().data();
        for (const Pixel& p : pixels_by_sample_[i]) {
            double m = -HUGE_VAL;
            for (int l = 0; l < L; ++l)
                m = std::max(m, alpha * static_cast<double>(z[l * plane + p.offset]));
            double denom = 0.0;
            for (int l = 0; l < L; ++l)
                denom += std::exp(alpha * static_cast<double>(z[l * plane + p.offset]) - m);
            // log-sum-exp minus the true-class term
            total += m + std::log(denom) -
                     alpha * static_cast<double>(z[p.label * plane + p.offset]);
        }
    }
    return total;
}

double TsObjective::weighted_sum(double alpha) const {
    if (alpha == 0.0) return mean_sum_;
    double total = 0.0;
    for (std::size_t i = 0; i < data_.samples.size(); ++i) {
        const Sample& s = data_.samples[i];
        const int L = s.logits.classes();
        const std::size_t plane = s.logits.tensor().plane();
        const float* z = s.logits.tensor().data();
        for (const Pixel& p : pixels_by_sample_[i]) {
            double m = -HUGE_VAL;
            for (int l = 0; l < L; ++l)
                m = std::max(m, alpha * static_cast<double>(z[l * plane + p.offset]));
            double denom = 0.0, num = 0.0;
            for (int l = 0; l < L; ++l) {
                const double zl = z[l * plane + p.offset];
                const double e = std::exp(alpha * zl - m);
                denom += e;
                num += zl * e;
            }
            total += num / denom;
        }
    }
    return total;
}

ScalarFitResult fit_ts_gradient(const Dataset& data, MaskPolicy policy,
                                const TsFitConfig& config) {
    const TsObjective objective(data, policy);
    const std::size_t n = objective.pixel_count();

    // Descent on log(alpha): scale-free steps, T > 0 for free. The gradient
    // of the mean NLL w.r.t. log(alpha) is alpha * (W(alpha) - trueSum) / n.
    double log_alpha = 0.0;
    double value = objective.nll(std::exp(log_alpha)) / n;
    if (!std::isfinite(value)) throw NumericalError("ts gradient fit: non-finite loss");

    int iters = 0;
    bool converged = false;
    for (; iters < config.max_iters; ++iters) {
        const double alpha = std::exp(log_alpha);
        const double grad =
            alpha * (objective.weighted_sum(alpha) - objective.true_class_sum()) /
            static_cast<double>(n);
        if (!std::isfinite(grad)) throw NumericalError("ts gradient fit: non-finite gradient");
        if (grad == 0.0) {  // flat objective: keep the current point
            converged = true;
            ++iters;
            break;
        }

        // Backtracking line search along -grad, starting from the configured
        // step; guarantees monotone descent on this smooth unimodal slice.
        double step = config.lr;
        double candidate_log_alpha = log_alpha;
        double candidate_value = value;
        bool improved = false;
        for (int bt = 0; bt < 60; ++bt) {
            const double trial = std::clamp(log_alpha - step * grad, std::log(kAlphaMin),
                                            std::log(kAlphaMax));
            const double trial_value = objective.nll(std::exp(trial)) / n;
            if (std::isfinite(trial_value) && trial_value < value) {
                candidate_log_alpha = trial;
                candidate_value = trial_value;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) {  // no descent direction at numerical resolution
            converged = true;
            ++iters;
            break;
        }
        const double delta = std::abs(candidate_log_alpha - log_alpha);
        log_alpha = candidate_log_alpha;
        value = candidate_value;
        if (delta < config.tol) {
            converged = true;
            ++iters;
            break;
        }
    }

    ScalarFitResult result;
    result.method = ScalarFitResult::Method::Gradient;
    const double alpha = std::exp(log_alpha);
    result.temperature = 1.0 / alpha;
    result.final_nll = value * n;
    result.iterations = iters;
    const bool clamped = alpha <= kAlphaMin * (1 + 1e-12) || alpha >= kAlphaMax * (1 - 1e-12);
    result.converged = converged && !clamped;
    return result;
}

namespace {

ScalarFitResult bisect_equilibrium(const TsObjective& objective) {
    ScalarFitResult result;
    result.method = ScalarFitResult::Method::Bisection;

    const double target = objective.true_class_sum();
    const double tol = 1e-8 * std::max(std::abs(target), 1e-12);

    // Theorem case alpha* = 0: represented at the temperature ceiling.
    if (target <= objective.mean_logit_total()) {
        result.temperature = kTempMax;
        result.final_nll = objective.nll(1.0 / kTempMax);
        result.iterations = 0;
        result.converged = false;
        return result;
    }

    auto g = [&](double alpha) { return objective.weighted_sum(alpha) - target; };

    double lo = kAlphaMin, hi = kAlphaMax;
    double g_lo = g(lo), g_hi = g(hi);
    if (std::isnan(g_lo) || std::isnan(g_hi))
        throw NumericalError("ts bisection: non-finite equilibrium residual");

    if (g_lo >= 0.0) {  // solution below the bracket: clamp at t_max
        result.temperature = kTempMax;
        result.final_nll = objective.nll(kAlphaMin);
        result.converged = false;
        return result;
    }
    if (g_hi <= 0.0) {  // saturated: the weighted sum cannot reach the target
        result.temperature = 1.0 / kAlphaMax;
        result.final_nll = objective.nll(kAlphaMax);
        result.converged = false;
        return result;
    }

    double mid = 0.5 * (lo + hi);
    int iters = 0;
    for (; iters < 400; ++iters) {
        mid = 0.5 * (lo + hi);
        const double g_mid = g(mid);
        if (std::isnan(g_mid)) throw NumericalError("ts bisection: non-finite residual");
        if (std::abs(g_mid) < tol) break;
        if (g_mid < 0.0)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= std::numeric_limits<double>::epsilon() * hi) break;
    }

    result.temperature = 1.0 / mid;
    result.final_nll = objective.nll(mid);
    result.iterations = iters;
    result.converged = std::abs(g(mid)) < tol;
    if (!result.converged)
        throw NumericalError("ts bisection: residual tolerance not reached");
    return result;
}

}  // namespace

ScalarFitResult fit_ts_bisection(const Dataset& data, MaskPolicy policy) {
    return bisect_equilibrium(TsObjective(data, policy));
}

std::vector<ScalarFitResult> fit_ibts_per_image_detailed(const Dataset& data,
                                                         MaskPolicy policy) {
    std::vector<ScalarFitResult> results;
    results.reserve(data.samples.size());
    for (const Sample& s : data.samples) {
        Dataset single;
        single.split = data.split;
        single.classes = data.classes;
        single.background = data.background;
        single.samples.push_back(s);
        try {
            results.push_back(bisect_equilibrium(TsObjective(single, policy)));
        } catch (const DomainError& e) {
            throw DomainError(s.id + ": " + e.what());
        } catch (const NumericalError& e) {
            throw NumericalError(s.id + ": " + e.what());
        }
    }
    return results;
}

TemperatureField fit_ibts_per_image(const Dataset& data, MaskPolicy policy) {
    const auto detailed = fit_ibts_per_image_detailed(data, policy);
    std::vector<double> temps;
    temps.reserve(detailed.size());
    for (const ScalarFitResult& r : detailed) temps.push_back(r.temperature);
    return TemperatureField::per_image(std::move(temps));
}

double equilibrium_residual(const Dataset& data, const TemperatureField& temps,
                            MaskPolicy policy) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const Sample& s = data.samples[i];
        const Mask mask = resolve_mask(policy, s.labels, 2, data.background);
        const CalibratedOutput out = softmax_temp(s.logits, temps.for_sample(i));
        Mask supervised(mask.rows(), mask.cols(), 0);
        for (int y = 0; y < mask.rows(); ++y)
            for (int x = 0; x < mask.cols(); ++x)
                supervised(y, x) = (mask(y, x) && s.labels.supervised(y, x)) ? 1 : 0;
        if (mask_count(supervised) == 0) continue;
        total += nll(out.probs, s.labels, &supervised) - entropy(out.probs, &supervised);
    }
    return total;
}

std::vector<double> equilibrium_residual_per_image(const Dataset& data,
                                                   const TemperatureField& temps,
                                                   MaskPolicy policy) {
    std::vector<double> residuals;
    residuals.reserve(data.samples.size());
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        Dataset single;
        single.split = data.split;
        single.classes = data.classes;
        single.background = data.background;
        single.samples.push_back(data.samples[i]);
        const TemperatureField slice =
            temps.kind() == TempKind::Local
                ? TemperatureField::local({temps.field(i)}, temps.t_max())
                : TemperatureField::global(temps.scalar(i), temps.t_max());
        residuals.push_back(equilibrium_residual(single, slice, policy));
    }
    return residuals;
}

Tensor2<float> equilibrium_residual_map(const LogitMap& logits, const LabelMap& labels,
                                        const SampleTemps& temps) {
    const CalibratedOutput out = softmax_temp(logits, temps);
    Tensor2<float> residual(logits.rows(), logits.cols(), 0.0f);
    for (int y = 0; y < logits.rows(); ++y) {
        for (int x = 0; x < logits.cols(); ++x) {
            if (!labels.supervised(y, x)) continue;
            const double p_true =
                std::max(static_cast<double>(out.probs(labels(y, x), y, x)), 1e-12);
            double h = 0.0;
            for (int l = 0; l < logits.classes(); ++l) {
                const double p = out.probs(l, y, x);
                if (p > 0.0) h -= p * std::log(p);
            }
            residual(y, x) = static_cast<float>(-std::log(p_true) - h);
        }
    }
    return residual;
}

}  // namespace calibra
