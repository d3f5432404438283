#include "calibra/scaling.hpp"

#include <algorithm>
#include <cmath>

#include "calibra/error.hpp"

namespace calibra {

namespace {

constexpr double kLogFloor = 1e-12;

void check_local_shape(const LogitMap& logits, const SampleTemps& temps) {
    if (temps.kind == TempKind::Local) {
        if (temps.field == nullptr)
            throw ValidationError("softmax_temp: local temperatures without a field");
        if (temps.field->rows() != logits.rows() || temps.field->cols() != logits.cols())
            throw ValidationError("softmax_temp: temperature field shape mismatch");
    }
}

void check_mask_shape(const Mask* mask, int rows, int cols) {
    if (mask && (mask->rows() != rows || mask->cols() != cols))
        throw ValidationError("mask shape mismatch");
}

bool selected(const Mask* mask, int y, int x) {
    return mask == nullptr || (*mask)(y, x) != 0;
}

}  // namespace

CalibratedOutput softmax_temp(const LogitMap& logits, const SampleTemps& temps) {
    check_local_shape(logits, temps);
    const int L = logits.classes(), H = logits.rows(), W = logits.cols();

    Tensor3<float> probs(L, H, W);
    Tensor2<float> confidence(H, W);
    Tensor2<label_t> pred(H, W);
    std::vector<double> scaled(static_cast<std::size_t>(L));

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double t = temps.at(y, x);
            if (!(t > 0.0)) throw DomainError("softmax_temp: non-positive temperature");
            // Argmax and max-subtraction both run in f64 so the class
            // ordering of the raw logits survives the scaling exactly.
            double m = -HUGE_VAL;
            int arg = 0;
            for (int l = 0; l < L; ++l) {
                const double u = static_cast<double>(logits(l, y, x)) / t;
                scaled[l] = u;
                if (u > m) {
                    m = u;
                    arg = l;
                }
            }
            double denom = 0.0;
            for (int l = 0; l < L; ++l) {
                scaled[l] = std::exp(scaled[l] - m);
                denom += scaled[l];
            }
            for (int l = 0; l < L; ++l)
                probs(l, y, x) = static_cast<float>(scaled[l] / denom);
            confidence(y, x) = static_cast<float>(scaled[arg] / denom);
            pred(y, x) = static_cast<label_t>(arg);
        }
    }
    return CalibratedOutput{ProbMap(std::move(probs)), std::move(confidence),
                            LabelMap(std::move(pred), L)};
}

CalibratedOutput output_from_probs(ProbMap probs) {
    const int L = probs.classes(), H = probs.rows(), W = probs.cols();
    Tensor2<float> confidence(H, W);
    Tensor2<label_t> pred(H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            float best = probs(0, y, x);
            int arg = 0;
            for (int l = 1; l < L; ++l) {
                if (probs(l, y, x) > best) {
                    best = probs(l, y, x);
                    arg = l;
                }
            }
            confidence(y, x) = best;
            pred(y, x) = static_cast<label_t>(arg);
        }
    }
    return CalibratedOutput{std::move(probs), std::move(confidence),
                            LabelMap(std::move(pred), L)};
}

double nll(const ProbMap& probs, const LabelMap& labels, const Mask* mask) {
    if (probs.rows() != labels.rows() || probs.cols() != labels.cols())
        throw ValidationError("nll: shape mismatch");
    check_mask_shape(mask, probs.rows(), probs.cols());
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < probs.rows(); ++y) {
        for (int x = 0; x < probs.cols(); ++x) {
            if (!selected(mask, y, x) || !labels.supervised(y, x)) continue;
            const double p = std::max(static_cast<double>(probs(labels(y, x), y, x)), kLogFloor);
            sum -= std::log(p);
            ++n;
        }
    }
    if (n == 0) throw DomainError("nll: no supervised pixels");
    return sum;
}

double entropy(const ProbMap& probs, const Mask* mask) {
    check_mask_shape(mask, probs.rows(), probs.cols());
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < probs.rows(); ++y) {
        for (int x = 0; x < probs.cols(); ++x) {
            if (!selected(mask, y, x)) continue;
            ++n;
            for (int l = 0; l < probs.classes(); ++l) {
                const double p = probs(l, y, x);
                if (p > 0.0) sum -= p * std::log(p);
            }
        }
    }
    if (n == 0) throw DomainError("entropy: no supervised pixels");
    return sum;
}

double weighted_avg_logit(const LogitMap& logits, const SampleTemps& temps, const Mask* mask) {
    check_local_shape(logits, temps);
    check_mask_shape(mask, logits.rows(), logits.cols());
    const int L = logits.classes();
    std::vector<double> e(static_cast<std::size_t>(L));
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < logits.rows(); ++y) {
        for (int x = 0; x < logits.cols(); ++x) {
            if (!selected(mask, y, x)) continue;
            const double t = temps.at(y, x);
            if (!(t > 0.0)) throw DomainError("weighted_avg_logit: non-positive temperature");
            double m = -HUGE_VAL;
            for (int l = 0; l < L; ++l)
                m = std::max(m, static_cast<double>(logits(l, y, x)) / t);
            double denom = 0.0;
            for (int l = 0; l < L; ++l) {
                e[l] = std::exp(static_cast<double>(logits(l, y, x)) / t - m);
                denom += e[l];
            }
            double w = 0.0;
            for (int l = 0; l < L; ++l)
                w += static_cast<double>(logits(l, y, x)) * (e[l] / denom);
            sum += w;
            ++n;
        }
    }
    if (n == 0) throw DomainError("weighted_avg_logit: no pixels selected");
    return sum;
}

double weighted_avg_logit_alpha(const LogitMap& logits, double alpha, const Mask* mask) {
    if (alpha <= 0.0) {
        // alpha -> 0 limit: softmax flattens to 1/L, the mean logit.
        return mean_logit_sum(logits, mask);
    }
    return weighted_avg_logit(logits, SampleTemps::scalar(1.0 / alpha), mask);
}

double true_class_logit_sum(const LogitMap& logits, const LabelMap& labels, const Mask* mask) {
    if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
        throw ValidationError("true_class_logit_sum: shape mismatch");
    check_mask_shape(mask, logits.rows(), logits.cols());
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < logits.rows(); ++y) {
        for (int x = 0; x < logits.cols(); ++x) {
            if (!selected(mask, y, x) || !labels.supervised(y, x)) continue;
            sum += logits(labels(y, x), y, x);
            ++n;
        }
    }
    if (n == 0) throw DomainError("true_class_logit_sum: no supervised pixels");
    return sum;
}

double mean_logit_sum(const LogitMap& logits, const Mask* mask) {
    check_mask_shape(mask, logits.rows(), logits.cols());
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < logits.rows(); ++y) {
        for (int x = 0; x < logits.cols(); ++x) {
            if (!selected(mask, y, x)) continue;
            double s = 0.0;
            for (int l = 0; l < logits.classes(); ++l) s += logits(l, y, x);
            sum += s / logits.classes();
            ++n;
        }
    }
    if (n == 0) throw DomainError("mean_logit_sum: no pixels selected");
    return sum;
}

std::string diagnosis_name(Diagnosis d) {
    switch (d) {
        case Diagnosis::Overconfident: return "overconfident";
        case Diagnosis::Underconfident: return "underconfident";
        case Diagnosis::Balanced: return "balanced";
    }
    return "balanced";
}

Diagnosis diagnose(double true_class_sum, double weighted_sum, double tol) {
    const double diff = true_class_sum - weighted_sum;
    if (std::abs(diff) <= tol) return Diagnosis::Balanced;
    return diff < 0.0 ? Diagnosis::Overconfident : Diagnosis::Underconfident;
}

Diagnosis confidence_diagnosis(const LogitMap& logits, const LabelMap& labels,
                               const Mask* mask) {
    const double truth = true_class_logit_sum(logits, labels, mask);
    // The reference point is the uncalibrated model, T = 1; restrict the
    // weighted sum to supervised pixels so both sides cover the same set.
    Mask supervised(labels.rows(), labels.cols(), 0);
    for (int y = 0; y < labels.rows(); ++y)
        for (int x = 0; x < labels.cols(); ++x)
            supervised(y, x) =
                (labels.supervised(y, x) && (mask == nullptr || (*mask)(y, x))) ? 1 : 0;
    const double weighted = weighted_avg_logit(logits, SampleTemps::scalar(1.0), &supervised);
    return diagnose(truth, weighted);
}

Diagnosis confidence_diagnosis(const Dataset& data) {
    double truth = 0.0, weighted = 0.0;
    std::size_t supervised_total = 0;
    for (const Sample& s : data.samples) {
        Mask supervised(s.labels.rows(), s.labels.cols(), 0);
        std::size_t n = 0;
        for (int y = 0; y < s.labels.rows(); ++y)
            for (int x = 0; x < s.labels.cols(); ++x)
                if (s.labels.supervised(y, x)) {
                    supervised(y, x) = 1;
                    ++n;
                }
        if (n == 0) continue;
        supervised_total += n;
        truth += true_class_logit_sum(s.logits, s.labels);
        weighted += weighted_avg_logit(s.logits, SampleTemps::scalar(1.0), &supervised);
    }
    if (supervised_total == 0) throw DomainError("confidence_diagnosis: no supervised pixels");
    return diagnose(truth, weighted);
}

Tensor2<std::int8_t> confidence_diagnosis_map(const LogitMap& logits, const LabelMap& labels) {
    if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
        throw ValidationError("confidence_diagnosis_map: shape mismatch");
    const int L = logits.classes();
    Tensor2<std::int8_t> out(logits.rows(), logits.cols(),
                             static_cast<std::int8_t>(Diagnosis::Balanced));
    std::vector<double> e(static_cast<std::size_t>(L));
    for (int y = 0; y < logits.rows(); ++y) {
        for (int x = 0; x < logits.cols(); ++x) {
            if (!labels.supervised(y, x)) continue;
            double m = -HUGE_VAL;
            for (int l = 0; l < L; ++l)
                m = std::max(m, static_cast<double>(logits(l, y, x)));
            double denom = 0.0;
            for (int l = 0; l < L; ++l) {
                e[l] = std::exp(static_cast<double>(logits(l, y, x)) - m);
                denom += e[l];
            }
            double weighted = 0.0;
            for (int l = 0; l < L; ++l)
                weighted += static_cast<double>(logits(l, y, x)) * (e[l] / denom);
            const double truth = logits(labels(y, x), y, x);
            out(y, x) = static_cast<std::int8_t>(diagnose(truth, weighted));
        }
    }
    return out;
}

}  // namespace calibra
