#pragma once

#include <string>
#include <vector>

#include "calibra/metrics.hpp"
#include "calibra/types.hpp"

namespace calibra {

inline constexpr double kAlphaMin = 1.0 / kTempMax;
inline constexpr double kAlphaMax = kTempMax;

struct ScalarFitResult {
    double temperature = 1.0;
    double final_nll = 0.0;
    int iterations = 0;
    // False when the fit ended on a clamp (the alpha* = 0 branch reports
    // temperature = t_max, the saturated branch 1 / alpha_max).
    bool converged = false;
    enum class Method { Gradient, Bisection } method = Method::Gradient;
};

struct TsFitConfig {
    double lr = 0.1;       // initial step in log-alpha
    int max_iters = 500;
    double tol = 1e-7;     // convergence: |delta log alpha| below this
};

// Gradient descent on NLL in log(1/T) with backtracking line search.
// A flat objective keeps the initialization, T = 1.
ScalarFitResult fit_ts_gradient(const Dataset& data, MaskPolicy policy = MaskPolicy::Everywhere,
                                const TsFitConfig& config = {});

// Solves the equilibrium condition directly: find alpha with
// weighted_avg_logit(alpha) = true-class logit sum, exploiting its
// monotonicity in alpha. Returns T = t_max when the true-class sum does not
// exceed the mean-logit sum (the alpha* = 0 branch).
ScalarFitResult fit_ts_bisection(const Dataset& data, MaskPolicy policy = MaskPolicy::Everywhere);

// Bisection restricted to each image; errors are annotated with sample ids.
// This is the direct per-image optimizer, an oracle for the learned
// image-based predictor.
TemperatureField fit_ibts_per_image(const Dataset& data,
                                    MaskPolicy policy = MaskPolicy::Everywhere);
std::vector<ScalarFitResult> fit_ibts_per_image_detailed(
    const Dataset& data, MaskPolicy policy = MaskPolicy::Everywhere);

// Signed NLL - entropy of the calibrated output; zero at a non-clamped
// fitted optimum.
double equilibrium_residual(const Dataset& data, const TemperatureField& temps,
                            MaskPolicy policy = MaskPolicy::Everywhere);
std::vector<double> equilibrium_residual_per_image(const Dataset& data,
                                                   const TemperatureField& temps,
                                                   MaskPolicy policy = MaskPolicy::Everywhere);
Tensor2<float> equilibrium_residual_map(const LogitMap& logits, const LabelMap& labels,
                                        const SampleTemps& temps);

// Pooled-objective helper shared by the fitters; exposed for tests and the
// theory-verification suites.
class TsObjective {
public:
    TsObjective(const Dataset& data, MaskPolicy policy);

    double nll(double alpha) const;           // total masked NLL at inverse temperature alpha
    double weighted_sum(double alpha) const;  // softmax-weighted logit total
    double true_class_sum() const { return true_sum_; }
    double mean_logit_total() const { return mean_sum_; }
    std::size_t pixel_count() const { return pixels_; }

private:
    struct Pixel {
        std::size_t offset;  // flat spatial index into the sample's logit planes
        label_t label;
    };
    const Dataset& data_;
    std::vector<std::vector<Pixel>> pixels_by_sample_;
    double true_sum_ = 0.0;
    double mean_sum_ = 0.0;
    std::size_t pixels_ = 0;
};

}  // namespace calibra
