#pragma once

#include <vector>

#include "calibra/types.hpp"

namespace calibra {

// Calibrated probabilities plus the derived confidence / prediction maps.
// pred_labels always match the raw-logit argmax: positive temperatures are
// monotone, so the class ordering never changes.
struct CalibratedOutput {
    ProbMap probs;
    Tensor2<float> confidence;
    LabelMap pred_labels;
};

// Temperature-scaled softmax with max-subtraction stabilization. Throws
// DomainError on a non-positive temperature, ValidationError on a local
// field whose shape does not match the logits.
CalibratedOutput softmax_temp(const LogitMap& logits, const SampleTemps& temps);

// Derives confidence/argmax from an existing probability map (tie on the
// max picks the lowest class index).
CalibratedOutput output_from_probs(ProbMap probs);

// Masked negative log-likelihood, f64 accumulation, log floored at 1e-12.
// mask == nullptr means every supervised pixel. Throws DomainError when no
// supervised pixel is selected.
double nll(const ProbMap& probs, const LabelMap& labels, const Mask* mask = nullptr);

// Masked Shannon entropy of the probability field, 0*log(0) := 0. Unlike
// nll this needs no labels, so an optional mask is the only restriction.
double entropy(const ProbMap& probs, const Mask* mask = nullptr);

// Sum over masked pixels of sum_l z_l * softmax(z/T)_l: the softmax-weighted
// logit total whose monotonicity in 1/T drives the equilibrium solvers.
double weighted_avg_logit(const LogitMap& logits, const SampleTemps& temps,
                          const Mask* mask = nullptr);

// Convenience overload in the inverse-temperature parameterization.
double weighted_avg_logit_alpha(const LogitMap& logits, double alpha,
                                const Mask* mask = nullptr);

// Sum over masked pixels of the true class' logit.
double true_class_logit_sum(const LogitMap& logits, const LabelMap& labels,
                            const Mask* mask = nullptr);

// Mean logit summed over masked pixels: sum_x (1/L) sum_l z_l(x).
double mean_logit_sum(const LogitMap& logits, const Mask* mask = nullptr);

enum class Diagnosis { Overconfident, Underconfident, Balanced };

std::string diagnosis_name(Diagnosis d);

// Core rule: overconfident when the true-class logit total is strictly below
// the softmax-weighted logit total at T = 1; balanced within 1e-9.
Diagnosis diagnose(double true_class_sum, double weighted_sum, double tol = 1e-9);

// Per-image diagnosis.
Diagnosis confidence_diagnosis(const LogitMap& logits, const LabelMap& labels,
                               const Mask* mask = nullptr);

// Global diagnosis across a dataset (sums pooled over samples).
Diagnosis confidence_diagnosis(const Dataset& data);

// Per-pixel diagnosis map; ignore-labeled pixels get Balanced.
Tensor2<std::int8_t> confidence_diagnosis_map(const LogitMap& logits, const LabelMap& labels);

}  // namespace calibra
