#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace calibra::verify {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Monotonicity and bounds of the softmax-weighted logit sum over an
// inverse-temperature grid, on random logit vectors.
SuiteResult check_lemma1(std::uint64_t seed, bool sabotage = false);

// Equilibrium solve on synthetic global-k data: bisection residual,
// gradient/bisection agreement, and recovery of the injected scale.
SuiteResult check_thm1(std::uint64_t seed);

// NLL == entropy (per masked pixel, within 1e-4) at the fitted optimum.
SuiteResult check_thm3(std::uint64_t seed);

// Analytic network gradients against central finite differences.
SuiteResult check_gradcheck(std::uint64_t seed);

// Run suites by name ("lemma1", "thm1", "thm3", "gradcheck").
std::vector<SuiteResult> run_suites(const std::vector<std::string>& names, std::uint64_t seed,
                                    bool sabotage = false);

}  // namespace calibra::verify
