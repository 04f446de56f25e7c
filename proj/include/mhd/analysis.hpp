#pragma once

#include "mhd/nn.hpp"
#include "mhd/tensor.hpp"

#include <span>
#include <vector>

// Numerical checks of the distillation dynamics: first-order softmax
// perturbation, the stationary condition of the aux-head system and the
// one-step confidence update of a logits layer.
namespace mhd::analysis {

struct PerturbationCase {
    std::vector<double> logits;         // h
    std::vector<double> perturbation;   // κ
    std::vector<double> scales;         // ε ladder, positive and decreasing
};

struct PerturbationResult {
    std::vector<double> linear_term;  // κ*p − (κ·p)p
    double linear_term_sum = 0.0;
    std::vector<double> residuals;    // one per scale
};

// residual(ε) = ‖softmax(h+εκ) − softmax(h) − ε·(κ*p − (κ·p)p)‖₂
PerturbationResult softmax_perturbation_residual(const PerturbationCase& c);

// ratios[i] = residuals[i] / residuals[i+1]; 0 when the denominator is 0.
std::vector<double> successive_ratios(std::span<const double> values);

// tables[i] is model i's probabilities over the public set, [N × d]; nu is
// n × n with zero row sums. Returns the d-vector
//   (1/N) Σ_x Σ_{i,j} ν_ij Σ_m p_{j,m}(x) (δ_mk − p_{i,k}(x)).
std::vector<double> stationary_residual(std::span<const Matrix> tables, const Matrix& nu);

struct ConfidenceUpdate {
    std::vector<double> predicted;  // first-order Δo(x′)
    std::vector<double> actual;     // after one real SGD step on W
};

// One CE step on the weights of `head` for (ξ, y) at rate λ (bias frozen),
// compared with the first-order prediction of the change in o(x′).
ConfidenceUpdate confidence_update_check(const nn::HeadParams& head, std::span<const double> xi,
                                         std::span<const double> xi_prime, int label, double lr);

double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace mhd::analysis
