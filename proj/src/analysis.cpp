#include "mhd/analysis.hpp"

#include "mhd/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mhd::analysis {
namespace {

std::vector<double> logits_of(const nn::HeadParams& head, std::span<const double> x) {
    std::vector<double> z(head.out_dim());
    for (std::size_t k = 0; k < z.size(); ++k) {
        double s = head.bias[k];
        for (std::size_t i = 0; i < x.size(); ++i) s += head.weight(k, i) * x[i];
        z[k] = s;
    }
    return z;
}

}  // namespace

PerturbationResult softmax_perturbation_residual(const PerturbationCase& c) {
    const std::size_t d = c.logits.size();
    if (d < 2) throw InputError("softmax_perturbation_residual: need at least 2 classes");
    if (c.perturbation.size() != d) throw InputError("softmax_perturbation_residual: κ has the wrong length");
    for (std::size_t i = 0; i < c.scales.size(); ++i) {
        if (!(c.scales[i] > 0.0)) throw InputError("softmax_perturbation_residual: scales must be positive");
        if (i > 0 && !(c.scales[i] < c.scales[i - 1]))
            throw InputError("softmax_perturbation_residual: scales must be decreasing");
    }

    const auto p = nn::softmax(c.logits);
    double kp = 0.0;
    for (std::size_t m = 0; m < d; ++m) kp += c.perturbation[m] * p[m];
    PerturbationResult out;
    out.linear_term.resize(d);
    for (std::size_t m = 0; m < d; ++m) {
        out.linear_term[m] = c.perturbation[m] * p[m] - kp * p[m];
        out.linear_term_sum += out.linear_term[m];
    }

    std::vector<double> shifted(d);
    for (double eps : c.scales) {
        for (std::size_t m = 0; m < d; ++m) shifted[m] = c.logits[m] + eps * c.perturbation[m];
        const auto q = nn::softmax(shifted);
        double sq = 0.0;
        for (std::size_t m = 0; m < d; ++m) {
            const double r = q[m] - p[m] - eps * out.linear_term[m];
            sq += r * r;
        }
        out.residuals.push_back(std::sqrt(sq));
    }
    return out;
}

std::vector<double> successive_ratios(std::span<const double> values) {
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) out.push_back(values[i + 1] != 0.0 ? values[i] / values[i + 1] : 0.0);
    return out;
}

std::vector<double> stationary_residual(std::span<const Matrix> tables, const Matrix& nu) {
    const std::size_t n = tables.size();
    if (n == 0) throw InputError("stationary_residual: no probability tables");
    if (nu.rows != n || nu.cols != n) throw InputError("stationary_residual: ν must be n × n");
    const std::size_t samples = tables[0].rows;
    const std::size_t d = tables[0].cols;
    for (const auto& t : tables)
        if (t.rows != samples || t.cols != d) throw InputError("stationary_residual: table shapes differ");
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        double scale = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s += nu(i, j);
            scale += std::abs(nu(i, j));
        }
        if (std::abs(s) > 1e-12 * std::max(1.0, scale))
            throw InputError("stationary_residual: row " + std::to_string(i) + " of ν sums to " + std::to_string(s));
    }
    std::vector<double> out(d, 0.0);
    if (samples == 0) return out;
    // Σ_m p_{j,m}(δ_mk − p_{i,k}) collapses to p_{j,k} − p_{i,k} for normalized p_j.
    for (std::size_t x = 0; x < samples; ++x)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (nu(i, j) == 0.0) continue;
                for (std::size_t k = 0; k < d; ++k) out[k] += nu(i, j) * (tables[j](x, k) - tables[i](x, k));
            }
    for (double& v : out) v /= static_cast<double>(samples);
    return out;
}

ConfidenceUpdate confidence_update_check(const nn::HeadParams& head, std::span<const double> xi,
                                         std::span<const double> xi_prime, int label, double lr) {
    const std::size_t d = head.out_dim();
    if (xi.size() != head.in_dim() || xi_prime.size() != head.in_dim())
        throw InputError("confidence_update_check: embedding size differs from the head input");
    if (label < 0 || static_cast<std::size_t>(label) >= d) throw InputError("confidence_update_check: label out of range");

    const auto o = nn::softmax(logits_of(head, xi));
    const auto o_prime = nn::softmax(logits_of(head, xi_prime));
    double dot = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i) dot += xi[i] * xi_prime[i];

    ConfidenceUpdate out;
    out.predicted.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double a = (k == i ? 1.0 : 0.0) - o_prime[i];
            const double b = (static_cast<std::size_t>(label) == i ? 1.0 : 0.0) - o[i];
            s += a * b;
        }
        out.predicted[k] = lr * o_prime[k] * dot * s;
    }

    // ∂CE/∂W = (o − e_y) ξᵀ
    nn::HeadParams stepped = head;
    for (std::size_t k = 0; k < d; ++k) {
        const double g = o[k] - (static_cast<std::size_t>(label) == k ? 1.0 : 0.0);
        for (std::size_t i = 0; i < xi.size(); ++i) stepped.weight(k, i) -= lr * g * xi[i];
    }
    const auto after = nn::softmax(logits_of(stepped, xi_prime));
    out.actual.resize(d);
    for (std::size_t k = 0; k < d; ++k) out.actual[k] = after[k] - o_prime[k];
    return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InputError("max_abs_diff: length mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace mhd::analysis
