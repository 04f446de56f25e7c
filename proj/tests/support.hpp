#pragma once

#include "mhd/nn.hpp"
#include "mhd/rng.hpp"

#include <random>

namespace mhd::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sigma = 1.0) {
    std::normal_distribution<double> n(0.0, sigma);
    Matrix m(r, c);
    for (double& v : m.data) v = n(rng);
    return m;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double sigma = 1.0) {
    std::normal_distribution<double> dist(0.0, sigma);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// Straight-line forward pass written independently of the kernels.
inline std::vector<std::vector<double>> naive_forward(const nn::ClientModel& m, std::span<const double> x,
                                                      std::vector<double>* embedding = nullptr) {
    std::vector<double> h(x.begin(), x.end());
    for (const auto& layer : m.backbone.layers) {
        std::vector<double> z(layer.linear.out_dim());
        for (std::size_t o = 0; o < z.size(); ++o) {
            double s = layer.linear.bias[o];
            for (std::size_t i = 0; i < h.size(); ++i) s += layer.linear.weight(o, i) * h[i];
            z[o] = layer.activation == nn::Activation::relu ? std::max(0.0, s) : s;
        }
        h = z;
    }
    if (embedding) *embedding = h;
    std::vector<std::vector<double>> logits;
    for (std::size_t r = 0; r < m.num_heads(); ++r) {
        const auto& head = m.head(r);
        std::vector<double> z(head.out_dim());
        for (std::size_t o = 0; o < z.size(); ++o) {
            double s = head.bias[o];
            for (std::size_t i = 0; i < h.size(); ++i) s += head.weight(o, i) * h[i];
            z[o] = s;
        }
        logits.push_back(z);
    }
    return logits;
}

}  // namespace mhd::test
