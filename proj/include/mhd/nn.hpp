#pragma once

#include "mhd/rng.hpp"
#include "mhd/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

// Dense-network engine: MLP backbone producing an embedding, a stack of
// linear classifier heads on top of it, manual backprop and SGD with momentum.
namespace mhd::nn {

enum class Activation { relu, identity };

// y = x · Wᵀ + b, with W stored [out × in].
struct Linear {
    Matrix weight;
    std::vector<double> bias;

    std::size_t in_dim() const { return weight.cols; }
    std::size_t out_dim() const { return weight.rows; }
    friend bool operator==(const Linear&, const Linear&) = default;
};

struct BackboneLayer {
    Linear linear;
    Activation activation = Activation::relu;
    friend bool operator==(const BackboneLayer&, const BackboneLayer&) = default;
};

// Hidden layers use ReLU; the last layer is linear and its output is the
// embedding that heads (and embedding distillation) consume.
struct BackboneParams {
    std::vector<BackboneLayer> layers;

    std::size_t input_dim() const { return layers.front().linear.in_dim(); }
    std::size_t embedding_dim() const { return layers.back().linear.out_dim(); }
    friend bool operator==(const BackboneParams&, const BackboneParams&) = default;
};

using HeadParams = Linear;

struct ClientModel {
    int client_id = 0;
    BackboneParams backbone;
    HeadParams main_head;
    std::vector<HeadParams> aux_heads;

    std::size_t num_heads() const { return 1 + aux_heads.size(); }
    std::size_t num_aux_heads() const { return aux_heads.size(); }
    std::size_t num_classes() const { return main_head.out_dim(); }
    std::size_t input_dim() const { return backbone.input_dim(); }
    std::size_t embedding_dim() const { return backbone.embedding_dim(); }

    // Rank 0 is the main head, rank k ≥ 1 is auxiliary head k.
    const HeadParams& head(std::size_t rank) const { return rank == 0 ? main_head : aux_heads.at(rank - 1); }
    HeadParams& head(std::size_t rank) { return rank == 0 ? main_head : aux_heads.at(rank - 1); }

    friend bool operator==(const ClientModel&, const ClientModel&) = default;
};

struct ModelArch {
    std::size_t input_dim = 16;
    std::vector<std::size_t> hidden{256};
    std::size_t embedding_dim = 16;
    std::size_t num_classes = 20;
    std::size_t num_aux_heads = 1;
};

// Glorot-uniform weights, zero biases.
ClientModel make_model(const ModelArch& arch, int client_id, Rng& rng);

// Same architecture, every parameter zero.
ClientModel zeros_like(const ClientModel& model);

// Throws ConfigError when layer shapes do not chain or heads disagree with
// the embedding size or class count.
void validate(const ClientModel& model);

bool same_architecture(const ClientModel& a, const ClientModel& b);

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<double> values;
};
struct ConstNamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<const double> values;
};

// All parameter tensors in a fixed order ("backbone.0.weight", ...,
// "head.main.bias", "head.aux1.weight", ...).
std::vector<NamedTensor> tensors(ClientModel& model);
std::vector<ConstNamedTensor> tensors(const ClientModel& model);
std::size_t parameter_count(const ClientModel& model);

struct ForwardResult {
    Matrix embeddings;             // [B × embedding_dim]
    std::vector<Matrix> logits;    // 1 + m entries, each [B × d]
};

// Layer inputs and pre-activations kept for the backward pass.
struct ForwardCache {
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre_activations;
};

ForwardResult forward(const ClientModel& model, const Matrix& batch);
ForwardResult forward(const ClientModel& model, const Matrix& batch, ForwardCache& cache);

// Parameter gradients given upstream gradients on each head's logits (one per
// head; an empty matrix means zero) and an optional direct gradient on the
// embedding. Result has the model's shape.
ClientModel backward(const ClientModel& model, const ForwardCache& cache, std::span<const Matrix> logit_grads,
                     const Matrix* embedding_grad = nullptr);

std::vector<double> softmax(std::span<const double> logits);
Matrix softmax_rows(const Matrix& logits);

struct LossGrad {
    double loss = 0.0;
    Matrix grad;
};

// Mean cross-entropy over the batch; grad = (softmax − onehot) / B.
LossGrad cross_entropy_grad(const Matrix& logits, std::span<const int> labels);

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

struct OptState {
    ClientModel momentum;
    std::size_t step = 0;
    double base_lr = 0.05;
    double momentum_coef = 0.9;
    std::size_t total_steps = 1;
};

OptState make_opt_state(const ClientModel& model, double base_lr, double momentum_coef, std::size_t total_steps);

// v ← μ·v + g; θ ← θ − lr(t)·v; t ← t + 1 (saturating at total_steps).
void sgd_step(ClientModel& params, const ClientModel& grads, OptState& opt);

struct LossAndGrad {
    double loss = 0.0;
    ClientModel grads;
};
using LossClosure = std::function<LossAndGrad(const ClientModel&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    bool passed = false;
};

struct GradCheckOptions {
    double eps = 1e-4;
    double tol = 1e-5;
    // Entries sampled per tensor; 0 checks every entry.
    std::size_t samples_per_tensor = 0;
    // Denominator floor of the relative error, so vanishing gradients are
    // judged on absolute error.
    double rel_floor = 1e-3;
    std::uint64_t seed = 0;
    // When set, entries whose ±eps probes change the returned pattern (a ReLU
    // switching side) are non-differentiable there and are skipped.
    std::function<std::vector<bool>(const ClientModel&)> activation_pattern;
};

// Sign pattern of every ReLU pre-activation for `batch`.
std::vector<bool> relu_pattern(const ClientModel& model, const Matrix& batch);

// Compares the closure's analytic gradient with central differences.
GradCheckReport grad_check(const ClientModel& model, const LossClosure& closure, const GradCheckOptions& options);

}  // namespace mhd::nn
