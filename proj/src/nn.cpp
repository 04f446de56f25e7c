#include "mhd/nn.hpp"

#include "mhd/error.hpp"
#include "mhd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mhd::nn {
namespace {

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
    Linear l{Matrix(out, in), std::vector<double>(out, 0.0)};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : l.weight.data) w = dist(rng);
    return l;
}

Linear zero_linear(const Linear& like) {
    return Linear{Matrix(like.weight.rows, like.weight.cols), std::vector<double>(like.bias.size(), 0.0)};
}

void check_linear(const Linear& l, const std::string& what) {
    if (l.weight.rows == 0 || l.weight.cols == 0) throw ConfigError(what + ": empty weight matrix");
    if (l.bias.size() != l.weight.rows) throw ConfigError(what + ": bias length does not match output size");
    for (double v : l.weight.data)
        if (!std::isfinite(v)) throw ConfigError(what + ": non-finite weight");
    for (double v : l.bias)
        if (!std::isfinite(v)) throw ConfigError(what + ": non-finite bias");
}

std::vector<std::size_t> shape_of(const Matrix& m) { return {m.rows, m.cols}; }

template <class Model, class Out>
void collect(Model& model, Out& out) {
    auto& bb = model.backbone.layers;
    for (std::size_t i = 0; i < bb.size(); ++i) {
        const std::string p = "backbone." + std::to_string(i);
        out.push_back({p + ".weight", shape_of(bb[i].linear.weight), bb[i].linear.weight.data});
        out.push_back({p + ".bias", {bb[i].linear.bias.size()}, bb[i].linear.bias});
    }
    for (std::size_t r = 0; r < model.num_heads(); ++r) {
        auto& h = model.head(r);
        const std::string p = r == 0 ? std::string("head.main") : "head.aux" + std::to_string(r);
        out.push_back({p + ".weight", shape_of(h.weight), h.weight.data});
        out.push_back({p + ".bias", {h.bias.size()}, h.bias});
    }
}

// Adds Gᵀ·x into dW and column sums of G into db.
void linear_param_grads(const Matrix& upstream, const Matrix& input, Linear& grad) {
    kernels::matmul_tn_accumulate(kernels::default_backend(), upstream, input, grad.weight);
    kernels::column_sums_accumulate(upstream, grad.bias);
}

}  // namespace

ClientModel make_model(const ModelArch& arch, int client_id, Rng& rng) {
    if (arch.input_dim == 0 || arch.embedding_dim == 0) throw ConfigError("model: input_dim and embedding_dim must be positive");
    if (arch.num_classes < 2) throw ConfigError("model: need at least 2 classes");
    ClientModel m;
    m.client_id = client_id;
    std::size_t in = arch.input_dim;
    for (std::size_t width : arch.hidden) {
        if (width == 0) throw ConfigError("model: hidden width must be positive");
        m.backbone.layers.push_back({make_linear(in, width, rng), Activation::relu});
        in = width;
    }
    m.backbone.layers.push_back({make_linear(in, arch.embedding_dim, rng), Activation::identity});
    m.main_head = make_linear(arch.embedding_dim, arch.num_classes, rng);
    for (std::size_t k = 0; k < arch.num_aux_heads; ++k)
        m.aux_heads.push_back(make_linear(arch.embedding_dim, arch.num_classes, rng));
    return m;
}

ClientModel zeros_like(const ClientModel& model) {
    ClientModel z;
    z.client_id = model.client_id;
    for (const auto& layer : model.backbone.layers) z.backbone.layers.push_back({zero_linear(layer.linear), layer.activation});
    z.main_head = zero_linear(model.main_head);
    for (const auto& h : model.aux_heads) z.aux_heads.push_back(zero_linear(h));
    return z;
}

void validate(const ClientModel& model) {
    const auto& layers = model.backbone.layers;
    if (layers.empty()) throw ConfigError("model: backbone has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        check_linear(layers[i].linear, "backbone." + std::to_string(i));
        if (i > 0 && layers[i].linear.in_dim() != layers[i - 1].linear.out_dim())
            throw ConfigError("backbone." + std::to_string(i) + ": input size does not chain with previous layer");
        const bool last = i + 1 == layers.size();
        if (last && layers[i].activation != Activation::identity)
            throw ConfigError("backbone: embedding layer must be linear");
    }
    const std::size_t e = model.embedding_dim();
    const std::size_t d = model.main_head.out_dim();
    for (std::size_t r = 0; r < model.num_heads(); ++r) {
        const auto& h = model.head(r);
        check_linear(h, "head " + std::to_string(r));
        if (h.in_dim() != e) throw ConfigError("head " + std::to_string(r) + ": input size differs from embedding_dim");
        if (h.out_dim() != d) throw ConfigError("head " + std::to_string(r) + ": class count differs from main head");
    }
}

bool same_architecture(const ClientModel& a, const ClientModel& b) {
    const auto ta = tensors(a);
    const auto tb = tensors(b);
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (ta[i].name != tb[i].name || ta[i].shape != tb[i].shape) return false;
    for (std::size_t i = 0; i < a.backbone.layers.size(); ++i)
        if (a.backbone.layers[i].activation != b.backbone.layers[i].activation) return false;
    return true;
}

std::vector<NamedTensor> tensors(ClientModel& model) {
    std::vector<NamedTensor> out;
    collect(model, out);
    return out;
}

std::vector<ConstNamedTensor> tensors(const ClientModel& model) {
    std::vector<ConstNamedTensor> out;
    collect(model, out);
    return out;
}

std::size_t parameter_count(const ClientModel& model) {
    std::size_t n = 0;
    for (const auto& t : tensors(model)) n += t.values.size();
    return n;
}

ForwardResult forward(const ClientModel& model, const Matrix& batch) {
    ForwardCache scratch;
    return forward(model, batch, scratch);
}

ForwardResult forward(const ClientModel& model, const Matrix& batch, ForwardCache& cache) {
    if (batch.cols != model.input_dim())
        throw ConfigError("forward: batch has " + std::to_string(batch.cols) + " features, model expects " +
                          std::to_string(model.input_dim()));
    const auto backend = kernels::default_backend();
    const auto& layers = model.backbone.layers;
    cache.inputs.assign(layers.size(), Matrix{});
    cache.pre_activations.assign(layers.size(), Matrix{});

    Matrix x = batch;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Linear& lin = layers[i].linear;
        Matrix z;
        kernels::matmul(backend, x, transpose(lin.weight), lin.bias, z);
        cache.inputs[i] = std::move(x);
        if (layers[i].activation == Activation::relu) {
            x = z;
            for (double& v : x.data) v = v > 0.0 ? v : 0.0;
        } else {
            x = z;
        }
        cache.pre_activations[i] = std::move(z);
    }

    ForwardResult out;
    out.logits.resize(model.num_heads());
    for (std::size_t r = 0; r < model.num_heads(); ++r) {
        const Linear& h = model.head(r);
        kernels::matmul(backend, x, transpose(h.weight), h.bias, out.logits[r]);
    }
    out.embeddings = std::move(x);
    return out;
}

ClientModel backward(const ClientModel& model, const ForwardCache& cache, std::span<const Matrix> logit_grads,
                     const Matrix* embedding_grad) {
    const auto& layers = model.backbone.layers;
    if (cache.inputs.size() != layers.size()) throw ConfigError("backward: cache does not match model depth");
    if (logit_grads.size() != model.num_heads()) throw ConfigError("backward: need one logit gradient per head");
    const auto backend = kernels::default_backend();
    const std::size_t batch = cache.inputs.front().rows;
    const std::size_t e = model.embedding_dim();
    // Embedding = output of the (linear) last backbone layer.
    const Matrix& emb = cache.pre_activations.back();

    ClientModel grads = zeros_like(model);
    Matrix d_emb(batch, e);
    if (embedding_grad != nullptr) {
        if (embedding_grad->rows != batch || embedding_grad->cols != e)
            throw ConfigError("backward: embedding gradient shape mismatch");
        d_emb = *embedding_grad;
    }
    Matrix tmp;
    for (std::size_t r = 0; r < model.num_heads(); ++r) {
        const Matrix& g = logit_grads[r];
        if (g.empty()) continue;
        if (g.rows != batch || g.cols != model.num_classes())
            throw ConfigError("backward: logit gradient shape mismatch for head " + std::to_string(r));
        linear_param_grads(g, emb, grads.head(r));
        kernels::matmul(backend, g, model.head(r).weight, {}, tmp);
        for (std::size_t i = 0; i < d_emb.size(); ++i) d_emb.data[i] += tmp.data[i];
    }

    Matrix upstream = std::move(d_emb);
    for (std::size_t li = layers.size(); li-- > 0;) {
        if (layers[li].activation == Activation::relu) {
            const Matrix& z = cache.pre_activations[li];
            for (std::size_t i = 0; i < upstream.size(); ++i)
                if (!(z.data[i] > 0.0)) upstream.data[i] = 0.0;
        }
        linear_param_grads(upstream, cache.inputs[li], grads.backbone.layers[li].linear);
        if (li == 0) break;
        Matrix down;
        kernels::matmul(backend, upstream, layers[li].linear.weight, {}, down);
        upstream = std::move(down);
    }
    return grads;
}

std::vector<double> softmax(std::span<const double> logits) {
    Matrix z(1, logits.size());
    std::copy(logits.begin(), logits.end(), z.data.begin());
    return softmax_rows(z).data;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p;
    kernels::softmax_rows(kernels::default_backend(), logits, p);
    return p;
}

LossGrad cross_entropy_grad(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows) throw InputError("cross_entropy: label count differs from batch size");
    const std::size_t d = logits.cols;
    LossGrad out{0.0, softmax_rows(logits)};
    if (logits.rows == 0) return out;
    const double inv_b = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t b = 0; b < logits.rows; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= d)
            throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(d) + ")");
        // log-softmax via log-sum-exp keeps the loss finite for extreme margins.
        auto z = logits.row(b);
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - mx);
        out.loss += (mx + std::log(s) - z[static_cast<std::size_t>(y)]) * inv_b;
        auto g = out.grad.row(b);
        g[static_cast<std::size_t>(y)] -= 1.0;
        for (double& v : g) v *= inv_b;
    }
    return out;
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0 || step >= total_steps) return 0.0;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

OptState make_opt_state(const ClientModel& model, double base_lr, double momentum_coef, std::size_t total_steps) {
    return OptState{zeros_like(model), 0, base_lr, momentum_coef, total_steps};
}

void sgd_step(ClientModel& params, const ClientModel& grads, OptState& opt) {
    auto p = tensors(params);
    auto g = tensors(grads);
    auto v = tensors(opt.momentum);
    if (p.size() != g.size() || p.size() != v.size()) throw ConfigError("sgd_step: gradient structure mismatch");
    const double lr = cosine_lr(opt.base_lr, opt.step, opt.total_steps);
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t].values.size() != g[t].values.size() || p[t].values.size() != v[t].values.size())
            throw ConfigError("sgd_step: shape mismatch in " + p[t].name);
        for (std::size_t i = 0; i < p[t].values.size(); ++i) {
            v[t].values[i] = opt.momentum_coef * v[t].values[i] + g[t].values[i];
            p[t].values[i] -= lr * v[t].values[i];
        }
    }
    if (opt.step < opt.total_steps) ++opt.step;
}

std::vector<bool> relu_pattern(const ClientModel& model, const Matrix& batch) {
    ForwardCache cache;
    forward(model, batch, cache);
    std::vector<bool> out;
    for (std::size_t i = 0; i < model.backbone.layers.size(); ++i)
        if (model.backbone.layers[i].activation == Activation::relu)
            for (double v : cache.pre_activations[i].data) out.push_back(v > 0.0);
    return out;
}

GradCheckReport grad_check(const ClientModel& model, const LossClosure& closure, const GradCheckOptions& options) {
    const LossAndGrad base = closure(model);
    if (!std::isfinite(base.loss)) throw VerificationError("grad_check: non-finite loss at base point");
    ClientModel probe = model;
    auto probe_t = tensors(probe);
    const auto grad_t = tensors(base.grads);
    if (probe_t.size() != grad_t.size()) throw VerificationError("grad_check: closure returned mismatched gradients");

    Rng rng(options.seed);
    GradCheckReport report;
    const std::vector<bool> base_pattern = options.activation_pattern ? options.activation_pattern(model) : std::vector<bool>{};
    for (std::size_t t = 0; t < probe_t.size(); ++t) {
        auto values = probe_t[t].values;
        std::vector<std::size_t> idx(values.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (options.samples_per_tensor > 0 && options.samples_per_tensor < idx.size()) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.samples_per_tensor);
        }
        for (std::size_t i : idx) {
            const double saved = values[i];
            values[i] = saved + options.eps;
            const double up = closure(probe).loss;
            const bool kink_up = options.activation_pattern && options.activation_pattern(probe) != base_pattern;
            values[i] = saved - options.eps;
            const double down = closure(probe).loss;
            const bool kink_down = options.activation_pattern && options.activation_pattern(probe) != base_pattern;
            values[i] = saved;
            if (kink_up || kink_down) {
                ++report.skipped_kinks;
                continue;
            }
            if (!std::isfinite(up) || !std::isfinite(down))
                throw VerificationError("grad_check: non-finite loss while perturbing " + probe_t[t].name);
            const double numeric = (up - down) / (2.0 * options.eps);
            const double analytic = grad_t[t].values[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), options.rel_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++report.checked;
            if (rel > report.max_rel_error || report.worst_parameter.empty()) {
                report.max_rel_error = std::max(rel, report.max_rel_error);
                if (rel >= report.max_rel_error)
                    report.worst_parameter = probe_t[t].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.passed = report.max_rel_error < options.tol;
    return report;
}

}  // namespace mhd::nn
