#include "mhd/metrics.hpp"

#include "mhd/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace mhd::metrics {
namespace {

std::size_t argmax(std::span<const double> r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.size(); ++k)
        if (r[k] > r[best]) best = k;
    return best;
}

}  // namespace

std::string to_jsonl(const MetricsRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["client"] = r.client;
    j["head"] = r.head;
    j["beta_priv"] = r.beta_priv;
    j["beta_sh"] = r.beta_sh;
    j["loss_ce"] = r.loss_ce;
    j["loss_emb"] = r.loss_emb;
    j["loss_aux"] = r.loss_aux;
    j["bytes_communicated"] = r.bytes_communicated;
    return j.dump();
}

std::vector<double> evaluate(const nn::ClientModel& model, const data::LabeledTable& test) {
    if (test.size() == 0) throw InputError("evaluate: empty test set");
    const auto fwd = nn::forward(model, test.features);
    std::vector<double> acc(model.num_heads(), 0.0);
    for (std::size_t r = 0; r < model.num_heads(); ++r) {
        std::size_t hits = 0;
        for (std::size_t b = 0; b < test.size(); ++b)
            hits += argmax(fwd.logits[r].row(b)) == static_cast<std::size_t>(test.labels[b]);
        acc[r] = static_cast<double>(hits) / static_cast<double>(test.size());
    }
    return acc;
}

std::vector<std::vector<double>> per_class_accuracy(const nn::ClientModel& model, const data::LabeledTable& test) {
    if (test.size() == 0) throw InputError("per_class_accuracy: empty test set");
    const std::size_t d = model.num_classes();
    const auto fwd = nn::forward(model, test.features);
    std::vector<double> count(d, 0.0);
    for (int y : test.labels) count.at(static_cast<std::size_t>(y)) += 1.0;
    std::vector<std::vector<double>> out(model.num_heads(), std::vector<double>(d, 0.0));
    for (std::size_t r = 0; r < model.num_heads(); ++r) {
        for (std::size_t b = 0; b < test.size(); ++b) {
            const auto y = static_cast<std::size_t>(test.labels[b]);
            if (argmax(fwd.logits[r].row(b)) == y) out[r][y] += 1.0;
        }
        for (std::size_t c = 0; c < d; ++c) out[r][c] = count[c] > 0 ? out[r][c] / count[c] : 0.0;
    }
    return out;
}

double reweighted_accuracy(std::span<const double> class_accuracy, std::span<const double> marginal) {
    if (class_accuracy.size() != marginal.size()) throw InputError("reweighted_accuracy: length mismatch");
    double acc = 0.0;
    double mass = 0.0;
    for (std::size_t c = 0; c < marginal.size(); ++c) {
        acc += marginal[c] * class_accuracy[c];
        mass += marginal[c];
    }
    return mass > 0.0 ? acc / mass : 0.0;
}

CrossClientMatrix cross_client_matrix(std::span<const nn::ClientModel> models, const data::LabeledTable& test,
                                      std::span<const std::vector<double>> marginals) {
    if (models.size() != marginals.size()) throw InputError("cross_client_matrix: one marginal per client required");
    CrossClientMatrix m;
    m.clients = models.size();
    for (const auto& model : models) m.heads = std::max(m.heads, model.num_heads());
    m.values.assign(m.clients * m.clients * m.heads, 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto pc = per_class_accuracy(models[i], test);
        for (std::size_t j = 0; j < m.clients; ++j)
            for (std::size_t r = 0; r < pc.size(); ++r) m.at(i, j, r) = reweighted_accuracy(pc[r], marginals[j]);
    }
    return m;
}

std::vector<HopBucket> hop_distance_report(const CrossClientMatrix& matrix, const fed::Topology& topology) {
    if (topology.num_clients() != matrix.clients) throw InputError("hop_distance_report: client count mismatch");
    const auto dist = topology.distances();
    std::map<int, HopBucket> buckets;
    for (std::size_t i = 0; i < matrix.clients; ++i) {
        for (std::size_t j = 0; j < matrix.clients; ++j) {
            if (i == j) continue;
            auto& b = buckets[dist[i][j]];
            b.distance = dist[i][j];
            if (b.mean_accuracy.empty()) b.mean_accuracy.assign(matrix.heads, 0.0);
            ++b.pairs;
            for (std::size_t r = 0; r < matrix.heads; ++r) b.mean_accuracy[r] += matrix.at(i, j, r);
        }
    }
    std::vector<HopBucket> out;
    for (auto& [d, b] : buckets) {
        for (double& v : b.mean_accuracy) v /= static_cast<double>(b.pairs);
        if (d >= 0) out.push_back(b);
    }
    if (auto it = buckets.find(-1); it != buckets.end()) out.push_back(it->second);
    return out;
}

double embedding_probe(const nn::ClientModel& model, const data::LabeledTable& train, const data::LabeledTable& eval,
                       const ProbeOptions& options) {
    if (train.size() == 0 || eval.size() == 0) throw InputError("embedding_probe: empty data");
    const std::size_t d = model.num_classes();
    const std::size_t e = model.embedding_dim();
    const Matrix x_train = nn::forward(model, train.features).embeddings;
    const Matrix x_eval = nn::forward(model, eval.features).embeddings;

    // Probe = backbone-free model: one identity layer feeding a single head.
    nn::ClientModel probe;
    nn::Linear identity{Matrix(e, e), std::vector<double>(e, 0.0)};
    for (std::size_t i = 0; i < e; ++i) identity.weight(i, i) = 1.0;
    probe.backbone.layers.push_back({identity, nn::Activation::identity});
    probe.main_head = nn::Linear{Matrix(d, e), std::vector<double>(d, 0.0)};

    // Step size from the curvature bound of softmax regression: ½·E‖x‖² (+1 for the bias).
    double mean_sq = 0.0;
    for (double v : x_train.data) mean_sq += v * v;
    mean_sq /= static_cast<double>(x_train.rows);
    const double lr = 1.0 / (0.5 * (mean_sq + 1.0));

    nn::Linear velocity{Matrix(d, e), std::vector<double>(d, 0.0)};
    for (std::size_t step = 0; step < options.steps; ++step) {
        nn::ForwardCache cache;
        const auto fwd = nn::forward(probe, x_train, cache);
        const auto ce = nn::cross_entropy_grad(fwd.logits[0], train.labels);
        if (!std::isfinite(ce.loss)) throw DivergenceError("embedding_probe: non-finite loss");
        const std::vector<Matrix> grads{ce.grad};
        const auto g = nn::backward(probe, cache, grads);
        for (std::size_t i = 0; i < velocity.weight.size(); ++i) {
            velocity.weight.data[i] = options.momentum * velocity.weight.data[i] + g.main_head.weight.data[i];
            probe.main_head.weight.data[i] -= lr * velocity.weight.data[i];
        }
        for (std::size_t i = 0; i < d; ++i) {
            velocity.bias[i] = options.momentum * velocity.bias[i] + g.main_head.bias[i];
            probe.main_head.bias[i] -= lr * velocity.bias[i];
        }
    }
    data::LabeledTable embedded{x_eval, eval.labels, eval.num_classes};
    return evaluate(probe, embedded)[0];
}

}  // namespace mhd::metrics
