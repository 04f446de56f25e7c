#pragma once

#include "mhd/data.hpp"
#include "mhd/nn.hpp"
#include "mhd/topology.hpp"

#include <string>
#include <vector>

namespace mhd::metrics {

struct MetricsRecord {
    std::size_t step = 0;
    int client = 0;
    std::size_t head = 0;  // 0 = main
    double beta_priv = 0.0;
    double beta_sh = 0.0;
    double loss_ce = 0.0;
    double loss_emb = 0.0;
    double loss_aux = 0.0;
    std::uint64_t bytes_communicated = 0;  // cumulative for the client
};

// One JSON object, no trailing newline. Field order is fixed.
std::string to_jsonl(const MetricsRecord& record);

// Top-1 accuracy of every head; argmax ties go to the lowest class index.
std::vector<double> evaluate(const nn::ClientModel& model, const data::LabeledTable& test);

// [head][class] accuracy on the samples of each class (NaN-free: classes
// absent from `test` report 0).
std::vector<std::vector<double>> per_class_accuracy(const nn::ClientModel& model, const data::LabeledTable& test);

// Σ_l marginal(l) · accuracy(l): accuracy under another label distribution.
double reweighted_accuracy(std::span<const double> class_accuracy, std::span<const double> marginal);

// accuracy of client i's head r on client j's private label distribution.
struct CrossClientMatrix {
    std::size_t clients = 0;
    std::size_t heads = 0;
    std::vector<double> values;

    double at(std::size_t i, std::size_t j, std::size_t r) const { return values[(i * clients + j) * heads + r]; }
    double& at(std::size_t i, std::size_t j, std::size_t r) { return values[(i * clients + j) * heads + r]; }
};

// Heads beyond a model's own head count are reported as 0; `heads` is the
// maximum head count across models.
CrossClientMatrix cross_client_matrix(std::span<const nn::ClientModel> models, const data::LabeledTable& test,
                                      std::span<const std::vector<double>> marginals);

struct HopBucket {
    int distance = 0;  // −1: unreachable pairs
    std::size_t pairs = 0;
    std::vector<double> mean_accuracy;  // per head rank
};

// Mean cross-client accuracy grouped by directed distance from the student
// to the data owner; off-diagonal pairs only, unreachable bucket last.
std::vector<HopBucket> hop_distance_report(const CrossClientMatrix& matrix, const fed::Topology& topology);

struct ProbeOptions {
    std::size_t steps = 2000;
    double momentum = 0.9;
};

// Trains a fresh linear head on frozen embeddings with full-batch gradient
// descent and reports its accuracy on `eval`.
double embedding_probe(const nn::ClientModel& model, const data::LabeledTable& train, const data::LabeledTable& eval,
                       const ProbeOptions& options = {});

}  // namespace mhd::metrics
