#pragma once

#include "mhd/data.hpp"
#include "mhd/distill.hpp"
#include "mhd/metrics.hpp"
#include "mhd/nn.hpp"
#include "mhd/topology.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

// Decentralized training protocol: checkpoint pools, per-client train steps,
// the orchestration loop and the FedAvg / separate / pooled baselines.
namespace mhd::fed {

struct PoolEntry {
    int source = 0;
    std::size_t step = 0;  // completed global steps when the snapshot was taken
    std::vector<std::uint8_t> bytes;
    std::shared_ptr<const nn::ClientModel> model;  // decoded `bytes`
};

struct CheckpointPool {
    int owner = 0;
    std::size_t capacity = 1;         // N_P
    std::size_t update_interval = 1;  // S_P
    std::vector<PoolEntry> entries;
};

// Adds a snapshot of a uniformly chosen out-neighbor. Appends until the pool
// is full, then replaces a uniformly chosen entry. No out-neighbors: no-op.
// `snapshots[j]` is client j's serialized model.
void pool_update(CheckpointPool& pool, const Topology& topology,
                 std::span<const std::shared_ptr<const std::vector<std::uint8_t>>> snapshots, std::size_t step, Rng& rng);

// Up to `delta` distinct entries, uniformly without replacement.
std::vector<const PoolEntry*> sample_teachers(const CheckpointPool& pool, std::size_t delta, Rng& rng);

// Bytes on the wire, as a real deployment would send them.
struct CommAccounting {
    std::size_t top_k = 3;           // predictions kept per head
    std::size_t value_bytes = 4;     // f32
    std::size_t index_bytes = 4;
    std::size_t sample_id_bytes = 8; // public sample hash
};

// One teacher's reply for one distillation batch.
std::uint64_t mhd_exchange_bytes(std::size_t batch, std::size_t embedding_dim, std::size_t heads_shared,
                                 bool send_embeddings, std::size_t num_classes, const CommAccounting& acc);
// One client's FedAvg round: upload + download of the parameter vector.
std::uint64_t fedavg_exchange_bytes(std::size_t parameter_count, const CommAccounting& acc);

enum class BaselineMode { mhd, fedavg, separate, pooled_supervised };

struct OptimizerConfig {
    std::size_t batch_size = 64;
    std::size_t public_batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
};

struct RunConfig {
    data::SyntheticDatasetSpec dataset;
    data::PartitionSpec partition;
    nn::ModelArch model;
    std::map<int, std::vector<std::size_t>> hidden_overrides;  // per-client backbone widths
    distill::DistillConfig distill;
    TopologySpec topology;
    OptimizerConfig optimizer;
    std::size_t total_steps = 5000;
    std::size_t eval_interval = 500;
    std::size_t pool_size = 0;       // N_P; 0 = number of clients
    std::size_t pool_interval = 50;  // S_P
    BaselineMode mode = BaselineMode::mhd;
    std::size_t fedavg_interval = 50;  // u
    bool interleave = false;
    bool deterministic = true;
    CommAccounting comm;
    std::uint64_t seed = 0;
};

// Fills derived seeds and sizes (dataset/partition/topology seeds, class
// counts, pool size) and checks every component.
RunConfig resolve(RunConfig config);
void validate(const RunConfig& config);

nn::ModelArch client_arch(const RunConfig& config, int client);

struct StepLosses {
    double total = 0.0;
    double ce = 0.0;
    double emb = 0.0;
    double aux = 0.0;
    std::vector<double> aux_per_head;
};

// One optimizer step (two when `interleave`) of client-local training. With no
// teachers this is plain cross-entropy training on the private batch.
StepLosses train_step(nn::ClientModel& model, nn::OptState& opt, const data::LabeledTable& private_batch,
                      const Matrix& public_batch, std::span<const nn::ClientModel* const> teachers,
                      const distill::DistillConfig& config, Rng& selection_rng, bool interleave = false);

// Replaces every client's parameters with the across-client mean.
void fedavg_round(std::span<nn::ClientModel> clients);

struct CommReport {
    std::uint64_t mhd_bytes_per_exchange = 0;
    std::uint64_t fedavg_bytes_per_exchange = 0;
    std::size_t parameter_count = 0;
    double ratio = 0.0;  // fedavg / mhd
    std::string to_text() const;
};

CommReport communication_report(const RunConfig& config);

struct RunResult {
    std::vector<metrics::MetricsRecord> records;
    std::vector<nn::ClientModel> models;
    metrics::CrossClientMatrix cross_client;
    std::vector<metrics::HopBucket> hops;
    CommReport comm;
    std::shared_ptr<const data::PartitionedDataset> dataset;
};

using MetricsSink = std::function<void(const metrics::MetricsRecord&)>;

// Runs the configured protocol end to end. Records are emitted in
// (step, client, head) order.
RunResult run_experiment(const RunConfig& config, const MetricsSink& sink = {});

// Metrics for the final evaluation step only.
std::vector<metrics::MetricsRecord> final_records(const std::vector<metrics::MetricsRecord>& records);

// Mean of a field over clients at the final step for one head rank.
double mean_final(const std::vector<metrics::MetricsRecord>& records, std::size_t head, bool shared);
// Population standard deviation of the same field across clients.
double client_std_final(const std::vector<metrics::MetricsRecord>& records, std::size_t head, bool shared);

}  // namespace mhd::fed
