#pragma once

#include "mhd/rng.hpp"
#include "mhd/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

// Synthetic labeled data and its split into private client shards, an
// unlabeled public split and a uniform shared test split.
namespace mhd::data {

struct SyntheticDatasetSpec {
    std::size_t num_classes = 20;
    std::size_t samples_per_class = 600;
    std::size_t input_dim = 16;
    double cluster_separation = 3.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
};

struct LabeledTable {
    Matrix features;          // [N × input_dim]
    std::vector<int> labels;  // N entries in [0, num_classes)
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    friend bool operator==(const LabeledTable&, const LabeledTable&) = default;
};

void validate(const SyntheticDatasetSpec& spec);

// One Gaussian cluster per class; means are random directions scaled to
// `cluster_separation`, samples add isotropic noise of `noise_sigma`.
// Samples are laid out class-major, samples_per_class each.
LabeledTable generate_dataset(const SyntheticDatasetSpec& spec);

enum class AssignmentMode { even, random };

struct PartitionSpec {
    std::size_t num_clients = 4;
    std::size_t primary_labels_per_client = 5;
    AssignmentMode assignment_mode = AssignmentMode::even;
    double skewness = 100.0;         // s; +inf restricts labels to their primary clients
    double public_fraction = 0.1;    // of the samples left after the test split
    double test_fraction = 0.1;      // per class, carved out first
    std::uint64_t seed = 0;
};

void validate(const PartitionSpec& spec, std::size_t num_classes);

using LabelSets = std::vector<std::vector<int>>;

// Primary label set L_i for every client (each sorted ascending).
LabelSets assign_primary_labels(const PartitionSpec& spec, std::size_t num_classes);

// Probability that a sample of `label` lands on each client: weight (1+s) for
// clients that have the label as primary, 1 otherwise, normalized.
std::vector<double> assignment_probabilities(int label, const LabelSets& primary, double skewness);

// Histogram of primary-client counts per label: buckets 0,1,2,3 and ≥4.
std::array<std::size_t, 5> primary_count_histogram(const LabelSets& primary, std::size_t num_classes);

// Per-class stratified holdout of round(samples_in_class · fraction) indices.
std::vector<std::size_t> build_shared_test(const LabeledTable& table, double holdout_fraction, Rng& rng);

struct SampleDistribution {
    std::vector<std::size_t> public_indices;
    std::vector<std::vector<std::size_t>> client_indices;
};

// Draws the public split uniformly from `candidates`, then sends every other
// candidate to one client by an independent categorical draw.
SampleDistribution distribute_samples(const LabeledTable& table, std::span<const std::size_t> candidates,
                                      const LabelSets& primary, const PartitionSpec& spec, Rng& rng);

struct PartitionedDataset {
    std::shared_ptr<const LabeledTable> table;
    std::vector<std::size_t> public_indices;
    std::vector<std::vector<std::size_t>> client_indices;
    std::vector<std::size_t> test_indices;
    LabelSets primary_labels;

    std::size_t num_clients() const { return client_indices.size(); }
    std::size_t num_classes() const { return table->num_classes; }

    Matrix public_features() const;
    LabeledTable client_shard(std::size_t client) const;
    LabeledTable shared_test() const;
    // Label histogram of a client's private shard, normalized.
    std::vector<double> client_label_marginal(std::size_t client) const;
};

// Full pipeline: shared test split, then public split, then private shards.
// Pure function of (table, spec).
PartitionedDataset partition(std::shared_ptr<const LabeledTable> table, const PartitionSpec& spec);

LabeledTable subset(const LabeledTable& table, std::span<const std::size_t> indices);

// JSON export/import: {"num_classes", "input_dim", "features": [[...]],
// "labels": [...], "split": ["test"|"public"|"client:<i>"...]}.
void export_json(const PartitionedDataset& dataset, const std::filesystem::path& path);
PartitionedDataset import_json(const std::filesystem::path& path);

}  // namespace mhd::data
