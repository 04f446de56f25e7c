#include "mhd/data.hpp"

#include "mhd/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

namespace mhd::data {

void validate(const SyntheticDatasetSpec& spec) {
    if (spec.num_classes < 2) throw ConfigError("dataset.num_classes must be at least 2");
    if (spec.samples_per_class < 2) throw ConfigError("dataset.samples_per_class must be at least 2");
    if (spec.input_dim == 0) throw ConfigError("dataset.input_dim must be positive");
    if (!(spec.noise_sigma > 0.0)) throw ConfigError("dataset.noise_sigma must be positive");
    if (!(spec.cluster_separation >= 0.0)) throw ConfigError("dataset.cluster_separation must be non-negative");
}

LabeledTable generate_dataset(const SyntheticDatasetSpec& spec) {
    validate(spec);
    Rng rng(derive_seed(spec.seed, {stream::dataset}));
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix means(spec.num_classes, spec.input_dim);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        auto m = means.row(c);
        double norm2 = 0.0;
        for (double& v : m) {
            v = normal(rng);
            norm2 += v * v;
        }
        const double scale = spec.cluster_separation / std::sqrt(norm2);
        for (double& v : m) v *= scale;
    }

    LabeledTable t;
    t.num_classes = spec.num_classes;
    t.features = Matrix(spec.num_classes * spec.samples_per_class, spec.input_dim);
    t.labels.resize(t.features.rows);
    std::size_t i = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t n = 0; n < spec.samples_per_class; ++n, ++i) {
            t.labels[i] = static_cast<int>(c);
            auto x = t.features.row(i);
            auto m = means.row(c);
            for (std::size_t j = 0; j < spec.input_dim; ++j) x[j] = m[j] + spec.noise_sigma * normal(rng);
        }
    }
    return t;
}

void validate(const PartitionSpec& spec, std::size_t num_classes) {
    if (spec.num_clients == 0) throw ConfigError("partition.num_clients must be positive");
    if (spec.primary_labels_per_client == 0) throw ConfigError("partition.primary_labels_per_client must be positive");
    if (spec.primary_labels_per_client > num_classes)
        throw ConfigError("partition.primary_labels_per_client exceeds the number of classes");
    if (!(spec.skewness >= 0.0)) throw ConfigError("partition.skewness must be non-negative");
    if (!(spec.public_fraction > 0.0 && spec.public_fraction < 1.0))
        throw ConfigError("partition.public_fraction must be in (0,1)");
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
        throw ConfigError("partition.test_fraction must be in (0,1)");
    if (spec.assignment_mode == AssignmentMode::even &&
        (spec.num_clients * spec.primary_labels_per_client) % num_classes != 0)
        throw ConfigError("partition: even assignment needs num_clients * primary_labels_per_client divisible by "
                          "num_classes (" + std::to_string(spec.num_clients) + " * " +
                          std::to_string(spec.primary_labels_per_client) + " vs " + std::to_string(num_classes) + ")");
}

LabelSets assign_primary_labels(const PartitionSpec& spec, std::size_t num_classes) {
    validate(spec, num_classes);
    Rng rng(derive_seed(spec.seed, {stream::partition, 0}));
    const std::size_t per = spec.primary_labels_per_client;
    LabelSets sets(spec.num_clients);

    std::vector<int> labels(num_classes);
    std::iota(labels.begin(), labels.end(), 0);
    if (spec.assignment_mode == AssignmentMode::even) {
        // Slots i·per + j, i < K, j < per, are K·per consecutive integers, so
        // reduced mod d every label appears exactly K·per/d times and a
        // client's `per` slots are distinct labels.
        std::shuffle(labels.begin(), labels.end(), rng);
        for (std::size_t i = 0; i < spec.num_clients; ++i)
            for (std::size_t j = 0; j < per; ++j) sets[i].push_back(labels[(i * per + j) % num_classes]);
    } else {
        for (auto& s : sets) {
            // Partial Fisher-Yates: the first `per` entries are a uniform subset.
            for (std::size_t j = 0; j < per; ++j) {
                const std::size_t k = j + uniform_index(rng, num_classes - j);
                std::swap(labels[j], labels[k]);
            }
            s.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(per));
        }
    }
    for (auto& s : sets) std::sort(s.begin(), s.end());
    return sets;
}

std::vector<double> assignment_probabilities(int label, const LabelSets& primary, double skewness) {
    std::vector<double> w(primary.size());
    std::size_t n_primary = 0;
    for (std::size_t i = 0; i < primary.size(); ++i) {
        const bool is_primary = std::binary_search(primary[i].begin(), primary[i].end(), label);
        n_primary += is_primary;
        if (std::isinf(skewness))
            w[i] = is_primary ? 1.0 : 0.0;
        else
            w[i] = is_primary ? 1.0 + skewness : 1.0;
    }
    // With s = ∞ a label nobody holds as primary is spread uniformly.
    if (std::isinf(skewness) && n_primary == 0) std::fill(w.begin(), w.end(), 1.0);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= total;
    return w;
}

std::array<std::size_t, 5> primary_count_histogram(const LabelSets& primary, std::size_t num_classes) {
    std::vector<std::size_t> count(num_classes, 0);
    for (const auto& s : primary)
        for (int l : s) ++count.at(static_cast<std::size_t>(l));
    std::array<std::size_t, 5> hist{};
    for (std::size_t c : count) ++hist[std::min<std::size_t>(c, 4)];
    return hist;
}

std::vector<std::size_t> build_shared_test(const LabeledTable& table, double holdout_fraction, Rng& rng) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("test fraction must be in (0,1)");
    std::vector<std::vector<std::size_t>> by_class(table.num_classes);
    for (std::size_t i = 0; i < table.size(); ++i) by_class.at(static_cast<std::size_t>(table.labels[i])).push_back(i);

    // Same count for every class so the split is exactly uniform.
    std::size_t smallest = table.size();
    for (const auto& c : by_class) smallest = std::min(smallest, c.size());
    const auto take = static_cast<std::size_t>(std::llround(static_cast<double>(smallest) * holdout_fraction));
    if (take == 0) throw ConfigError("shared test split: too few samples per class for the requested fraction");
    if (take >= smallest) throw ConfigError("shared test split would consume an entire class");

    std::vector<std::size_t> out;
    for (auto& c : by_class) {
        std::shuffle(c.begin(), c.end(), rng);
        out.insert(out.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(out.begin(), out.end());
    return out;
}

SampleDistribution distribute_samples(const LabeledTable& table, std::span<const std::size_t> candidates,
                                      const LabelSets& primary, const PartitionSpec& spec, Rng& rng) {
    if (primary.size() != spec.num_clients) throw ConfigError("distribute_samples: label sets do not cover all clients");
    std::vector<std::size_t> order(candidates.begin(), candidates.end());
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_public = static_cast<std::size_t>(std::llround(static_cast<double>(order.size()) * spec.public_fraction));

    SampleDistribution out;
    out.public_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_public));
    std::sort(out.public_indices.begin(), out.public_indices.end());
    out.client_indices.resize(spec.num_clients);

    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_public), order.end());
    std::sort(rest.begin(), rest.end());
    std::vector<std::vector<double>> cumulative(table.num_classes);
    for (std::size_t l = 0; l < table.num_classes; ++l) {
        auto p = assignment_probabilities(static_cast<int>(l), primary, spec.skewness);
        std::partial_sum(p.begin(), p.end(), p.begin());
        cumulative[l] = std::move(p);
    }
    for (std::size_t idx : rest) {
        const auto& cum = cumulative.at(static_cast<std::size_t>(table.labels[idx]));
        const double u = uniform01(rng) * cum.back();
        auto it = std::upper_bound(cum.begin(), cum.end(), u);
        auto client = static_cast<std::size_t>(it - cum.begin());
        // Guard against u landing exactly on the final edge, and skip
        // trailing zero-probability clients.
        client = std::min(client, cum.size() - 1);
        while (client > 0 && cum[client] == cum[client - 1]) --client;
        out.client_indices[client].push_back(idx);
    }
    return out;
}

PartitionedDataset partition(std::shared_ptr<const LabeledTable> table, const PartitionSpec& spec) {
    validate(spec, table->num_classes);
    PartitionedDataset ds;
    ds.table = table;
    ds.primary_labels = assign_primary_labels(spec, table->num_classes);

    Rng test_rng(derive_seed(spec.seed, {stream::partition, 1}));
    ds.test_indices = build_shared_test(*table, spec.test_fraction, test_rng);

    std::vector<std::size_t> remaining;
    remaining.reserve(table->size() - ds.test_indices.size());
    std::size_t t = 0;
    for (std::size_t i = 0; i < table->size(); ++i) {
        if (t < ds.test_indices.size() && ds.test_indices[t] == i) {
            ++t;
            continue;
        }
        remaining.push_back(i);
    }
    Rng dist_rng(derive_seed(spec.seed, {stream::partition, 2}));
    auto dist = distribute_samples(*table, remaining, ds.primary_labels, spec, dist_rng);
    ds.public_indices = std::move(dist.public_indices);
    ds.client_indices = std::move(dist.client_indices);
    return ds;
}

LabeledTable subset(const LabeledTable& table, std::span<const std::size_t> indices) {
    LabeledTable out;
    out.num_classes = table.num_classes;
    out.features = gather_rows(table.features, indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(table.labels.at(i));
    return out;
}

Matrix PartitionedDataset::public_features() const { return gather_rows(table->features, public_indices); }

LabeledTable PartitionedDataset::client_shard(std::size_t client) const {
    return subset(*table, client_indices.at(client));
}

LabeledTable PartitionedDataset::shared_test() const { return subset(*table, test_indices); }

std::vector<double> PartitionedDataset::client_label_marginal(std::size_t client) const {
    std::vector<double> m(num_classes(), 0.0);
    const auto& idx = client_indices.at(client);
    for (std::size_t i : idx) m[static_cast<std::size_t>(table->labels[i])] += 1.0;
    if (!idx.empty())
        for (double& v : m) v /= static_cast<double>(idx.size());
    return m;
}

void export_json(const PartitionedDataset& dataset, const std::filesystem::path& path) {
    const LabeledTable& t = *dataset.table;
    std::vector<std::string> split(t.size(), "unused");
    for (std::size_t i : dataset.test_indices) split[i] = "test";
    for (std::size_t i : dataset.public_indices) split[i] = "public";
    for (std::size_t c = 0; c < dataset.num_clients(); ++c)
        for (std::size_t i : dataset.client_indices[c]) split[i] = "client:" + std::to_string(c);

    nlohmann::json j;
    j["format"] = "mhd-dataset";
    j["version"] = 1;
    j["num_classes"] = t.num_classes;
    j["input_dim"] = t.features.cols;
    j["num_clients"] = dataset.num_clients();
    j["primary_labels"] = dataset.primary_labels;
    auto& feats = j["features"] = nlohmann::json::array();
    for (std::size_t i = 0; i < t.size(); ++i) {
        auto r = t.features.row(i);
        feats.push_back(std::vector<double>(r.begin(), r.end()));
    }
    j["labels"] = t.labels;
    j["split"] = split;
    std::ofstream f(path);
    if (!f) throw InputError("dataset export: cannot open " + path.string());
    f << j.dump() << '\n';
}

PartitionedDataset import_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InputError("dataset import: cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("dataset import: ") + e.what());
    }
    if (j.value("format", "") != "mhd-dataset") throw InputError("dataset import: not an mhd dataset file");

    auto table = std::make_shared<LabeledTable>();
    table->num_classes = j.at("num_classes").get<std::size_t>();
    const auto dim = j.at("input_dim").get<std::size_t>();
    const auto& feats = j.at("features");
    table->features = Matrix(feats.size(), dim);
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const auto row = feats[i].get<std::vector<double>>();
        if (row.size() != dim) throw InputError("dataset import: feature row width mismatch");
        std::copy(row.begin(), row.end(), table->features.row(i).begin());
    }
    table->labels = j.at("labels").get<std::vector<int>>();
    if (table->labels.size() != feats.size()) throw InputError("dataset import: label count mismatch");

    PartitionedDataset ds;
    ds.primary_labels = j.at("primary_labels").get<LabelSets>();
    ds.client_indices.resize(j.at("num_clients").get<std::size_t>());
    const auto split = j.at("split").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < split.size(); ++i) {
        const std::string& s = split[i];
        if (s == "test")
            ds.test_indices.push_back(i);
        else if (s == "public")
            ds.public_indices.push_back(i);
        else if (s.rfind("client:", 0) == 0)
            ds.client_indices.at(std::stoul(s.substr(7))).push_back(i);
        else if (s != "unused")
            throw InputError("dataset import: unknown split tag '" + s + "'");
    }
    ds.table = std::move(table);
    return ds;
}

}  // namespace mhd::data
