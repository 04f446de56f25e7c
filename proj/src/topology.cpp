#include "mhd/topology.hpp"

#include "mhd/error.hpp"
#include "mhd/rng.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <string>

namespace mhd::fed {

Topology::Topology(TopologySpec spec) : spec_(std::move(spec)) {
    const std::size_t k = spec_.num_clients;
    if (k == 0) throw ConfigError("topology: no clients");
    fixed_.assign(k, {});
    using Kind = TopologySpec::Kind;
    switch (spec_.kind) {
        case Kind::complete:
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j)
                    if (i != j) fixed_[i].push_back(static_cast<int>(j));
            break;
        case Kind::cycle:
            if (k > 1)
                for (std::size_t i = 0; i < k; ++i) fixed_[i].push_back(static_cast<int>((i + 1) % k));
            break;
        case Kind::chain:
            for (std::size_t i = 0; i + 1 < k; ++i) fixed_[i].push_back(static_cast<int>(i + 1));
            break;
        case Kind::islands: {
            if (spec_.island_size == 0) throw ConfigError("topology.island_size must be positive");
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t g = i / spec_.island_size;
                for (std::size_t j = g * spec_.island_size; j < std::min(k, (g + 1) * spec_.island_size); ++j)
                    if (j != i) fixed_[i].push_back(static_cast<int>(j));
            }
            break;
        }
        case Kind::custom:
            for (auto [from, to] : spec_.edges) {
                if (from < 0 || to < 0 || static_cast<std::size_t>(from) >= k || static_cast<std::size_t>(to) >= k)
                    throw ConfigError("topology: edge " + std::to_string(from) + ">" + std::to_string(to) +
                                      " references an unknown client");
                if (from == to) throw ConfigError("topology: self-loop edge on client " + std::to_string(from));
                fixed_[static_cast<std::size_t>(from)].push_back(to);
            }
            for (auto& n : fixed_) {
                std::sort(n.begin(), n.end());
                n.erase(std::unique(n.begin(), n.end()), n.end());
            }
            break;
        case Kind::random:
            if (spec_.random_out_degree >= k && k > 1)
                throw ConfigError("topology.random_out_degree must be below the number of clients");
            for (std::size_t i = 0; i < k; ++i) fixed_[i] = sample_random(static_cast<int>(i), 0);
            break;
    }
}

std::vector<int> Topology::sample_random(int client, std::size_t step) const {
    Rng rng(derive_seed(spec_.seed, {stream::topology, step, static_cast<std::uint64_t>(client)}));
    std::vector<int> others;
    for (std::size_t j = 0; j < spec_.num_clients; ++j)
        if (static_cast<int>(j) != client) others.push_back(static_cast<int>(j));
    std::shuffle(others.begin(), others.end(), rng);
    others.resize(std::min(spec_.random_out_degree, others.size()));
    std::sort(others.begin(), others.end());
    return others;
}

std::vector<int> Topology::out_neighbors(int client, std::size_t step) const {
    if (client < 0 || static_cast<std::size_t>(client) >= spec_.num_clients) throw InputError("topology: unknown client");
    if (!is_static()) return sample_random(client, step);
    return fixed_[static_cast<std::size_t>(client)];
}

std::vector<std::vector<int>> Topology::distances() const {
    const std::size_t k = spec_.num_clients;
    std::vector<std::vector<int>> dist(k, std::vector<int>(k, -1));
    for (std::size_t s = 0; s < k; ++s) {
        std::deque<std::size_t> queue{s};
        dist[s][s] = 0;
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop_front();
            for (int v : fixed_[u]) {
                auto& dv = dist[s][static_cast<std::size_t>(v)];
                if (dv < 0) {
                    dv = dist[s][u] + 1;
                    queue.push_back(static_cast<std::size_t>(v));
                }
            }
        }
    }
    return dist;
}

}  // namespace mhd::fed
