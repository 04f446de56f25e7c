#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace mhd::fed {

// Directed communication graph over client ids. An edge i → j means client i
// may distill from client j (j is in i's out-neighborhood).
struct TopologySpec {
    enum class Kind { complete, cycle, islands, chain, custom, random };
    Kind kind = Kind::complete;
    std::size_t num_clients = 4;
    std::size_t island_size = 2;                   // islands: consecutive groups of this size
    std::vector<std::pair<int, int>> edges;        // custom
    std::size_t random_out_degree = 1;             // random
    bool dynamic = false;                          // random: resample every step
    std::uint64_t seed = 0;
};

class Topology {
public:
    explicit Topology(TopologySpec spec);

    std::size_t num_clients() const { return spec_.num_clients; }
    bool is_static() const { return !(spec_.kind == TopologySpec::Kind::random && spec_.dynamic); }
    const TopologySpec& spec() const { return spec_; }

    // e_t(i), ascending.
    std::vector<int> out_neighbors(int client, std::size_t step = 0) const;

    // Directed hop distance i → j along out-edges at step 0; −1 if
    // unreachable, 0 on the diagonal.
    std::vector<std::vector<int>> distances() const;

private:
    std::vector<int> sample_random(int client, std::size_t step) const;

    TopologySpec spec_;
    std::vector<std::vector<int>> fixed_;
};

}  // namespace mhd::fed
