#include "mhd/error.hpp"
#include "mhd/topology.hpp"

#include <doctest.h>

using namespace mhd;
using namespace mhd::fed;
using Kind = TopologySpec::Kind;

namespace {

TopologySpec spec(Kind kind, std::size_t k) {
    TopologySpec s;
    s.kind = kind;
    s.num_clients = k;
    return s;
}

}  // namespace

TEST_CASE("complete graph") {
    const Topology t(spec(Kind::complete, 4));
    CHECK(t.out_neighbors(2) == std::vector<int>{0, 1, 3});
    for (const auto& row : t.distances())
        for (int d : row) CHECK(d <= 1);
}

TEST_CASE("cycle distances") {
    const Topology t(spec(Kind::cycle, 4));
    CHECK(t.out_neighbors(3) == std::vector<int>{0});
    const auto d = t.distances();
    CHECK(d[0] == std::vector<int>{0, 1, 2, 3});
    CHECK(d[2] == std::vector<int>{2, 3, 0, 1});
}

TEST_CASE("islands") {
    auto s = spec(Kind::islands, 4);
    s.island_size = 2;
    const Topology t(s);
    CHECK(t.out_neighbors(0) == std::vector<int>{1});
    CHECK(t.out_neighbors(3) == std::vector<int>{2});
    const auto d = t.distances();
    CHECK(d[0] == std::vector<int>{0, 1, -1, -1});
}

TEST_CASE("chain") {
    const Topology t(spec(Kind::chain, 3));
    CHECK(t.out_neighbors(0) == std::vector<int>{1});
    CHECK(t.out_neighbors(2).empty());
    CHECK(t.distances()[0] == std::vector<int>{0, 1, 2});
}

TEST_CASE("custom edges are validated") {
    auto s = spec(Kind::custom, 3);
    s.edges = {{0, 2}, {2, 1}};
    const Topology t(s);
    CHECK(t.out_neighbors(0) == std::vector<int>{2});
    CHECK(t.distances()[0] == std::vector<int>{0, 2, 1});
    s.edges = {{1, 1}};
    CHECK_THROWS_AS(Topology{s}, ConfigError);
    s.edges = {{0, 3}};
    CHECK_THROWS_AS(Topology{s}, ConfigError);
}

TEST_CASE("random topology: static draws are fixed, dynamic ones change, never self") {
    auto s = spec(Kind::random, 6);
    s.random_out_degree = 2;
    s.seed = 5;
    const Topology fixed(s);
    CHECK(fixed.is_static());
    for (int c = 0; c < 6; ++c) {
        const auto n = fixed.out_neighbors(c, 0);
        CHECK(n.size() == 2);
        CHECK(fixed.out_neighbors(c, 17) == n);
        for (int j : n) CHECK(j != c);
    }
    s.dynamic = true;
    const Topology dyn(s);
    CHECK_FALSE(dyn.is_static());
    bool changed = false;
    for (std::size_t step = 1; step < 20; ++step) changed = changed || dyn.out_neighbors(0, step) != dyn.out_neighbors(0, 0);
    CHECK(changed);
    s.random_out_degree = 6;
    CHECK_THROWS_AS(Topology{s}, ConfigError);
}

TEST_CASE("unknown client") {
    const Topology t(spec(Kind::cycle, 3));
    CHECK_THROWS_AS(t.out_neighbors(3), InputError);
}
