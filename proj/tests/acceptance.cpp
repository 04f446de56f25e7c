// Acceptance run: one PASS/FAIL line per criterion and a closing tally.
// The exit status is 0 once every selected criterion has been evaluated,
// whatever the verdicts; the lines themselves are the record.
//
//   acceptance                      all criteria
//   acceptance 5 7                  a subset
//   acceptance --report FILE [...]  also write the lines to FILE

#include "mhd/analysis.hpp"
#include "mhd/data.hpp"
#include "mhd/federation.hpp"
#include "mhd/metrics.hpp"
#include "mhd/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace mhd;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::string join(const std::vector<double>& v, int precision = 3) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i], precision);
    return out;
}

double mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};
constexpr std::size_t kSteps = 5000;

// d=20 Gaussian clusters in 16 dims, 4 clients with 5 primary labels, s=100.
fed::RunConfig experiment(fed::BaselineMode mode, std::size_t heads, std::uint64_t seed) {
    fed::RunConfig c;
    c.dataset.num_classes = 20;
    c.dataset.input_dim = 16;
    c.partition.num_clients = 4;
    c.partition.primary_labels_per_client = 5;
    c.partition.skewness = 100.0;
    c.model.num_aux_heads = heads;
    c.distill.nu_emb = 1.0;
    c.distill.nu_aux = 3.0;
    c.mode = mode;
    c.total_steps = kSteps;
    c.eval_interval = kSteps;
    c.seed = seed;
    return c;
}

// Mean final β_sh over clients for one head rank; `head` past the model's
// last head selects the last head.
double final_beta_sh(const fed::RunResult& r, std::size_t head) {
    const std::size_t last = r.models.front().num_heads() - 1;
    return fed::mean_final(r.records, std::min(head, last), true);
}

double best_head_beta_sh(const fed::RunResult& r) {
    double best = 0.0;
    for (std::size_t h = 0; h < r.models.front().num_heads(); ++h) best = std::max(best, final_beta_sh(r, h));
    return best;
}

constexpr std::size_t kLast = ~std::size_t{0};

// Per-seed final β_sh of `head` for a family of runs.
std::vector<double> per_seed(const std::function<fed::RunConfig(std::uint64_t)>& make, std::size_t head,
                             std::vector<fed::RunResult>* keep = nullptr) {
    std::vector<double> out;
    for (std::uint64_t s : kSeeds) {
        auto r = fed::run_experiment(make(s));
        out.push_back(final_beta_sh(r, head));
        if (keep) keep->push_back(std::move(r));
    }
    return out;
}

Outcome gradient_suite() {
    verify::VerifyOptions opts;
    opts.seeds = 20;
    const auto t0 = Clock::now();
    const auto results = verify::gradient_suite(opts);
    const double secs = seconds_since(t0);
    double worst = 0.0;
    std::string worst_name;
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.passed;
        if (r.measured >= worst) {
            worst = r.measured;
            worst_name = r.name;
        }
    }
    ok = ok && worst < 1e-5 && secs < 30.0 && !results.empty();
    return {ok, "max rel err " + fmt(worst * 1e6, 3) + "e-6 (" + worst_name + ", limit 1e-5) over 20 seeds, " +
                    std::to_string(results.size()) + " checks, " + fmt(secs, 1) + " s (limit 30)"};
}

Outcome partition_histogram() {
    const std::array<double, 5> target{100.1, 267.0, 311.5, 207.6, 113.8};
    const auto t0 = Clock::now();
    std::array<double, 5> hist{};
    const std::size_t seeds = 200;
    for (std::size_t s = 0; s < seeds; ++s) {
        data::PartitionSpec spec;
        spec.num_clients = 8;
        spec.primary_labels_per_client = 250;
        spec.assignment_mode = data::AssignmentMode::random;
        spec.seed = derive_seed(2024, {s});
        const auto h = data::primary_count_histogram(data::assign_primary_labels(spec, 1000), 1000);
        for (std::size_t b = 0; b < 5; ++b) hist[b] += static_cast<double>(h[b]) / static_cast<double>(seeds);
    }
    const double secs = seconds_since(t0);
    bool ok = secs < 10.0;
    double worst = 0.0;
    for (std::size_t b = 0; b < 5; ++b) {
        const double rel = std::abs(hist[b] - target[b]) / target[b];
        worst = std::max(worst, rel);
        ok = ok && rel <= 0.05;
    }
    return {ok, "mean histogram (" + join({hist.begin(), hist.end()}, 1) + ") vs (100.1,267.0,311.5,207.6,113.8), worst " +
                    fmt(100 * worst, 2) + "% (limit 5%), " + fmt(secs, 2) + " s (limit 10)"};
}

Outcome skew_law() {
    const std::size_t n = 100000;
    data::LabeledTable table{Matrix(n, 1), std::vector<int>(n, 0), 2};
    std::vector<std::size_t> candidates(n);
    std::iota(candidates.begin(), candidates.end(), 0);
    // Label 0 is primary for clients 1 and 4 out of 8.
    const data::LabelSets sets{{1}, {0}, {1}, {1}, {0}, {1}, {1}, {1}};
    bool ok = true;
    double worst_z = 0.0;
    for (double s : {0.0, 1.0, 100.0}) {
        data::PartitionSpec spec;
        spec.num_clients = 8;
        spec.primary_labels_per_client = 1;
        spec.skewness = s;
        spec.public_fraction = 1e-9;
        Rng rng(derive_seed(77, {static_cast<std::uint64_t>(s)}));
        const auto dist = data::distribute_samples(table, candidates, sets, spec, rng);
        const double assigned = static_cast<double>(n - dist.public_indices.size());
        const double total_weight = 2.0 * (1.0 + s) + 6.0;
        for (std::size_t i = 0; i < 8; ++i) {
            const bool primary = i == 1 || i == 4;
            const double p = (primary ? 1.0 + s : 1.0) / total_weight;
            const double sigma = std::sqrt(assigned * p * (1.0 - p));
            const double z = std::abs(static_cast<double>(dist.client_indices[i].size()) - assigned * p) / sigma;
            worst_z = std::max(worst_z, z);
            ok = ok && z <= 3.0;
        }
    }
    return {ok, "s in {0,1,100}, 10^5 samples, 8 clients: worst deviation " + fmt(worst_z, 2) + " sigma (limit 3)"};
}

Outcome analysis_identities() {
    const auto t0 = Clock::now();
    const auto results = verify::analysis_checks({});
    const double secs = seconds_since(t0);
    bool ok = secs < 10.0 && !results.empty();
    std::string detail;
    for (const auto& r : results) {
        ok = ok && r.passed;
        detail += r.name + "=" + (r.passed ? "ok " : "FAIL ") + "(" + r.detail + ") ";
    }
    return {ok, detail + fmt(secs, 2) + " s (limit 10)"};
}

Outcome mhd_benefit() {
    const auto t0 = Clock::now();
    const auto separate = per_seed([](auto s) { return experiment(fed::BaselineMode::separate, 1, s); }, 0);
    const auto single = per_seed([](auto s) { return experiment(fed::BaselineMode::mhd, 1, s); }, kLast);
    const auto multi = per_seed([](auto s) { return experiment(fed::BaselineMode::mhd, 4, s); }, kLast);
    const double secs = seconds_since(t0);
    const double gain = mean(multi) - mean(separate);
    const bool ok = gain >= 0.10 && mean(multi) > mean(single) && secs < 600.0;
    return {ok, "last-aux beta_sh m=4 " + fmt(mean(multi), 3) + " [" + join(multi) + "], m=1 " + fmt(mean(single), 3) + " [" +
                    join(single) + "], separate " + fmt(mean(separate), 3) + " [" + join(separate) + "]; gain " +
                    fmt(100 * gain, 1) + " pp (limit 10), " + fmt(secs, 0) + " s (limit 600)"};
}

double hop_mean(const std::vector<metrics::HopBucket>& hops, std::size_t rank) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (const auto& b : hops)
        if (b.distance == 2 || b.distance == 3) {
            sum += b.mean_accuracy.at(rank) * static_cast<double>(b.pairs);
            pairs += b.pairs;
        }
    return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

Outcome transitive() {
    auto make = [](fed::TopologySpec::Kind kind) {
        return [kind](std::uint64_t s) {
            auto c = experiment(fed::BaselineMode::mhd, 3, s);
            c.topology.kind = kind;
            c.topology.island_size = 2;
            return c;
        };
    };
    std::vector<fed::RunResult> cycle_runs;
    const auto cycle = per_seed(make(fed::TopologySpec::Kind::cycle), kLast, &cycle_runs);
    const auto islands = per_seed(make(fed::TopologySpec::Kind::islands), kLast);
    std::vector<double> far1, far3;
    for (const auto& r : cycle_runs) {
        far1.push_back(hop_mean(r.hops, 1));
        far3.push_back(hop_mean(r.hops, 3));
    }
    const double cycle_min = *std::min_element(cycle.begin(), cycle.end());
    const double islands_max = *std::max_element(islands.begin(), islands.end());
    const bool ok = cycle_min > islands_max && mean(far3) > mean(far1);
    return {ok, "last-aux beta_sh cycle [" + join(cycle) + "] vs islands [" + join(islands) + "] (min " + fmt(cycle_min, 3) +
                    " > max " + fmt(islands_max, 3) + "); cycle accuracy at distance 2-3: head3 " + fmt(mean(far3), 3) + " [" +
                    join(far3) + "] vs head1 " + fmt(mean(far1), 3) + " [" + join(far1) + "]"};
}

// Three teachers per step, so each aux head chooses among three candidates;
// with a single candidate both modes train identically.
Outcome confidence_gating() {
    auto make = [](distill::ConfidenceMode mode) {
        return [mode](std::uint64_t s) {
            auto c = experiment(fed::BaselineMode::mhd, 4, s);
            c.distill.delta = 3;
            c.distill.confidence_mode = mode;
            return c;
        };
    };
    const auto gated = per_seed(make(distill::ConfidenceMode::max_softmax), kLast);
    const auto random = per_seed(make(distill::ConfidenceMode::random), kLast);
    const bool distinct = gated != random;
    const bool ok = distinct && mean(gated) >= mean(random);
    return {ok, "delta=3, last-aux beta_sh max_softmax " + fmt(mean(gated), 3) + " [" + join(gated) + "] vs random " +
                    fmt(mean(random), 3) + " [" + join(random) + "]" + (distinct ? "" : " (arms identical: selection inactive)")};
}

Outcome baselines() {
    auto iid = [](fed::BaselineMode mode) {
        return [mode](std::uint64_t s) {
            auto c = experiment(mode, 1, s);
            c.partition.skewness = 0.0;
            c.fedavg_interval = 50;
            return c;
        };
    };
    std::vector<double> separate, fedavg, mhd_best, pooled;
    for (std::uint64_t s : kSeeds) {
        separate.push_back(final_beta_sh(fed::run_experiment(iid(fed::BaselineMode::separate)(s)), 0));
        fedavg.push_back(final_beta_sh(fed::run_experiment(iid(fed::BaselineMode::fedavg)(s)), 0));
        mhd_best.push_back(best_head_beta_sh(fed::run_experiment(iid(fed::BaselineMode::mhd)(s))));
        pooled.push_back(final_beta_sh(fed::run_experiment(iid(fed::BaselineMode::pooled_supervised)(s)), 0));
    }
    // Decentralized modes are separate and mhd; fedavg is reported next to pooled for reference.
    const bool ok = mean(fedavg) >= mean(separate) && mean(pooled) >= mean(separate) && mean(pooled) >= mean(mhd_best);
    return {ok, "s=0 beta_sh: pooled " + fmt(mean(pooled), 3) + " [" + join(pooled) + "], mhd best head " + fmt(mean(mhd_best), 3) +
                    " [" + join(mhd_best) + "], separate " + fmt(mean(separate), 3) + " [" + join(separate) +
                    "], fedavg(u=50) " + fmt(mean(fedavg), 3) + " [" + join(fedavg) + "] (fedavg >= separate required)"};
}

std::string jsonl(const fed::RunResult& r) {
    std::string out;
    for (const auto& rec : r.records) out += metrics::to_jsonl(rec) + "\n";
    return out;
}

Outcome determinism() {
    std::vector<fed::RunConfig> configs;
    for (auto mode : {fed::BaselineMode::mhd, fed::BaselineMode::fedavg}) {
        auto c = experiment(mode, 2, 11);
        c.total_steps = 600;
        c.eval_interval = 200;
        c.pool_interval = 25;
        configs.push_back(c);
    }
    auto dynamic = configs[0];
    dynamic.topology.kind = fed::TopologySpec::Kind::random;
    dynamic.topology.dynamic = true;
    configs.push_back(dynamic);
    bool ok = true;
    std::size_t bytes = 0;
    for (const auto& c : configs) {
        const auto a = jsonl(fed::run_experiment(c));
        const auto b = jsonl(fed::run_experiment(c));
        auto threaded = c;
        threaded.deterministic = false;
        const auto p = jsonl(fed::run_experiment(threaded));
        ok = ok && !a.empty() && a == b && a == p;
        bytes += a.size();
    }
    return {ok, std::to_string(configs.size()) + " configs (mhd, fedavg, dynamic topology) repeated and threaded: " +
                    (ok ? "byte-identical" : "MISMATCH") + ", " + std::to_string(bytes) + " bytes of JSONL"};
}

Outcome communication() {
    const auto report = fed::communication_report(fed::RunConfig{});
    std::ostringstream os;
    os << "default model: " << report.parameter_count << " parameters, fedavg " << report.fedavg_bytes_per_exchange
       << " B/round/client vs mhd " << report.mhd_bytes_per_exchange << " B/step/teacher, ratio " << fmt(report.ratio, 2)
       << " (limit > 10)";
    return {report.ratio > 10.0, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"partition statistics", partition_histogram},
        {"skew law", skew_law},
        {"analysis identities", analysis_identities},
        {"directional mhd benefit", mhd_benefit},
        {"transitive distillation", transitive},
        {"confidence gating", confidence_gating},
        {"baseline sanity", baselines},
        {"determinism", determinism},
        {"communication accounting", communication},
    };
    std::set<std::size_t> selected;
    std::FILE* report = nullptr;
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--report" && i + 1 < argc) {
            report = std::fopen(argv[++i], "w");
            if (!report) {
                std::fprintf(stderr, "cannot write %s\n", argv[i]);
                return 2;
            }
            continue;
        }
        selected.insert(static_cast<std::size_t>(std::atoi(argv[i])));
    }
    auto emit = [&](const std::string& line) {
        std::fputs(line.c_str(), stdout);
        std::fflush(stdout);
        if (report) {
            std::fputs(line.c_str(), report);
            std::fflush(report);
        }
    };

    std::size_t failed = 0, evaluated = 0;
    std::string failed_ids;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected.empty() && !selected.count(i + 1)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        ++evaluated;
        if (!o.passed) {
            ++failed;
            failed_ids += (failed_ids.empty() ? "" : ",") + std::to_string(i + 1);
        }
        char timing[32];
        std::snprintf(timing, sizeof timing, " [%.1f s]\n", seconds_since(t0));
        emit("CRITERION " + std::to_string(i + 1) + (o.passed ? " PASS " : " FAIL ") + criteria[i].first + ": " + o.detail +
             timing);
    }
    emit("ACCEPTANCE " + std::to_string(evaluated - failed) + "/" + std::to_string(evaluated) + " criteria passed" +
         (failed ? "; failed: " + failed_ids : "") + "\n");
    if (report) std::fclose(report);
    return 0;
}
