#include "cli.hpp"

#include "mhd/checkpoint.hpp"
#include "mhd/error.hpp"
#include "mhd/verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace mhd::cli {
namespace fs = std::filesystem;
namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << content;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fixed(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed << v;
    return os.str();
}

std::string summary_csv(const std::vector<metrics::MetricsRecord>& records) {
    std::ostringstream os;
    os << "client,head,beta_priv,beta_sh,bytes_communicated\n";
    for (const auto& r : fed::final_records(records))
        os << r.client << ',' << r.head << ',' << fixed(r.beta_priv) << ',' << fixed(r.beta_sh) << ','
           << r.bytes_communicated << '\n';
    return os.str();
}

std::string cross_client_csv(const metrics::CrossClientMatrix& m) {
    std::ostringstream os;
    os << "student,data_owner,head,accuracy\n";
    for (std::size_t i = 0; i < m.clients; ++i)
        for (std::size_t j = 0; j < m.clients; ++j)
            for (std::size_t r = 0; r < m.heads; ++r) os << i << ',' << j << ',' << r << ',' << fixed(m.at(i, j, r)) << '\n';
    return os.str();
}

std::string hop_csv(const std::vector<metrics::HopBucket>& hops) {
    std::ostringstream os;
    os << "distance,pairs";
    const std::size_t heads = hops.empty() ? 0 : hops.front().mean_accuracy.size();
    for (std::size_t r = 0; r < heads; ++r) os << ",head" << r;
    os << '\n';
    for (const auto& b : hops) {
        os << (b.distance < 0 ? std::string("unreachable") : std::to_string(b.distance)) << ',' << b.pairs;
        for (double v : b.mean_accuracy) os << ',' << fixed(v);
        os << '\n';
    }
    return os.str();
}

std::vector<std::string> split_values(const std::string& text) {
    const char sep = text.find(';') != std::string::npos ? ';' : ',';
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ? c : '_';
    return out;
}

}  // namespace

fed::RunResult run_to_directory(const config::ExperimentConfig& config, const fs::path& dir) {
    config::ExperimentConfig resolved = config;
    resolved.run = fed::resolve(config.run);
    resolved.output.dir = dir.string();
    fs::create_directories(dir);
    write_file(dir / "config.ini", config::to_text(resolved));

    std::ofstream metrics_out(dir / "metrics.jsonl", std::ios::binary);
    if (!metrics_out) throw InputError("cannot write " + (dir / "metrics.jsonl").string());
    auto result = fed::run_experiment(resolved.run, [&](const metrics::MetricsRecord& r) {
        metrics_out << metrics::to_jsonl(r) << '\n';
    });
    metrics_out.close();

    write_file(dir / "summary.csv", summary_csv(result.records));
    write_file(dir / "cross_client.csv", cross_client_csv(result.cross_client));
    write_file(dir / "hop_report.csv", hop_csv(result.hops));
    write_file(dir / "comm_report.txt", result.comm.to_text());
    if (config.output.checkpoints) {
        fs::create_directories(dir / "checkpoints");
        for (std::size_t i = 0; i < result.models.size(); ++i)
            checkpoint::save(result.models[i], dir / "checkpoints" / ("client_" + std::to_string(i) + ".ckpt"));
    }
    return result;
}

SweepAxis parse_axis(const std::string& text) {
    const auto [key, values] = config::split_assignment(text);
    if (!config::is_known_key(key)) throw ConfigError("unknown sweep axis key '" + key + "'");
    SweepAxis axis{key, split_values(values)};
    if (axis.values.empty()) throw ConfigError("sweep axis '" + key + "' has no values");
    return axis;
}

std::size_t run_sweep(const config::ExperimentConfig& base, const std::vector<SweepAxis>& axes, const fs::path& dir,
                      std::ostream& log) {
    fs::create_directories(dir);
    std::size_t points = 1;
    for (const auto& a : axes) points *= a.values.size();

    struct Row {
        std::vector<std::string> coords;
        std::string status;
        std::vector<double> priv, shared, shared_std;
    };
    std::vector<Row> rows;
    std::size_t max_heads = 0, failures = 0;
    for (std::size_t p = 0; p < points; ++p) {
        config::ExperimentConfig cfg = base;
        std::vector<std::uint64_t> coord_index;
        Row row;
        std::string name = "p" + std::to_string(p);
        std::size_t rest = p;
        for (auto a = axes.rbegin(); a != axes.rend(); ++a) {
            const std::size_t idx = rest % a->values.size();
            rest /= a->values.size();
            coord_index.insert(coord_index.begin(), idx);
            row.coords.insert(row.coords.begin(), a->values[idx]);
        }
        for (std::size_t a = 0; a < axes.size(); ++a) {
            name += "_" + sanitize(axes[a].key.substr(axes[a].key.find('.') + 1)) + "-" + sanitize(row.coords[a]);
            try {
                config::apply(cfg, axes[a].key, row.coords[a]);
            } catch (const ConfigError& e) {
                row.status = std::string("config_error: ") + e.what();
            }
        }
        const bool explicit_seed =
            std::any_of(axes.begin(), axes.end(), [](const SweepAxis& a) { return a.key == "run.seed"; });
        if (!axes.empty() && !explicit_seed) cfg.run.seed = derive_seed(base.run.seed, coord_index);
        if (row.status.empty()) {
            try {
                const auto result = run_to_directory(cfg, dir / name);
                const std::size_t heads = result.models.empty() ? 0 : result.models.front().num_heads();
                max_heads = std::max(max_heads, heads);
                for (std::size_t r = 0; r < heads; ++r) {
                    row.priv.push_back(fed::mean_final(result.records, r, false));
                    row.shared.push_back(fed::mean_final(result.records, r, true));
                    row.shared_std.push_back(fed::client_std_final(result.records, r, true));
                }
                row.status = "ok";
            } catch (const DivergenceError& e) {
                row.status = std::string("diverged: ") + e.what();
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
            }
        }
        if (row.status != "ok") ++failures;
        log << name << ": " << row.status << '\n';
        rows.push_back(std::move(row));
    }

    std::ostringstream csv;
    for (const auto& a : axes) csv << a.key << ',';
    csv << "status";
    for (std::size_t r = 0; r < max_heads; ++r)
        csv << ",beta_priv_head" << r << ",beta_sh_head" << r << ",beta_sh_client_std_head" << r;
    csv << '\n';
    for (const auto& row : rows) {
        for (const auto& c : row.coords) csv << '"' << c << "\",";
        std::string status = row.status;
        for (char& ch : status)
            if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
        csv << status;
        for (std::size_t r = 0; r < max_heads; ++r) {
            if (r < row.priv.size())
                csv << ',' << fixed(row.priv[r]) << ',' << fixed(row.shared[r]) << ',' << fixed(row.shared_std[r]);
            else
                csv << ",,,";
        }
        csv << '\n';
    }
    write_file(dir / "sweep.csv", csv.str());

    // Mean and standard deviation across seeds for each setting of the other axes.
    const auto seed_axis = std::find_if(axes.begin(), axes.end(), [](const SweepAxis& a) { return a.key == "run.seed"; });
    if (seed_axis != axes.end()) {
        const auto seed_pos = static_cast<std::size_t>(seed_axis - axes.begin());
        std::map<std::vector<std::string>, std::vector<const Row*>> groups;
        for (const auto& row : rows) {
            if (row.status != "ok") continue;
            auto key = row.coords;
            key.erase(key.begin() + static_cast<std::ptrdiff_t>(seed_pos));
            groups[key].push_back(&row);
        }
        std::ostringstream agg;
        for (std::size_t a = 0; a < axes.size(); ++a)
            if (a != seed_pos) agg << axes[a].key << ',';
        agg << "seeds";
        for (std::size_t r = 0; r < max_heads; ++r) agg << ",beta_sh_head" << r << ",beta_sh_seed_std_head" << r;
        agg << '\n';
        for (const auto& [key, members] : groups) {
            for (const auto& c : key) agg << '"' << c << "\",";
            agg << members.size();
            for (std::size_t r = 0; r < max_heads; ++r) {
                std::vector<double> v;
                for (const Row* m : members)
                    if (r < m->shared.size()) v.push_back(m->shared[r]);
                if (v.empty()) {
                    agg << ",,";
                    continue;
                }
                double mean = 0.0, ss = 0.0;
                for (double x : v) mean += x / static_cast<double>(v.size());
                for (double x : v) ss += (x - mean) * (x - mean);
                agg << ',' << fixed(mean) << ',' << fixed(std::sqrt(ss / static_cast<double>(v.size())));
            }
            agg << '\n';
        }
        write_file(dir / "sweep_seeds.csv", agg.str());
    }
    return failures;
}

PartitionStats partition_stats(const config::ExperimentConfig& config, std::size_t seeds) {
    if (seeds == 0) throw ConfigError("partition-stats: --seeds must be positive");
    const fed::RunConfig run = fed::resolve(config.run);
    PartitionStats stats;
    for (std::size_t s = 0; s < seeds; ++s) {
        data::PartitionSpec spec = run.partition;
        if (s > 0) spec.seed = derive_seed(run.partition.seed, {s});
        const auto sets = data::assign_primary_labels(spec, run.dataset.num_classes);
        const auto h = data::primary_count_histogram(sets, run.dataset.num_classes);
        for (std::size_t b = 0; b < h.size(); ++b) stats.histogram[b] += static_cast<double>(h[b]) / static_cast<double>(seeds);
    }
    auto table = std::make_shared<const data::LabeledTable>(data::generate_dataset(run.dataset));
    const auto ds = data::partition(table, run.partition);
    for (const auto& c : ds.client_indices) stats.shard_sizes.push_back(c.size());
    stats.public_size = ds.public_indices.size();
    stats.test_size = ds.test_indices.size();
    return stats;
}

void evaluate_checkpoints(const fs::path& run_dir, std::ostream& out) {
    const auto cfg = config::load(run_dir / "config.ini");
    const fed::RunConfig run = fed::resolve(cfg.run);
    auto table = std::make_shared<const data::LabeledTable>(data::generate_dataset(run.dataset));
    const auto ds = data::partition(table, run.partition);
    const auto test = ds.shared_test();
    std::vector<double> uniform(run.dataset.num_classes, 0.0);
    for (int y : test.labels) uniform[static_cast<std::size_t>(y)] += 1.0;
    out << "client,head,beta_priv,beta_sh\n";
    for (std::size_t i = 0; i < run.partition.num_clients; ++i) {
        const auto model = checkpoint::load(run_dir / "checkpoints" / ("client_" + std::to_string(i) + ".ckpt"));
        const auto pc = metrics::per_class_accuracy(model, test);
        const auto marginal = ds.client_label_marginal(i);
        for (std::size_t r = 0; r < pc.size(); ++r)
            out << i << ',' << r << ',' << fixed(metrics::reweighted_accuracy(pc[r], marginal)) << ','
                << fixed(metrics::reweighted_accuracy(pc[r], uniform)) << '\n';
    }
}

int main(int argc, char** argv) {
    CLI::App app{"Multi-headed decentralized distillation experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool deterministic = true;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (INI sections)");
        sub->add_option("--set", overrides, "override, key=value (repeatable)");
        sub->add_option("--seed", seed, "master seed (overrides run.seed)");
        sub->add_flag("--deterministic,!--no-deterministic", deterministic, "train clients sequentially (default on)");
    };

    auto* run = app.add_subcommand("run", "train one configuration and write a run directory");
    add_common(run);
    run->add_option("--out-dir", out_dir, "run directory (overrides output.dir)");

    auto* sweep = app.add_subcommand("sweep", "run a Cartesian grid of configurations");
    add_common(sweep);
    sweep->add_option("--out-dir", out_dir, "sweep directory (overrides output.dir)");
    std::vector<std::string> axis_texts;
    sweep->add_option("--axis", axis_texts, "grid axis, key=v1,v2,... (repeatable)");

    auto* verify_cmd = app.add_subcommand("verify", "gradient checks and numerical identity checks");
    bool inject_fault = false;
    std::size_t verify_seeds = 20;
    verify_cmd->add_flag("--inject-fault", inject_fault, "corrupt one analytic gradient (negative control)");
    verify_cmd->add_option("--seeds", verify_seeds, "gradient-check seeds");

    auto* stats = app.add_subcommand("partition-stats", "primary-client histogram and shard sizes");
    add_common(stats);
    std::size_t stat_seeds = 1;
    stats->add_option("--seeds", stat_seeds, "partition seeds to average the histogram over");

    auto* eval = app.add_subcommand("eval", "re-evaluate the checkpoints of a run directory");
    std::string eval_dir;
    eval->add_option("run_dir", eval_dir, "run directory")->required();

    auto* ref = app.add_subcommand("config-reference", "print every config key with its default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : config_error;
    }

    auto load_config = [&](const CLI::App* sub) {
        config::ExperimentConfig cfg = config_path.empty() ? config::from_text("", overrides) : config::load(config_path, overrides);
        if (sub->count("--seed")) cfg.run.seed = seed;
        cfg.run.deterministic = deterministic;
        if (!out_dir.empty()) cfg.output.dir = out_dir;
        return cfg;
    };

    try {
        if (run->parsed()) {
            const auto cfg = load_config(run);
            const auto result = run_to_directory(cfg, cfg.output.dir);
            std::cout << "wrote " << cfg.output.dir << " (" << result.records.size() << " metric records)\n";
            for (std::size_t r = 0; r < result.models.front().num_heads(); ++r)
                std::cout << "head " << r << ": beta_priv " << fixed(fed::mean_final(result.records, r, false))
                          << "  beta_sh " << fixed(fed::mean_final(result.records, r, true)) << " (std across clients "
                          << fixed(fed::client_std_final(result.records, r, true)) << ")\n";
            return ok;
        }
        if (sweep->parsed()) {
            const auto cfg = load_config(sweep);
            std::vector<SweepAxis> axes;
            for (const auto& a : axis_texts) axes.push_back(parse_axis(a));
            const std::size_t failed = run_sweep(cfg, axes, cfg.output.dir, std::cout);
            std::cout << "sweep table: " << (fs::path(cfg.output.dir) / "sweep.csv").string() << '\n';
            return failed == 0 ? ok : failure;
        }
        if (verify_cmd->parsed()) {
            verify::VerifyOptions opts;
            opts.seeds = verify_seeds;
            opts.inject_fault = inject_fault;
            const auto results = verify::run_all(opts);
            std::cout << verify::format_report(results);
            const bool pass = verify::all_passed(results);
            std::cout << (pass ? "all checks passed\n" : "verification FAILED\n");
            return pass ? ok : failure;
        }
        if (stats->parsed()) {
            const auto cfg = load_config(stats);
            const auto s = partition_stats(cfg, stat_seeds);
            const auto& p = cfg.run.partition;
            std::cout << "clients " << p.num_clients << "  labels " << cfg.run.dataset.num_classes << "  primary/client "
                      << p.primary_labels_per_client << "  skewness " << p.skewness << " (not used by label assignment)\n";
            std::cout << "primary clients per label (mean over " << stat_seeds << " seeds)\n";
            const char* names[] = {"0", "1", "2", "3", ">=4"};
            for (std::size_t b = 0; b < 5; ++b) std::cout << "  " << std::setw(3) << names[b] << "  " << fixed(s.histogram[b]) << '\n';
            std::cout << "shard sizes";
            for (auto n : s.shard_sizes) std::cout << ' ' << n;
            std::cout << "\npublic " << s.public_size << "  shared test " << s.test_size << '\n';
            return ok;
        }
        if (eval->parsed()) {
            evaluate_checkpoints(eval_dir, std::cout);
            return ok;
        }
        if (ref->parsed()) {
            std::cout << config::reference();
            return ok;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return diverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failure;
    }
    return failure;
}

}  // namespace mhd::cli
