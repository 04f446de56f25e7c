#pragma once

#include "mhd/config.hpp"

#include <filesystem>
#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace mhd::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, diverged = 3 };

// Writes the run directory: config.ini (resolved), metrics.jsonl,
// summary.csv, cross_client.csv, hop_report.csv, comm_report.txt and
// checkpoints/client_<i>.ckpt.
fed::RunResult run_to_directory(const config::ExperimentConfig& config, const std::filesystem::path& dir);

struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

// "key=v1,v2,..."; values are split on ';' instead when one is present, for
// list-valued keys ("model.hidden=32;64,64").
SweepAxis parse_axis(const std::string& text);

// One run directory per grid point plus sweep.csv. Point seeds are the master
// seed hashed with the grid coordinates, unless run.seed is itself an axis;
// then sweep_seeds.csv also holds mean and std across seeds. Failed points
// are recorded and the sweep continues; returns the number of failed points.
std::size_t run_sweep(const config::ExperimentConfig& base, const std::vector<SweepAxis>& axes,
                      const std::filesystem::path& dir, std::ostream& log);

struct PartitionStats {
    std::array<double, 5> histogram{};  // mean over seeds, buckets 0..3 and ≥4
    std::vector<std::size_t> shard_sizes;  // first seed
    std::size_t public_size = 0;
    std::size_t test_size = 0;
};

// Primary-client-count histogram averaged over `seeds` partition seeds.
PartitionStats partition_stats(const config::ExperimentConfig& config, std::size_t seeds);

// Re-evaluates the checkpoints of a run directory; prints one CSV row per
// client and head.
void evaluate_checkpoints(const std::filesystem::path& run_dir, std::ostream& out);

int main(int argc, char** argv);

}  // namespace mhd::cli
