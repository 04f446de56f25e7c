#pragma once

#include "mhd/federation.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

// Experiment config files: INI-style sections with `key = value` lines, `#`
// comments. Every key is addressed as `section.key`.
namespace mhd::config {

struct OutputOptions {
    std::string dir = "runs/default";
    bool checkpoints = true;
};

struct ExperimentConfig {
    fed::RunConfig run;
    OutputOptions output;
};

using Entries = std::vector<std::pair<std::string, std::string>>;

// Throws ConfigError with the line number on malformed lines.
Entries parse_text(const std::string& text);

// Throws ConfigError naming the key for unknown keys and bad values.
void apply(ExperimentConfig& config, const std::string& key, const std::string& value);

// Parses `key=value` (command-line overrides).
std::pair<std::string, std::string> split_assignment(const std::string& assignment);

ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
ExperimentConfig from_text(const std::string& text, const std::vector<std::string>& overrides = {});

// Every key with its current value, grouped by section; parses back to the
// same config.
std::string to_text(const ExperimentConfig& config);

// Key, default and one-line description for every key.
std::string reference();

bool is_known_key(const std::string& key);

}  // namespace mhd::config
