#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Self-check suite: finite-difference gradient checks of every loss term and
// the numerical identity checks of the analysis module.
namespace mhd::verify {

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    std::string detail;
};

struct VerifyOptions {
    std::size_t seeds = 20;
    std::uint64_t base_seed = 1;
    // Perturbs the analytic gradient of the combined objective so the suite
    // can be seen to fail.
    bool inject_fault = false;
};

// One result per loss term: "gradient.ce", "gradient.embedding",
// "gradient.aux", "gradient.combined". `measured` is the worst relative error.
std::vector<CheckResult> gradient_suite(const VerifyOptions& options);

std::vector<CheckResult> analysis_checks(const VerifyOptions& options);

std::vector<CheckResult> run_all(const VerifyOptions& options);

// One line per check, "PASS name measured detail".
std::string format_report(const std::vector<CheckResult>& results);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace mhd::verify
