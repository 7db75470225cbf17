#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crashbench/autodiff.hpp"

namespace crashbench {

struct CaseMetrics {
    double rmse = 0.0;        // mm, over all frames/nodes
    double mae = 0.0;
    double rel_l2_x = 0.0;    // deformed-shape trajectory error
    double rel_l2_u = 0.0;    // displacement-field error
    double rmse_at_t = 0.0;   // probe frame
    double rmse_final = 0.0;
};

CaseMetrics case_metrics(const std::vector<ad::Tensor>& pred, const std::vector<ad::Tensor>& target,
                         const ad::Tensor& x0, double dt_anim, double probe_ms);

struct BootstrapCi {
    double mean = 0.0;
    double lo = 0.0, hi = 0.0;
    int replicates = 0;
    double level = 0.95;
};

BootstrapCi bootstrap_ci(const std::vector<double>& values, int replicates, std::uint64_t seed,
                         double level = 0.95);

struct PairedTests {
    double mean_diff = 0.0;      // mean(a - b); negative favors a on losses
    BootstrapCi diff_ci;
    double win_rate = 0.0;       // fraction of cases with a < b
    double perm_p = 1.0;         // sign-flip permutation, two-sided
    double wilcoxon_p = 1.0;     // signed-rank, two-sided
    bool wilcoxon_defined = true;
    bool exact_wilcoxon = false;
    int n = 0;
};

PairedTests paired_tests(const std::vector<double>& a, const std::vector<double>& b,
                         int permutations, std::uint64_t seed);

// exposed for enumeration-vs-approximation testing
double wilcoxon_signed_rank_p(const std::vector<double>& diffs, bool* defined = nullptr,
                              bool* exact = nullptr);

struct LeaderboardRow {
    std::string model;
    int n_cases = 0;
    double rmse_mean = 0.0;        // mm
    double mae_mean = 0.0;         // mm
    double rel_l2_x_mean = 0.0;
    double rel_l2_u_mean = 0.0;
    double rmse_probe_mean = 0.0;  // mm, at the probe frame
};

// Fixed columns rank,model,rmse_mm,mae_mm,rel_l2_x,rel_l2_u,rmse_at_probe_mm;
// rows ranked by mean RMSE ascending (model name breaks ties).
std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows);

// Per-model aggregate with bootstrap CIs across cases.
struct ModelSummary {
    std::string model;
    int n_cases = 0;
    BootstrapCi rmse;
    BootstrapCi mae;
};

struct SignificanceReport {
    std::string model_a, model_b;
    std::string metric = "rel_l2_u";
    std::vector<ModelSummary> models;  // summaries for a and b (optional)
    PairedTests tests;
};

std::string significance_to_json_text(const SignificanceReport& r);

}  // namespace crashbench
