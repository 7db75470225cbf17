#pragma once
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crashbench/doe.hpp"
#include "crashbench/signals.hpp"
#include "crashbench/solver.hpp"

namespace crashbench {

struct CorruptionError : std::runtime_error {
    std::string path;
    std::uint64_t byte_offset;
    CorruptionError(std::string path_, std::uint64_t offset_, const std::string& what_);
};

struct CaseManifest {
    std::string case_id;
    DesignVector design;
    DesignSpace space;          // snapshot for feature normalization
    Origin origin = Origin::sobol;
    int phase = 1;
    std::uint64_t seed = 0;
    std::string status;         // "pass" | "fail"
    double pole_x = 0.0;        // x_c, mm
    QoiRecord qoi;
    // mesh topology (the binary field file stores arrays + ids only)
    std::vector<std::array<std::uint32_t, 2>> element_nodes;  // node ids per element
    std::vector<Part> parts;
    double unit_width = 10.0;
    std::string tool_version;
};

struct CaseBundle {
    CaseManifest manifest;
    TimeHistories hist;
    FieldTrajectory fields;
};

inline constexpr const char* kHistoryHeader =
    "time_ms,fx_kN,fy_kN,fz_kN,e_kin_kJ,e_int_kJ,e_cont_kJ,e_hg_kJ,w_p_kJ,a_mm_ms2";

inline constexpr const char* kMasterHeader =
    "case_id,v_mm_ms,t_cb_mm,t_bb_mm,sigma_y_cb_gpa,sigma_y_bb_gpa,d_pole_mm,y_pole_mm,"
    "x_pole_mm,f_wall_max_kN,e_int_max_kJ,eta_ke_pct,a_max_mm_ms2,t1_ms,t2_ms,t_imp_ms,"
    "w_p_max_kJ,e_kin0_kJ,e_err_pct,hg_ratio_pct,added_mass_pct,final_time_ms,phase";

std::filesystem::path write_bundle(const CaseBundle& b, const std::filesystem::path& root,
                                   bool overwrite = false);
CaseBundle read_bundle(const std::filesystem::path& case_dir);

std::string history_to_csv(const TimeHistories& h);
TimeHistories history_from_csv_text(const std::string& text);

struct MasterRow {
    std::string case_id;
    BumperDesign design;
    double pole_x = 0.0;
    QoiRecord qoi;
    int phase = 1;
};

std::string master_row_csv(const MasterRow& r);
MasterRow master_row_from_bundle(const CaseBundle& b);

// Rebuild the master table by scanning passing bundles under root (the
// failed/ subtree is excluded); rows sorted by case_id.
std::vector<MasterRow> master_table(const std::filesystem::path& root);
void write_master_csv(const std::vector<MasterRow>& rows, const std::filesystem::path& path);

// --- campaign orchestration ---

using AssemblyFactory = std::function<Assembly(const DesignSpace&, const DesignVector&)>;

// Builds the default bumper assembly from a base config with the design's
// thicknesses, yields, velocity and pole geometry substituted in.
AssemblyFactory bumper_case_factory(const BumperConfig& base, double pole_gap = 10.0);

struct CaseOutcome {
    std::string case_id;
    bool pass = false;
    std::vector<std::string> reasons;
};

struct CampaignReport {
    std::size_t n_pass = 0;
    std::size_t n_fail = 0;
    bool interrupted = false;
    std::string error;
    std::vector<CaseOutcome> outcomes;
};

struct CampaignOptions {
    SolverConfig solver;
    ExtractConfig extract;
    QualityThresholds thresholds;
    std::size_t workers = 1;
    bool overwrite = false;
};

// plan -> build -> solve -> screen -> persist. Individual case failures are
// recorded (bundle under failed/) and never abort the campaign; I/O errors
// abort after writing a partial-progress report.
CampaignReport run_campaign(const CampaignPlan& plan, const AssemblyFactory& factory,
                            const CampaignOptions& opts, const std::filesystem::path& root);

// --- splits ---

struct SplitSet {
    std::uint64_t seed = 0;
    std::vector<double> fractions;
    std::vector<std::string> train, validation, test;
};

SplitSet make_splits(const std::vector<std::string>& passing_ids,
                     const std::vector<double>& fractions, std::uint64_t seed);
void write_splits(const SplitSet& s, const std::filesystem::path& path);
SplitSet read_splits(const std::filesystem::path& path);

}  // namespace crashbench
