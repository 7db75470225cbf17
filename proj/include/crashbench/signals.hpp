#pragma once
#include <string>
#include <vector>

#include "crashbench/solver.hpp"

namespace crashbench {

// Phaseless (forward + reverse) second-order Butterworth low-pass per the
// channel-frequency-class convention. dt in ms, signal uniformly sampled.
// Ends are padded with point-mirrored reflections of 10*(1/CFC) seconds.
std::vector<double> cfc_filter(const std::vector<double>& x, double dt_ms, double cfc);
inline std::vector<double> cfc60(const std::vector<double>& x, double dt_ms) {
    return cfc_filter(x, dt_ms, 60.0);
}

struct ExtractConfig {
    double cfc = 60.0;
    bool prefiltered = false;      // skip filtering (signals already conditioned)
    double rel_threshold = 0.03;   // contact-window threshold on |F|
};

struct QcBlock {
    double e_err_pct = 0.0;       // max |E_err| over the run, percent
    double hg_ratio_pct = 0.0;    // peak hourglass/internal energy, percent
    double added_mass_pct = 0.0;  // percent of structural mass
    double final_time_ms = 0.0;
    bool pass = true;
    std::vector<std::string> reasons;
    bool no_contact = false;
};

struct QoiRecord {
    double f_wall_max = 0.0;  // kN
    double e_int_max = 0.0;   // kJ
    double eta_ke = 0.0;      // fraction
    double a_max = 0.0;       // mm/ms^2
    double t1 = 0.0, t2 = 0.0, t_imp = 0.0;  // ms
    double w_p_max = 0.0;     // kJ
    double e_kin0 = 0.0;      // kJ
    bool no_contact = false;
    QcBlock qc;
};

// Filtered-peak wall-force QoIs, energy absorption, impact window.
QoiRecord extract_qoi(const TimeHistories& h, const ExtractConfig& cfg = {});

struct QualityThresholds {
    double e_err_max = 0.05;          // fraction
    double hg_ratio_max = 0.10;       // fraction of internal energy
    double dt_floor_frac_max = 0.50;  // timestep-collapse proxy
};

struct ScreenResult {
    bool pass = true;
    std::vector<std::string> reasons;
};

ScreenResult quality_screen(const TimeHistories& h, const TerminationReport& report,
                            const QualityThresholds& thr = {});

// extract_qoi + quality_screen + report diagnostics merged into one record.
QoiRecord make_qoi_record(const TimeHistories& h, const TerminationReport& report,
                          const ExtractConfig& cfg = {}, const QualityThresholds& thr = {});

}  // namespace crashbench
