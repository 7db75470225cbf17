#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "crashbench/assembly.hpp"

namespace crashbench {

struct SolverConfig {
    double t_final = 20.0;    // ms
    double dt_anim = 1.0;     // ms, animation frame interval
    double dt_out = 0.1;      // ms, history sample interval
    double alpha = 0.90;      // timestep scale factor
    double dt_min = 1e-3;     // ms, floor; element steps below it are mass-scaled up
    double dt_max = 0.25;     // ms, cap (also the step for element-free models)
    double dt_fixed = 0.0;    // > 0 forces a constant step (testing hook)
    double contact_dt_factor = 0.05;  // fraction of the penalty-spring stability limit
    double k_pen = 0.0;       // kN/mm, 0 -> max over elements of E*A/L0
    double friction_tau = 0.01;       // ms, viscous tangential trial time constant
    double blowup_disp = 1e7;         // mm, displacement magnitude treated as blow-up
    std::vector<std::string> history_channels;  // empty = all; names validated
};

void validate(const SolverConfig& c);
SolverConfig solver_config_from_json_text(const std::string& text);
SolverConfig solver_config_from_json_file(const std::string& path);
std::string solver_config_to_json_text(const SolverConfig& c);

struct SolverState {
    double t = 0.0;
    std::vector<double> u;        // displacements, 3N
    std::vector<double> vel;      // velocities, 3N (full-step view)
    std::vector<double> mass;     // dynamic nodal mass incl. added mass, N
    std::vector<double> stress;       // per element, GPa
    std::vector<double> eps_p;        // signed axial plastic strain
    std::vector<double> eps_bar;      // accumulated plastic strain
    std::vector<double> strain_last;  // total strain at last constitutive update
    std::vector<double> stress_last;  // stress at last update, for work integration
    std::vector<double> added_mass;   // per element, t
    std::vector<std::uint8_t> eroded;
    double w_p = 0.0;     // plastic work, kJ
    double e_int = 0.0;   // internal energy, kJ
    double w_fric = 0.0;  // friction dissipation, kJ
    double structural_mass = 0.0;
    std::size_t step = 0;

    double added_mass_fraction() const;
};

SolverState init_state(const Assembly& a);

// alpha * min over active elements of (L_e/c_e)*sqrt(1 + added/m_e), using
// current lengths. Throws SolverFinished when every element is eroded.
double critical_timestep(const Assembly& a, const SolverState& s, double alpha);

struct SolverFinished : std::runtime_error {
    SolverFinished() : std::runtime_error("all elements eroded") {}
};

struct NumericalBlowup : std::runtime_error {
    std::size_t step;
    explicit NumericalBlowup(std::size_t step_, const std::string& what_)
        : std::runtime_error(what_), step(step_) {}
};

// Raises nodal masses on elements whose critical step (at current length)
// falls below dt_target; returns the added-mass fraction.
double apply_mass_scaling(const Assembly& a, SolverState& s, double dt_target, double alpha);

// Constitutive update + assembly of internal forces (3N, kN). Mutates the
// per-element plastic state and accumulates W_p / E_int increments.
void internal_forces(const Assembly& a, SolverState& s, std::vector<double>& f_int);

struct ContactResult {
    std::vector<std::array<double, 3>> wall_reaction;  // reaction on each wall, kN
    double penalty_energy = 0.0;   // stored spring energy, kJ
    double friction_power = 0.0;   // dissipation rate, kJ/ms
};

// Penalty contact with capped viscous Coulomb friction. f_cont is the force
// on the structure (3N); reactions follow Newton's third law.
ContactResult contact_forces(const Assembly& a, const std::vector<double>& pos,
                             const std::vector<double>& vel, double k_pen,
                             double friction_tau, std::vector<double>& f_cont);

// Scales a trial tangential force down to the Coulomb cap mu*|fn|.
std::array<double, 3> coulomb_cap(const std::array<double, 3>& trial, double mu, double fn_mag);

struct TimeHistories {
    std::vector<double> t;                      // ms
    std::vector<double> fx, fy, fz;             // wall reaction (summed over walls), kN
    std::vector<double> e_kin, e_int, e_cont, e_hg, w_p;  // kJ
    std::vector<double> acc;                    // |d v_cm / dt|, mm/ms^2
    std::size_t size() const { return t.size(); }
};

struct Frame {
    double t = 0.0;
    std::vector<double> u;    // 3N
    std::vector<double> vel;  // 3N
    std::vector<double> stress;   // E
    std::vector<double> eps_bar;  // E
    std::vector<std::uint8_t> eroded;
};

struct FieldTrajectory {
    double dt_anim = 1.0;
    std::vector<double> x0;                  // 3N reference coordinates
    std::vector<std::uint32_t> node_ids;     // N
    std::vector<std::uint32_t> element_ids;  // E
    std::vector<std::uint32_t> part_ids;     // E, per element
    std::vector<Frame> frames;
};

enum class TermCause { completed, all_eroded, blowup };

const char* to_string(TermCause c);

struct TerminationReport {
    TermCause cause = TermCause::completed;
    double t_end = 0.0;
    std::size_t steps = 0;
    double added_mass_fraction = 0.0;
    double e_err_final = 0.0;  // signed
    double e_err_max = 0.0;    // max |E_err| over the recorded history
    double dt_floor_fraction = 0.0;
    std::string message;
};

struct SolveResult {
    FieldTrajectory fields;
    TimeHistories hist;
    TerminationReport report;
};

SolveResult run_explicit(const Assembly& a, const SolverConfig& config);

}  // namespace crashbench
