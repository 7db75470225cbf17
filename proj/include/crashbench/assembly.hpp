#pragma once
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Domain types shared by the whole toolkit. Unit system is (t, mm, ms):
// forces in kN, stresses in GPa, energies in kJ, densities in t/mm^3.

namespace crashbench {

struct Material {
    double e_mod = 210.0;     // GPa
    double nu = 0.30;
    double rho = 7.85e-6;     // t/mm^3
    double a = 0.0;           // yield stress parameter (GPa)
    double b = 0.0;           // hardening modulus (GPa)
    double n = 1.0;           // hardening exponent, 0 < n <= 1
    double eps_p_fail = 0.0;  // erosion plastic strain, 0 disables erosion

    double wave_speed() const;  // sqrt(E/rho), mm/ms
};

void validate(const Material& m);

// Flow stress A + B*eps_p^n (rate and thermal terms disabled).
double jc_flow_stress(const Material& m, double eps_p);

// Steel with the fixed elastic constants and the derived hardening rule
// B = A, n = A / (1 GPa).
Material material_from_yield(double a_gpa, double eps_p_fail = 0.0);

struct Part {
    std::uint32_t id = 0;
    std::string name;
    std::string group;      // thickness-edit group
    std::string component;  // semantic component label
    double thickness = 0.0; // mm
    Material material;
};

struct Element {
    std::uint32_t id = 0;
    std::uint32_t node_a = 0;  // indices into the node arrays
    std::uint32_t node_b = 0;
    std::uint32_t part_id = 0;
    double area = 0.0;  // mm^2
};

enum class WallKind { plane, cylinder };

struct RigidWall {
    WallKind kind = WallKind::plane;
    // plane: unit outward normal + offset, free space where n.x - offset > 0
    std::array<double, 3> normal{1.0, 0.0, 0.0};
    double offset = 0.0;
    // cylinder: axis along Z through (cx, cy)
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;
    double mu = 0.20;
    double k_pen = 0.0;  // kN/mm, 0 means use the solver's default rule
};

void validate(const RigidWall& w);

struct ThicknessEdit {
    std::string group;
    double scale = 1.0;       // s_g, must lie in [0.9, 1.1]
    double baseline = 0.0;    // t_g^(0) in mm, informational
};

struct Assembly {
    std::vector<std::uint32_t> node_ids;      // external ids, size N
    std::vector<double> coords;               // reference X0, 3N flat (x,y,z per node)
    std::vector<double> init_velocity;        // 3N flat, mm/ms
    std::vector<std::array<bool, 3>> fixed;   // per-node fixed DOFs
    std::vector<double> extra_mass;           // per-node non-structural mass, t
    std::vector<Element> elements;
    std::vector<Part> parts;                  // sorted by id
    std::vector<RigidWall> walls;
    double unit_width = 10.0;                 // mm, thickness -> area map

    std::size_t node_count() const { return node_ids.size(); }
    const Part& part(std::uint32_t part_id) const;
    double element_ref_length(const Element& e) const;
    // Half of rho*A*L0 from each incident element plus extra_mass.
    std::vector<double> lumped_masses() const;
    double structural_mass() const;  // lumped element mass only
};

void validate(const Assembly& a);

Assembly apply_thickness_edits(const Assembly& a, const std::vector<ThicknessEdit>& edits);

// Desk-scale bumper stand-in: a transverse beam chain (four sub-chains so the
// crash-box joints land on exact nodes) plus two crash-box chains running
// rearward in +X. Rear nodes are restrained in Y and Z; every node gets the
// uniform initial velocity (-v, 0, 0).
struct BumperConfig {
    int crash_box_nodes = 6;      // nodes per crash-box chain, >= 2
    int beam_segment_nodes = 6;   // nodes per beam quarter-segment, >= 2
    double crash_box_length = 300.0;  // mm
    double beam_half_width = 900.0;   // mm
    double crash_box_y = 450.0;       // mm, attachment offset from center
    double front_x = -40.0;           // mm, bumper front face
    double unit_width = 10.0;         // mm
    double t_cb = 2.0;                // mm
    double t_bb = 2.0;                // mm
    double sigma_y_cb = 0.375;        // GPa
    double sigma_y_bb = 0.625;        // GPa
    double eps_p_fail = 0.0;
    double v = 8.5;                   // mm/ms
    double pole_diameter = 300.0;     // mm, 0 disables the pole wall
    double pole_y = 0.0;              // mm
    double pole_gap = 10.0;           // mm
    // Trolley inertia behind the rails (sled-test style), split across the
    // rear nodes. Without it the light bumper slice rebounds elastically and
    // the crash boxes never see enough momentum to crush.
    double rear_mass = 15.0;
    std::optional<double> s_front;    // vehicle-style thickness scales
    std::optional<double> s_rail;
};

BumperConfig bumper_config_from_json_file(const std::string& path);
BumperConfig bumper_config_from_json_text(const std::string& text);
std::string bumper_config_to_json_text(const BumperConfig& c);

// x_c = -(|x_bumper| + d_pole/2 + gap)
double pole_center_x(double d_pole, double x_bumper, double gap);

Assembly build_bumper_assembly(const BumperConfig& config);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace crashbench
