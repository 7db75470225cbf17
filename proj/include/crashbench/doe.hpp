#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crashbench/assembly.hpp"

namespace crashbench {

struct VariableSpec {
    std::string name;
    std::string unit;
    double lo = 0.0;
    double hi = 1.0;
    double step = 1.0;                // engineering grid step
    std::optional<double> nominal;    // baseline value; midpoint when absent
};

struct DesignSpace {
    std::string kind;                 // "bumper" | "vehicle" | custom
    std::string constraint_set;       // "bumper_v1" | "none"
    std::vector<VariableSpec> vars;

    std::size_t dim() const { return vars.size(); }
    int index_of(const std::string& name) const;  // -1 when absent
};

void validate(const DesignSpace& s);
DesignSpace bumper_space();
DesignSpace vehicle_space();
DesignSpace design_space_from_json_text(const std::string& text);
std::string design_space_to_json_text(const DesignSpace& s);

struct DesignVector {
    std::vector<double> x;  // aligned with DesignSpace::vars

    double get(const DesignSpace& s, const std::string& name) const;
    std::optional<double> maybe(const DesignSpace& s, const std::string& name) const;
};

// Named view of a bumper-space design.
struct BumperDesign {
    double v, t_cb, t_bb, sigma_y_cb, sigma_y_bb, d_pole, y_pole;
};
BumperDesign bumper_view(const DesignSpace& s, const DesignVector& d);

// Nearest grid point, round-half-away-from-zero on the offset from lo.
double grid_round(const VariableSpec& v, double raw);
DesignVector grid_round(const DesignSpace& s, const std::vector<double>& raw);
bool on_grid(const DesignSpace& s, const DesignVector& d, double tol = 1e-9);
bool in_bounds(const DesignSpace& s, const DesignVector& d, double tol = 1e-9);

// --- low-discrepancy and stratified samplers (unit cube) ---

// Sobol sequence with direction numbers up to 16 dimensions; points are
// Owen-scrambled per dimension when scramble_seed is set. Index 0 of the
// unscrambled sequence is the all-zeros point.
class SobolSequence {
  public:
    SobolSequence(std::size_t dim, std::optional<std::uint64_t> scramble_seed);

    std::vector<double> next();
    void skip(std::uint64_t count);
    std::uint64_t index() const { return index_; }
    static constexpr std::size_t max_dim() { return 16; }

  private:
    std::size_t dim_;
    std::uint64_t index_ = 0;
    std::vector<std::uint32_t> x_;                 // current integer state per dim
    std::vector<std::array<std::uint32_t, 32>> v_; // direction numbers per dim
    std::vector<std::uint64_t> scramble_;          // per-dim scramble keys (empty = raw)
};

std::vector<std::vector<double>> sobol_unit(std::size_t count, std::size_t dim,
                                            std::optional<std::uint64_t> scramble_seed);

// Generator constants for dimension d = index + 1 (index 0 is the van der
// Corput dimension: degree 0, no polynomial). Exposed so tests can verify the
// table (polynomial primitivity, initial-value bounds) independently.
struct SobolDirection {
    int degree = 0;                       // s
    std::uint32_t poly = 0;               // bitmask, MSB = x^s ... LSB = 1
    std::array<std::uint32_t, 6> m_init{};  // first s initial values
};
const std::array<SobolDirection, 16>& sobol_directions();

// Centered Latin hypercube: stratum midpoints with seeded per-dimension
// permutations (one point per stratum per dimension by construction).
std::vector<std::vector<double>> lhs_unit(std::size_t count, std::size_t dim,
                                          std::uint64_t seed);

std::vector<DesignVector> sobol_sample(const DesignSpace& s, std::size_t count,
                                       std::uint64_t seed);
std::vector<DesignVector> lhs_sample(const DesignSpace& s, std::size_t count,
                                     std::uint64_t seed);

// --- anchors, feasibility, geometry screen ---

enum class Origin { anchor, sobol, lhs, maximin };
const char* to_string(Origin o);
Origin origin_from_string(const std::string& s);

struct AnchorPoint {
    std::string label;
    DesignVector design;
    bool projected = false;  // true when feasibility projection moved it
};

std::vector<AnchorPoint> anchors(const DesignSpace& s, const std::string& kind);

struct Feasibility {
    bool ok = true;
    std::vector<std::string> violations;
};

// Gauge-strength window constraints for the bumper space; spaces with
// constraint_set "none" are always feasible.
Feasibility feasible(const DesignSpace& s, const DesignVector& d);

double place_pole(double d_pole, double x_bumper, double gap);

// delta_min >= D_p/2 over structural nodes, XY-plane distance, inclusive.
bool prescreen_geometry(const Assembly& a, const RigidWall& pole);

// Greedy maximin pick over pre-normalized points; ties -> lowest index.
std::size_t maximin_next(const std::vector<std::vector<double>>& accumulated,
                         const std::vector<std::vector<double>>& candidates);

// --- campaign planning ---

struct PlanCase {
    std::string case_id;
    DesignVector design;
    Origin origin = Origin::sobol;
    int phase = 1;
    bool projected = false;
    std::string anchor_label;  // empty unless origin == anchor
};

struct CampaignPlan {
    std::uint64_t seed = 0;
    std::string kind;
    DesignSpace space;
    std::vector<PlanCase> cases;
};

struct DoeConfig {
    std::size_t candidate_pool = 4096;  // Sobol candidates per maximin batch
    double pole_gap = 10.0;             // mm
    std::size_t max_draws = 100000;     // infeasible-space guard
};

// sizes[k] is the case count of phase k+1. Phase 1 = anchors + fill (LHS for
// vehicle kind, feasible+prescreened Sobol for bumper kind); later phases are
// greedy maximin batches over fresh Sobol candidate pools. The reference
// assembly supplies node geometry for the prescreen (required for bumper).
CampaignPlan plan_campaign(const DesignSpace& space, const std::string& kind,
                           const std::vector<std::size_t>& sizes, std::uint64_t seed,
                           const Assembly* reference = nullptr, const DoeConfig& cfg = {});

std::string plan_to_json_text(const CampaignPlan& p);
CampaignPlan plan_from_json_text(const std::string& text);
CampaignPlan plan_from_json_file(const std::string& path);

}  // namespace crashbench
