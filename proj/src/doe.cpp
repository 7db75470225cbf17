#include "crashbench/doe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "crashbench/rng.hpp"

namespace crashbench {

namespace {

using json = nlohmann::ordered_json;

constexpr double kGridTol = 1e-9;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

template <typename T>
T pull(const json& j, const char* key) {
    if (!j.contains(key)) fail(fmt::format("missing key '{}'", key));
    return j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const char* what) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(known.begin(), known.end(),
                         [&](const char* k) { return key == k; }) == known.end())
            fail(fmt::format("unknown key '{}' in {}", key, what));
    }
}

}  // namespace

// --- design space ---

int DesignSpace::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < vars.size(); ++i)
        if (vars[i].name == name) return static_cast<int>(i);
    return -1;
}

void validate(const DesignSpace& s) {
    if (s.vars.empty()) fail("design space has no variables");
    std::set<std::string> seen;
    for (const auto& v : s.vars) {
        if (v.name.empty()) fail("design variable with empty name");
        if (!seen.insert(v.name).second) fail(fmt::format("duplicate variable '{}'", v.name));
        if (!(v.step > 0.0)) fail(fmt::format("variable '{}': step must be positive", v.name));
        if (!(v.hi >= v.lo)) fail(fmt::format("variable '{}': hi below lo", v.name));
        const double span_steps = (v.hi - v.lo) / v.step;
        if (std::abs(span_steps - std::round(span_steps)) > 1e-6 * std::max(1.0, span_steps))
            fail(fmt::format("variable '{}': (hi - lo) is not a whole number of steps", v.name));
        if (v.nominal) {
            const double snapped = grid_round(v, *v.nominal);
            if (std::abs(snapped - *v.nominal) > kGridTol * std::max(1.0, std::abs(*v.nominal)))
                fail(fmt::format("variable '{}': nominal {} is not a grid point", v.name,
                                 *v.nominal));
        }
    }
}

DesignSpace bumper_space() {
    DesignSpace s;
    s.kind = "bumper";
    s.constraint_set = "bumper_v1";
    s.vars = {
        {"v", "mm/ms", 2.0, 15.0, 0.5, 8.5},
        {"t_cb", "mm", 1.0, 3.0, 0.1, 2.0},
        {"t_bb", "mm", 1.0, 3.0, 0.1, 2.0},
        {"sigma_y_cb", "GPa", 0.15, 0.6, 0.025, 0.375},
        {"sigma_y_bb", "GPa", 0.25, 1.0, 0.025, 0.625},
        {"d_pole", "mm", 100.0, 500.0, 10.0, 300.0},
        {"y_pole", "mm", 0.0, 800.0, 25.0, 0.0},
    };
    return s;
}

DesignSpace vehicle_space() {
    DesignSpace s;
    s.kind = "vehicle";
    s.constraint_set = "none";
    s.vars = {
        {"v", "km/h", 50.0, 64.0, 0.5, 56.0},
        {"s_front", "-", 0.9, 1.1, 0.005, 1.0},
        {"s_rail", "-", 0.9, 1.1, 0.005, 1.0},
    };
    return s;
}

namespace {

json space_to_json(const DesignSpace& s) {
    json j;
    j["kind"] = s.kind;
    j["constraint_set"] = s.constraint_set;
    j["vars"] = json::array();
    for (const auto& v : s.vars) {
        json jv;
        jv["name"] = v.name;
        jv["unit"] = v.unit;
        jv["lo"] = v.lo;
        jv["hi"] = v.hi;
        jv["step"] = v.step;
        if (v.nominal) jv["nominal"] = *v.nominal;
        j["vars"].push_back(std::move(jv));
    }
    return j;
}

DesignSpace space_from_json(const json& j) {
    reject_unknown(j, {"kind", "constraint_set", "vars"}, "design space");
    DesignSpace s;
    s.kind = pull<std::string>(j, "kind");
    s.constraint_set = pull<std::string>(j, "constraint_set");
    if (!j.contains("vars") || !j.at("vars").is_array()) fail("design space: missing vars array");
    for (const auto& jv : j.at("vars")) {
        reject_unknown(jv, {"name", "unit", "lo", "hi", "step", "nominal"}, "design variable");
        VariableSpec v;
        v.name = pull<std::string>(jv, "name");
        v.unit = pull<std::string>(jv, "unit");
        v.lo = pull<double>(jv, "lo");
        v.hi = pull<double>(jv, "hi");
        v.step = pull<double>(jv, "step");
        if (jv.contains("nominal")) v.nominal = jv.at("nominal").get<double>();
        s.vars.push_back(std::move(v));
    }
    validate(s);
    return s;
}

}  // namespace

std::string design_space_to_json_text(const DesignSpace& s) { return space_to_json(s).dump(2); }

DesignSpace design_space_from_json_text(const std::string& text) {
    return space_from_json(json::parse(text));
}

// --- design vectors and grids ---

double DesignVector::get(const DesignSpace& s, const std::string& name) const {
    const int i = s.index_of(name);
    if (i < 0 || static_cast<std::size_t>(i) >= x.size())
        throw std::out_of_range(fmt::format("design has no variable '{}'", name));
    return x[static_cast<std::size_t>(i)];
}

std::optional<double> DesignVector::maybe(const DesignSpace& s, const std::string& name) const {
    const int i = s.index_of(name);
    if (i < 0 || static_cast<std::size_t>(i) >= x.size()) return std::nullopt;
    return x[static_cast<std::size_t>(i)];
}

BumperDesign bumper_view(const DesignSpace& s, const DesignVector& d) {
    return BumperDesign{d.get(s, "v"),          d.get(s, "t_cb"),
                        d.get(s, "t_bb"),       d.get(s, "sigma_y_cb"),
                        d.get(s, "sigma_y_bb"), d.get(s, "d_pole"),
                        d.get(s, "y_pole")};
}

double grid_round(const VariableSpec& v, double raw) {
    const long long idx_max = std::llround((v.hi - v.lo) / v.step);
    long long idx = std::llround((raw - v.lo) / v.step);
    idx = std::clamp(idx, 0ll, idx_max);
    const double value = v.lo + static_cast<double>(idx) * v.step;
    // lo + k*step accumulates binary dust (0.15 + 9*0.025 != 0.375 exactly);
    // the engineering grids are decimal, so snap to nine decimals.
    return std::round(value * 1e9) / 1e9;
}

DesignVector grid_round(const DesignSpace& s, const std::vector<double>& raw) {
    if (raw.size() != s.dim())
        throw std::invalid_argument(fmt::format("design has {} values, space has {} variables",
                                                raw.size(), s.dim()));
    DesignVector d;
    d.x.resize(s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i) d.x[i] = grid_round(s.vars[i], raw[i]);
    return d;
}

bool on_grid(const DesignSpace& s, const DesignVector& d, double tol) {
    if (d.x.size() != s.dim()) return false;
    for (std::size_t i = 0; i < s.dim(); ++i) {
        const double snapped = grid_round(s.vars[i], d.x[i]);
        if (std::abs(snapped - d.x[i]) > tol * std::max(1.0, std::abs(d.x[i]))) return false;
    }
    return true;
}

bool in_bounds(const DesignSpace& s, const DesignVector& d, double tol) {
    if (d.x.size() != s.dim()) return false;
    for (std::size_t i = 0; i < s.dim(); ++i) {
        const auto& v = s.vars[i];
        const double slack = tol * std::max({1.0, std::abs(v.lo), std::abs(v.hi)});
        if (d.x[i] < v.lo - slack || d.x[i] > v.hi + slack) return false;
    }
    return true;
}

// --- Sobol sequence ---

namespace {

// Primitive polynomials over GF(2) and odd initial values m_i < 2^i, one row
// per dimension (row 0, the van der Corput radical inverse, needs neither).
constexpr std::array<SobolDirection, 16> kSobolTable = {{
    {0, 0u, {}},
    {1, 0b11u, {1u}},
    {2, 0b111u, {1u, 3u}},
    {3, 0b1011u, {1u, 3u, 1u}},
    {3, 0b1101u, {1u, 1u, 1u}},
    {4, 0b10011u, {1u, 1u, 3u, 3u}},
    {4, 0b11001u, {1u, 3u, 5u, 13u}},
    {5, 0b100101u, {1u, 1u, 5u, 5u, 17u}},
    {5, 0b101001u, {1u, 1u, 5u, 5u, 5u}},
    {5, 0b101111u, {1u, 1u, 7u, 11u, 19u}},
    {5, 0b110111u, {1u, 1u, 5u, 1u, 1u}},
    {5, 0b111011u, {1u, 1u, 1u, 3u, 11u}},
    {5, 0b111101u, {1u, 3u, 5u, 5u, 31u}},
    {6, 0b1000011u, {1u, 3u, 3u, 9u, 7u, 49u}},
    {6, 0b1011011u, {1u, 1u, 1u, 15u, 21u, 21u}},
    {6, 0b1100001u, {1u, 3u, 1u, 13u, 27u, 49u}},
}};

std::array<std::uint32_t, 32> direction_numbers(std::size_t dim_index) {
    std::array<std::uint32_t, 32> v{};
    if (dim_index == 0) {
        for (int j = 0; j < 32; ++j) v[static_cast<std::size_t>(j)] = 1u << (31 - j);
        return v;
    }
    const auto& row = kSobolTable[dim_index];
    const int s = row.degree;
    std::array<std::uint32_t, 32> m{};
    for (int i = 0; i < s; ++i) m[static_cast<std::size_t>(i)] = row.m_init[static_cast<std::size_t>(i)];
    for (int i = s; i < 32; ++i) {
        std::uint32_t mi = m[static_cast<std::size_t>(i - s)] ^ (m[static_cast<std::size_t>(i - s)] << s);
        for (int k = 1; k < s; ++k)
            if ((row.poly >> (s - k)) & 1u) mi ^= m[static_cast<std::size_t>(i - k)] << k;
        m[static_cast<std::size_t>(i)] = mi;
    }
    for (int i = 0; i < 32; ++i) v[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] << (31 - i);
    return v;
}

// Nested digit scramble: the flip of bit j depends only on the digits above
// it, which keeps every base-2 elementary interval property intact.
std::uint32_t owen_scramble(std::uint32_t x, std::uint64_t key) {
    std::uint32_t out = 0;
    for (int j = 0; j < 32; ++j) {
        const std::uint32_t prefix = (j == 0) ? 0u : (x >> (32 - j));
        const std::uint64_t h =
            hash_mix(key, (static_cast<std::uint64_t>(j) << 32) | prefix);
        const std::uint32_t bit = (x >> (31 - j)) & 1u;
        out |= (bit ^ static_cast<std::uint32_t>(h & 1u)) << (31 - j);
    }
    return out;
}

}  // namespace

const std::array<SobolDirection, 16>& sobol_directions() { return kSobolTable; }

SobolSequence::SobolSequence(std::size_t dim, std::optional<std::uint64_t> scramble_seed)
    : dim_(dim) {
    if (dim < 1 || dim > max_dim())
        throw std::invalid_argument(fmt::format("sobol dimension {} outside [1, {}]", dim, max_dim()));
    x_.assign(dim, 0u);
    v_.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) v_[d] = direction_numbers(d);
    if (scramble_seed) {
        scramble_.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) scramble_[d] = hash_mix(*scramble_seed, d);
    }
}

std::vector<double> SobolSequence::next() {
    std::vector<double> p(dim_);
    for (std::size_t d = 0; d < dim_; ++d) {
        std::uint32_t bits = x_[d];
        if (!scramble_.empty()) bits = owen_scramble(bits, scramble_[d]);
        p[d] = static_cast<double>(bits) * 0x1p-32;
    }
    skip(1);
    return p;
}

void SobolSequence::skip(std::uint64_t count) {
    for (std::uint64_t i = 0; i < count; ++i) {
        ++index_;
        const int bit = std::countr_zero(index_);  // gray code: one flip per step
        if (bit < 32)
            for (std::size_t d = 0; d < dim_; ++d) x_[d] ^= v_[d][static_cast<std::size_t>(bit)];
    }
}

std::vector<std::vector<double>> sobol_unit(std::size_t count, std::size_t dim,
                                            std::optional<std::uint64_t> scramble_seed) {
    SobolSequence seq(dim, scramble_seed);
    std::vector<std::vector<double>> pts;
    pts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) pts.push_back(seq.next());
    return pts;
}

std::vector<std::vector<double>> lhs_unit(std::size_t count, std::size_t dim,
                                          std::uint64_t seed) {
    std::vector<std::vector<double>> pts(count, std::vector<double>(dim));
    if (count == 0) return pts;
    std::vector<std::size_t> perm(count);
    for (std::size_t d = 0; d < dim; ++d) {
        for (std::size_t i = 0; i < count; ++i) perm[i] = i;
        SplitMix64 rng(hash_mix(seed, d));
        fisher_yates(perm, rng);
        for (std::size_t i = 0; i < count; ++i)
            pts[i][d] = (static_cast<double>(perm[i]) + 0.5) / static_cast<double>(count);
    }
    return pts;
}

namespace {

DesignVector unit_to_design(const DesignSpace& s, const std::vector<double>& u) {
    std::vector<double> raw(s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i)
        raw[i] = s.vars[i].lo + u[i] * (s.vars[i].hi - s.vars[i].lo);
    return grid_round(s, raw);
}

}  // namespace

std::vector<DesignVector> sobol_sample(const DesignSpace& s, std::size_t count,
                                       std::uint64_t seed) {
    validate(s);
    SobolSequence seq(s.dim(), seed);
    std::vector<DesignVector> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(unit_to_design(s, seq.next()));
    return out;
}

std::vector<DesignVector> lhs_sample(const DesignSpace& s, std::size_t count,
                                     std::uint64_t seed) {
    validate(s);
    std::vector<DesignVector> out;
    out.reserve(count);
    for (const auto& u : lhs_unit(count, s.dim(), seed)) out.push_back(unit_to_design(s, u));
    return out;
}

// --- anchors, feasibility, geometry ---

const char* to_string(Origin o) {
    switch (o) {
        case Origin::anchor: return "anchor";
        case Origin::sobol: return "sobol";
        case Origin::lhs: return "lhs";
        case Origin::maximin: return "maximin";
    }
    return "unknown";
}

Origin origin_from_string(const std::string& s) {
    if (s == "anchor") return Origin::anchor;
    if (s == "sobol") return Origin::sobol;
    if (s == "lhs") return Origin::lhs;
    if (s == "maximin") return Origin::maximin;
    throw std::invalid_argument(fmt::format("unknown origin '{}'", s));
}

Feasibility feasible(const DesignSpace& s, const DesignVector& d) {
    Feasibility f;
    if (s.constraint_set == "none") return f;
    if (s.constraint_set != "bumper_v1")
        throw std::invalid_argument(fmt::format("unknown constraint set '{}'", s.constraint_set));
    const BumperDesign b = bumper_view(s, d);
    const double tol = 1e-9;
    const double beam = b.t_bb * std::sqrt(b.sigma_y_bb);
    const double box = b.t_cb * std::sqrt(b.sigma_y_cb);
    if (beam < 0.8 - tol || beam > 2.5 + tol)
        f.violations.push_back(fmt::format(
            "beam gauge-strength t_bb*sqrt(sigma_y_bb) = {:.6g} outside [0.8, 2.5]", beam));
    if (box < 0.6 - tol || box > 2.0 + tol)
        f.violations.push_back(fmt::format(
            "crash-box gauge-strength t_cb*sqrt(sigma_y_cb) = {:.6g} outside [0.6, 2.0]", box));
    if (b.sigma_y_bb < b.sigma_y_cb - tol)
        f.violations.push_back(fmt::format("sigma_y_bb = {:.6g} below sigma_y_cb = {:.6g}",
                                           b.sigma_y_bb, b.sigma_y_cb));
    f.ok = f.violations.empty();
    return f;
}

double place_pole(double d_pole, double x_bumper, double gap) {
    return pole_center_x(d_pole, x_bumper, gap);
}

bool prescreen_geometry(const Assembly& a, const RigidWall& pole) {
    if (pole.kind != WallKind::cylinder)
        throw std::invalid_argument("geometric prescreen expects a cylindrical pole");
    double min_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.node_count(); ++i) {
        const double dx = a.coords[3 * i] - pole.cx;
        const double dy = a.coords[3 * i + 1] - pole.cy;
        min_d2 = std::min(min_d2, dx * dx + dy * dy);
    }
    return std::sqrt(min_d2) >= pole.radius;
}

namespace {

double nominal_of(const VariableSpec& v) {
    if (v.nominal) return *v.nominal;
    return grid_round(v, 0.5 * (v.lo + v.hi));
}

DesignVector nominal_design(const DesignSpace& s) {
    DesignVector d;
    d.x.resize(s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i) d.x[i] = nominal_of(s.vars[i]);
    return d;
}

// Feasibility repair for anchors: the scenario variables (speed, gauges, pole
// geometry) are fixed by the anchor's purpose, so only the two yield grades
// may move. Exhaustive search over their grid, nearest by normalized L2,
// first hit wins ties (sigma_y_cb outer loop, sigma_y_bb inner, ascending).
DesignVector project_anchor(const DesignSpace& s, const DesignVector& d,
                            const std::string& label) {
    const int icb = s.index_of("sigma_y_cb");
    const int ibb = s.index_of("sigma_y_bb");
    if (icb < 0 || ibb < 0)
        fail(fmt::format("anchor '{}' is infeasible and the space has no yield grades to adjust",
                         label));
    const auto& vcb = s.vars[static_cast<std::size_t>(icb)];
    const auto& vbb = s.vars[static_cast<std::size_t>(ibb)];
    const long long ncb = std::llround((vcb.hi - vcb.lo) / vcb.step);
    const long long nbb = std::llround((vbb.hi - vbb.lo) / vbb.step);
    const double scale_cb = std::max(vcb.hi - vcb.lo, 1e-12);
    const double scale_bb = std::max(vbb.hi - vbb.lo, 1e-12);

    DesignVector best;
    double best_score = std::numeric_limits<double>::infinity();
    DesignVector trial = d;
    for (long long a = 0; a <= ncb; ++a) {
        const double cb = grid_round(vcb, vcb.lo + static_cast<double>(a) * vcb.step);
        for (long long b = 0; b <= nbb; ++b) {
            const double bb = grid_round(vbb, vbb.lo + static_cast<double>(b) * vbb.step);
            trial.x[static_cast<std::size_t>(icb)] = cb;
            trial.x[static_cast<std::size_t>(ibb)] = bb;
            if (!feasible(s, trial).ok) continue;
            const double dcb = (cb - d.x[static_cast<std::size_t>(icb)]) / scale_cb;
            const double dbb = (bb - d.x[static_cast<std::size_t>(ibb)]) / scale_bb;
            const double score = dcb * dcb + dbb * dbb;
            if (score < best_score) {
                best_score = score;
                best = trial;
            }
        }
    }
    if (!std::isfinite(best_score))
        fail(fmt::format("anchor '{}' cannot be projected onto the feasible set", label));
    return best;
}

void push_anchor(std::vector<AnchorPoint>& out, const DesignSpace& s, std::string label,
                 DesignVector d) {
    d = grid_round(s, d.x);
    AnchorPoint a;
    a.label = std::move(label);
    if (feasible(s, d).ok) {
        a.design = std::move(d);
    } else {
        a.design = project_anchor(s, d, a.label);
        a.projected = true;
    }
    out.push_back(std::move(a));
}

std::vector<AnchorPoint> vehicle_anchors(const DesignSpace& s) {
    std::vector<AnchorPoint> out;
    const DesignVector base = nominal_design(s);
    push_anchor(out, s, "baseline", base);
    for (std::size_t i = 0; i < s.dim(); ++i) {
        DesignVector lo = base;
        lo.x[i] = s.vars[i].lo;
        push_anchor(out, s, s.vars[i].name + "_lo", lo);
        DesignVector hi = base;
        hi.x[i] = s.vars[i].hi;
        push_anchor(out, s, s.vars[i].name + "_hi", hi);
    }
    const std::size_t corners = std::size_t{1} << s.dim();
    for (std::size_t c = 0; c < corners; ++c) {
        DesignVector d = base;
        std::string bits(s.dim(), '0');
        for (std::size_t i = 0; i < s.dim(); ++i) {
            const bool high = (c >> (s.dim() - 1 - i)) & 1u;
            d.x[i] = high ? s.vars[i].hi : s.vars[i].lo;
            bits[i] = high ? '1' : '0';
        }
        push_anchor(out, s, "corner_" + bits, d);
    }
    return out;
}

std::vector<AnchorPoint> bumper_anchors(const DesignSpace& s) {
    std::vector<AnchorPoint> out;
    const DesignVector base = nominal_design(s);
    auto var = [&](const char* name) -> const VariableSpec& {
        const int i = s.index_of(name);
        if (i < 0) fail(fmt::format("bumper anchors need variable '{}'", name));
        return s.vars[static_cast<std::size_t>(i)];
    };
    auto with = [&](std::initializer_list<std::pair<const char*, double>> edits) {
        DesignVector d = base;
        for (const auto& [name, value] : edits)
            d.x[static_cast<std::size_t>(s.index_of(name))] = value;
        return d;
    };
    const auto& v = var("v");
    const auto& t_cb = var("t_cb");
    const auto& t_bb = var("t_bb");
    const auto& d_pole = var("d_pole");
    const auto& y_pole = var("y_pole");
    push_anchor(out, s, "baseline", base);
    push_anchor(out, s, "low_speed", with({{"v", v.lo}}));
    push_anchor(out, s, "frontal_50", with({{"v", grid_round(v, 50.0 / 3.6)}}));
    push_anchor(out, s, "frontal_54", with({{"v", grid_round(v, 54.0 / 3.6)}}));
    push_anchor(out, s, "lightest_gauge", with({{"t_cb", t_cb.lo}, {"t_bb", t_bb.lo}}));
    push_anchor(out, s, "heaviest_gauge", with({{"t_cb", t_cb.hi}, {"t_bb", t_bb.hi}}));
    push_anchor(out, s, "smallest_pole", with({{"d_pole", d_pole.lo}}));
    push_anchor(out, s, "largest_pole", with({{"d_pole", d_pole.hi}}));
    push_anchor(out, s, "max_offset", with({{"y_pole", y_pole.hi}}));
    return out;
}

}  // namespace

std::vector<AnchorPoint> anchors(const DesignSpace& s, const std::string& kind) {
    validate(s);
    if (kind == "vehicle") return vehicle_anchors(s);
    if (kind == "bumper") return bumper_anchors(s);
    throw std::invalid_argument(fmt::format("unknown campaign kind '{}'", kind));
}

std::size_t maximin_next(const std::vector<std::vector<double>>& accumulated,
                         const std::vector<std::vector<double>>& candidates) {
    if (accumulated.empty()) throw std::invalid_argument("maximin needs accumulated points");
    if (candidates.empty()) throw std::invalid_argument("maximin needs candidates");
    std::size_t best = 0;
    double best_dist = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (candidates[c].size() != accumulated.front().size())
            throw std::invalid_argument("maximin point dimensions disagree");
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& a : accumulated) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double diff = candidates[c][k] - a[k];
                d2 += diff * diff;
            }
            if (d2 < nearest) nearest = d2;
        }
        if (nearest > best_dist) {  // strict: ties keep the lowest index
            best_dist = nearest;
            best = c;
        }
    }
    return best;
}

// --- campaign planning ---

namespace {

std::vector<double> normalize_design(const DesignSpace& s, const DesignVector& d) {
    std::vector<double> u(s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i) {
        const double span = s.vars[i].hi - s.vars[i].lo;
        u[i] = span > 0.0 ? (d.x[i] - s.vars[i].lo) / span : 0.5;
    }
    return u;
}

}  // namespace

CampaignPlan plan_campaign(const DesignSpace& space, const std::string& kind,
                           const std::vector<std::size_t>& sizes, std::uint64_t seed,
                           const Assembly* reference, const DoeConfig& cfg) {
    validate(space);
    if (sizes.empty()) throw std::invalid_argument("campaign needs at least one phase size");
    for (std::size_t z : sizes)
        if (z == 0) throw std::invalid_argument("campaign phase sizes must be positive");
    const bool screened = (kind == "bumper");
    if (screened && (reference == nullptr || reference->node_count() == 0))
        throw std::invalid_argument(
            "bumper campaigns need a reference assembly for the geometric prescreen");

    double x_front = 0.0;
    if (screened) {
        x_front = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < reference->node_count(); ++i)
            x_front = std::min(x_front, reference->coords[3 * i]);
    }
    auto accepted = [&](const DesignVector& d) {
        if (!feasible(space, d).ok) return false;
        if (screened) {
            const BumperDesign b = bumper_view(space, d);
            RigidWall pole;
            pole.kind = WallKind::cylinder;
            pole.radius = b.d_pole / 2.0;
            pole.cx = place_pole(b.d_pole, x_front, cfg.pole_gap);
            pole.cy = b.y_pole;
            if (!prescreen_geometry(*reference, pole)) return false;
        }
        return true;
    };

    CampaignPlan plan;
    plan.seed = seed;
    plan.kind = kind;
    plan.space = space;
    auto push_case = [&](DesignVector d, Origin origin, int phase, bool projected,
                         std::string label) {
        PlanCase c;
        c.case_id = fmt::format("sim_{:05d}", plan.cases.size() + 1);
        c.design = std::move(d);
        c.origin = origin;
        c.phase = phase;
        c.projected = projected;
        c.anchor_label = std::move(label);
        plan.cases.push_back(std::move(c));
    };

    // phase 1: anchors, then space-filling fill
    const auto as = anchors(space, kind);
    if (sizes[0] < as.size())
        throw std::invalid_argument(fmt::format("phase 1 size {} cannot hold the {} anchors",
                                                sizes[0], as.size()));
    for (const auto& a : as) {
        if (!accepted(a.design))
            fail(fmt::format("anchor '{}' fails the feasibility or geometry screen", a.label));
        push_case(a.design, Origin::anchor, 1, a.projected, a.label);
    }
    const std::size_t fill = sizes[0] - as.size();
    if (!screened) {
        for (auto& d : lhs_sample(space, fill, hash_mix(seed, 1)))
            push_case(std::move(d), Origin::lhs, 1, false, "");
    } else if (fill > 0) {
        SobolSequence seq(space.dim(), hash_mix(seed, 1));
        std::size_t draws = 0, taken = 0;
        while (taken < fill) {
            if (draws >= cfg.max_draws && taken * 100 < draws)
                fail(fmt::format(
                    "design space looks infeasible: {} of {} screened draws accepted", taken,
                    draws));
            DesignVector d = unit_to_design(space, seq.next());
            ++draws;
            if (!accepted(d)) continue;
            push_case(std::move(d), Origin::sobol, 1, false, "");
            ++taken;
        }
    }

    // phases 2..K: greedy maximin batches over screened sobol candidate pools
    std::vector<std::vector<double>> accumulated;
    accumulated.reserve(plan.cases.size());
    for (const auto& c : plan.cases) accumulated.push_back(normalize_design(space, c.design));
    for (std::size_t k = 2; k <= sizes.size(); ++k) {
        const std::size_t target = sizes[k - 1];
        SobolSequence seq(space.dim(), hash_mix(seed, k));
        std::vector<DesignVector> pool;
        std::vector<std::vector<double>> pool_norm;
        for (std::size_t i = 0; i < cfg.candidate_pool; ++i) {
            DesignVector d = unit_to_design(space, seq.next());
            if (!accepted(d)) continue;
            pool_norm.push_back(normalize_design(space, d));
            pool.push_back(std::move(d));
        }
        if (pool.size() < target)
            fail(fmt::format("phase {} candidate pool holds {} feasible points, need {}", k,
                             pool.size(), target));
        for (std::size_t pick = 0; pick < target; ++pick) {
            const std::size_t idx = maximin_next(accumulated, pool_norm);
            accumulated.push_back(pool_norm[idx]);
            push_case(std::move(pool[idx]), Origin::maximin, static_cast<int>(k), false, "");
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
            pool_norm.erase(pool_norm.begin() + static_cast<std::ptrdiff_t>(idx));
        }
    }
    return plan;
}

// --- plan serialization ---

std::string plan_to_json_text(const CampaignPlan& p) {
    json j;
    j["seed"] = p.seed;
    j["kind"] = p.kind;
    j["space"] = space_to_json(p.space);
    j["cases"] = json::array();
    for (const auto& c : p.cases) {
        json jc;
        jc["case_id"] = c.case_id;
        jc["origin"] = to_string(c.origin);
        jc["phase"] = c.phase;
        jc["projected"] = c.projected;
        if (!c.anchor_label.empty()) jc["anchor_label"] = c.anchor_label;
        json jd;
        for (std::size_t i = 0; i < p.space.dim(); ++i)
            jd[p.space.vars[i].name] = c.design.x[i];
        jc["design"] = std::move(jd);
        j["cases"].push_back(std::move(jc));
    }
    return j.dump(2);
}

CampaignPlan plan_from_json_text(const std::string& text) {
    const json j = json::parse(text);
    reject_unknown(j, {"seed", "kind", "space", "cases"}, "campaign plan");
    CampaignPlan p;
    p.seed = pull<std::uint64_t>(j, "seed");
    p.kind = pull<std::string>(j, "kind");
    if (!j.contains("space")) fail("campaign plan: missing space");
    p.space = space_from_json(j.at("space"));
    if (!j.contains("cases") || !j.at("cases").is_array())
        fail("campaign plan: missing cases array");
    for (const auto& jc : j.at("cases")) {
        reject_unknown(jc, {"case_id", "origin", "phase", "projected", "anchor_label", "design"},
                       "plan case");
        PlanCase c;
        c.case_id = pull<std::string>(jc, "case_id");
        c.origin = origin_from_string(pull<std::string>(jc, "origin"));
        c.phase = pull<int>(jc, "phase");
        c.projected = pull<bool>(jc, "projected");
        if (jc.contains("anchor_label")) c.anchor_label = jc.at("anchor_label").get<std::string>();
        if (!jc.contains("design")) fail(fmt::format("case '{}': missing design", c.case_id));
        const json& jd = jc.at("design");
        c.design.x.resize(p.space.dim());
        for (const auto& [key, value] : jd.items()) {
            const int i = p.space.index_of(key);
            if (i < 0) fail(fmt::format("case '{}': unknown design variable '{}'", c.case_id, key));
            c.design.x[static_cast<std::size_t>(i)] = value.get<double>();
        }
        if (jd.size() != p.space.dim())
            fail(fmt::format("case '{}': design has {} of {} variables", c.case_id, jd.size(),
                             p.space.dim()));
        p.cases.push_back(std::move(c));
    }
    return p;
}

CampaignPlan plan_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(fmt::format("cannot open plan file '{}'", path));
    std::ostringstream buf;
    buf << in.rdbuf();
    return plan_from_json_text(buf.str());
}

}  // namespace crashbench
