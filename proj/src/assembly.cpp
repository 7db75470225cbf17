#include "crashbench/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace crashbench {

using ordered_json = nlohmann::ordered_json;

double Material::wave_speed() const { return std::sqrt(e_mod / rho); }

void validate(const Material& m) {
    if (!(m.e_mod > 0.0)) throw std::invalid_argument("material: e_mod must be positive");
    if (!(m.rho > 0.0)) throw std::invalid_argument("material: rho must be positive");
    if (!(m.nu > -1.0 && m.nu < 0.5)) throw std::invalid_argument("material: nu out of range");
    if (m.a < 0.0 || m.b < 0.0) throw std::invalid_argument("material: negative strength");
    if (!(m.n > 0.0 && m.n <= 1.0)) throw std::invalid_argument("material: n must be in (0, 1]");
    if (m.eps_p_fail < 0.0) throw std::invalid_argument("material: eps_p_fail must be >= 0");
}

double jc_flow_stress(const Material& m, double eps_p) {
    if (eps_p <= 0.0) return m.a;
    return m.a + m.b * std::pow(eps_p, m.n);
}

Material material_from_yield(double a_gpa, double eps_p_fail) {
    if (!(a_gpa > 0.0)) throw std::invalid_argument("yield stress must be positive");
    Material m;
    m.a = a_gpa;
    m.b = a_gpa;
    m.n = a_gpa / 1.0;
    m.eps_p_fail = eps_p_fail;
    if (m.n > 1.0) throw std::invalid_argument("yield stress above 1 GPa breaks the n = A rule");
    validate(m);
    return m;
}

void validate(const RigidWall& w) {
    if (w.kind == WallKind::plane) {
        double len = std::sqrt(w.normal[0] * w.normal[0] + w.normal[1] * w.normal[1] +
                               w.normal[2] * w.normal[2]);
        if (std::abs(len - 1.0) > 1e-9) throw std::invalid_argument("wall: normal must be unit");
    } else {
        if (!(w.radius > 0.0)) throw std::invalid_argument("wall: radius must be positive");
    }
    if (w.mu < 0.0) throw std::invalid_argument("wall: negative friction coefficient");
    if (w.k_pen < 0.0) throw std::invalid_argument("wall: negative penalty stiffness");
}

const Part& Assembly::part(std::uint32_t part_id) const {
    auto it = std::lower_bound(parts.begin(), parts.end(), part_id,
                               [](const Part& p, std::uint32_t id) { return p.id < id; });
    if (it == parts.end() || it->id != part_id)
        throw std::out_of_range("assembly: unknown part id " + std::to_string(part_id));
    return *it;
}

double Assembly::element_ref_length(const Element& e) const {
    const double* a = &coords[3 * e.node_a];
    const double* b = &coords[3 * e.node_b];
    double dx = b[0] - a[0], dy = b[1] - a[1], dz = b[2] - a[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::vector<double> Assembly::lumped_masses() const {
    std::vector<double> m(node_count(), 0.0);
    for (const auto& e : elements) {
        double half = 0.5 * part(e.part_id).material.rho * e.area * element_ref_length(e);
        m[e.node_a] += half;
        m[e.node_b] += half;
    }
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += extra_mass[i];
    return m;
}

double Assembly::structural_mass() const {
    double total = 0.0;
    for (const auto& e : elements)
        total += part(e.part_id).material.rho * e.area * element_ref_length(e);
    return total;
}

void validate(const Assembly& a) {
    std::size_t n = a.node_count();
    if (a.coords.size() != 3 * n || a.init_velocity.size() != 3 * n || a.fixed.size() != n ||
        a.extra_mass.size() != n)
        throw std::invalid_argument("assembly: per-node array sizes disagree");
    if (!std::is_sorted(a.parts.begin(), a.parts.end(),
                        [](const Part& x, const Part& y) { return x.id < y.id; }))
        throw std::invalid_argument("assembly: parts must be sorted by id");
    for (const auto& p : a.parts) {
        if (!(p.thickness > 0.0)) throw std::invalid_argument("assembly: part thickness <= 0");
        validate(p.material);
    }
    std::set<std::uint32_t> eids;
    for (const auto& e : a.elements) {
        if (e.node_a >= n || e.node_b >= n)
            throw std::invalid_argument("assembly: element node index out of range");
        if (e.node_a == e.node_b) throw std::invalid_argument("assembly: degenerate element");
        if (!eids.insert(e.id).second)
            throw std::invalid_argument("assembly: duplicate element id");
        a.part(e.part_id);  // throws on unknown part
        if (!(e.area > 0.0)) throw std::invalid_argument("assembly: element area <= 0");
        if (!(a.element_ref_length(e) > 0.0))
            throw std::invalid_argument("assembly: zero-length element");
    }
    for (const auto& w : a.walls) validate(w);
    for (double m : a.extra_mass)
        if (m < 0.0) throw std::invalid_argument("assembly: negative extra mass");
    if (!(a.unit_width > 0.0)) throw std::invalid_argument("assembly: unit width <= 0");
}

Assembly apply_thickness_edits(const Assembly& a, const std::vector<ThicknessEdit>& edits) {
    Assembly out = a;
    for (const auto& ed : edits) {
        if (!(ed.scale >= 0.9 && ed.scale <= 1.1))
            throw std::invalid_argument("thickness edit: scale outside [0.9, 1.1]");
        bool hit = false;
        for (auto& p : out.parts) {
            if (p.group != ed.group) continue;
            double base = ed.baseline > 0.0 ? ed.baseline : p.thickness;
            p.thickness = base * ed.scale;
            hit = true;
        }
        if (!hit) throw std::invalid_argument("thickness edit: unknown group " + ed.group);
    }
    // element areas follow part thickness via the unit-width strip rule
    for (auto& e : out.elements) e.area = out.part(e.part_id).thickness * out.unit_width;
    return out;
}

double pole_center_x(double d_pole, double x_bumper, double gap) {
    return -(std::abs(x_bumper) + 0.5 * d_pole + gap);
}

namespace {

void validate_config(const BumperConfig& c) {
    if (c.crash_box_nodes < 2 || c.beam_segment_nodes < 2)
        throw std::invalid_argument("bumper config: chains need at least 2 nodes");
    if (!(c.crash_box_length > 0.0) || !(c.beam_half_width > 0.0))
        throw std::invalid_argument("bumper config: lengths must be positive");
    if (!(c.crash_box_y > 0.0 && c.crash_box_y < c.beam_half_width))
        throw std::invalid_argument("bumper config: crash boxes must attach inside the beam");
    if (!(c.t_cb > 0.0 && c.t_bb > 0.0))
        throw std::invalid_argument("bumper config: thickness must be positive");
    if (!(c.unit_width > 0.0)) throw std::invalid_argument("bumper config: unit width <= 0");
    if (c.pole_diameter < 0.0 || c.pole_gap < 0.0)
        throw std::invalid_argument("bumper config: negative pole geometry");
    if (c.rear_mass < 0.0) throw std::invalid_argument("bumper config: negative rear mass");
    if (!(c.v >= 0.0)) throw std::invalid_argument("bumper config: negative speed");
}

}  // namespace

Assembly build_bumper_assembly(const BumperConfig& config) {
    validate_config(config);
    BumperConfig c = config;
    if (c.s_front) c.t_bb *= *c.s_front;
    if (c.s_rail) c.t_cb *= *c.s_rail;

    Assembly a;
    a.unit_width = c.unit_width;
    auto add_node = [&](double x, double y) {
        a.node_ids.push_back(static_cast<std::uint32_t>(a.node_ids.size() + 1));
        a.coords.insert(a.coords.end(), {x, y, 0.0});
        return static_cast<std::uint32_t>(a.node_ids.size() - 1);
    };

    // beam nodes, -half_width .. +half_width, with exact nodes at the
    // crash-box joints and the center
    std::vector<double> ys;
    const double stops[5] = {-c.beam_half_width, -c.crash_box_y, 0.0, c.crash_box_y,
                             c.beam_half_width};
    for (int seg = 0; seg < 4; ++seg) {
        int steps = c.beam_segment_nodes - 1;
        for (int i = 0; i < steps; ++i) {
            double f = static_cast<double>(i) / steps;
            ys.push_back(stops[seg] + f * (stops[seg + 1] - stops[seg]));
        }
    }
    ys.push_back(stops[4]);
    std::vector<std::uint32_t> beam_nodes;
    for (double y : ys) beam_nodes.push_back(add_node(c.front_x, y));

    std::uint32_t joint_left = beam_nodes[static_cast<std::size_t>(c.beam_segment_nodes - 1)];
    std::uint32_t joint_right = beam_nodes[static_cast<std::size_t>(3 * (c.beam_segment_nodes - 1))];

    Part beam_part;
    beam_part.id = 1;
    beam_part.name = "bumper_beam";
    beam_part.group = "beam";
    beam_part.component = "beam";
    beam_part.thickness = c.t_bb;
    beam_part.material = material_from_yield(c.sigma_y_bb, c.eps_p_fail);

    Part cb_left;
    cb_left.id = 2;
    cb_left.name = "crash_box_left";
    cb_left.group = "crash_box";
    cb_left.component = "crash_box";
    cb_left.thickness = c.t_cb;
    cb_left.material = material_from_yield(c.sigma_y_cb, c.eps_p_fail);

    Part cb_right = cb_left;
    cb_right.id = 3;
    cb_right.name = "crash_box_right";

    a.parts = {beam_part, cb_left, cb_right};

    std::uint32_t next_eid = 1;
    auto add_element = [&](std::uint32_t na, std::uint32_t nb, std::uint32_t pid) {
        Element e;
        e.id = next_eid++;
        e.node_a = na;
        e.node_b = nb;
        e.part_id = pid;
        e.area = a.part(pid).thickness * a.unit_width;
        a.elements.push_back(e);
    };

    for (std::size_t i = 0; i + 1 < beam_nodes.size(); ++i)
        add_element(beam_nodes[i], beam_nodes[i + 1], 1);

    // Crash boxes ride in lateral rail guides (sled-rig style): a pin-jointed
    // chain has no bending stiffness, so without the guides any axial load
    // would fold the chain sideways instead of crushing it. Guiding the joint
    // nodes also anchors the beam span between them, so a pole wrap has to
    // stretch that span rather than pull slack in from the free overhangs.
    std::vector<std::uint32_t> rear_nodes;
    std::vector<std::uint32_t> guided;
    auto add_box = [&](std::uint32_t joint, double y, std::uint32_t pid) {
        guided.push_back(joint);
        std::uint32_t prev = joint;
        int steps = c.crash_box_nodes - 1;
        for (int i = 1; i <= steps; ++i) {
            double x = c.front_x + c.crash_box_length * static_cast<double>(i) / steps;
            std::uint32_t nd = add_node(x, y);
            add_element(prev, nd, pid);
            guided.push_back(nd);
            prev = nd;
        }
        rear_nodes.push_back(prev);
    };
    add_box(joint_left, -c.crash_box_y, 2);
    add_box(joint_right, c.crash_box_y, 3);

    std::size_t n = a.node_count();
    a.init_velocity.assign(3 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a.init_velocity[3 * i] = -c.v;
    a.fixed.assign(n, {false, false, false});
    for (std::uint32_t g : guided) a.fixed[g] = {false, true, true};
    a.extra_mass.assign(n, 0.0);
    for (std::uint32_t r : rear_nodes)
        a.extra_mass[r] = c.rear_mass / static_cast<double>(rear_nodes.size());

    if (c.pole_diameter > 0.0) {
        RigidWall w;
        w.kind = WallKind::cylinder;
        w.cx = pole_center_x(c.pole_diameter, c.front_x, c.pole_gap);
        w.cy = c.pole_y;
        w.radius = 0.5 * c.pole_diameter;
        a.walls.push_back(w);
    }
    validate(a);
    return a;
}

namespace {

template <class T>
void pull(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

BumperConfig bumper_config_from_json_text(const std::string& text) {
    ordered_json j = ordered_json::parse(text);
    static const std::set<std::string> known = {
        "crash_box_nodes", "beam_segment_nodes", "crash_box_length", "beam_half_width",
        "crash_box_y",     "front_x",            "unit_width",       "t_cb",
        "t_bb",            "sigma_y_cb",         "sigma_y_bb",       "eps_p_fail",
        "v",               "pole_diameter",      "pole_y",           "pole_gap",
        "rear_mass",       "s_front",            "s_rail"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw std::invalid_argument("bumper config: unknown key " + it.key());
    BumperConfig c;
    pull(j, "crash_box_nodes", c.crash_box_nodes);
    pull(j, "beam_segment_nodes", c.beam_segment_nodes);
    pull(j, "crash_box_length", c.crash_box_length);
    pull(j, "beam_half_width", c.beam_half_width);
    pull(j, "crash_box_y", c.crash_box_y);
    pull(j, "front_x", c.front_x);
    pull(j, "unit_width", c.unit_width);
    pull(j, "t_cb", c.t_cb);
    pull(j, "t_bb", c.t_bb);
    pull(j, "sigma_y_cb", c.sigma_y_cb);
    pull(j, "sigma_y_bb", c.sigma_y_bb);
    pull(j, "eps_p_fail", c.eps_p_fail);
    pull(j, "v", c.v);
    pull(j, "pole_diameter", c.pole_diameter);
    pull(j, "pole_y", c.pole_y);
    pull(j, "pole_gap", c.pole_gap);
    pull(j, "rear_mass", c.rear_mass);
    if (j.contains("s_front")) c.s_front = j.at("s_front").get<double>();
    if (j.contains("s_rail")) c.s_rail = j.at("s_rail").get<double>();
    validate_config(c);
    return c;
}

BumperConfig bumper_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return bumper_config_from_json_text(ss.str());
}

std::string bumper_config_to_json_text(const BumperConfig& c) {
    ordered_json j;
    j["crash_box_nodes"] = c.crash_box_nodes;
    j["beam_segment_nodes"] = c.beam_segment_nodes;
    j["crash_box_length"] = c.crash_box_length;
    j["beam_half_width"] = c.beam_half_width;
    j["crash_box_y"] = c.crash_box_y;
    j["front_x"] = c.front_x;
    j["unit_width"] = c.unit_width;
    j["t_cb"] = c.t_cb;
    j["t_bb"] = c.t_bb;
    j["sigma_y_cb"] = c.sigma_y_cb;
    j["sigma_y_bb"] = c.sigma_y_bb;
    j["eps_p_fail"] = c.eps_p_fail;
    j["v"] = c.v;
    j["pole_diameter"] = c.pole_diameter;
    j["pole_y"] = c.pole_y;
    j["pole_gap"] = c.pole_gap;
    j["rear_mass"] = c.rear_mass;
    if (c.s_front) j["s_front"] = *c.s_front;
    if (c.s_rail) j["s_rail"] = *c.s_rail;
    return j.dump(2) + "\n";
}

}  // namespace crashbench
