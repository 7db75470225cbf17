#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "crashbench/solver.hpp"

using namespace crashbench;

namespace {

// single steel bar along +x, node 0 at origin
Assembly make_bar(int elements, double le, double area, double yield, double eps_fail = 0.0) {
    Assembly a;
    for (int i = 0; i <= elements; ++i) {
        a.node_ids.push_back(static_cast<std::uint32_t>(i + 1));
        a.coords.insert(a.coords.end(), {le * i, 0.0, 0.0});
    }
    std::size_t n = a.node_count();
    a.init_velocity.assign(3 * n, 0.0);
    a.fixed.assign(n, {false, false, false});
    a.extra_mass.assign(n, 0.0);
    Part p;
    p.id = 1;
    p.name = "bar";
    p.group = "bar";
    p.component = "bar";
    p.thickness = area / a.unit_width;
    p.material = material_from_yield(yield, eps_fail);
    a.parts = {p};
    for (int i = 0; i < elements; ++i) {
        Element e;
        e.id = static_cast<std::uint32_t>(i + 1);
        e.node_a = static_cast<std::uint32_t>(i);
        e.node_b = static_cast<std::uint32_t>(i + 1);
        e.part_id = 1;
        e.area = area;
        a.elements.push_back(e);
    }
    return a;
}

constexpr double kWaveSpeed = 5172.194153034851;

}  // namespace

TEST_CASE("critical timestep matches the bar oracle") {
    Assembly a = make_bar(1, 60.0, 20.0, 0.6);
    SolverState s = init_state(a);
    CHECK(critical_timestep(a, s, 0.9) == doctest::Approx(0.010440443340340349).epsilon(1e-12));
    // reference value quoted with a rounded wave speed
    Assembly b = make_bar(1, 10.0, 20.0, 0.6);
    SolverState sb = init_state(b);
    CHECK(critical_timestep(b, sb, 0.9) == doctest::Approx(0.9 * 10.0 / 5172.0).epsilon(1e-3));
    CHECK(critical_timestep(b, sb, 1.0) == doctest::Approx(10.0 / kWaveSpeed).epsilon(1e-12));
    // stiffness scaling: doubling E shrinks the step by sqrt(2)
    Assembly c = b;
    c.parts[0].material.e_mod *= 2.0;
    SolverState sc = init_state(c);
    CHECK(critical_timestep(c, sc, 1.0) ==
          doctest::Approx(10.0 / kWaveSpeed / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("mass scaling lifts the critical step monotonically") {
    Assembly a = make_bar(1, 60.0, 20.0, 0.6);
    SolverState s = init_state(a);
    const double m_e = 7.85e-6 * 20.0 * 60.0;
    CHECK(s.mass[0] == doctest::Approx(m_e / 2).epsilon(1e-12));

    double frac = apply_mass_scaling(a, s, 0.05, 0.9);
    const double added = m_e * (std::pow(0.05 * kWaveSpeed / (0.9 * 60.0), 2) - 1.0);
    CHECK(added == doctest::Approx(0.2066293827160494).epsilon(1e-10));
    CHECK(frac == doctest::Approx(added / m_e).epsilon(1e-10));
    CHECK(s.added_mass_fraction() == doctest::Approx(frac).epsilon(1e-12));
    CHECK(critical_timestep(a, s, 0.9) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(s.mass[0] == doctest::Approx(m_e / 2 + added / 2).epsilon(1e-12));

    // a lower target afterwards must not remove mass
    double frac2 = apply_mass_scaling(a, s, 0.02, 0.9);
    CHECK(frac2 == doctest::Approx(frac).epsilon(1e-12));
    CHECK(critical_timestep(a, s, 0.9) == doctest::Approx(0.05).epsilon(1e-12));

    // already-stable elements are untouched
    SolverState s2 = init_state(a);
    CHECK(apply_mass_scaling(a, s2, 0.005, 0.9) == doctest::Approx(0.0));
}

TEST_CASE("radial return reproduces the bracketed-root oracle") {
    Assembly a = make_bar(1, 100.0, 20.0, 0.6);
    SolverState s = init_state(a);
    std::vector<double> f(6, 0.0);

    // 1% tensile strain: trial stress 2.1 GPa, well past the 0.6 GPa yield
    s.u[3] = 1.0;
    internal_forces(a, s, f);
    const double dl = 0.006997347418520322;
    const double sig = 0.6305570421107325;
    CHECK(s.stress[0] == doctest::Approx(sig).epsilon(1e-9));
    CHECK(s.eps_bar[0] == doctest::Approx(dl).epsilon(1e-9));
    CHECK(f[0] == doctest::Approx(sig * 20.0).epsilon(1e-9));   // node 0 pulled +x
    CHECK(f[3] == doctest::Approx(-sig * 20.0).epsilon(1e-9));  // node 1 pulled -x
    CHECK(s.w_p == doctest::Approx(sig * dl * 20.0 * 100.0).epsilon(1e-9));
    CHECK(s.e_int == doctest::Approx(0.5 * sig * 0.01 * 2000.0).epsilon(1e-9));

    // repeat with unchanged displacements: no extra work, same stress
    double wp = s.w_p, ei = s.e_int;
    internal_forces(a, s, f);
    CHECK(s.stress[0] == doctest::Approx(sig).epsilon(1e-12));
    CHECK(s.w_p == doctest::Approx(wp).epsilon(1e-12));
    CHECK(s.e_int == doctest::Approx(ei).epsilon(1e-12));
}

TEST_CASE("elastic regime stays elastic") {
    Assembly a = make_bar(1, 100.0, 20.0, 0.6);
    SolverState s = init_state(a);
    std::vector<double> f(6, 0.0);
    s.u[3] = 0.1;  // strain 1e-3 -> stress 0.21 GPa < yield
    internal_forces(a, s, f);
    CHECK(s.stress[0] == doctest::Approx(0.21).epsilon(1e-12));
    CHECK(s.eps_bar[0] == doctest::Approx(0.0));
    CHECK(s.w_p == doctest::Approx(0.0));
    // unload to zero: stress returns to zero, net internal energy ~ 0
    s.u[3] = 0.0;
    internal_forces(a, s, f);
    CHECK(s.stress[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.e_int == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("contact forces, caps and reactions") {
    Assembly a;
    a.node_ids = {1};
    a.coords = {0.0, 0.0, -0.1};
    a.init_velocity = {0.0, 0.0, 0.0};
    a.fixed = {{false, false, false}};
    a.extra_mass = {0.01};
    RigidWall w;
    w.kind = WallKind::plane;
    w.normal = {0.0, 0.0, 1.0};
    w.offset = 0.0;
    w.mu = 0.2;
    a.walls = {w};

    std::vector<double> pos = a.coords, vel = {1.0, 0.0, 0.0}, f(3, 0.0);
    ContactResult r = contact_forces(a, pos, vel, 100.0, 0.01, f);
    CHECK(f[2] == doctest::Approx(10.0));       // k * penetration
    CHECK(f[0] == doctest::Approx(-1.0));       // viscous trial k*tau*vt = 1 < cap 2
    CHECK(r.wall_reaction.size() == 1);
    CHECK(r.wall_reaction[0][2] == doctest::Approx(-10.0));
    CHECK(r.wall_reaction[0][0] == doctest::Approx(1.0));
    CHECK(r.penalty_energy == doctest::Approx(0.5 * 100.0 * 0.01));
    CHECK(r.friction_power == doctest::Approx(1.0));  // |f_t| * |v_t|

    a.walls[0].mu = 0.05;
    r = contact_forces(a, pos, vel, 100.0, 0.01, f);
    CHECK(f[0] == doctest::Approx(-0.5));  // capped at mu*|fn|

    // separated node: no force
    pos[2] = 0.3;
    r = contact_forces(a, pos, vel, 100.0, 0.01, f);
    CHECK(f[0] == doctest::Approx(0.0));
    CHECK(f[2] == doctest::Approx(0.0));
    CHECK(r.penalty_energy == doctest::Approx(0.0));

    // cylinder wall, node inside the surface is pushed radially outward
    Assembly c = a;
    c.walls[0].kind = WallKind::cylinder;
    c.walls[0].cx = 0.0;
    c.walls[0].cy = 0.0;
    c.walls[0].radius = 10.0;
    c.walls[0].mu = 0.0;
    pos = {9.5, 0.0, 0.0};
    vel = {0.0, 0.0, 0.0};
    r = contact_forces(c, pos, vel, 100.0, 0.01, f);
    CHECK(f[0] == doctest::Approx(50.0));
    CHECK(f[1] == doctest::Approx(0.0));
    CHECK(r.wall_reaction[0][0] == doctest::Approx(-50.0));

    std::array<double, 3> trial{3.0, 4.0, 0.0};
    auto capped = coulomb_cap(trial, 0.2, 10.0);  // cap 2, |trial| 5
    CHECK(capped[0] == doctest::Approx(1.2));
    CHECK(capped[1] == doctest::Approx(1.6));
    capped = coulomb_cap(trial, 0.2, 100.0);  // cap 20 leaves it alone
    CHECK(capped[0] == doctest::Approx(3.0));
}

TEST_CASE("free flight conserves everything") {
    Assembly a = make_bar(4, 50.0, 20.0, 0.6);
    for (std::size_t i = 0; i < a.node_count(); ++i) a.init_velocity[3 * i] = -8.5;
    SolverConfig cfg;
    cfg.t_final = 5.0;
    SolveResult r = run_explicit(a, cfg);
    CHECK(r.report.cause == TermCause::completed);
    CHECK(r.report.t_end == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(r.report.e_err_max <= 1e-12);
    CHECK(r.hist.size() == 51);
    CHECK(r.hist.t.back() == doctest::Approx(5.0).epsilon(1e-12));
    for (std::size_t i = 0; i < r.hist.size(); ++i) {
        CHECK(r.hist.fx[i] == 0.0);
        CHECK(r.hist.e_hg[i] == 0.0);
        CHECK(std::abs(r.hist.acc[i]) < 1e-9);
    }
    const Frame& last = r.fields.frames.back();
    CHECK(last.t == doctest::Approx(5.0));
    for (std::size_t i = 0; i < a.node_count(); ++i)
        CHECK(last.u[3 * i] == doctest::Approx(-42.5).epsilon(1e-9));
    CHECK(r.fields.frames.size() == 6);
}

TEST_CASE("penalty bounce keeps the energy ledger tight") {
    Assembly a;
    a.node_ids = {1};
    a.coords = {0.0, 0.0, 5.0};
    a.init_velocity = {0.0, 0.0, -2.0};
    a.fixed = {{false, false, false}};
    a.extra_mass = {0.01};
    RigidWall w;
    w.kind = WallKind::plane;
    w.normal = {0.0, 0.0, 1.0};
    w.offset = 0.0;
    w.mu = 0.0;
    a.walls = {w};

    SolverConfig cfg;
    cfg.t_final = 8.0;
    cfg.k_pen = 50.0;
    cfg.contact_dt_factor = 0.01;
    cfg.dt_out = 0.002;  // the contact pulse lasts ~pi*sqrt(m/k) ~ 0.04 ms
    SolveResult r = run_explicit(a, cfg);
    CHECK(r.report.cause == TermCause::completed);
    CHECK(r.report.e_err_max <= 1e-3);
    const Frame& last = r.fields.frames.back();
    CHECK(last.vel[2] == doctest::Approx(2.0).epsilon(1e-3));
    // contact force appeared and vanished again
    double fmax = 0.0;
    for (double v : r.hist.fz) fmax = std::max(fmax, std::abs(v));
    CHECK(fmax > 0.5);
    CHECK(std::abs(r.hist.fz.back()) == doctest::Approx(0.0));
}

TEST_CASE("axial wave arrives on schedule") {
    Assembly a = make_bar(50, 20.0, 20.0, 0.6);
    a.init_velocity[0] = 1.0;  // strike node 0 toward the bar
    SolverConfig cfg;
    cfg.t_final = 0.25;
    cfg.dt_anim = 5e-4;
    cfg.dt_out = 0.05;
    SolveResult r = run_explicit(a, cfg);
    REQUIRE(r.report.cause == TermCause::completed);
    std::size_t far = a.node_count() - 1;
    double arrival = -1.0;
    for (const Frame& f : r.fields.frames) {
        if (std::abs(f.vel[3 * far]) > 0.1) {
            arrival = f.t;
            break;
        }
    }
    REQUIRE(arrival > 0.0);
    // threshold crossing lags nominal arrival by about one element of front
    // rise, i.e. 2% at this mesh, on top of lattice dispersion
    const double expected = 1000.0 / kWaveSpeed;
    CHECK(std::abs(arrival - expected) / expected <= 0.03);
}

TEST_CASE("plastic work converges under step refinement") {
    BumperConfig bc;
    Assembly a = build_bumper_assembly(bc);
    SolverConfig coarse;
    coarse.t_final = 10.0;
    coarse.dt_fixed = 0.002;
    SolverConfig fine = coarse;
    fine.dt_fixed = 0.0002;
    SolveResult rc = run_explicit(a, coarse);
    SolveResult rf = run_explicit(a, fine);
    REQUIRE(rc.report.cause == TermCause::completed);
    REQUIRE(rf.report.cause == TermCause::completed);
    double wc = rc.hist.w_p.back(), wf = rf.hist.w_p.back();
    CHECK(wf > 10.0);
    CHECK(std::abs(wc - wf) <= 0.02 * wf + 1e-6);
}

TEST_CASE("animation interval never touches the physics") {
    BumperConfig bc;
    Assembly a = build_bumper_assembly(bc);
    SolverConfig c1;
    c1.t_final = 5.0;
    SolverConfig c2 = c1;
    c2.dt_anim = 0.5;
    SolveResult r1 = run_explicit(a, c1);
    SolveResult r2 = run_explicit(a, c2);
    REQUIRE(r1.hist.size() == r2.hist.size());
    for (std::size_t i = 0; i < r1.hist.size(); ++i) {
        CHECK(r1.hist.t[i] == r2.hist.t[i]);
        CHECK(r1.hist.fx[i] == doctest::Approx(r2.hist.fx[i]).epsilon(1e-12));
        CHECK(r1.hist.e_kin[i] == doctest::Approx(r2.hist.e_kin[i]).epsilon(1e-12));
        CHECK(r1.hist.w_p[i] == doctest::Approx(r2.hist.w_p[i]).epsilon(1e-12));
    }
    REQUIRE(r2.fields.frames.size() == 2 * r1.fields.frames.size() - 1);
    for (std::size_t k = 0; k < r1.fields.frames.size(); ++k) {
        const Frame& fa = r1.fields.frames[k];
        const Frame& fb = r2.fields.frames[2 * k];
        REQUIRE(fa.t == doctest::Approx(fb.t).epsilon(1e-12));
        for (std::size_t j = 0; j < fa.u.size(); ++j)
            CHECK(fa.u[j] == doctest::Approx(fb.u[j]).epsilon(1e-9));
    }
}

TEST_CASE("repeat runs are bitwise identical") {
    BumperConfig bc;
    bc.v = 12.0;
    Assembly a = build_bumper_assembly(bc);
    SolverConfig cfg;
    cfg.t_final = 4.0;
    SolveResult r1 = run_explicit(a, cfg);
    SolveResult r2 = run_explicit(a, cfg);
    CHECK(r1.hist.t == r2.hist.t);
    CHECK(r1.hist.fx == r2.hist.fx);
    CHECK(r1.hist.e_kin == r2.hist.e_kin);
    CHECK(r1.hist.w_p == r2.hist.w_p);
    CHECK(r1.report.steps == r2.report.steps);
}

TEST_CASE("watchdog flags a blown-up run") {
    BumperConfig bc;
    Assembly a = build_bumper_assembly(bc);
    SolverConfig cfg;
    cfg.t_final = 20.0;
    cfg.dt_fixed = 0.05;  // far past the penalty stability limit
    SolveResult r = run_explicit(a, cfg);
    CHECK(r.report.cause == TermCause::blowup);
    CHECK(!r.report.message.empty());
    CHECK(r.report.t_end < 20.0);
    for (double v : r.hist.fx) CHECK(std::isfinite(v));
    CHECK(std::string(to_string(TermCause::blowup)) == "blowup");
}

TEST_CASE("erosion empties the model and stops the clock") {
    Assembly a = make_bar(1, 300.0, 20.0, 0.3, 0.03);
    // bare nodes cannot supply the failure work (rho*v^2 ~ 2*sigma*eps_f needs
    // v ~ 50 mm/ms); end masses give the pull the momentum a test rig would
    a.extra_mass = {25.0, 25.0};
    a.init_velocity[0] = -2.0;
    a.init_velocity[3] = 2.0;  // pull the ends apart
    SolverConfig cfg;
    cfg.t_final = 10.0;
    SolveResult r = run_explicit(a, cfg);
    CHECK(r.report.cause == TermCause::all_eroded);
    CHECK(r.report.t_end < 10.0);
    CHECK(r.report.t_end > 1.0);
    const Frame& last = r.fields.frames.back();
    CHECK(last.eroded[0] == 1);
    CHECK(last.stress[0] == doctest::Approx(0.0));
    CHECK(r.hist.t.back() <= r.report.t_end + 1e-12);
}

TEST_CASE("fixed dofs pin their nodes") {
    Assembly a = make_bar(2, 50.0, 20.0, 0.6);
    a.fixed[0] = {true, true, true};
    a.init_velocity[6] = 2.0;  // push the far end away
    SolverConfig cfg;
    cfg.t_final = 1.0;
    SolveResult r = run_explicit(a, cfg);
    for (const Frame& f : r.fields.frames) {
        CHECK(f.u[0] == doctest::Approx(0.0));
        CHECK(f.vel[0] == doctest::Approx(0.0));
    }
}

TEST_CASE("solver config json and validation") {
    SolverConfig c;
    c.t_final = 12.0;
    c.dt_anim = 0.5;
    c.history_channels = {"fx", "e_kin"};
    std::string text = solver_config_to_json_text(c);
    SolverConfig back = solver_config_from_json_text(text);
    CHECK(back.t_final == doctest::Approx(12.0));
    CHECK(back.dt_anim == doctest::Approx(0.5));
    CHECK(back.history_channels == std::vector<std::string>{"fx", "e_kin"});

    SolverConfig bad;
    bad.alpha = 1.5;
    CHECK_THROWS(validate(bad));
    bad = SolverConfig{};
    bad.dt_min = 0.0;
    CHECK_THROWS(validate(bad));
    bad = SolverConfig{};
    bad.t_final = -1.0;
    CHECK_THROWS(validate(bad));
    bad = SolverConfig{};
    bad.dt_anim = 0.0;
    CHECK_THROWS(validate(bad));
    bad = SolverConfig{};
    bad.history_channels = {"nope"};
    CHECK_THROWS(validate(bad));
    CHECK_THROWS(solver_config_from_json_text("{\"alpha\": 2.0}"));
}

TEST_CASE("history grid is exact and complete") {
    Assembly a = make_bar(2, 50.0, 20.0, 0.6);
    SolverConfig cfg;
    cfg.t_final = 1.0;
    cfg.dt_out = 0.25;
    SolveResult r = run_explicit(a, cfg);
    REQUIRE(r.hist.size() == 5);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(r.hist.t[i] == doctest::Approx(0.25 * i).epsilon(1e-12));
    CHECK(r.hist.e_kin[0] == doctest::Approx(0.0));
}
