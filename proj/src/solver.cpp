#include "crashbench/solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace crashbench {

using ordered_json = nlohmann::ordered_json;

namespace {

const std::set<std::string> kChannels = {"t",     "fx",    "fy",  "fz",  "e_kin",
                                         "e_int", "e_cont", "e_hg", "w_p", "acc"};

}  // namespace

void validate(const SolverConfig& c) {
    if (!(c.t_final > 0.0)) throw std::invalid_argument("solver config: t_final must be > 0");
    if (!(c.dt_anim > 0.0)) throw std::invalid_argument("solver config: dt_anim must be > 0");
    if (!(c.dt_out > 0.0)) throw std::invalid_argument("solver config: dt_out must be > 0");
    if (!(c.alpha > 0.0 && c.alpha <= 1.0))
        throw std::invalid_argument("solver config: alpha must lie in (0, 1]");
    if (!(c.dt_min > 0.0)) throw std::invalid_argument("solver config: dt_min must be > 0");
    if (!(c.dt_max >= c.dt_min)) throw std::invalid_argument("solver config: dt_max < dt_min");
    if (c.dt_fixed < 0.0) throw std::invalid_argument("solver config: negative dt_fixed");
    if (!(c.contact_dt_factor > 0.0))
        throw std::invalid_argument("solver config: contact_dt_factor must be > 0");
    if (c.k_pen < 0.0) throw std::invalid_argument("solver config: negative penalty stiffness");
    if (c.friction_tau < 0.0) throw std::invalid_argument("solver config: negative friction_tau");
    if (!(c.blowup_disp > 0.0)) throw std::invalid_argument("solver config: blowup_disp <= 0");
    for (const auto& ch : c.history_channels)
        if (!kChannels.count(ch))
            throw std::invalid_argument("solver config: unknown history channel " + ch);
}

SolverConfig solver_config_from_json_text(const std::string& text) {
    ordered_json j = ordered_json::parse(text);
    SolverConfig c;
    auto pull = [&](const char* key, double& out) {
        if (j.contains(key)) out = j.at(key).get<double>();
    };
    pull("t_final", c.t_final);
    pull("dt_anim", c.dt_anim);
    pull("dt_out", c.dt_out);
    pull("alpha", c.alpha);
    pull("dt_min", c.dt_min);
    pull("dt_max", c.dt_max);
    pull("dt_fixed", c.dt_fixed);
    pull("contact_dt_factor", c.contact_dt_factor);
    pull("k_pen", c.k_pen);
    pull("friction_tau", c.friction_tau);
    pull("blowup_disp", c.blowup_disp);
    if (j.contains("history_channels"))
        c.history_channels = j.at("history_channels").get<std::vector<std::string>>();
    validate(c);
    return c;
}

SolverConfig solver_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open solver config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return solver_config_from_json_text(ss.str());
}

std::string solver_config_to_json_text(const SolverConfig& c) {
    ordered_json j;
    j["t_final"] = c.t_final;
    j["dt_anim"] = c.dt_anim;
    j["dt_out"] = c.dt_out;
    j["alpha"] = c.alpha;
    j["dt_min"] = c.dt_min;
    j["dt_max"] = c.dt_max;
    j["dt_fixed"] = c.dt_fixed;
    j["contact_dt_factor"] = c.contact_dt_factor;
    j["k_pen"] = c.k_pen;
    j["friction_tau"] = c.friction_tau;
    j["blowup_disp"] = c.blowup_disp;
    j["history_channels"] = c.history_channels;
    return j.dump(2) + "\n";
}

double SolverState::added_mass_fraction() const {
    if (!(structural_mass > 0.0)) return 0.0;
    double total = 0.0;
    for (double m : added_mass) total += m;
    return total / structural_mass;
}

SolverState init_state(const Assembly& a) {
    SolverState s;
    std::size_t n = a.node_count(), ne = a.elements.size();
    s.u.assign(3 * n, 0.0);
    s.vel = a.init_velocity;
    for (std::size_t i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d)
            if (a.fixed[i][d]) s.vel[3 * i + d] = 0.0;
    s.mass = a.lumped_masses();
    s.stress.assign(ne, 0.0);
    s.eps_p.assign(ne, 0.0);
    s.eps_bar.assign(ne, 0.0);
    s.strain_last.assign(ne, 0.0);
    s.stress_last.assign(ne, 0.0);
    s.added_mass.assign(ne, 0.0);
    s.eroded.assign(ne, 0);
    s.structural_mass = a.structural_mass();
    return s;
}

namespace {

double current_length(const Assembly& a, const SolverState& s, const Element& e,
                      double dir_out[3]) {
    const double* xa = &a.coords[3 * e.node_a];
    const double* xb = &a.coords[3 * e.node_b];
    const double* ua = &s.u[3 * e.node_a];
    const double* ub = &s.u[3 * e.node_b];
    double d[3] = {xb[0] + ub[0] - xa[0] - ua[0], xb[1] + ub[1] - xa[1] - ua[1],
                   xb[2] + ub[2] - xa[2] - ua[2]};
    double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (dir_out) {
        double inv = len > 1e-12 ? 1.0 / len : 0.0;
        dir_out[0] = d[0] * inv;
        dir_out[1] = d[1] * inv;
        dir_out[2] = d[2] * inv;
    }
    return len;
}

double element_step(const Assembly& a, const SolverState& s, std::size_t i, double alpha) {
    const Element& e = a.elements[i];
    const Material& m = a.part(e.part_id).material;
    double len = std::max(current_length(a, s, e, nullptr), 1e-12);
    double m_e = m.rho * e.area * a.element_ref_length(e);
    double boost = std::sqrt(1.0 + s.added_mass[i] / m_e);
    return alpha * (len / m.wave_speed()) * boost;
}

}  // namespace

double critical_timestep(const Assembly& a, const SolverState& s, double alpha) {
    if (a.elements.empty()) return std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < a.elements.size(); ++i) {
        if (s.eroded[i]) continue;
        any = true;
        best = std::min(best, element_step(a, s, i, alpha));
    }
    if (!any) throw SolverFinished();
    return best;
}

double apply_mass_scaling(const Assembly& a, SolverState& s, double dt_target, double alpha) {
    for (std::size_t i = 0; i < a.elements.size(); ++i) {
        if (s.eroded[i]) continue;
        if (element_step(a, s, i, alpha) >= dt_target) continue;
        const Element& e = a.elements[i];
        const Material& m = a.part(e.part_id).material;
        double len = std::max(current_length(a, s, e, nullptr), 1e-12);
        double m_e = m.rho * e.area * a.element_ref_length(e);
        double ratio = dt_target * m.wave_speed() / (alpha * len);
        double needed = m_e * (ratio * ratio - 1.0);
        if (needed > s.added_mass[i]) {
            double delta = needed - s.added_mass[i];
            s.added_mass[i] = needed;
            s.mass[e.node_a] += 0.5 * delta;
            s.mass[e.node_b] += 0.5 * delta;
        }
    }
    return s.added_mass_fraction();
}

namespace {

// g(dl) = sig_eff - E*dl - (A + B*(eps_bar + dl)^n), decreasing in dl
double solve_plastic_increment(const Material& m, double sig_eff, double eps_bar) {
    double lo = 0.0;
    double hi = (sig_eff - m.a) / m.e_mod;
    if (hi <= 0.0) return 0.0;
    auto g = [&](double dl) {
        return sig_eff - m.e_mod * dl - m.a - m.b * std::pow(eps_bar + dl, m.n);
    };
    double x = 0.5 * hi;
    for (int it = 0; it < 80; ++it) {
        double gx = g(x);
        if (std::abs(gx) < 1e-14) return x;
        if (gx > 0.0)
            lo = x;
        else
            hi = x;
        double slope = -m.e_mod - m.b * m.n * std::pow(std::max(eps_bar + x, 1e-300), m.n - 1.0);
        double nx = x - gx / slope;
        x = (nx > lo && nx < hi) ? nx : 0.5 * (lo + hi);
    }
    return x;
}

}  // namespace

void internal_forces(const Assembly& a, SolverState& s, std::vector<double>& f_int) {
    f_int.assign(3 * a.node_count(), 0.0);
    for (std::size_t i = 0; i < a.elements.size(); ++i) {
        if (s.eroded[i]) continue;
        const Element& e = a.elements[i];
        const Material& m = a.part(e.part_id).material;
        double dir[3];
        double len = current_length(a, s, e, dir);
        double len0 = a.element_ref_length(e);
        double eps = (len - len0) / len0;
        double sig_tr = m.e_mod * (eps - s.eps_p[i]);
        double sig_new = sig_tr;
        double sig_eff = std::abs(sig_tr);
        double yield = jc_flow_stress(m, s.eps_bar[i]);
        if (sig_eff > yield) {
            double dl = solve_plastic_increment(m, sig_eff, s.eps_bar[i]);
            double sign = sig_tr >= 0.0 ? 1.0 : -1.0;
            sig_new = sign * (sig_eff - m.e_mod * dl);
            s.eps_p[i] += sign * dl;
            s.eps_bar[i] += dl;
            s.w_p += std::abs(sig_new) * dl * e.area * len0;
        }
        s.e_int += 0.5 * (s.stress_last[i] + sig_new) * (eps - s.strain_last[i]) * e.area * len0;
        s.strain_last[i] = eps;
        s.stress_last[i] = sig_new;
        s.stress[i] = sig_new;
        if (m.eps_p_fail > 0.0 && s.eps_bar[i] >= m.eps_p_fail) {
            s.eroded[i] = 1;
            s.stress[i] = 0.0;
            s.stress_last[i] = 0.0;
            continue;
        }
        double fmag = sig_new * e.area;
        for (int d = 0; d < 3; ++d) {
            f_int[3 * e.node_a + d] += fmag * dir[d];
            f_int[3 * e.node_b + d] -= fmag * dir[d];
        }
    }
}

std::array<double, 3> coulomb_cap(const std::array<double, 3>& trial, double mu, double fn_mag) {
    double cap = mu * fn_mag;
    double norm = std::sqrt(trial[0] * trial[0] + trial[1] * trial[1] + trial[2] * trial[2]);
    if (norm <= cap || norm <= 0.0) return trial;
    double scale = cap / norm;
    return {trial[0] * scale, trial[1] * scale, trial[2] * scale};
}

namespace {

// gap >= 0 means clear of the wall; normal points into free space
bool wall_gap(const RigidWall& w, const double* x, double& gap, double nrm[3]) {
    if (w.kind == WallKind::plane) {
        gap = w.normal[0] * x[0] + w.normal[1] * x[1] + w.normal[2] * x[2] - w.offset;
        nrm[0] = w.normal[0];
        nrm[1] = w.normal[1];
        nrm[2] = w.normal[2];
        return true;
    }
    double dx = x[0] - w.cx, dy = x[1] - w.cy;
    double r = std::sqrt(dx * dx + dy * dy);
    if (r < 1e-12) return false;  // on the axis, direction undefined
    gap = r - w.radius;
    nrm[0] = dx / r;
    nrm[1] = dy / r;
    nrm[2] = 0.0;
    return true;
}

}  // namespace

ContactResult contact_forces(const Assembly& a, const std::vector<double>& pos,
                             const std::vector<double>& vel, double k_pen, double friction_tau,
                             std::vector<double>& f_cont) {
    std::size_t n = a.node_count();
    f_cont.assign(3 * n, 0.0);
    ContactResult res;
    res.wall_reaction.assign(a.walls.size(), {0.0, 0.0, 0.0});
    for (std::size_t wi = 0; wi < a.walls.size(); ++wi) {
        const RigidWall& w = a.walls[wi];
        double k = w.k_pen > 0.0 ? w.k_pen : k_pen;
        for (std::size_t i = 0; i < n; ++i) {
            double gap, nrm[3];
            if (!wall_gap(w, &pos[3 * i], gap, nrm)) continue;
            if (gap >= 0.0) continue;
            double pen = -gap;
            double fn_mag = k * pen;
            std::array<double, 3> f{fn_mag * nrm[0], fn_mag * nrm[1], fn_mag * nrm[2]};
            res.penalty_energy += 0.5 * k * pen * pen;
            if (w.mu > 0.0 && friction_tau > 0.0) {
                const double* v = &vel[3 * i];
                double vn = v[0] * nrm[0] + v[1] * nrm[1] + v[2] * nrm[2];
                std::array<double, 3> vt{v[0] - vn * nrm[0], v[1] - vn * nrm[1],
                                         v[2] - vn * nrm[2]};
                std::array<double, 3> trial{-k * friction_tau * vt[0], -k * friction_tau * vt[1],
                                            -k * friction_tau * vt[2]};
                auto ft = coulomb_cap(trial, w.mu, fn_mag);
                res.friction_power -= ft[0] * vt[0] + ft[1] * vt[1] + ft[2] * vt[2];
                for (int d = 0; d < 3; ++d) f[d] += ft[d];
            }
            for (int d = 0; d < 3; ++d) {
                f_cont[3 * i + d] += f[d];
                res.wall_reaction[wi][d] -= f[d];
            }
        }
    }
    return res;
}

const char* to_string(TermCause c) {
    switch (c) {
        case TermCause::completed: return "completed";
        case TermCause::all_eroded: return "all_eroded";
        case TermCause::blowup: return "blowup";
    }
    return "unknown";
}

namespace {

struct Snapshot {
    double t = 0.0;
    std::vector<double> u, vel;          // 3N
    std::vector<double> stress, eps_bar; // E
    std::vector<std::uint8_t> eroded;
    double fx = 0.0, fy = 0.0, fz = 0.0;
    double e_kin = 0.0, e_int = 0.0, e_cont = 0.0, w_p = 0.0;
    double vcm[3] = {0.0, 0.0, 0.0};
};

double lerp(double a, double b, double th) { return a + th * (b - a); }

class OutputCollector {
  public:
    OutputCollector(const Assembly& a, const SolverConfig& cfg) : cfg_(cfg) {
        fields_.dt_anim = cfg.dt_anim;
        fields_.x0 = a.coords;
        fields_.node_ids = a.node_ids;
        for (const auto& e : a.elements) {
            fields_.element_ids.push_back(e.id);
            fields_.part_ids.push_back(e.part_id);
        }
    }

    void observe(const Snapshot& cur) {
        if (!have_prev_) {
            emit_history(cur, cur.t);
            emit_frame(cur, cur.t);
            next_out_ = 1;
            next_anim_ = 1;
        } else {
            double eps = 1e-12 * std::max(1.0, std::abs(cur.t));
            while (next_out_ * cfg_.dt_out <= cur.t + eps) {
                emit_interp_history(prev_, cur, next_out_ * cfg_.dt_out);
                ++next_out_;
            }
            while (next_anim_ * cfg_.dt_anim <= cur.t + eps) {
                emit_interp_frame(prev_, cur, next_anim_ * cfg_.dt_anim);
                ++next_anim_;
            }
        }
        prev_ = cur;
        have_prev_ = true;
    }

    // append the terminal state when the run ends off the output grid
    void finish(const Snapshot& last) {
        double eps = 1e-12 * std::max(1.0, std::abs(last.t));
        if (hist_.t.empty() || hist_.t.back() < last.t - eps) emit_history(last, last.t);
        if (fields_.frames.empty() || fields_.frames.back().t < last.t - eps)
            emit_frame(last, last.t);
    }

    TimeHistories take_history() {
        compute_acc();
        return std::move(hist_);
    }
    FieldTrajectory take_fields() { return std::move(fields_); }

  private:
    void emit_history(const Snapshot& s, double t) {
        hist_.t.push_back(t);
        hist_.fx.push_back(s.fx);
        hist_.fy.push_back(s.fy);
        hist_.fz.push_back(s.fz);
        hist_.e_kin.push_back(s.e_kin);
        hist_.e_int.push_back(s.e_int);
        hist_.e_cont.push_back(s.e_cont);
        hist_.e_hg.push_back(0.0);
        hist_.w_p.push_back(s.w_p);
        vcm_.push_back({s.vcm[0], s.vcm[1], s.vcm[2]});
    }

    void emit_interp_history(const Snapshot& a, const Snapshot& b, double t) {
        double th = (b.t > a.t) ? (t - a.t) / (b.t - a.t) : 1.0;
        hist_.t.push_back(t);
        hist_.fx.push_back(lerp(a.fx, b.fx, th));
        hist_.fy.push_back(lerp(a.fy, b.fy, th));
        hist_.fz.push_back(lerp(a.fz, b.fz, th));
        hist_.e_kin.push_back(lerp(a.e_kin, b.e_kin, th));
        hist_.e_int.push_back(lerp(a.e_int, b.e_int, th));
        hist_.e_cont.push_back(lerp(a.e_cont, b.e_cont, th));
        hist_.e_hg.push_back(0.0);
        hist_.w_p.push_back(lerp(a.w_p, b.w_p, th));
        vcm_.push_back({lerp(a.vcm[0], b.vcm[0], th), lerp(a.vcm[1], b.vcm[1], th),
                        lerp(a.vcm[2], b.vcm[2], th)});
    }

    void emit_frame(const Snapshot& s, double t) {
        Frame f;
        f.t = t;
        f.u = s.u;
        f.vel = s.vel;
        f.stress = s.stress;
        f.eps_bar = s.eps_bar;
        f.eroded = s.eroded;
        fields_.frames.push_back(std::move(f));
    }

    void emit_interp_frame(const Snapshot& a, const Snapshot& b, double t) {
        double th = (b.t > a.t) ? (t - a.t) / (b.t - a.t) : 1.0;
        Frame f;
        f.t = t;
        f.u.resize(a.u.size());
        f.vel.resize(a.vel.size());
        for (std::size_t i = 0; i < a.u.size(); ++i) {
            f.u[i] = lerp(a.u[i], b.u[i], th);
            f.vel[i] = lerp(a.vel[i], b.vel[i], th);
        }
        f.stress.resize(a.stress.size());
        f.eps_bar.resize(a.eps_bar.size());
        for (std::size_t i = 0; i < a.stress.size(); ++i) {
            f.stress[i] = lerp(a.stress[i], b.stress[i], th);
            f.eps_bar[i] = lerp(a.eps_bar[i], b.eps_bar[i], th);
        }
        f.eroded = th >= 1.0 ? b.eroded : a.eroded;
        fields_.frames.push_back(std::move(f));
    }

    void compute_acc() {
        std::size_t n = hist_.t.size();
        hist_.acc.assign(n, 0.0);
        if (n < 2) return;
        auto rate = [&](std::size_t i, std::size_t j) {
            double dt = hist_.t[j] - hist_.t[i];
            if (dt <= 0.0) return 0.0;
            double ax = (vcm_[j][0] - vcm_[i][0]) / dt;
            double ay = (vcm_[j][1] - vcm_[i][1]) / dt;
            double az = (vcm_[j][2] - vcm_[i][2]) / dt;
            return std::sqrt(ax * ax + ay * ay + az * az);
        };
        hist_.acc[0] = rate(0, 1);
        hist_.acc[n - 1] = rate(n - 2, n - 1);
        for (std::size_t i = 1; i + 1 < n; ++i) hist_.acc[i] = rate(i - 1, i + 1);
    }

    const SolverConfig& cfg_;
    TimeHistories hist_;
    FieldTrajectory fields_;
    std::vector<std::array<double, 3>> vcm_;
    Snapshot prev_;
    bool have_prev_ = false;
    long next_out_ = 0;
    long next_anim_ = 0;
};

}  // namespace

SolveResult run_explicit(const Assembly& a, const SolverConfig& config) {
    validate(config);
    validate(a);
    SolverState s = init_state(a);
    const std::size_t n = a.node_count();

    double k_pen_def = config.k_pen;
    if (k_pen_def <= 0.0) {
        for (const auto& e : a.elements) {
            const Material& m = a.part(e.part_id).material;
            k_pen_def = std::max(k_pen_def, m.e_mod * e.area / a.element_ref_length(e));
        }
        if (k_pen_def <= 0.0) k_pen_def = 1.0;
    }

    OutputCollector out(a, config);
    TerminationReport rep;

    std::vector<double> v_half = s.vel;  // becomes v^{n+1/2} after the first kick
    std::vector<double> f_int, f_cont, f(3 * n), pos(3 * n);
    double t = 0.0, dt_prev = 0.0;
    double e_total0 = 0.0;
    double e_kin0 = 0.0;
    bool first = true;
    std::size_t pinned_steps = 0;
    Snapshot cur;
    double e_err_final = 0.0, e_err_max = 0.0;

    auto fill_positions = [&]() {
        for (std::size_t i = 0; i < 3 * n; ++i) pos[i] = a.coords[i] + s.u[i];
    };

    while (true) {
        fill_positions();
        internal_forces(a, s, f_int);
        ContactResult con = contact_forces(a, pos, v_half, k_pen_def, config.friction_tau, f_cont);

        bool finished = false;
        if (!a.elements.empty()) {
            finished = true;
            for (auto e : s.eroded)
                if (!e) finished = false;
        }

        // timestep governed by elements (mass-scaled up to the floor), the
        // wall-approach geometry and the remaining time
        double dt = config.dt_max;
        bool pinned = false;
        if (config.dt_fixed > 0.0) {
            dt = config.dt_fixed;
        } else if (!finished) {
            if (!a.elements.empty()) {
                apply_mass_scaling(a, s, config.dt_min, config.alpha);
                double dte = critical_timestep(a, s, config.alpha);
                pinned = dte <= config.dt_min * (1.0 + 1e-9);
                dt = std::min(dt, dte);
            }
            for (std::size_t wi = 0; wi < a.walls.size(); ++wi) {
                const RigidWall& w = a.walls[wi];
                double k = w.k_pen > 0.0 ? w.k_pen : k_pen_def;
                for (std::size_t i = 0; i < n; ++i) {
                    double gap, nrm[3];
                    if (!wall_gap(w, &pos[3 * i], gap, nrm)) continue;
                    double dtc =
                        config.contact_dt_factor * 2.0 / std::sqrt(k / std::max(s.mass[i], 1e-12));
                    if (gap <= 0.0) {
                        dt = std::min(dt, dtc);
                        continue;
                    }
                    const double* v = &v_half[3 * i];
                    double vn = v[0] * nrm[0] + v[1] * nrm[1] + v[2] * nrm[2];
                    if (vn < 0.0) {
                        double t_hit = gap / (-vn);
                        if (t_hit < dt) dt = std::min(dt, std::max(t_hit, dtc));
                    }
                }
            }
        }
        dt = std::min(dt, config.t_final - t);

        // velocity update (first step gets the half kick)
        std::vector<double> v_next = v_half;
        double coef = first ? 0.5 * dt : 0.5 * (dt_prev + dt);
        for (std::size_t i = 0; i < n; ++i) {
            for (int d = 0; d < 3; ++d) {
                if (a.fixed[i][d]) {
                    v_next[3 * i + d] = 0.0;
                    continue;
                }
                double acc = (f_int[3 * i + d] + f_cont[3 * i + d]) / s.mass[i];
                v_next[3 * i + d] += coef * acc;
            }
        }

        // snapshot of the current instant, with full-step velocities
        cur.t = t;
        cur.u = s.u;
        cur.vel.resize(3 * n);
        if (first) {
            cur.vel = s.vel;
        } else {
            for (std::size_t i = 0; i < 3 * n; ++i) cur.vel[i] = 0.5 * (v_half[i] + v_next[i]);
        }
        cur.stress = s.stress;
        cur.eps_bar = s.eps_bar;
        cur.eroded = s.eroded;
        cur.fx = cur.fy = cur.fz = 0.0;
        for (const auto& r : con.wall_reaction) {
            cur.fx += r[0];
            cur.fy += r[1];
            cur.fz += r[2];
        }
        double ekin = 0.0, mom[3] = {0.0, 0.0, 0.0}, mtot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* v = &cur.vel[3 * i];
            ekin += 0.5 * s.mass[i] * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            for (int d = 0; d < 3; ++d) mom[d] += s.mass[i] * v[d];
            mtot += s.mass[i];
        }
        cur.e_kin = ekin;
        cur.e_int = s.e_int;
        cur.e_cont = con.penalty_energy + s.w_fric;
        cur.w_p = s.w_p;
        for (int d = 0; d < 3; ++d) cur.vcm[d] = mtot > 0.0 ? mom[d] / mtot : 0.0;

        if (first) {
            e_total0 = cur.e_kin + cur.e_int + cur.e_cont;
            e_kin0 = cur.e_kin;
        }
        double e_err = (cur.e_kin + cur.e_int + cur.e_cont - e_total0) /
                       std::max(std::abs(e_total0), 1e-9);
        e_err_final = e_err;
        e_err_max = std::max(e_err_max, std::abs(e_err));

        out.observe(cur);

        if (finished) {
            rep.cause = TermCause::all_eroded;
            rep.message = "every element eroded";
            break;
        }
        if (t >= config.t_final - 1e-12) {
            rep.cause = TermCause::completed;
            break;
        }
        if (pinned) ++pinned_steps;

        // advance
        s.w_fric += con.friction_power * dt;
        for (std::size_t i = 0; i < 3 * n; ++i) s.u[i] += dt * v_next[i];
        t += dt;
        ++s.step;
        first = false;
        dt_prev = dt;
        v_half = std::move(v_next);

        bool blown = false;
        for (std::size_t i = 0; i < 3 * n && !blown; ++i) {
            if (!std::isfinite(s.u[i]) || !std::isfinite(v_half[i]) ||
                std::abs(s.u[i]) > config.blowup_disp)
                blown = true;
        }
        if (!blown) {
            // an explicit run cannot gain kinetic energy from nothing; a large
            // rise over the initial value means the integration diverged even
            // if displacements are still bounded by plastic saturation
            double ke_half = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double* vv = &v_half[3 * i];
                ke_half += 0.5 * s.mass[i] *
                           (vv[0] * vv[0] + vv[1] * vv[1] + vv[2] * vv[2]);
            }
            if (ke_half > 10.0 * e_kin0 + 1.0) blown = true;
        }
        if (blown) {
            rep.cause = TermCause::blowup;
            rep.message = "numerical blow-up at step " + std::to_string(s.step) +
                          ", last stable time " + std::to_string(cur.t) + " ms";
            break;
        }
    }

    out.finish(cur);
    s.t = cur.t;
    s.vel = cur.vel;
    rep.t_end = cur.t;
    rep.steps = s.step;
    rep.added_mass_fraction = s.added_mass_fraction();
    rep.e_err_final = e_err_final;
    rep.e_err_max = e_err_max;
    rep.dt_floor_fraction = s.step > 0 ? static_cast<double>(pinned_steps) / s.step : 0.0;

    SolveResult res;
    res.hist = out.take_history();
    res.fields = out.take_fields();
    res.report = rep;
    return res;
}

}  // namespace crashbench
