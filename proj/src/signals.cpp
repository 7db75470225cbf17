#include "crashbench/signals.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include <fmt/format.h>

namespace crashbench {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Biquad {
    double a0, a1, a2, b1, b2;
};

// Causal pass, steady-state initial conditions at the first sample so a
// constant input is a fixed point from index zero.
void biquad_pass(std::vector<double>& s, const Biquad& c) {
    double x1 = s[0], x2 = s[0];
    double y1 = s[0], y2 = s[0];
    for (double& v : s) {
        const double x0 = v;
        const double y0 = c.a0 * x0 + c.a1 * x1 + c.a2 * x2 + c.b1 * y1 + c.b2 * y2;
        v = y0;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
    }
}

double channel_max(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, x);
    return m;
}

// Peak hourglass energy against peak internal energy; zero when the run never
// stored hourglass energy at all.
double hourglass_ratio(const TimeHistories& h) {
    const double hg = channel_max(h.e_hg);
    if (hg <= 0.0) return 0.0;
    return hg / std::max(channel_max(h.e_int), 1e-300);
}

}  // namespace

std::vector<double> cfc_filter(const std::vector<double>& x, double dt_ms, double cfc) {
    if (!(dt_ms > 0.0)) throw std::invalid_argument("filter needs dt > 0");
    if (!(cfc > 0.0)) throw std::invalid_argument("filter needs a positive frequency class");
    if (x.size() < 10)
        throw std::invalid_argument("signal too short to filter (need at least 10 samples)");
    const double dt_s = dt_ms * 1e-3;
    const double omega_d = 2.0 * kPi * cfc * 2.0775;
    if (omega_d * dt_s >= kPi)
        throw std::invalid_argument(
            fmt::format("dt = {} ms is too coarse for frequency class {}", dt_ms, cfc));
    const double wa = std::tan(omega_d * dt_s / 2.0);
    const double denom = 1.0 + std::sqrt(2.0) * wa + wa * wa;
    const Biquad c{wa * wa / denom, 2.0 * wa * wa / denom, wa * wa / denom,
                   -2.0 * (wa * wa - 1.0) / denom,
                   (-1.0 + std::sqrt(2.0) * wa - wa * wa) / denom};

    // point-mirrored padding of 10/CFC seconds each end, capped by the signal
    const std::size_t n = x.size();
    const std::size_t npad =
        std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::ceil(10.0 / cfc / dt_s)));
    std::vector<double> ext;
    ext.reserve(n + 2 * npad);
    for (std::size_t k = npad; k >= 1; --k) ext.push_back(2.0 * x.front() - x[k]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t k = 1; k <= npad; ++k) ext.push_back(2.0 * x.back() - x[n - 1 - k]);

    biquad_pass(ext, c);
    std::reverse(ext.begin(), ext.end());
    biquad_pass(ext, c);
    std::reverse(ext.begin(), ext.end());
    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(npad),
                               ext.begin() + static_cast<std::ptrdiff_t>(npad + n));
}

QoiRecord extract_qoi(const TimeHistories& h, const ExtractConfig& cfg) {
    const std::size_t n = h.size();
    if (n < 2) throw std::invalid_argument("histories need at least two samples");
    for (const auto* ch : {&h.fx, &h.fy, &h.fz, &h.e_kin, &h.e_int, &h.e_cont, &h.e_hg, &h.w_p,
                           &h.acc})
        if (ch->size() != n) throw std::invalid_argument("history channel lengths disagree");

    std::vector<double> fx = h.fx, fy = h.fy, fz = h.fz, acc = h.acc;
    if (!cfg.prefiltered) {
        const double dt = h.t[1] - h.t[0];
        if (!(dt > 0.0)) throw std::invalid_argument("history time grid must increase");
        // the solver appends one off-grid terminal row when a run ends between
        // output ticks, so only the final interval may be shorter than dt
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double step = h.t[i + 1] - h.t[i];
            const double tol = 1e-9 * std::max(1.0, std::abs(h.t[i + 1]));
            const bool last = (i + 2 == n);
            if (last ? (step <= 0.0 || step > dt + tol) : (std::abs(step - dt) > tol))
                throw std::invalid_argument("history time grid is not uniform");
        }
        fx = cfc_filter(fx, dt, cfg.cfc);
        fy = cfc_filter(fy, dt, cfg.cfc);
        fz = cfc_filter(fz, dt, cfg.cfc);
        acc = cfc_filter(acc, dt, cfg.cfc);
    }

    QoiRecord r;
    std::vector<double> fnorm(n);
    for (std::size_t i = 0; i < n; ++i)
        fnorm[i] = std::sqrt(fx[i] * fx[i] + fy[i] * fy[i] + fz[i] * fz[i]);
    r.f_wall_max = channel_max(fnorm);
    if (r.f_wall_max > 0.0) {
        const double threshold = cfg.rel_threshold * r.f_wall_max;
        for (std::size_t i = 0; i < n; ++i) {
            if (fnorm[i] > threshold) {
                r.t1 = h.t[i];
                break;
            }
        }
        for (std::size_t i = n; i-- > 0;) {
            if (fnorm[i] > threshold) {
                r.t2 = h.t[i];
                break;
            }
        }
    } else {
        r.no_contact = true;
    }
    r.t_imp = r.t2 - r.t1;

    r.e_int_max = channel_max(h.e_int);
    r.w_p_max = channel_max(h.w_p);
    for (double a : acc) r.a_max = std::max(r.a_max, std::abs(a));
    r.e_kin0 = h.e_kin.front();
    if (r.e_kin0 <= 0.0)
        throw std::runtime_error("energy absorption undefined: initial kinetic energy is zero");
    r.eta_ke = 1.0 - h.e_kin.back() / r.e_kin0;
    r.qc.no_contact = r.no_contact;
    return r;
}

ScreenResult quality_screen(const TimeHistories& h, const TerminationReport& report,
                            const QualityThresholds& thr) {
    ScreenResult res;
    auto flag = [&](std::string reason) {
        res.pass = false;
        res.reasons.push_back(std::move(reason));
    };

    if (report.cause == TermCause::blowup)
        flag(fmt::format("abnormal-termination: {}",
                         report.message.empty() ? to_string(report.cause) : report.message));

    if (report.e_err_max > thr.e_err_max)
        flag(fmt::format("energy-balance: max |E_err| = {:.3g}% above {:.3g}%",
                         100.0 * report.e_err_max, 100.0 * thr.e_err_max));

    const std::pair<const char*, const std::vector<double>*> channels[] = {
        {"t", &h.t},         {"fx", &h.fx},       {"fy", &h.fy},   {"fz", &h.fz},
        {"e_kin", &h.e_kin}, {"e_int", &h.e_int}, {"e_cont", &h.e_cont},
        {"e_hg", &h.e_hg},   {"w_p", &h.w_p},     {"acc", &h.acc}};
    for (const auto& [name, ch] : channels) {
        for (double v : *ch) {
            if (!std::isfinite(v)) {
                flag(fmt::format("non-finite-channel: {}", name));
                break;
            }
        }
    }

    for (std::size_t i = 0; i + 1 < h.w_p.size(); ++i) {
        if (h.w_p[i + 1] < h.w_p[i] - 1e-12) {
            flag(fmt::format("plastic-work-decrease at t = {:.6g} ms", h.t[i + 1]));
            break;
        }
    }

    const double hg = hourglass_ratio(h);
    if (hg > thr.hg_ratio_max)
        flag(fmt::format("hourglass: energy ratio {:.3g}% above {:.3g}%", 100.0 * hg,
                         100.0 * thr.hg_ratio_max));

    if (report.dt_floor_fraction > thr.dt_floor_frac_max)
        flag(fmt::format("timestep-collapse: dt pinned at the floor for {:.3g}% of steps",
                         100.0 * report.dt_floor_fraction));

    return res;
}

QoiRecord make_qoi_record(const TimeHistories& h, const TerminationReport& report,
                          const ExtractConfig& cfg, const QualityThresholds& thr) {
    QoiRecord r = extract_qoi(h, cfg);
    ScreenResult screen = quality_screen(h, report, thr);
    r.qc.e_err_pct = 100.0 * report.e_err_max;
    r.qc.hg_ratio_pct = 100.0 * hourglass_ratio(h);
    r.qc.added_mass_pct = 100.0 * report.added_mass_fraction;
    r.qc.final_time_ms = report.t_end;
    r.qc.pass = screen.pass;
    r.qc.reasons = std::move(screen.reasons);
    r.qc.no_contact = r.no_contact;
    return r;
}

}  // namespace crashbench
