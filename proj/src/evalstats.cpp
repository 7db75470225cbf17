#include "crashbench/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "crashbench/rng.hpp"

namespace crashbench {

using json = nlohmann::ordered_json;

CaseMetrics case_metrics(const std::vector<ad::Tensor>& pred,
                         const std::vector<ad::Tensor>& target, const ad::Tensor& x0,
                         double dt_anim, double probe_ms) {
    if (pred.empty() || pred.size() != target.size())
        throw std::invalid_argument("case_metrics: frame count mismatch");
    if (x0.cols != 3) throw std::invalid_argument("case_metrics: coordinates must be N x 3");
    if (dt_anim <= 0.0) throw std::invalid_argument("case_metrics: dt_anim must be positive");
    const int n = x0.rows;
    const int nf = static_cast<int>(pred.size());
    for (int f = 0; f < nf; ++f) {
        const auto& p = pred[static_cast<std::size_t>(f)];
        const auto& t = target[static_cast<std::size_t>(f)];
        if (!p.same_shape(t) || p.rows != n || p.cols != 3)
            throw std::invalid_argument("case_metrics: frame shape mismatch");
    }
    const double t_last = nf * dt_anim;
    if (probe_ms < 0.0 || probe_ms > t_last)
        throw std::invalid_argument(
            fmt::format("case_metrics: probe {} ms outside the sequence span [0, {}]", probe_ms,
                        t_last));

    double sum_e = 0.0, sum_e2 = 0.0, den_u2 = 0.0, den_x2 = 0.0;
    std::vector<double> frame_e2(static_cast<std::size_t>(nf), 0.0);
    for (int f = 0; f < nf; ++f) {
        const auto& p = pred[static_cast<std::size_t>(f)];
        const auto& t = target[static_cast<std::size_t>(f)];
        for (int i = 0; i < n; ++i) {
            double e2 = 0.0;
            for (int a = 0; a < 3; ++a) {
                double d = p.at(i, a) - t.at(i, a);
                e2 += d * d;
                double u = t.at(i, a);
                den_u2 += u * u;
                double x = x0.at(i, a) + u;
                den_x2 += x * x;
            }
            frame_e2[static_cast<std::size_t>(f)] += e2;
            sum_e2 += e2;
            sum_e += std::sqrt(e2);
        }
    }
    const double count = static_cast<double>(nf) * n;
    if (den_u2 == 0.0)
        throw std::runtime_error("case_metrics: zero reference displacement, rel_l2_u undefined");
    if (den_x2 == 0.0)
        throw std::runtime_error("case_metrics: zero reference positions, rel_l2_x undefined");

    CaseMetrics m;
    m.rmse = std::sqrt(sum_e2 / count);
    m.mae = sum_e / count;
    m.rel_l2_u = std::sqrt(sum_e2 / den_u2);
    m.rel_l2_x = std::sqrt(sum_e2 / den_x2);

    int probe_frame = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int f = 0; f < nf; ++f) {
        double dist = std::abs((f + 1) * dt_anim - probe_ms);
        if (dist < best) {
            best = dist;
            probe_frame = f;
        }
    }
    m.rmse_at_t = std::sqrt(frame_e2[static_cast<std::size_t>(probe_frame)] / n);
    m.rmse_final = std::sqrt(frame_e2[static_cast<std::size_t>(nf - 1)] / n);
    return m;
}

BootstrapCi bootstrap_ci(const std::vector<double>& values, int replicates, std::uint64_t seed,
                         double level) {
    const std::size_t n = values.size();
    if (n < 2) throw std::invalid_argument("bootstrap_ci: need at least two values");
    if (replicates < 100) throw std::invalid_argument("bootstrap_ci: need at least 100 replicates");
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");

    BootstrapCi ci;
    ci.replicates = replicates;
    ci.level = level;
    ci.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);

    // per-replicate substreams keep the result independent of any scheduling
    std::vector<double> means(static_cast<std::size_t>(replicates));
    for (int r = 0; r < replicates; ++r) {
        SplitMix64 rng(hash_mix(seed, static_cast<std::uint64_t>(r) + 1));
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
        means[static_cast<std::size_t>(r)] = s / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    const double alpha = 1.0 - level;
    auto pick = [&](double q) {
        double idx = std::ceil(q * replicates) - 1.0;
        idx = std::clamp(idx, 0.0, static_cast<double>(replicates - 1));
        return means[static_cast<std::size_t>(idx)];
    };
    ci.lo = pick(alpha / 2.0);
    ci.hi = pick(1.0 - alpha / 2.0);
    return ci;
}

namespace {

// average ranks of |d| over the nonzero entries
std::vector<double> signed_ranks(const std::vector<double>& nz) {
    const std::size_t m = nz.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(nz[a]) < std::abs(nz[b]);
    });
    std::vector<double> rank(m, 0.0);
    std::size_t i = 0;
    while (i < m) {
        std::size_t j = i;
        while (j + 1 < m && std::abs(nz[order[j + 1]]) == std::abs(nz[order[i]])) ++j;
        double avg = static_cast<double>(i + j) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double wilcoxon_signed_rank_p(const std::vector<double>& diffs, bool* defined, bool* exact) {
    std::vector<double> nz;
    for (double d : diffs)
        if (d != 0.0) nz.push_back(d);
    const std::size_t m = nz.size();
    if (defined) *defined = m > 0;
    if (exact) *exact = m > 0 && m <= 20;
    if (m == 0) return 1.0;

    std::vector<double> rank = signed_ranks(nz);
    double wplus = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        if (nz[i] > 0.0) wplus += rank[i];

    if (m <= 20) {
        // ranks are multiples of 1/2, so doubling makes the subset-sum table
        // integral; the count table enumerates all 2^m sign assignments
        long long total2 = 0;
        std::vector<long long> r2(m);
        for (std::size_t i = 0; i < m; ++i) {
            r2[i] = llround(2.0 * rank[i]);
            total2 += r2[i];
        }
        std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        for (std::size_t i = 0; i < m; ++i)
            for (long long s = total2; s >= r2[i]; --s)
                count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r2[i])];
        const long long w2 = llround(2.0 * wplus);
        double low = 0.0, high = 0.0;
        for (long long s = 0; s <= total2; ++s) {
            if (s <= w2) low += count[static_cast<std::size_t>(s)];
            if (s >= w2) high += count[static_cast<std::size_t>(s)];
        }
        const double patterns = std::ldexp(1.0, static_cast<int>(m));
        return std::min(1.0, 2.0 * std::min(low, high) / patterns);
    }

    // normal approximation with average-rank tie correction and a 1/2
    // continuity correction
    const double md = static_cast<double>(m);
    const double mu = md * (md + 1.0) / 4.0;
    double tie = 0.0;
    {
        std::vector<double> mags;
        mags.reserve(m);
        for (double v : nz) mags.push_back(std::abs(v));
        std::sort(mags.begin(), mags.end());
        std::size_t i = 0;
        while (i < mags.size()) {
            std::size_t j = i;
            while (j + 1 < mags.size() && mags[j + 1] == mags[i]) ++j;
            double t = static_cast<double>(j - i + 1);
            tie += t * t * t - t;
            i = j + 1;
        }
    }
    const double var = md * (md + 1.0) * (2.0 * md + 1.0) / 24.0 - tie / 48.0;
    const double delta = wplus - mu;
    const double cc = delta > 0.0 ? 0.5 : (delta < 0.0 ? -0.5 : 0.0);
    const double z = (delta - cc) / std::sqrt(var);
    return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

PairedTests paired_tests(const std::vector<double>& a, const std::vector<double>& b,
                         int permutations, std::uint64_t seed) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_tests: length mismatch");
    if (a.size() < 5) throw std::invalid_argument("paired_tests: need at least 5 pairs");
    if (permutations < 1) throw std::invalid_argument("paired_tests: need at least one draw");
    const std::size_t n = a.size();

    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];

    PairedTests r;
    r.n = static_cast<int>(n);
    r.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    r.diff_ci = bootstrap_ci(d, permutations, hash_mix(seed, 0xb007));
    std::size_t wins = 0;
    for (double x : d)
        if (x < 0.0) ++wins;
    r.win_rate = static_cast<double>(wins) / static_cast<double>(n);

    // two-sided sign-flip permutation on the mean difference; the add-one
    // convention keeps the estimate strictly positive
    const double t_obs = std::abs(r.mean_diff);
    std::size_t hits = 0;
    for (int rep = 1; rep <= permutations; ++rep) {
        SplitMix64 rng(hash_mix(hash_mix(seed, 0x51f7), static_cast<std::uint64_t>(rep)));
        double s = 0.0;
        for (double x : d) s += (rng.next() & 1u) ? x : -x;
        if (std::abs(s / static_cast<double>(n)) >= t_obs) ++hits;
    }
    r.perm_p = (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(permutations));
    r.wilcoxon_p = wilcoxon_signed_rank_p(d, &r.wilcoxon_defined, &r.exact_wilcoxon);
    return r;
}

std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows) {
    std::vector<LeaderboardRow> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
        if (a.rmse_mean != b.rmse_mean) return a.rmse_mean < b.rmse_mean;
        return a.model < b.model;
    });
    std::string out = "rank,model,rmse_mm,mae_mm,rel_l2_x,rel_l2_u,rmse_at_probe_mm\n";
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const LeaderboardRow& r = sorted[i];
        out += fmt::format("{},{},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g}\n", i + 1, r.model,
                           r.rmse_mean, r.mae_mean, r.rel_l2_x_mean, r.rel_l2_u_mean,
                           r.rmse_probe_mean);
    }
    return out;
}

std::string significance_to_json_text(const SignificanceReport& r) {
    json j;
    j["model_a"] = r.model_a;
    j["model_b"] = r.model_b;
    j["metric"] = r.metric;
    j["n"] = r.tests.n;
    if (!r.models.empty()) {
        json ms = json::array();
        for (const auto& m : r.models) {
            json mj;
            mj["model"] = m.model;
            mj["n_cases"] = m.n_cases;
            mj["rmse"] = {{"mean", m.rmse.mean}, {"lo", m.rmse.lo}, {"hi", m.rmse.hi}};
            mj["mae"] = {{"mean", m.mae.mean}, {"lo", m.mae.lo}, {"hi", m.mae.hi}};
            ms.push_back(std::move(mj));
        }
        j["models"] = std::move(ms);
    }
    j["mean_diff"] = r.tests.mean_diff;
    j["ci"] = {{"lo", r.tests.diff_ci.lo},
               {"hi", r.tests.diff_ci.hi},
               {"level", r.tests.diff_ci.level},
               {"replicates", r.tests.diff_ci.replicates}};
    j["win_rate"] = r.tests.win_rate;
    j["perm_p"] = r.tests.perm_p;
    j["wilcoxon_p"] = r.tests.wilcoxon_p;
    j["wilcoxon_defined"] = r.tests.wilcoxon_defined;
    j["exact_wilcoxon"] = r.tests.exact_wilcoxon;
    return j.dump(2);
}

}  // namespace crashbench
