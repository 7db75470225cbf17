#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "crashbench/evalstats.hpp"
#include "crashbench/rng.hpp"

using namespace crashbench;

namespace {

std::vector<ad::Tensor> frames_like(int nf, int n, double fill = 0.0) {
    std::vector<ad::Tensor> out;
    for (int f = 0; f < nf; ++f) {
        ad::Tensor t(n, 3);
        for (double& v : t.d) v = fill;
        out.push_back(std::move(t));
    }
    return out;
}

// full 2^m enumeration of the signed-rank distribution, used as the oracle
// for the table-driven implementation
double brute_wilcoxon(const std::vector<double>& diffs) {
    std::vector<double> nz;
    for (double d : diffs)
        if (d != 0.0) nz.push_back(d);
    const std::size_t m = nz.size();
    REQUIRE(m >= 1);
    REQUIRE(m <= 12);

    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return std::abs(nz[a]) < std::abs(nz[b]); });
    std::vector<double> rank(m, 0.0);
    std::size_t i = 0;
    while (i < m) {
        std::size_t j = i;
        while (j + 1 < m && std::abs(nz[order[j + 1]]) == std::abs(nz[order[i]])) ++j;
        double avg = (static_cast<double>(i + j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double wobs = 0.0;
    for (std::size_t k = 0; k < m; ++k)
        if (nz[k] > 0.0) wobs += rank[k];

    std::size_t low = 0, high = 0;
    const std::size_t patterns = std::size_t{1} << m;
    for (std::size_t bits = 0; bits < patterns; ++bits) {
        double w = 0.0;
        for (std::size_t k = 0; k < m; ++k)
            if (bits & (std::size_t{1} << k)) w += rank[k];
        if (w <= wobs) ++low;
        if (w >= wobs) ++high;
    }
    double p = 2.0 * static_cast<double>(std::min(low, high)) / static_cast<double>(patterns);
    return std::min(p, 1.0);
}

}  // namespace

TEST_CASE("exact prediction scores zero everywhere") {
    auto target = frames_like(3, 4);
    target[1].at(2, 0) = 5.0;  // non-degenerate reference
    auto pred = target;
    ad::Tensor x0(4, 3);
    for (int i = 0; i < 4; ++i) x0.at(i, 0) = 10.0 * (i + 1);
    CaseMetrics m = case_metrics(pred, target, x0, 1.0, 1.5);
    CHECK(m.rmse == 0.0);
    CHECK(m.mae == 0.0);
    CHECK(m.rel_l2_x == 0.0);
    CHECK(m.rel_l2_u == 0.0);
    CHECK(m.rmse_at_t == 0.0);
    CHECK(m.rmse_final == 0.0);
}

TEST_CASE("single node single frame hand values") {
    auto target = frames_like(1, 1);
    target[0].at(0, 0) = 3.0;
    auto pred = frames_like(1, 1);
    ad::Tensor x0(1, 3);
    x0.at(0, 0) = 1.0;
    CaseMetrics m = case_metrics(pred, target, x0, 1.0, 1.0);
    CHECK(m.mae == doctest::Approx(3.0));
    CHECK(m.rmse == doctest::Approx(3.0));
    CHECK(m.rel_l2_u == doctest::Approx(1.0));
    // deformed position (4,0,0), error 3 -> 3/4
    CHECK(m.rel_l2_x == doctest::Approx(0.75));
    CHECK(m.rmse_at_t == doctest::Approx(3.0));
    CHECK(m.rmse_final == doctest::Approx(3.0));
}

TEST_CASE("uniform offset gives mae equal to rmse") {
    auto target = frames_like(2, 5);
    for (auto& t : target) t.at(0, 1) = 2.0;
    auto pred = target;
    for (auto& t : pred)
        for (int i = 0; i < 5; ++i) t.at(i, 0) += 1.0;
    ad::Tensor x0(5, 3);
    for (int i = 0; i < 5; ++i) x0.at(i, 2) = i;
    CaseMetrics m = case_metrics(pred, target, x0, 0.5, 0.5);
    CHECK(m.mae == doctest::Approx(1.0));
    CHECK(m.rmse == doctest::Approx(1.0));
}

TEST_CASE("two nodes two frames hand oracle") {
    // target displacements
    auto target = frames_like(2, 2);
    target[0].at(0, 0) = 1.0;
    target[0].at(1, 1) = 2.0;
    target[1].at(0, 0) = 2.0;
    target[1].at(1, 2) = 2.0;
    // prediction errors: |1| at frame 0 node 0, |7| at frame 1 node 0
    auto pred = target;
    pred[0].at(0, 0) += 1.0;
    pred[1].at(0, 1) += 7.0;
    ad::Tensor x0(2, 3);
    x0.at(0, 0) = 10.0;
    x0.at(1, 1) = 10.0;
    CaseMetrics m = case_metrics(pred, target, x0, 2.0, 2.9);
    CHECK(m.mae == doctest::Approx(2.0));                        // (1+0+7+0)/4
    CHECK(m.rmse == doctest::Approx(std::sqrt(12.5)));           // (1+49)/4
    CHECK(m.rel_l2_u == doctest::Approx(std::sqrt(50.0 / 13.0)));
    // deformed norms: 121+144 + 144+104 = 513
    CHECK(m.rel_l2_x == doctest::Approx(std::sqrt(50.0 / 513.0)));
    // frame times 2 and 4; probe 2.9 is nearest frame 0
    CHECK(m.rmse_at_t == doctest::Approx(std::sqrt(0.5)));
    CHECK(m.rmse_final == doctest::Approx(std::sqrt(24.5)));
}

TEST_CASE("metric failure modes") {
    auto target = frames_like(1, 2);
    auto pred = frames_like(1, 2);
    ad::Tensor x0(2, 3);
    // zero reference displacement -> rel_l2_u undefined
    CHECK_THROWS(case_metrics(pred, target, x0, 1.0, 0.5));
    target[0].at(0, 0) = 1.0;
    CHECK_NOTHROW(case_metrics(pred, target, x0, 1.0, 0.5));
    CHECK_THROWS(case_metrics(pred, target, x0, 1.0, -0.1));  // probe before start
    CHECK_THROWS(case_metrics(pred, target, x0, 1.0, 1.5));   // probe past the end
    auto bad = frames_like(1, 3);
    CHECK_THROWS(case_metrics(bad, target, x0, 1.0, 0.5));
    CHECK_THROWS(case_metrics({}, {}, x0, 1.0, 0.0));
}

TEST_CASE("mae never exceeds rmse") {
    SplitMix64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + static_cast<int>(rng.below(6));
        int nf = 1 + static_cast<int>(rng.below(4));
        auto target = frames_like(nf, n);
        auto pred = frames_like(nf, n);
        for (auto& t : target)
            for (double& v : t.d) v = rng.normal();
        for (auto& t : pred)
            for (double& v : t.d) v = rng.normal();
        ad::Tensor x0(n, 3);
        for (double& v : x0.d) v = 10.0 * rng.uniform();
        CaseMetrics m = case_metrics(pred, target, x0, 1.0, 0.5 * nf);
        CHECK(m.mae <= m.rmse + 1e-12);
        CHECK(m.rmse >= 0.0);
    }
}

TEST_CASE("bootstrap of constant data is degenerate") {
    BootstrapCi ci = bootstrap_ci({4.25, 4.25, 4.25, 4.25}, 500, 11);
    CHECK(ci.mean == doctest::Approx(4.25));
    CHECK(ci.lo == doctest::Approx(4.25));
    CHECK(ci.hi == doctest::Approx(4.25));
    CHECK(ci.replicates == 500);
    CHECK(ci.level == doctest::Approx(0.95));
}

TEST_CASE("bootstrap respects the sample bounds") {
    BootstrapCi ci = bootstrap_ci({0.0, 1.0}, 1000, 3);
    CHECK(ci.mean == doctest::Approx(0.5));
    CHECK(ci.lo >= 0.0);
    CHECK(ci.hi <= 1.0);
    CHECK(ci.lo <= ci.mean);
    CHECK(ci.hi >= ci.mean);
}

TEST_CASE("bootstrap is shift-equivariant and seed-deterministic") {
    std::vector<double> v = {0.3, -1.2, 2.2, 0.7, -0.4, 1.9, 0.05, -2.6};
    BootstrapCi a = bootstrap_ci(v, 2000, 21, 0.9);
    BootstrapCi b = bootstrap_ci(v, 2000, 21, 0.9);
    CHECK(a.mean == b.mean);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    std::vector<double> shifted = v;
    for (double& x : shifted) x += 5.0;
    BootstrapCi s = bootstrap_ci(shifted, 2000, 21, 0.9);
    CHECK(s.mean == doctest::Approx(a.mean + 5.0).epsilon(1e-12));
    CHECK(s.lo == doctest::Approx(a.lo + 5.0).epsilon(1e-12));
    CHECK(s.hi == doctest::Approx(a.hi + 5.0).epsilon(1e-12));

    CHECK_THROWS(bootstrap_ci({1.0}, 1000, 0));
    CHECK_THROWS(bootstrap_ci(v, 99, 0));
    CHECK_THROWS(bootstrap_ci(v, 1000, 0, 0.0));
    CHECK_THROWS(bootstrap_ci(v, 1000, 0, 1.0));
}

TEST_CASE("bootstrap interval covers the true mean at roughly nominal rate") {
    int covered = 0;
    for (int e = 0; e < 200; ++e) {
        SplitMix64 rng(hash_mix(0xc0ffee, static_cast<std::uint64_t>(e)));
        std::vector<double> v(100);
        for (double& x : v) x = rng.normal();
        BootstrapCi ci = bootstrap_ci(v, 10000, hash_mix(0xabc, static_cast<std::uint64_t>(e)));
        if (ci.lo <= 0.0 && 0.0 <= ci.hi) ++covered;
    }
    // nominal 95%; accept 90..99% over 200 repetitions
    CHECK(covered >= 180);
    CHECK(covered <= 198);
}

TEST_CASE("wilcoxon exact probability for five one-sided pairs") {
    bool defined = false, exact = false;
    double p = wilcoxon_signed_rank_p({-1.0, -2.0, -3.0, -4.0, -5.0}, &defined, &exact);
    CHECK(defined);
    CHECK(exact);
    CHECK(p == 0.0625);  // 2 / 2^5
}

TEST_CASE("wilcoxon with no nonzero differences is undefined") {
    bool defined = true, exact = true;
    double p = wilcoxon_signed_rank_p({0.0, 0.0, 0.0}, &defined, &exact);
    CHECK(!defined);
    CHECK(p == 1.0);
}

TEST_CASE("exact wilcoxon matches full enumeration") {
    std::vector<std::vector<double>> cases = {
        {-1.0, -2.0, -3.0, -4.0, -5.0},
        {1.5, -2.25, 3.0, 3.0, -0.5, 4.75, -4.75, 2.0},
        {0.0, 1.0, -1.0, 2.0, 2.0, -3.0},
        {5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.25},
    };
    SplitMix64 rng(31);
    for (int trial = 0; trial < 6; ++trial) {
        std::vector<double> d;
        std::size_t m = 5 + rng.below(6);
        for (std::size_t i = 0; i < m; ++i) {
            double mag = 0.5 * static_cast<double>(1 + rng.below(9));  // forced ties
            d.push_back(rng.next() & 1 ? mag : -mag);
        }
        cases.push_back(std::move(d));
    }
    for (const auto& d : cases) {
        bool defined = false, exact = false;
        double p = wilcoxon_signed_rank_p(d, &defined, &exact);
        CHECK(defined);
        CHECK(exact);
        CHECK(p == doctest::Approx(brute_wilcoxon(d)).epsilon(1e-12));
        // sign reversal leaves the two-sided p unchanged
        std::vector<double> neg = d;
        for (double& x : neg) x = -x;
        CHECK(wilcoxon_signed_rank_p(neg) == doctest::Approx(p).epsilon(1e-12));
    }
}

TEST_CASE("wilcoxon normal approximation against the frozen reference") {
    // 37 pairs, ties included; reference computed independently:
    // W+ = 496.5, tie-corrected variance 4384.5, continuity-corrected
    // z = 2.1822666207546124
    std::vector<double> d = {-5.5, 2.0, 1.5,  5.0, 3.0,  0.5, 4.0, -4.0, 0.5, 3.0,
                             -5.0, 1.5, 2.0,  5.5, 2.5,  1.0, 4.5, 3.5,  6.0, 3.5,
                             -4.5, 1.0, 2.5,  -5.5, 2.0, 1.5, 5.0, 3.0,  0.5, 4.0,
                             -4.0, 0.5, 3.0,  -5.0, 1.5, 2.0, 5.5};
    REQUIRE(d.size() == 37);
    bool defined = false, exact = true;
    double p = wilcoxon_signed_rank_p(d, &defined, &exact);
    CHECK(defined);
    CHECK(!exact);
    CHECK(p == doctest::Approx(0.02908986099021957).epsilon(1e-12));
    std::vector<double> neg = d;
    for (double& x : neg) x = -x;
    CHECK(wilcoxon_signed_rank_p(neg) == doctest::Approx(p).epsilon(1e-12));
}

TEST_CASE("identical models compare as a wash") {
    std::vector<double> a = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    PairedTests r = paired_tests(a, a, 2000, 5);
    CHECK(r.n == 6);
    CHECK(r.mean_diff == 0.0);
    CHECK(r.win_rate == 0.0);
    CHECK(r.perm_p == 1.0);
    CHECK(!r.wilcoxon_defined);
    CHECK(r.diff_ci.lo == 0.0);
    CHECK(r.diff_ci.hi == 0.0);
}

TEST_CASE("five-pair dominance") {
    std::vector<double> b = {1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> a = {0.0, 1.0, 2.0, 3.0, 4.0};
    PairedTests r = paired_tests(a, b, 10000, 7);
    CHECK(r.mean_diff == doctest::Approx(-1.0));
    CHECK(r.win_rate == 1.0);
    CHECK(r.wilcoxon_defined);
    CHECK(r.exact_wilcoxon);
    CHECK(r.wilcoxon_p == 0.0625);
    // constant differences -> degenerate paired-bootstrap interval
    CHECK(r.diff_ci.lo == doctest::Approx(-1.0));
    CHECK(r.diff_ci.hi == doctest::Approx(-1.0));
    // two in 32 sign patterns tie or beat |mean d|; add-one estimate near 1/16
    CHECK(r.perm_p > 0.04);
    CHECK(r.perm_p < 0.09);
}

TEST_CASE("fifteen-pair dominance is decisively significant") {
    std::vector<double> a(15), b(15);
    for (int i = 0; i < 15; ++i) {
        b[static_cast<std::size_t>(i)] = 10.0 + i;
        a[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] - 0.3 * (i + 1);
    }
    PairedTests r = paired_tests(a, b, 10000, 13);
    CHECK(r.win_rate == 1.0);
    CHECK(r.perm_p < 0.001);
    CHECK(r.perm_p > 0.0);
    CHECK(r.exact_wilcoxon);
    CHECK(r.wilcoxon_p == doctest::Approx(2.0 / 32768.0).epsilon(1e-12));
}

TEST_CASE("swapping the models negates the comparison") {
    std::vector<double> a = {0.5, 2.5, 2.0, 5.5, 4.0, 1.0, 7.0};
    std::vector<double> b = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.5};
    PairedTests ab = paired_tests(a, b, 4000, 17);
    PairedTests ba = paired_tests(b, a, 4000, 17);
    CHECK(ab.mean_diff == doctest::Approx(-ba.mean_diff).epsilon(1e-12));
    CHECK(ab.perm_p == ba.perm_p);
    CHECK(ab.wilcoxon_p == doctest::Approx(ba.wilcoxon_p).epsilon(1e-12));
    // no zero differences in this data -> win rates complement
    CHECK(ab.win_rate + ba.win_rate == doctest::Approx(1.0));
}

TEST_CASE("paired test input validation and determinism") {
    std::vector<double> four = {1, 2, 3, 4};
    CHECK_THROWS(paired_tests(four, four, 1000, 0));
    std::vector<double> five = {1, 2, 3, 4, 5};
    std::vector<double> six = {1, 2, 3, 4, 5, 6};
    CHECK_THROWS(paired_tests(five, six, 1000, 0));

    std::vector<double> a = {0.5, 2.5, 2.0, 5.5, 4.0};
    std::vector<double> b = {1.0, 2.0, 3.0, 4.0, 5.0};
    PairedTests r1 = paired_tests(a, b, 2000, 23);
    PairedTests r2 = paired_tests(a, b, 2000, 23);
    CHECK(r1.perm_p == r2.perm_p);
    CHECK(r1.wilcoxon_p == r2.wilcoxon_p);
    CHECK(r1.diff_ci.lo == r2.diff_ci.lo);
    CHECK(r1.diff_ci.hi == r2.diff_ci.hi);
}

TEST_CASE("leaderboard csv is ranked by mean rmse") {
    LeaderboardRow ridge;
    ridge.model = "ridge";
    ridge.n_cases = 6;
    ridge.rmse_mean = 2.5;
    ridge.mae_mean = 2.0;
    ridge.rel_l2_x_mean = 0.125;
    ridge.rel_l2_u_mean = 0.5;
    ridge.rmse_probe_mean = 3.0;
    LeaderboardRow net;
    net.model = "crashsolver";
    net.n_cases = 6;
    net.rmse_mean = 1.5;
    net.mae_mean = 1.0;
    net.rel_l2_x_mean = 0.0625;
    net.rel_l2_u_mean = 0.25;
    net.rmse_probe_mean = 2.0;
    std::string csv = leaderboard_csv({ridge, net});
    CHECK(csv ==
          "rank,model,rmse_mm,mae_mm,rel_l2_x,rel_l2_u,rmse_at_probe_mm\n"
          "1,crashsolver,1.5,1,0.0625,0.25,2\n"
          "2,ridge,2.5,2,0.125,0.5,3\n");

    // ties on rmse fall back to the model name
    LeaderboardRow twin = net;
    twin.model = "alt";
    std::string tied = leaderboard_csv({net, twin});
    CHECK(tied.find("1,alt,") != std::string::npos);
    CHECK(tied.find("2,crashsolver,") != std::string::npos);
}

TEST_CASE("significance report serializes to json") {
    std::vector<double> a(15), b(15);
    for (int i = 0; i < 15; ++i) {
        b[static_cast<std::size_t>(i)] = 10.0 + i;
        a[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] - 0.5;
    }
    SignificanceReport rep;
    rep.model_a = "crashsolver";
    rep.model_b = "knn";
    rep.tests = paired_tests(a, b, 1000, 29);
    ModelSummary ma;
    ma.model = "crashsolver";
    ma.n_cases = 15;
    ma.rmse = bootstrap_ci(a, 500, 3);
    ma.mae = bootstrap_ci(a, 500, 4);
    rep.models.push_back(ma);
    std::string text = significance_to_json_text(rep);
    auto j = nlohmann::json::parse(text);
    CHECK(j.at("model_a") == "crashsolver");
    CHECK(j.at("model_b") == "knn");
    CHECK(j.at("metric") == "rel_l2_u");
    CHECK(j.at("n") == 15);
    REQUIRE(j.at("models").size() == 1);
    CHECK(j.at("models")[0].at("model") == "crashsolver");
    CHECK(j.at("models")[0].at("n_cases") == 15);
    CHECK(j.at("models")[0].at("rmse").at("mean") == doctest::Approx(ma.rmse.mean));
    CHECK(double(j.at("models")[0].at("mae").at("lo")) <=
          double(j.at("models")[0].at("mae").at("hi")));
    CHECK(j.at("win_rate") == 1.0);
    CHECK(j.at("mean_diff") == doctest::Approx(-0.5));
    CHECK(j.at("wilcoxon_defined") == true);
    CHECK(j.at("exact_wilcoxon") == true);
    CHECK(j.at("ci").at("level") == doctest::Approx(0.95));
    CHECK(j.at("ci").at("replicates") == 1000);
    double lo = j.at("ci").at("lo");
    double hi = j.at("ci").at("hi");
    CHECK(lo <= hi);
    CHECK(j.at("perm_p") > 0.0);
    CHECK(j.at("perm_p") <= 1.0);
}
