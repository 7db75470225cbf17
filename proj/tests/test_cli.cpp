#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "crashbench/cli.hpp"
#include "crashbench/datastore.hpp"
#include "crashbench/doe.hpp"
#include "crashbench/solver.hpp"
#include "crashbench/surrogate.hpp"

using namespace crashbench;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("crashbench_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

struct CliResult {
    int rc = 0;
    std::string out;   // captured stdout
    std::string err;   // captured stderr
};

// Runs cli_main in-process with stdout/stderr redirected to scratch files so
// usage chatter stays out of the test report and printed lines can be checked.
CliResult run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.emplace_back("crashbench");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& s : full) argv.push_back(s.c_str());

    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / "crashbench_cli_io";
    fs::create_directories(dir);
    const fs::path out_path = dir / ("out_" + std::to_string(counter) + ".txt");
    const fs::path err_path = dir / ("err_" + std::to_string(counter) + ".txt");
    ++counter;

    std::fflush(stdout);
    std::fflush(stderr);
    int saved_out = ::dup(::fileno(stdout));
    int saved_err = ::dup(::fileno(stderr));
    REQUIRE(saved_out >= 0);
    REQUIRE(saved_err >= 0);
    REQUIRE(std::freopen(out_path.string().c_str(), "w", stdout) != nullptr);
    REQUIRE(std::freopen(err_path.string().c_str(), "w", stderr) != nullptr);

    CliResult r;
    r.rc = cli_main(static_cast<int>(argv.size()), argv.data());

    std::fflush(stdout);
    std::fflush(stderr);
    ::dup2(saved_out, ::fileno(stdout));
    ::dup2(saved_err, ::fileno(stderr));
    ::close(saved_out);
    ::close(saved_err);
    std::clearerr(stdout);
    std::clearerr(stderr);
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// One small campaign shared by the run/split/train/eval tests: nine anchor
// scenarios solved to 4 ms. Built lazily through the CLI itself.
struct CampaignFixture {
    fs::path base, plan, solver, root, splits;
    int n_pass = 0;
};

const CampaignFixture& campaign() {
    static const CampaignFixture fx = [] {
        CampaignFixture c;
        c.base = fresh_dir("e2e");
        SolverConfig sc;
        sc.t_final = 4.0;
        sc.dt_out = 0.1;
        sc.dt_anim = 1.0;
        c.solver = c.base / "solver.json";
        spit(c.solver, solver_config_to_json_text(sc));

        c.plan = c.base / "plan.json";
        REQUIRE(run_cli({"plan", "--kind", "bumper", "--count", "9", "--seed", "5", "--out",
                         c.plan.string()})
                    .rc == 0);

        c.root = c.base / "camp";
        REQUIRE(run_cli({"run", "--plan", c.plan.string(), "--out", c.root.string(), "--solver",
                         c.solver.string()})
                    .rc == 0);
        c.n_pass = static_cast<int>(master_table(c.root).size());
        REQUIRE(c.n_pass >= 7);

        c.splits = c.root / "splits.json";
        REQUIRE(run_cli({"split", "--root", c.root.string(), "--fractions", "0.5,0.25,0.25",
                         "--seed", "42"})
                    .rc == 0);
        return c;
    }();
    return fx;
}

const std::string kMetricsHeader =
    "case_id,rmse_mm,mae_mm,rel_l2_x,rel_l2_u,rmse_at_probe_mm,rmse_final_mm";

std::string fake_metrics(double rel_offset) {
    std::string text = kMetricsHeader + "\n";
    for (int i = 0; i < 6; ++i) {
        double rel = 0.2 + 0.01 * i + rel_offset;
        text += "case_" + std::to_string(1000 + i) + "," + std::to_string(2.0 + i) + "," +
                std::to_string(1.5 + i) + ",0.05," + std::to_string(rel) + ",2.5,3.5\n";
    }
    return text;
}

}  // namespace

TEST_CASE("help exits zero") {
    CHECK(run_cli({"--help"}).rc == 0);
    CHECK(run_cli({"plan", "--help"}).rc == 0);
    CHECK(run_cli({"stats", "--help"}).rc == 0);
}

TEST_CASE("usage errors exit with code two") {
    CHECK(run_cli({}).rc == 2);
    CHECK(run_cli({"frobnicate"}).rc == 2);
    CHECK(run_cli({"plan", "--bogus-flag", "1"}).rc == 2);
    CHECK(run_cli({"plan"}).rc == 2);  // missing required flags
    CHECK(run_cli({"run"}).rc == 2);
}

TEST_CASE("vehicle plan reports anchors plus samples and round trips") {
    fs::path dir = fresh_dir("plan_vehicle");
    fs::path out = dir / "vplan.json";
    auto r = run_cli({"plan", "--kind", "vehicle", "--count", "500", "--seed", "9", "--out",
                      out.string()});
    CHECK(r.rc == 0);
    CHECK(r.out.find("15 anchors + 485 samples") != std::string::npos);

    CampaignPlan plan = plan_from_json_file(out);
    CHECK(plan.kind == "vehicle");
    CHECK(plan.seed == 9);
    REQUIRE(plan.cases.size() == 500);
    int anchors = 0;
    for (const auto& c : plan.cases)
        if (c.origin == Origin::anchor) ++anchors;
    CHECK(anchors == 15);

    // provenance manifest appears next to the plan, written once
    fs::path manifest = dir / "run_manifest.json";
    REQUIRE(fs::exists(manifest));
    auto j = nlohmann::json::parse(slurp(manifest));
    CHECK(j.at("command") == "plan");
    CHECK(j.at("seed") == 9);
    CHECK(j.at("tool_version") == kToolVersion);
    CHECK(j.count("timestamp") == 1);
    CHECK(j.count("out") == 1);
}

TEST_CASE("plans are deterministic for a fixed seed") {
    fs::path dir = fresh_dir("plan_seed");
    auto run_plan = [&](const std::string& name, const std::string& seed) {
        fs::path out = dir / name;
        auto r = run_cli({"plan", "--kind", "bumper", "--count", "40", "--seed", seed, "--out",
                          out.string()});
        REQUIRE(r.rc == 0);
        return slurp(out);
    };
    std::string a = run_plan("a.json", "7");
    std::string b = run_plan("b.json", "7");
    std::string c = run_plan("c.json", "8");
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("plan rejects a zero count") {
    fs::path dir = fresh_dir("plan_zero");
    auto r = run_cli({"plan", "--kind", "bumper", "--count", "0", "--out",
                      (dir / "p.json").string()});
    CHECK(r.rc == 2);
}

TEST_CASE("seed environment fallback applies only when the flag is absent") {
    fs::path dir = fresh_dir("plan_env");
    auto plan_bytes = [&](const std::string& name, std::vector<std::string> extra) {
        std::vector<std::string> args = {"plan", "--kind", "bumper", "--count", "20", "--out",
                                         (dir / name).string()};
        args.insert(args.end(), extra.begin(), extra.end());
        REQUIRE(run_cli(args).rc == 0);
        return slurp(dir / name);
    };

    std::string flagged = plan_bytes("flag.json", {"--seed", "123"});

    ::setenv("CRASHBENCH_SEED", "123", 1);
    std::string env_only = plan_bytes("env.json", {});
    std::string flag_wins = plan_bytes("flagwins.json", {"--seed", "5"});
    ::unsetenv("CRASHBENCH_SEED");
    std::string five = plan_bytes("five.json", {"--seed", "5"});

    CHECK(env_only == flagged);
    CHECK(flag_wins == five);
    CHECK(flag_wins != flagged);
}

TEST_CASE("run requires an existing plan file") {
    fs::path dir = fresh_dir("run_noplan");
    auto r = run_cli({"run", "--plan", (dir / "absent.json").string(), "--out",
                      (dir / "out").string()});
    CHECK(r.rc == 2);
}

TEST_CASE("campaign run produces bundles, master table and one manifest") {
    const auto& c = campaign();
    CHECK(fs::exists(c.root / "master.csv"));
    CHECK(fs::exists(c.root / "campaign_report.json"));

    int manifests = 0;
    for (const auto& entry : fs::recursive_directory_iterator(c.root))
        if (entry.is_regular_file() && entry.path().filename() == "run_manifest.json")
            ++manifests;
    CHECK(manifests == 1);

    auto rows = master_table(c.root);
    CHECK(static_cast<int>(rows.size()) == c.n_pass);
    for (const auto& row : rows) {
        CaseBundle b = read_bundle(c.root / row.case_id);
        CHECK(b.manifest.status == "pass");
        CHECK(b.fields.frames.size() >= 2);
    }
}

TEST_CASE("rerunning a campaign without overwrite collides and overwrite reproduces it") {
    const auto& c = campaign();
    std::string master_before = slurp(c.root / "master.csv");

    auto collide = run_cli({"run", "--plan", c.plan.string(), "--out", c.root.string(),
                            "--solver", c.solver.string()});
    CHECK(collide.rc == 3);

    auto redo = run_cli({"run", "--plan", c.plan.string(), "--out", c.root.string(), "--solver",
                         c.solver.string(), "--overwrite", "--workers", "4"});
    CHECK(redo.rc == 0);
    CHECK(slurp(c.root / "master.csv") == master_before);
}

TEST_CASE("running an empty plan reports no passing cases") {
    fs::path dir = fresh_dir("run_empty");
    CampaignPlan plan;
    plan.seed = 1;
    plan.kind = "bumper";
    plan.space = bumper_space();
    fs::path pf = dir / "empty_plan.json";
    spit(pf, plan_to_json_text(plan));

    auto r = run_cli({"run", "--plan", pf.string(), "--out", (dir / "out").string()});
    CHECK(r.rc == 1);
    CHECK(r.out.find("no passing cases") != std::string::npos);
}

TEST_CASE("split writes deterministic splits covering all passing cases") {
    const auto& c = campaign();
    REQUIRE(fs::exists(c.splits));
    SplitSet s = read_splits(c.splits);
    CHECK(static_cast<int>(s.train.size() + s.validation.size() + s.test.size()) == c.n_pass);
    CHECK(!s.train.empty());
    CHECK(!s.validation.empty());
    CHECK(!s.test.empty());

    fs::path s1 = c.base / "s1.json";
    fs::path s2 = c.base / "s2.json";
    REQUIRE(run_cli({"split", "--root", c.root.string(), "--fractions", "0.5,0.25,0.25", "--seed",
                     "42", "--out", s1.string()})
                .rc == 0);
    REQUIRE(run_cli({"split", "--root", c.root.string(), "--fractions", "0.5,0.25,0.25", "--seed",
                     "42", "--out", s2.string()})
                .rc == 0);
    CHECK(slurp(s1) == slurp(s2));
    CHECK(slurp(s1) == slurp(c.splits));
}

TEST_CASE("split validates fractions and rejects empty campaigns") {
    const auto& c = campaign();
    CHECK(run_cli({"split", "--root", c.root.string(), "--fractions", "0.9,0.3,0.2", "--seed",
                   "1"})
              .rc == 2);
    CHECK(run_cli({"split", "--root", c.root.string(), "--fractions", "0.7,0.3", "--seed", "1"})
              .rc == 2);

    fs::path empty = fresh_dir("split_empty");
    CHECK(run_cli({"split", "--root", empty.string(), "--fractions", "0.5,0.25,0.25", "--seed",
                   "1"})
              .rc == 1);
}

TEST_CASE("train writes a checkpoint and per-epoch loss history") {
    const auto& c = campaign();
    fs::path ckpt = c.base / "models" / "m.ckpt";
    auto r = run_cli({"train", "--root", c.root.string(), "--splits", c.splits.string(), "--out",
                      ckpt.string(), "--epochs", "2", "--lr", "1e-3", "--seed", "3"});
    REQUIRE(r.rc == 0);
    REQUIRE(fs::exists(ckpt));

    CrashSolverModel m = CrashSolverModel::load(ckpt);
    CHECK(m.config.frames >= 2);
    CHECK(m.param_count() > 0);

    fs::path hist = c.base / "models" / "m.ckpt.history.csv";
    REQUIRE(fs::exists(hist));
    std::string text = slurp(hist);
    CHECK(text.rfind("epoch,train_loss,val_loss\n", 0) == 0);
    CHECK(count_lines(text) == 3);  // header + one row per epoch
    CHECK(fs::exists(c.base / "models" / "run_manifest.json"));
}

TEST_CASE("a zero step budget leaves the checkpoint at initialization") {
    const auto& c = campaign();
    fs::path ckpt = c.base / "models0" / "m0.ckpt";
    auto r = run_cli({"train", "--root", c.root.string(), "--splits", c.splits.string(), "--out",
                      ckpt.string(), "--epochs", "3", "--steps", "0", "--seed", "11"});
    REQUIRE(r.rc == 0);

    CrashSolverModel got = CrashSolverModel::load(ckpt);
    CrashSolverModel ref = CrashSolverModel::init(got.config, got.init_seed);
    REQUIRE(got.params.size() == ref.params.size());
    for (std::size_t i = 0; i < got.params.size(); ++i) {
        CHECK(got.params[i].name == ref.params[i].name);
        CHECK(got.params[i].value.d == ref.params[i].value.d);
    }

    fs::path hist = c.base / "models0" / "m0.ckpt.history.csv";
    REQUIRE(fs::exists(hist));
    CHECK(count_lines(slurp(hist)) == 1);  // header only, no completed epochs
}

TEST_CASE("train rejects missing splits and empty train lists") {
    const auto& c = campaign();
    CHECK(run_cli({"train", "--root", c.root.string(), "--splits",
                   (c.base / "absent.json").string(), "--out", (c.base / "x.ckpt").string()})
              .rc == 2);

    SplitSet s = read_splits(c.splits);
    SplitSet hollow;
    hollow.seed = s.seed;
    hollow.fractions = s.fractions;
    hollow.validation = s.validation;
    hollow.test = s.test;  // train list left empty
    fs::path hollow_path = c.base / "hollow_splits.json";
    write_splits(hollow, hollow_path);
    CHECK(run_cli({"train", "--root", c.root.string(), "--splits", hollow_path.string(), "--out",
                   (c.base / "y.ckpt").string()})
              .rc == 1);
}

TEST_CASE("eval writes per-case metrics and a ranked leaderboard") {
    const auto& c = campaign();
    fs::path ckpt = c.base / "models" / "m.ckpt";
    REQUIRE(fs::exists(ckpt));  // produced by the train test
    fs::path twin = c.base / "models" / "twin.ckpt";
    fs::copy_file(ckpt, twin, fs::copy_options::overwrite_existing);

    fs::path out = c.base / "eval";
    auto r = run_cli({"eval", "--root", c.root.string(), "--splits", c.splits.string(), "--ckpt",
                      ckpt.string() + "," + twin.string(), "--split", "validation", "--out",
                      out.string()});
    REQUIRE(r.rc == 0);

    SplitSet s = read_splits(c.splits);
    for (const std::string& name : {std::string("m"), std::string("twin"), std::string("zero")}) {
        fs::path mpath = out / (name + ".metrics.csv");
        REQUIRE(fs::exists(mpath));
        std::string text = slurp(mpath);
        CHECK(text.rfind(kMetricsHeader + "\n", 0) == 0);
        CHECK(count_lines(text) == static_cast<int>(s.validation.size()) + 1);
    }

    // identical checkpoints produce identical metric rows
    std::string m_rows = slurp(out / "m.metrics.csv");
    std::string twin_rows = slurp(out / "twin.metrics.csv");
    CHECK(m_rows == twin_rows);

    fs::path lb = out / "leaderboard.csv";
    REQUIRE(fs::exists(lb));
    std::string text = slurp(lb);
    CHECK(text.rfind("rank,model,rmse_mm,mae_mm,rel_l2_x,rel_l2_u,rmse_at_probe_mm\n", 0) == 0);
    CHECK(count_lines(text) == 4);  // m, twin, zero
    CHECK(text.find("zero") != std::string::npos);
    CHECK(r.out.find("rank") != std::string::npos);  // leaderboard echoed to stdout
}

TEST_CASE("eval rejects a probe outside the animation span") {
    const auto& c = campaign();
    fs::path ckpt = c.base / "models" / "m.ckpt";
    REQUIRE(fs::exists(ckpt));
    auto r = run_cli({"eval", "--root", c.root.string(), "--splits", c.splits.string(), "--ckpt",
                      ckpt.string(), "--split", "validation", "--probe-ms", "1e6", "--out",
                      (c.base / "eval_bad").string()});
    CHECK(r.rc == 2);
}

TEST_CASE("stats compares paired metrics files") {
    fs::path dir = fresh_dir("stats");
    fs::path fa = dir / "a.metrics.csv";
    fs::path fb = dir / "b.metrics.csv";
    spit(fa, fake_metrics(0.0));
    spit(fb, fake_metrics(0.5));

    fs::path out = dir / "sig.json";
    auto r = run_cli({"stats", "--metrics", fa.string(), "--against", fb.string(), "--replicates",
                      "400", "--permutations", "600", "--seed", "17", "--out", out.string()});
    REQUIRE(r.rc == 0);
    auto j = nlohmann::json::parse(slurp(out));
    CHECK(j.at("metric") == "rel_l2_u");
    CHECK(j.at("n") == 6);
    CHECK(j.at("mean_diff") == doctest::Approx(-0.5));
    CHECK(j.at("win_rate") == 1.0);
    CHECK(j.at("wilcoxon_p") == doctest::Approx(2.0 / 64.0));
    CHECK(j.at("exact_wilcoxon") == true);
    CHECK(j.at("ci").at("replicates") == 400);
    REQUIRE(j.at("models").size() == 2);
    CHECK(j.at("models")[0].at("n_cases") == 6);
    CHECK(j.at("models")[0].at("rmse").at("mean") == doctest::Approx(4.5));
    CHECK(r.out.find("win rate") != std::string::npos);  // human-readable table
}

TEST_CASE("stats defaults to ten thousand replicates") {
    fs::path dir = fresh_dir("stats_default");
    fs::path fa = dir / "a.metrics.csv";
    spit(fa, fake_metrics(0.0));
    fs::path out = dir / "sig.json";
    auto r = run_cli({"stats", "--metrics", fa.string(), "--against", fa.string(), "--seed", "1",
                      "--out", out.string()});
    REQUIRE(r.rc == 0);
    auto j = nlohmann::json::parse(slurp(out));
    CHECK(j.at("ci").at("replicates") == 10000);
    CHECK(j.at("mean_diff") == 0.0);
    CHECK(j.at("perm_p") == 1.0);
    CHECK(j.at("win_rate") == 0.0);
}

TEST_CASE("stats rejects unpaired or malformed metrics files") {
    fs::path dir = fresh_dir("stats_bad");
    fs::path fa = dir / "a.metrics.csv";
    spit(fa, fake_metrics(0.0));

    std::string other = kMetricsHeader + "\nother_case,1,1,0.1,0.2,1,1\n";
    fs::path fb = dir / "b.metrics.csv";
    spit(fb, other);
    CHECK(run_cli({"stats", "--metrics", fa.string(), "--against", fb.string()}).rc == 2);

    CHECK(run_cli({"stats", "--metrics", fa.string(), "--against", fa.string(), "--metric",
                   "no_such_column"})
              .rc == 2);

    CHECK(run_cli({"stats", "--metrics", (dir / "absent.csv").string(), "--against", fa.string()})
              .rc == 2);
}

TEST_CASE("filter appends a filtered channel column") {
    const auto& c = campaign();
    auto rows = master_table(c.root);
    REQUIRE(!rows.empty());
    fs::path hist = c.root / rows.front().case_id / "history.csv";
    fs::path out = c.base / "filtered.csv";

    auto r = run_cli({"filter", "--in", hist.string(), "--channel", "fx_kN", "--cfc", "60",
                      "--out", out.string()});
    REQUIRE(r.rc == 0);

    std::istringstream orig(slurp(hist));
    std::istringstream filt(slurp(out));
    std::string a, b;
    int row = 0;
    while (std::getline(orig, a)) {
        REQUIRE(std::getline(filt, b));
        // every original line survives as a prefix, one new column appended
        REQUIRE(b.rfind(a + ",", 0) == 0);
        if (row == 0) CHECK(b == a + ",fx_kN_cfc60");
        ++row;
    }
    CHECK(!std::getline(filt, b));
}

TEST_CASE("filter preserves constants, rejects unknown channels, is not idempotent") {
    fs::path dir = fresh_dir("filter_unit");
    std::string flat = "time_ms,load_kN\n";
    for (int i = 0; i < 40; ++i) flat += std::to_string(0.1 * i) + ",3.5\n";
    fs::path fp = dir / "flat.csv";
    spit(fp, flat);
    fs::path fout = dir / "flat_f.csv";
    REQUIRE(run_cli({"filter", "--in", fp.string(), "--channel", "load_kN", "--cfc", "60",
                     "--out", fout.string()})
                .rc == 0);
    {
        std::istringstream in(slurp(fout));
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line == "time_ms,load_kN,load_kN_cfc60");
        while (std::getline(in, line)) {
            double v = std::stod(line.substr(line.rfind(',') + 1));
            CHECK(v == doctest::Approx(3.5).epsilon(1e-9));
        }
    }

    CHECK(run_cli({"filter", "--in", fp.string(), "--channel", "nope", "--out",
                   (dir / "x.csv").string()})
              .rc == 2);

    // double application keeps sharpening the rolloff: outputs must differ
    std::string step = "time_ms,load_kN\n";
    for (int i = 0; i < 60; ++i) step += std::to_string(0.1 * i) + (i < 30 ? ",0\n" : ",100\n");
    fs::path sp = dir / "step.csv";
    spit(sp, step);
    fs::path once = dir / "once.csv";
    REQUIRE(run_cli({"filter", "--in", sp.string(), "--channel", "load_kN", "--out",
                     once.string()})
                .rc == 0);
    fs::path twice = dir / "twice.csv";
    REQUIRE(run_cli({"filter", "--in", once.string(), "--channel", "load_kN_cfc60", "--out",
                     twice.string()})
                .rc == 0);

    auto last_col = [](const fs::path& p) {
        std::istringstream in(slurp(p));
        std::string line;
        std::getline(in, line);  // header
        std::vector<double> vals;
        while (std::getline(in, line)) vals.push_back(std::stod(line.substr(line.rfind(',') + 1)));
        return vals;
    };
    auto v1 = last_col(once);
    auto v2 = last_col(twice);
    REQUIRE(v1.size() == v2.size());
    double max_gap = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i)
        max_gap = std::max(max_gap, std::abs(v1[i] - v2[i]));
    CHECK(max_gap > 1e-6);
}
