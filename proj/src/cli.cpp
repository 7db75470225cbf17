#include "crashbench/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crashbench/assembly.hpp"
#include "crashbench/datastore.hpp"
#include "crashbench/doe.hpp"
#include "crashbench/evalstats.hpp"
#include "crashbench/rng.hpp"
#include "crashbench/signals.hpp"
#include "crashbench/solver.hpp"
#include "crashbench/surrogate.hpp"

namespace crashbench {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CollisionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- small file/string helpers ---

std::string read_file_or_usage(const fs::path& p, const std::string& what) {
    std::ifstream in(p, std::ios::binary);
    if (!in.good()) throw UsageError(fmt::format("{}: cannot open {}", what, p.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out.good()) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
    out << text;
}

fs::path dir_of(const fs::path& file) {
    return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError(fmt::format("{}: '{}' is not a number", what, s));
    }
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 1.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- provenance manifest, one per output directory ---

std::string timestamp_utc() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_run_manifest(const fs::path& dir, const std::string& command,
                        const std::string& config_path, std::uint64_t seed,
                        const fs::path& out) {
    fs::create_directories(dir);
    json j;
    j["command"] = command;
    j["config"] = config_path;
    j["seed"] = seed;
    j["out"] = out.string();
    j["tool_version"] = kToolVersion;
    j["timestamp"] = timestamp_utc();
    write_file(dir / "run_manifest.json", j.dump(2) + "\n");
}

// CRASHBENCH_SEED fills in when the --seed flag was not passed.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
    if (opt != nullptr && opt->count() > 0) return flag_value;
    if (const char* env = std::getenv("CRASHBENCH_SEED")) {
        const std::string text = env;
        try {
            std::size_t pos = 0;
            unsigned long long v = std::stoull(text, &pos);
            if (pos != text.size()) throw std::invalid_argument(text);
            return v;
        } catch (const std::exception&) {
            throw UsageError(fmt::format("CRASHBENCH_SEED='{}' is not an unsigned integer", text));
        }
    }
    return flag_value;
}

// --- generic csv table (metrics files, history files) ---

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

CsvTable read_csv(const fs::path& path, const std::string& what) {
    const std::string text = read_file_or_usage(path, what);
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw UsageError(fmt::format("{}: {} is empty", what, path.string()));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split_on(line, ',');
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_on(line, ',');
        if (cells.size() != t.header.size())
            throw UsageError(fmt::format("{}: ragged row in {}", what, path.string()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

// --- plan ---

struct PlanArgs {
    std::string kind, space_file, out;
    int count = 0;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

int cmd_plan(const PlanArgs& a) {
    if (a.count < 1) throw UsageError("plan: --count must be at least 1");
    const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed);

    DesignSpace space;
    std::string kind = a.kind;
    if (!a.space_file.empty()) {
        space = design_space_from_json_text(read_file_or_usage(a.space_file, "plan"));
        if (kind.empty()) kind = space.kind;
    } else if (kind == "bumper") {
        space = bumper_space();
    } else if (kind == "vehicle") {
        space = vehicle_space();
    } else {
        throw UsageError("plan: pass --kind bumper|vehicle or a --space file");
    }

    const fs::path out = a.out;
    write_run_manifest(dir_of(out), "plan", a.space_file, seed, out);

    std::optional<Assembly> reference;
    if (kind == "bumper") reference = build_bumper_assembly(BumperConfig{});
    CampaignPlan plan = plan_campaign(space, kind, {static_cast<std::size_t>(a.count)}, seed,
                                      reference ? &*reference : nullptr);
    write_file(out, plan_to_json_text(plan));

    std::size_t anchors = 0;
    for (const auto& c : plan.cases)
        if (c.origin == Origin::anchor) ++anchors;
    fmt::print("{} anchors + {} samples\n", anchors, plan.cases.size() - anchors);
    fmt::print("wrote {}\n", out.string());
    return 0;
}

// --- run ---

struct RunArgs {
    std::string plan_file, out_root, solver_file, bumper_file;
    int workers = 1;
    bool overwrite = false;
};

int cmd_run(const RunArgs& a) {
    if (a.workers < 1) throw UsageError("run: --workers must be at least 1");
    if (!fs::exists(a.plan_file))
        throw UsageError(fmt::format("run: plan file {} does not exist", a.plan_file));
    CampaignPlan plan;
    try {
        plan = plan_from_json_file(a.plan_file);
    } catch (const std::exception& e) {
        throw UsageError(fmt::format("run: cannot load plan: {}", e.what()));
    }

    CampaignOptions opts;
    if (!a.solver_file.empty()) opts.solver = solver_config_from_json_file(a.solver_file);
    BumperConfig base;
    if (!a.bumper_file.empty()) base = bumper_config_from_json_file(a.bumper_file);
    opts.workers = static_cast<std::size_t>(a.workers);
    opts.overwrite = a.overwrite;

    const fs::path root = a.out_root;
    if (!a.overwrite && fs::exists(root / "run_manifest.json"))
        throw CollisionError(fmt::format(
            "run: output root {} already holds a campaign (pass --overwrite)", root.string()));
    write_run_manifest(root, "run", a.solver_file, plan.seed, root);

    CampaignReport report = run_campaign(plan, bumper_case_factory(base), opts, root);
    if (report.interrupted) {
        fmt::print(stderr, "run: campaign interrupted: {}\n", report.error);
        return 1;
    }
    fmt::print("{} passing / {} failing cases under {}\n", report.n_pass, report.n_fail,
               root.string());
    if (report.n_pass == 0) {
        fmt::print("no passing cases\n");
        return 1;
    }
    return 0;
}

// --- split ---

struct SplitArgs {
    std::string root, fractions, out;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

int cmd_split(const SplitArgs& a) {
    if (!fs::exists(a.root)) throw UsageError(fmt::format("split: no campaign at {}", a.root));
    const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed);

    auto parts = split_on(a.fractions, ',');
    if (parts.size() != 3)
        throw UsageError("split: --fractions needs three comma-separated values");
    std::vector<double> fracs;
    double sum = 0.0;
    for (const auto& p : parts) {
        double f = parse_double(p, "split: fraction");
        if (!(f > 0.0)) throw UsageError("split: fractions must be positive");
        sum += f;
        fracs.push_back(f);
    }
    if (sum > 1.0 + 1e-9) throw UsageError("split: fractions sum above one");

    std::vector<std::string> ids;
    for (const auto& row : master_table(a.root)) ids.push_back(row.case_id);
    if (ids.empty()) {
        fmt::print("no passing cases under {}\n", a.root);
        return 1;
    }

    const fs::path out = a.out.empty() ? fs::path(a.root) / "splits.json" : fs::path(a.out);
    write_run_manifest(dir_of(out), "split", "", seed, out);
    SplitSet s = make_splits(ids, fracs, seed);
    write_splits(s, out);
    fmt::print("train {} / validation {} / test {} -> {}\n", s.train.size(), s.validation.size(),
               s.test.size(), out.string());
    return 0;
}

// --- shared bundle loading for train/eval ---

struct LoadedCase {
    std::string id;
    LearningSample sample;
    double dt_anim = 1.0;
};

std::vector<LoadedCase> load_cases(const fs::path& root, const std::vector<std::string>& ids,
                                   int stride) {
    std::vector<LoadedCase> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        CaseBundle b = read_bundle(root / id);
        LoadedCase lc;
        lc.id = id;
        lc.sample = build_sample(b, stride);
        lc.dt_anim = b.fields.dt_anim;
        out.push_back(std::move(lc));
    }
    return out;
}

// --- train ---

struct TrainArgs {
    std::string root, splits_file, out, model_file, history_file;
    int epochs = 100;
    double lr = 1e-3;
    long steps = -1;  // <0 = unlimited
    int stride = 1;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

int cmd_train(const TrainArgs& a) {
    if (!fs::exists(a.splits_file))
        throw UsageError(fmt::format("train: splits file {} does not exist", a.splits_file));
    const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed);
    SplitSet s = read_splits(a.splits_file);

    auto train_cases = load_cases(a.root, s.train, a.stride);
    if (train_cases.empty()) {
        fmt::print("train: empty train split\n");
        return 1;
    }
    auto val_cases = load_cases(a.root, s.validation, a.stride);
    std::vector<LearningSample> train_set, val_set;
    for (auto& c : train_cases) train_set.push_back(std::move(c.sample));
    for (auto& c : val_cases) val_set.push_back(std::move(c.sample));

    CrashSolverConfig cfg;
    if (!a.model_file.empty()) {
        cfg = surrogate_config_from_json_text(read_file_or_usage(a.model_file, "train"));
    } else {
        // derive the data-dependent fields from the campaign itself
        cfg.xi_dim = static_cast<int>(train_set.front().xi.size());
        int max_part = 0, max_comp = 0;
        std::vector<double> taus;
        for (const auto& smp : train_set) {
            for (int p : smp.part) max_part = std::max(max_part, p);
            for (int c : smp.comp) max_comp = std::max(max_comp, c);
            taus.insert(taus.end(), smp.tau.begin(), smp.tau.end());
        }
        cfg.parts = max_part + 1;
        cfg.components = max_comp + 1;
        const double med = median_of(taus);
        cfg.tau_scale = med > 0.0 ? med : 1.0;
    }

    const fs::path out = a.out;
    write_run_manifest(dir_of(out), "train", a.model_file, seed, out);

    CrashSolverModel model = CrashSolverModel::init(cfg, seed);
    TrainSchedule sched;
    sched.epochs = a.epochs;
    sched.lr = a.lr;
    sched.seed = seed;
    if (a.steps >= 0) sched.max_steps = a.steps;

    TrainResult res;
    try {
        res = train(model, train_set, val_set, sched);
    } catch (const TrainingDiverged& e) {
        fmt::print(stderr, "train: diverged at epoch {} step {}: {}\n", e.epoch, e.step, e.what());
        return 1;
    }
    model.save(out);

    std::string hist = "epoch,train_loss,val_loss\n";
    for (const auto& ep : res.history)
        hist += fmt::format("{},{},{}\n", ep.epoch, ep.train_loss, ep.val_loss);
    const fs::path hist_path =
        a.history_file.empty() ? fs::path(a.out + ".history.csv") : fs::path(a.history_file);
    write_file(hist_path, hist);

    fmt::print("trained {} epochs on {} cases, best epoch {}; wrote {}\n", res.history.size(),
               train_set.size(), res.best_epoch, out.string());
    return 0;
}

// --- eval ---

struct EvalArgs {
    std::string root, splits_file, ckpts, split = "test", out;
    double probe_ms = -1.0;  // <0 = mid-sequence per case
    int stride = 1;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

const char* kMetricsHeader = "case_id,rmse_mm,mae_mm,rel_l2_x,rel_l2_u,rmse_at_probe_mm,rmse_final_mm";

int cmd_eval(const EvalArgs& a) {
    if (!fs::exists(a.splits_file))
        throw UsageError(fmt::format("eval: splits file {} does not exist", a.splits_file));
    const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed);
    SplitSet s = read_splits(a.splits_file);
    const std::vector<std::string>* ids = nullptr;
    if (a.split == "train") ids = &s.train;
    else if (a.split == "validation") ids = &s.validation;
    else if (a.split == "test") ids = &s.test;
    else throw UsageError("eval: --split must be train, validation or test");
    if (ids->empty()) {
        fmt::print("eval: split '{}' is empty\n", a.split);
        return 1;
    }

    auto cases = load_cases(a.root, *ids, a.stride);

    struct Entry {
        std::string name;
        std::optional<CrashSolverModel> model;  // empty = predict-zero baseline
    };
    std::vector<Entry> entries;
    auto unique_name = [&entries](std::string base) {
        std::string name = base;
        int k = 2;
        auto taken = [&entries](const std::string& n) {
            for (const auto& e : entries)
                if (e.name == n) return true;
            return false;
        };
        while (taken(name)) name = fmt::format("{}_{}", base, k++);
        return name;
    };
    for (const auto& ck : split_on(a.ckpts, ',')) {
        if (ck.empty()) continue;
        if (!fs::exists(ck)) throw UsageError(fmt::format("eval: checkpoint {} not found", ck));
        Entry e;
        e.model = CrashSolverModel::load(ck);
        e.name = unique_name(fs::path(ck).stem().string());
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw UsageError("eval: --ckpt lists no checkpoints");
    Entry zero;
    zero.name = unique_name("zero");
    entries.push_back(std::move(zero));

    const fs::path out_dir = a.out.empty() ? fs::path(a.root) / "eval" : fs::path(a.out);
    write_run_manifest(out_dir, "eval", "", seed, out_dir);

    std::vector<LeaderboardRow> board;
    for (const auto& e : entries) {
        std::string csv = std::string(kMetricsHeader) + "\n";
        LeaderboardRow row;
        row.model = e.name;
        row.n_cases = static_cast<int>(cases.size());
        for (const auto& lc : cases) {
            std::vector<ad::Tensor> pred;
            if (e.model) {
                pred = e.model->forward(lc.sample);
            } else {
                pred.assign(lc.sample.u.size(),
                            ad::Tensor::zeros(lc.sample.x0.rows, 3));
            }
            const double dt_eff = lc.dt_anim * a.stride;
            const double span = dt_eff * static_cast<double>(lc.sample.u.size());
            const double probe = a.probe_ms >= 0.0 ? a.probe_ms : 0.5 * span;
            CaseMetrics m = case_metrics(pred, lc.sample.u, lc.sample.x0, dt_eff, probe);
            csv += fmt::format("{},{},{},{},{},{},{}\n", lc.id, m.rmse, m.mae, m.rel_l2_x,
                               m.rel_l2_u, m.rmse_at_t, m.rmse_final);
            row.rmse_mean += m.rmse;
            row.mae_mean += m.mae;
            row.rel_l2_x_mean += m.rel_l2_x;
            row.rel_l2_u_mean += m.rel_l2_u;
            row.rmse_probe_mean += m.rmse_at_t;
        }
        const double inv = 1.0 / static_cast<double>(cases.size());
        row.rmse_mean *= inv;
        row.mae_mean *= inv;
        row.rel_l2_x_mean *= inv;
        row.rel_l2_u_mean *= inv;
        row.rmse_probe_mean *= inv;
        write_file(out_dir / (e.name + ".metrics.csv"), csv);
        board.push_back(row);
    }

    const std::string lb = leaderboard_csv(board);
    write_file(out_dir / "leaderboard.csv", lb);
    fmt::print("{}", lb);
    return 0;
}

// --- stats ---

struct StatsArgs {
    std::string metrics_file, against_file, metric = "rel_l2_u", out;
    int replicates = 10000;
    int permutations = 10000;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

std::string model_name_of(const fs::path& p) {
    std::string name = p.filename().string();
    for (const char* suffix : {".csv", ".metrics"}) {
        const std::string s = suffix;
        if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0)
            name.resize(name.size() - s.size());
    }
    return name;
}

int cmd_stats(const StatsArgs& a) {
    if (a.replicates < 100) throw UsageError("stats: --replicates must be at least 100");
    if (a.permutations < 1) throw UsageError("stats: --permutations must be at least 1");
    const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed);

    struct Side {
        CsvTable table;
        std::map<std::string, double> metric;
        std::vector<double> rmse, mae;
        std::string name;
    };
    auto load_side = [&](const std::string& path) {
        Side side;
        side.table = read_csv(path, "stats");
        side.name = model_name_of(path);
        const int id_col = side.table.column("case_id");
        const int met_col = side.table.column(a.metric);
        if (id_col < 0) throw UsageError(fmt::format("stats: {} has no case_id column", path));
        if (met_col < 0)
            throw UsageError(fmt::format("stats: {} has no '{}' column", path, a.metric));
        const int rmse_col = side.table.column("rmse_mm");
        const int mae_col = side.table.column("mae_mm");
        for (const auto& row : side.table.rows) {
            const std::string& id = row[static_cast<std::size_t>(id_col)];
            if (side.metric.count(id))
                throw UsageError(fmt::format("stats: duplicate case id {} in {}", id, path));
            side.metric[id] = parse_double(row[static_cast<std::size_t>(met_col)], "stats");
            if (rmse_col >= 0)
                side.rmse.push_back(parse_double(row[static_cast<std::size_t>(rmse_col)], "stats"));
            if (mae_col >= 0)
                side.mae.push_back(parse_double(row[static_cast<std::size_t>(mae_col)], "stats"));
        }
        return side;
    };
    Side sa = load_side(a.metrics_file);
    Side sb = load_side(a.against_file);

    if (sa.metric.size() != sb.metric.size())
        throw UsageError("stats: pairing error, the files list different case counts");
    std::vector<double> va, vb;
    for (const auto& [id, val] : sa.metric) {
        auto it = sb.metric.find(id);
        if (it == sb.metric.end())
            throw UsageError(fmt::format("stats: pairing error, case {} is missing from {}", id,
                                         a.against_file));
        va.push_back(val);
        vb.push_back(it->second);
    }

    SignificanceReport rep;
    rep.model_a = sa.name;
    rep.model_b = sb.name;
    rep.metric = a.metric;
    rep.tests = paired_tests(va, vb, a.permutations, seed);
    if (a.replicates != a.permutations) {
        std::vector<double> d(va.size());
        for (std::size_t i = 0; i < va.size(); ++i) d[i] = va[i] - vb[i];
        // same derived stream as paired_tests uses for its CI
        rep.tests.diff_ci = bootstrap_ci(d, a.replicates, hash_mix(seed, 0xb007));
    }

    int side_idx = 0;
    for (const Side* side : {&sa, &sb}) {
        if (side->rmse.size() >= 2 && side->mae.size() >= 2) {
            ModelSummary ms;
            ms.model = side->name;
            ms.n_cases = static_cast<int>(side->rmse.size());
            ms.rmse = bootstrap_ci(side->rmse, a.replicates,
                                   hash_mix(seed, 0x100u + static_cast<std::uint64_t>(side_idx)));
            ms.mae = bootstrap_ci(side->mae, a.replicates,
                                  hash_mix(seed, 0x200u + static_cast<std::uint64_t>(side_idx)));
            rep.models.push_back(std::move(ms));
        }
        ++side_idx;
    }

    const std::string text = significance_to_json_text(rep);
    if (!a.out.empty()) {
        write_run_manifest(dir_of(a.out), "stats", "", seed, a.out);
        write_file(a.out, text + "\n");
    } else {
        fmt::print("{}\n", text);
    }

    const auto& t = rep.tests;
    fmt::print("{} vs {} on {} ({} pairs)\n", rep.model_a, rep.model_b, rep.metric, t.n);
    fmt::print("  mean diff {:.6g}  ci [{:.6g}, {:.6g}]  win rate {:.3g}\n", t.mean_diff,
               t.diff_ci.lo, t.diff_ci.hi, t.win_rate);
    fmt::print("  perm p {:.4g}  wilcoxon p {:.4g}{}{}\n", t.perm_p, t.wilcoxon_p,
               t.exact_wilcoxon ? " (exact)" : "",
               t.wilcoxon_defined ? "" : " (undefined: all diffs zero)");
    return 0;
}

// --- filter ---

struct FilterArgs {
    std::string in_file, channel, out;
    double cfc = 60.0;
};

int cmd_filter(const FilterArgs& a) {
    if (!(a.cfc > 0.0)) throw UsageError("filter: --cfc must be positive");
    CsvTable t = read_csv(a.in_file, "filter");
    const int col = t.column(a.channel);
    if (col < 0)
        throw UsageError(fmt::format("filter: {} has no channel '{}'", a.in_file, a.channel));
    if (t.rows.size() < 2) throw UsageError("filter: need at least two samples");

    std::vector<double> time, values;
    for (const auto& row : t.rows) {
        time.push_back(parse_double(row[0], "filter: time column"));
        values.push_back(parse_double(row[static_cast<std::size_t>(col)], "filter"));
    }
    const double dt = time[1] - time[0];
    if (!(dt > 0.0)) throw UsageError("filter: time column must be increasing");

    const std::vector<double> filtered = cfc_filter(values, dt, a.cfc);

    const fs::path in_path = a.in_file;
    const fs::path out = a.out.empty()
                             ? dir_of(in_path) / fmt::format("{}_cfc{:g}.csv",
                                                             in_path.stem().string(), a.cfc)
                             : fs::path(a.out);
    write_run_manifest(dir_of(out), "filter", "", 0, out);

    std::string text;
    for (const auto& h : t.header) text += (text.empty() ? "" : ",") + h;
    text += fmt::format(",{}_cfc{:g}\n", a.channel, a.cfc);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        std::string line;
        for (const auto& cell : t.rows[i]) line += (line.empty() ? "" : ",") + cell;
        text += fmt::format("{},{}\n", line, filtered[i]);
    }
    write_file(out, text);
    fmt::print("wrote {}\n", out.string());
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"desk-scale crash campaign toolkit"};
    app.name("crashbench");
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    PlanArgs plan_args;
    CLI::App* plan = app.add_subcommand("plan", "generate a constrained design-of-experiments campaign plan");
    plan->add_option("--kind", plan_args.kind, "design space kind: bumper or vehicle");
    plan->add_option("--space", plan_args.space_file, "design space JSON file (overrides --kind)");
    plan->add_option("--count", plan_args.count, "number of cases")->required();
    plan_args.seed_opt = plan->add_option("--seed", plan_args.seed, "campaign seed");
    plan->add_option("--out", plan_args.out, "output plan JSON path")->required();

    RunArgs run_args;
    CLI::App* run = app.add_subcommand("run", "solve every case of a plan and store bundles");
    run->add_option("--plan", run_args.plan_file, "campaign plan JSON")->required();
    run->add_option("--out", run_args.out_root, "campaign output root")->required();
    run->add_option("--workers", run_args.workers, "worker thread count");
    run->add_option("--solver", run_args.solver_file, "solver config JSON");
    run->add_option("--bumper", run_args.bumper_file, "bumper base config JSON");
    run->add_flag("--overwrite", run_args.overwrite, "replace existing case outputs");

    SplitArgs split_args;
    CLI::App* split = app.add_subcommand("split", "partition passing cases into train/validation/test");
    split->add_option("--root", split_args.root, "campaign root")->required();
    split->add_option("--fractions", split_args.fractions, "train,validation,test fractions")
        ->required();
    split_args.seed_opt = split->add_option("--seed", split_args.seed, "shuffle seed");
    split->add_option("--out", split_args.out, "splits JSON path (default <root>/splits.json)");

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "fit the field surrogate on a campaign");
    train->add_option("--root", train_args.root, "campaign root")->required();
    train->add_option("--splits", train_args.splits_file, "splits JSON")->required();
    train->add_option("--out", train_args.out, "checkpoint output path")->required();
    train->add_option("--model", train_args.model_file, "surrogate config JSON");
    train->add_option("--epochs", train_args.epochs, "training epochs");
    train->add_option("--lr", train_args.lr, "learning rate");
    train->add_option("--steps", train_args.steps, "optimizer step budget (0 = none)");
    train->add_option("--stride", train_args.stride, "target frame stride");
    train_args.seed_opt = train->add_option("--seed", train_args.seed, "init/shuffle seed");
    train->add_option("--history", train_args.history_file,
                      "loss history CSV path (default <out>.history.csv)");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "score checkpoints on a split");
    eval->add_option("--root", eval_args.root, "campaign root")->required();
    eval->add_option("--splits", eval_args.splits_file, "splits JSON")->required();
    eval->add_option("--ckpt", eval_args.ckpts, "comma-separated checkpoint paths")->required();
    eval->add_option("--split", eval_args.split, "split to score (train/validation/test)");
    eval->add_option("--probe-ms", eval_args.probe_ms, "probe time (default mid-sequence)");
    eval->add_option("--stride", eval_args.stride, "target frame stride");
    eval->add_option("--out", eval_args.out, "output directory (default <root>/eval)");
    eval_args.seed_opt = eval->add_option("--seed", eval_args.seed, "seed");

    StatsArgs stats_args;
    CLI::App* stats = app.add_subcommand("stats", "paired significance tests between two metrics files");
    stats->add_option("--metrics", stats_args.metrics_file, "per-case metrics CSV (model a)")
        ->required();
    stats->add_option("--against", stats_args.against_file, "per-case metrics CSV (model b)")
        ->required();
    stats->add_option("--metric", stats_args.metric, "metric column to compare");
    stats->add_option("--replicates", stats_args.replicates, "bootstrap replicate count");
    stats->add_option("--permutations", stats_args.permutations, "permutation draw count");
    stats_args.seed_opt = stats->add_option("--seed", stats_args.seed, "resampling seed");
    stats->add_option("--out", stats_args.out, "significance report JSON path (default stdout)");

    FilterArgs filter_args;
    CLI::App* filter = app.add_subcommand("filter", "append a channel-frequency-class filtered column");
    filter->add_option("--in", filter_args.in_file, "history CSV")->required();
    filter->add_option("--channel", filter_args.channel, "channel column name")->required();
    filter->add_option("--cfc", filter_args.cfc, "channel frequency class (default 60)");
    filter->add_option("--out", filter_args.out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (plan->parsed()) return cmd_plan(plan_args);
        if (run->parsed()) return cmd_run(run_args);
        if (split->parsed()) return cmd_split(split_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (stats->parsed()) return cmd_stats(stats_args);
        if (filter->parsed()) return cmd_filter(filter_args);
    } catch (const CollisionError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 3;
    } catch (const UsageError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    } catch (const CorruptionError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    } catch (const std::domain_error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace crashbench
