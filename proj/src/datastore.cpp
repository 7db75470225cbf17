#include "crashbench/datastore.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "crashbench/rng.hpp"

namespace crashbench {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

CorruptionError::CorruptionError(std::string path_, std::uint64_t offset_,
                                 const std::string& what_)
    : std::runtime_error(fmt::format("{} at byte {} in {}", what_, offset_, path_)),
      path(std::move(path_)),
      byte_offset(offset_) {}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string read_text_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(fmt::format("cannot open {}", p.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(fmt::format("cannot open {} for writing", p.string()));
    out << text;
    if (!out) fail(fmt::format("write to {} failed", p.string()));
}

void require_keys(const json& j, std::initializer_list<const char*> keys,
                  const std::string& what) {
    if (!j.is_object()) fail(fmt::format("{}: expected a JSON object", what));
    for (const char* k : keys)
        if (!j.contains(k)) fail(fmt::format("{}: missing key '{}'", what, k));
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : keys)
            if (item.key() == k) { known = true; break; }
        if (!known) fail(fmt::format("{}: unknown key '{}'", what, item.key()));
    }
}

double number_at(const json& j, const char* key, const std::string& what) {
    const json& v = j.at(key);
    if (!v.is_number()) fail(fmt::format("{}: '{}' must be a number", what, key));
    return v.get<double>();
}

// --- manifest JSON ---

json material_to_json(const Material& m) {
    return json{{"e_mod", m.e_mod}, {"nu", m.nu},         {"rho", m.rho}, {"a", m.a},
                {"b", m.b},         {"n", m.n},           {"eps_p_fail", m.eps_p_fail}};
}

Material material_from_json(const json& j) {
    require_keys(j, {"e_mod", "nu", "rho", "a", "b", "n", "eps_p_fail"}, "material");
    Material m;
    m.e_mod = number_at(j, "e_mod", "material");
    m.nu = number_at(j, "nu", "material");
    m.rho = number_at(j, "rho", "material");
    m.a = number_at(j, "a", "material");
    m.b = number_at(j, "b", "material");
    m.n = number_at(j, "n", "material");
    m.eps_p_fail = number_at(j, "eps_p_fail", "material");
    return m;
}

json qoi_to_json(const QoiRecord& q) {
    json qc;
    qc["e_err_pct"] = q.qc.e_err_pct;
    qc["hg_ratio_pct"] = q.qc.hg_ratio_pct;
    qc["added_mass_pct"] = q.qc.added_mass_pct;
    qc["final_time_ms"] = q.qc.final_time_ms;
    qc["pass"] = q.qc.pass;
    qc["no_contact"] = q.qc.no_contact;
    qc["reasons"] = q.qc.reasons;
    json j;
    j["f_wall_max"] = q.f_wall_max;
    j["e_int_max"] = q.e_int_max;
    j["eta_ke"] = q.eta_ke;
    j["a_max"] = q.a_max;
    j["t1"] = q.t1;
    j["t2"] = q.t2;
    j["t_imp"] = q.t_imp;
    j["w_p_max"] = q.w_p_max;
    j["e_kin0"] = q.e_kin0;
    j["no_contact"] = q.no_contact;
    j["qc"] = std::move(qc);
    return j;
}

QoiRecord qoi_from_json(const json& j) {
    require_keys(j,
                 {"f_wall_max", "e_int_max", "eta_ke", "a_max", "t1", "t2", "t_imp",
                  "w_p_max", "e_kin0", "no_contact", "qc"},
                 "qoi");
    QoiRecord q;
    q.f_wall_max = number_at(j, "f_wall_max", "qoi");
    q.e_int_max = number_at(j, "e_int_max", "qoi");
    q.eta_ke = number_at(j, "eta_ke", "qoi");
    q.a_max = number_at(j, "a_max", "qoi");
    q.t1 = number_at(j, "t1", "qoi");
    q.t2 = number_at(j, "t2", "qoi");
    q.t_imp = number_at(j, "t_imp", "qoi");
    q.w_p_max = number_at(j, "w_p_max", "qoi");
    q.e_kin0 = number_at(j, "e_kin0", "qoi");
    q.no_contact = j.at("no_contact").get<bool>();
    const json& qc = j.at("qc");
    require_keys(qc,
                 {"e_err_pct", "hg_ratio_pct", "added_mass_pct", "final_time_ms", "pass",
                  "no_contact", "reasons"},
                 "qoi.qc");
    q.qc.e_err_pct = number_at(qc, "e_err_pct", "qc");
    q.qc.hg_ratio_pct = number_at(qc, "hg_ratio_pct", "qc");
    q.qc.added_mass_pct = number_at(qc, "added_mass_pct", "qc");
    q.qc.final_time_ms = number_at(qc, "final_time_ms", "qc");
    q.qc.pass = qc.at("pass").get<bool>();
    q.qc.no_contact = qc.at("no_contact").get<bool>();
    q.qc.reasons = qc.at("reasons").get<std::vector<std::string>>();
    return q;
}

std::string manifest_to_json_text(const CaseManifest& m) {
    json j;
    j["case_id"] = m.case_id;
    j["status"] = m.status;
    j["origin"] = to_string(m.origin);
    j["phase"] = m.phase;
    j["seed"] = m.seed;
    j["pole_x"] = m.pole_x;
    j["unit_width"] = m.unit_width;
    j["tool_version"] = m.tool_version;
    j["space"] = json::parse(design_space_to_json_text(m.space));
    json design = json::object();
    for (std::size_t i = 0; i < m.space.vars.size(); ++i)
        design[m.space.vars[i].name] = m.design.x.at(i);
    j["design"] = std::move(design);
    j["qoi"] = qoi_to_json(m.qoi);
    json elems = json::array();
    for (const auto& e : m.element_nodes) elems.push_back({e[0], e[1]});
    j["elements"] = std::move(elems);
    json parts = json::array();
    for (const auto& p : m.parts) {
        json pj;
        pj["id"] = p.id;
        pj["name"] = p.name;
        pj["group"] = p.group;
        pj["component"] = p.component;
        pj["thickness"] = p.thickness;
        pj["material"] = material_to_json(p.material);
        parts.push_back(std::move(pj));
    }
    j["parts"] = std::move(parts);
    return j.dump(2) + "\n";
}

CaseManifest manifest_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(fmt::format("manifest parse error: {}", e.what()));
    }
    require_keys(j,
                 {"case_id", "status", "origin", "phase", "seed", "pole_x", "unit_width",
                  "tool_version", "space", "design", "qoi", "elements", "parts"},
                 "manifest");
    CaseManifest m;
    m.case_id = j.at("case_id").get<std::string>();
    m.status = j.at("status").get<std::string>();
    if (m.status != "pass" && m.status != "fail")
        fail(fmt::format("manifest: status must be pass or fail, got '{}'", m.status));
    m.origin = origin_from_string(j.at("origin").get<std::string>());
    m.phase = j.at("phase").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.pole_x = number_at(j, "pole_x", "manifest");
    m.unit_width = number_at(j, "unit_width", "manifest");
    m.tool_version = j.at("tool_version").get<std::string>();
    m.space = design_space_from_json_text(j.at("space").dump());
    const json& design = j.at("design");
    if (!design.is_object() || design.size() != m.space.vars.size())
        fail("manifest: design must name every space variable exactly once");
    m.design.x.resize(m.space.vars.size());
    for (std::size_t i = 0; i < m.space.vars.size(); ++i) {
        const auto& name = m.space.vars[i].name;
        if (!design.contains(name)) fail(fmt::format("manifest: design missing '{}'", name));
        m.design.x[i] = design.at(name).get<double>();
    }
    m.qoi = qoi_from_json(j.at("qoi"));
    for (const auto& e : j.at("elements")) {
        if (!e.is_array() || e.size() != 2) fail("manifest: elements entries are node-id pairs");
        m.element_nodes.push_back({e[0].get<std::uint32_t>(), e[1].get<std::uint32_t>()});
    }
    for (const auto& pj : j.at("parts")) {
        require_keys(pj, {"id", "name", "group", "component", "thickness", "material"},
                     "manifest part");
        Part p;
        p.id = pj.at("id").get<std::uint32_t>();
        p.name = pj.at("name").get<std::string>();
        p.group = pj.at("group").get<std::string>();
        p.component = pj.at("component").get<std::string>();
        p.thickness = number_at(pj, "thickness", "part");
        p.material = material_from_json(pj.at("material"));
        m.parts.push_back(std::move(p));
    }
    return m;
}

// --- binary fields file (little-endian throughout) ---

constexpr char kMagic[4] = {'C', 'C', 'F', '1'};
constexpr std::uint32_t kFieldsVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

struct FieldsReader {
    const std::string& data;
    const std::string path;
    std::uint64_t pos = 0;

    [[noreturn]] void corrupt(std::uint64_t at, const std::string& what) const {
        throw CorruptionError(path, at, what);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i]))
                    << (8 * i);
        pos += 8;
        return std::bit_cast<double>(bits);
    }
    double finite_f64(const char* what) {
        const std::uint64_t at = pos;
        const double v = f64();
        if (!std::isfinite(v)) corrupt(at, fmt::format("non-finite {}", what));
        return v;
    }
};

std::string fields_to_bytes(const FieldTrajectory& f) {
    const std::size_t n = f.node_ids.size();
    const std::size_t e = f.element_ids.size();
    std::string out;
    out.reserve(28 + f.frames.size() * (9 * n + 3 * e) * 8 + 4 * n + 8 * e);
    out.append(kMagic, 4);
    put_u32(out, kFieldsVersion);
    put_u32(out, static_cast<std::uint32_t>(f.frames.size()));
    put_u32(out, static_cast<std::uint32_t>(n));
    put_u32(out, static_cast<std::uint32_t>(e));
    put_f64(out, f.dt_anim);
    for (const auto& fr : f.frames) {
        for (std::size_t i = 0; i < 3 * n; ++i) put_f64(out, f.x0[i] + fr.u[i]);
        for (double v : fr.u) put_f64(out, v);
        for (double v : fr.vel) put_f64(out, v);
        for (double v : fr.stress) put_f64(out, v);
        for (double v : fr.eps_bar) put_f64(out, v);
        for (std::uint8_t v : fr.eroded) put_f64(out, v ? 1.0 : 0.0);
    }
    for (std::uint32_t id : f.node_ids) put_u32(out, id);
    for (std::uint32_t id : f.element_ids) put_u32(out, id);
    for (std::uint32_t id : f.part_ids) put_u32(out, id);
    return out;
}

// final_time reconstructs the terminal frame time: the layout stores only the
// animation interval, and the last frame may sit off-grid.
FieldTrajectory fields_from_bytes(const std::string& data, const std::string& path,
                                  double final_time) {
    FieldsReader r{data, path};
    if (data.size() < 28)
        r.corrupt(data.size(), fmt::format("truncated header: have {} of 28 bytes", data.size()));
    if (std::memcmp(data.data(), kMagic, 4) != 0) r.corrupt(0, "bad magic");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kFieldsVersion)
        r.corrupt(4, fmt::format("unsupported format version {}", version));
    const std::uint64_t frames = r.u32();
    const std::uint64_t n = r.u32();
    const std::uint64_t e = r.u32();
    if (frames > (1u << 24) || n > (1u << 24) || e > (1u << 24))
        r.corrupt(8, "implausible frame/node/element counts");
    const double dt_anim = r.f64();
    if (!std::isfinite(dt_anim) || dt_anim <= 0.0) r.corrupt(20, "invalid animation interval");
    const std::uint64_t expected = 28 + frames * (9 * n + 3 * e) * 8 + 4 * n + 8 * e;
    if (data.size() < expected)
        r.corrupt(data.size(),
                  fmt::format("truncated file: have {} of {} bytes", data.size(), expected));
    if (data.size() > expected)
        r.corrupt(expected,
                  fmt::format("trailing bytes: have {} of {} bytes", data.size(), expected));

    FieldTrajectory f;
    f.dt_anim = dt_anim;
    f.frames.resize(frames);
    for (std::uint64_t k = 0; k < frames; ++k) {
        Frame& fr = f.frames[k];
        fr.t = static_cast<double>(k) * dt_anim;
        if (k + 1 == frames && final_time > 0.0) fr.t = std::min(fr.t, final_time);
        std::vector<double> coords(3 * n);
        std::vector<std::uint64_t> coord_at(3 * n);
        for (std::uint64_t i = 0; i < 3 * n; ++i) {
            coord_at[i] = r.pos;
            coords[i] = r.finite_f64("coordinate");
        }
        fr.u.resize(3 * n);
        for (std::uint64_t i = 0; i < 3 * n; ++i) {
            const std::uint64_t at = r.pos;
            fr.u[i] = r.finite_f64("displacement");
            if (k == 0 && fr.u[i] != 0.0) r.corrupt(at, "frame 0 displacement not zero");
        }
        if (k == 0) f.x0 = coords;
        for (std::uint64_t i = 0; i < 3 * n; ++i) {
            const double rebuilt = f.x0[i] + fr.u[i];
            const double tol = 1e-12 * std::max(1.0, std::abs(rebuilt));
            if (std::abs(coords[i] - rebuilt) > tol)
                r.corrupt(coord_at[i], "coordinates inconsistent with displacements");
        }
        fr.vel.resize(3 * n);
        for (auto& v : fr.vel) v = r.finite_f64("velocity");
        fr.stress.resize(e);
        for (auto& v : fr.stress) v = r.finite_f64("stress");
        fr.eps_bar.resize(e);
        for (auto& v : fr.eps_bar) v = r.finite_f64("plastic strain");
        fr.eroded.resize(e);
        for (auto& flag : fr.eroded) {
            const std::uint64_t at = r.pos;
            const double v = r.finite_f64("erosion flag");
            if (v != 0.0 && v != 1.0) r.corrupt(at, "erosion flag not 0/1");
            flag = (v == 1.0) ? 1 : 0;
        }
    }
    if (frames == 0) f.x0.assign(3 * n, 0.0);
    f.node_ids.resize(n);
    for (auto& id : f.node_ids) id = r.u32();
    f.element_ids.resize(e);
    for (auto& id : f.element_ids) id = r.u32();
    f.part_ids.resize(e);
    for (auto& id : f.part_ids) id = r.u32();
    return f;
}

void validate_bundle(const CaseBundle& b) {
    auto bad = [&](const std::string& msg) {
        throw std::invalid_argument(fmt::format("bundle {}: {}", b.manifest.case_id, msg));
    };
    if (b.manifest.case_id.empty()) bad("empty case id");
    if (b.manifest.case_id.find('/') != std::string::npos ||
        b.manifest.case_id.find('\\') != std::string::npos)
        bad("case id must be a plain directory name");
    if (b.manifest.status != "pass" && b.manifest.status != "fail")
        bad("status must be pass or fail");
    if (b.manifest.design.x.size() != b.manifest.space.vars.size())
        bad("design size does not match the space");
    const std::size_t n = b.fields.node_ids.size();
    const std::size_t e = b.fields.element_ids.size();
    if (b.fields.x0.size() != 3 * n) bad("x0 must hold 3 values per node");
    if (b.fields.part_ids.size() != e) bad("part ids must match the element count");
    if (b.manifest.element_nodes.size() != e)
        bad("manifest element topology must match the element count");
    if (!(b.fields.dt_anim > 0.0)) bad("animation interval must be positive");
    for (const auto& fr : b.fields.frames) {
        if (fr.u.size() != 3 * n || fr.vel.size() != 3 * n) bad("frame node arrays must be 3N");
        if (fr.stress.size() != e || fr.eps_bar.size() != e || fr.eroded.size() != e)
            bad("frame element arrays must be E");
    }
    if (!b.fields.frames.empty())
        for (double u0 : b.fields.frames.front().u)
            if (u0 != 0.0) bad("frame 0 displacements must be zero");
    const std::size_t rows = b.hist.t.size();
    for (const auto* col : {&b.hist.fx, &b.hist.fy, &b.hist.fz, &b.hist.e_kin, &b.hist.e_int,
                            &b.hist.e_cont, &b.hist.e_hg, &b.hist.w_p, &b.hist.acc})
        if (col->size() != rows) bad("history columns must share one length");
}

}  // namespace

// --- history CSV ---

std::string history_to_csv(const TimeHistories& h) {
    std::string out = std::string(kHistoryHeader) + "\n";
    for (std::size_t i = 0; i < h.size(); ++i)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", h.t[i], h.fx[i], h.fy[i],
                           h.fz[i], h.e_kin[i], h.e_int[i], h.e_cont[i], h.e_hg[i], h.w_p[i],
                           h.acc[i]);
    return out;
}

TimeHistories history_from_csv_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) fail("history csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHistoryHeader)
        fail(fmt::format("history csv: unexpected header '{}'", line));
    TimeHistories h;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        double vals[10];
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int c = 0; c < 10; ++c) {
            if (c > 0) {
                if (p >= end || *p != ',')
                    fail(fmt::format("history csv row {}: expected 10 fields", row));
                ++p;
            }
            auto [next, ec] = std::from_chars(p, end, vals[c]);
            if (ec != std::errc{})
                fail(fmt::format("history csv row {}: bad number in field {}", row, c + 1));
            p = next;
        }
        if (p != end) fail(fmt::format("history csv row {}: trailing characters", row));
        h.t.push_back(vals[0]);
        h.fx.push_back(vals[1]);
        h.fy.push_back(vals[2]);
        h.fz.push_back(vals[3]);
        h.e_kin.push_back(vals[4]);
        h.e_int.push_back(vals[5]);
        h.e_cont.push_back(vals[6]);
        h.e_hg.push_back(vals[7]);
        h.w_p.push_back(vals[8]);
        h.acc.push_back(vals[9]);
    }
    return h;
}

// --- bundle I/O ---

fs::path write_bundle(const CaseBundle& b, const fs::path& root, bool overwrite) {
    validate_bundle(b);
    const fs::path dir = root / b.manifest.case_id;
    if (fs::exists(dir) && !overwrite)
        fail(fmt::format("case directory {} already exists (pass overwrite to replace)",
                         dir.string()));
    fs::create_directories(dir);
    write_text_file(dir / "manifest.json", manifest_to_json_text(b.manifest));
    write_text_file(dir / "history.csv", history_to_csv(b.hist));
    write_text_file(dir / "fields.ccf", fields_to_bytes(b.fields));
    return dir;
}

CaseBundle read_bundle(const fs::path& case_dir) {
    CaseBundle b;
    b.manifest = manifest_from_json_text(read_text_file(case_dir / "manifest.json"));
    if (b.manifest.case_id != case_dir.filename().string())
        fail(fmt::format("manifest case id '{}' does not match directory '{}'",
                         b.manifest.case_id, case_dir.filename().string()));
    b.hist = history_from_csv_text(read_text_file(case_dir / "history.csv"));
    const fs::path ccf = case_dir / "fields.ccf";
    b.fields = fields_from_bytes(read_text_file(ccf), ccf.string(),
                                 b.manifest.qoi.qc.final_time_ms);
    if (b.fields.element_ids.size() != b.manifest.element_nodes.size())
        fail(fmt::format("{}: fields element count disagrees with the manifest", ccf.string()));
    return b;
}

// --- master table ---

MasterRow master_row_from_bundle(const CaseBundle& b) {
    MasterRow r;
    r.case_id = b.manifest.case_id;
    r.design = bumper_view(b.manifest.space, b.manifest.design);
    r.pole_x = b.manifest.pole_x;
    r.qoi = b.manifest.qoi;
    r.phase = b.manifest.phase;
    return r;
}

std::string master_row_csv(const MasterRow& r) {
    const BumperDesign& d = r.design;
    const QoiRecord& q = r.qoi;
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{:.1f},{},{},{},{},{},{},{},{},{},{},{}",
                       r.case_id, d.v, d.t_cb, d.t_bb, d.sigma_y_cb, d.sigma_y_bb, d.d_pole,
                       d.y_pole, r.pole_x, q.f_wall_max, q.e_int_max, 100.0 * q.eta_ke, q.a_max,
                       q.t1, q.t2, q.t_imp, q.w_p_max, q.e_kin0, q.qc.e_err_pct,
                       q.qc.hg_ratio_pct, q.qc.added_mass_pct, q.qc.final_time_ms, r.phase);
}

std::vector<MasterRow> master_table(const fs::path& root) {
    std::vector<MasterRow> rows;
    if (!fs::exists(root)) return rows;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory() || entry.path().filename() == "failed") continue;
        const fs::path mf = entry.path() / "manifest.json";
        if (!fs::exists(mf)) continue;
        CaseBundle shell;
        shell.manifest = manifest_from_json_text(read_text_file(mf));
        if (shell.manifest.status != "pass" || !shell.manifest.qoi.qc.pass) continue;
        rows.push_back(master_row_from_bundle(shell));
    }
    std::sort(rows.begin(), rows.end(),
              [](const MasterRow& a, const MasterRow& b) { return a.case_id < b.case_id; });
    return rows;
}

void write_master_csv(const std::vector<MasterRow>& rows, const fs::path& path) {
    std::string out = std::string(kMasterHeader) + "\n";
    for (const auto& r : rows) out += master_row_csv(r) + "\n";
    write_text_file(path, out);
}

// --- campaign orchestration ---

AssemblyFactory bumper_case_factory(const BumperConfig& base, double pole_gap) {
    return [base, pole_gap](const DesignSpace& space, const DesignVector& d) {
        const BumperDesign bd = bumper_view(space, d);
        BumperConfig cfg = base;
        cfg.v = bd.v;
        cfg.t_cb = bd.t_cb;
        cfg.t_bb = bd.t_bb;
        cfg.sigma_y_cb = bd.sigma_y_cb;
        cfg.sigma_y_bb = bd.sigma_y_bb;
        cfg.pole_diameter = bd.d_pole;
        cfg.pole_y = bd.y_pole;
        cfg.pole_gap = pole_gap;
        if (auto s = d.maybe(space, "s_front")) cfg.s_front = *s;
        if (auto s = d.maybe(space, "s_rail")) cfg.s_rail = *s;
        return build_bumper_assembly(cfg);
    };
}

namespace {

bool space_has_bumper_vars(const DesignSpace& s) {
    for (const char* name :
         {"v", "t_cb", "t_bb", "sigma_y_cb", "sigma_y_bb", "d_pole", "y_pole"})
        if (s.index_of(name) < 0) return false;
    return true;
}

void write_campaign_report(const CampaignReport& report, const fs::path& root) {
    json j;
    j["n_pass"] = report.n_pass;
    j["n_fail"] = report.n_fail;
    j["interrupted"] = report.interrupted;
    j["error"] = report.error;
    json outs = json::array();
    for (const auto& o : report.outcomes) {
        json oj;
        oj["case_id"] = o.case_id;
        oj["pass"] = o.pass;
        oj["reasons"] = o.reasons;
        outs.push_back(std::move(oj));
    }
    j["outcomes"] = std::move(outs);
    try {
        write_text_file(root / "campaign_report.json", j.dump(2) + "\n");
    } catch (const std::exception&) {
        // best effort: the in-memory report is still returned
    }
}

}  // namespace

CampaignReport run_campaign(const CampaignPlan& plan, const AssemblyFactory& factory,
                            const CampaignOptions& opts, const fs::path& root) {
    CampaignReport report;
    try {
        fs::create_directories(root);
    } catch (const std::exception& e) {
        report.interrupted = true;
        report.error = e.what();
        return report;
    }

    const std::size_t n = plan.cases.size();
    std::vector<CaseOutcome> outcomes(n);
    std::vector<char> processed(n, 0);
    std::atomic<std::size_t> cursor{0};
    std::atomic<bool> stop{false};
    std::mutex err_mx;
    std::string first_error;

    auto abort_with = [&](const std::string& msg) {
        std::lock_guard<std::mutex> lk(err_mx);
        if (first_error.empty()) first_error = msg;
        stop.store(true);
    };

    auto process = [&](std::size_t i) {
        const PlanCase& pc = plan.cases[i];
        CaseOutcome& out = outcomes[i];
        out.case_id = pc.case_id;
        CaseBundle b;
        b.manifest.case_id = pc.case_id;
        b.manifest.design = pc.design;
        b.manifest.space = plan.space;
        b.manifest.origin = pc.origin;
        b.manifest.phase = pc.phase;
        b.manifest.seed = plan.seed;
        b.manifest.tool_version = kToolVersion;
        bool have_bundle = false;
        try {
            const Assembly a = factory(plan.space, pc.design);
            b.manifest.unit_width = a.unit_width;
            for (const auto& el : a.elements)
                b.manifest.element_nodes.push_back(
                    {a.node_ids.at(el.node_a), a.node_ids.at(el.node_b)});
            b.manifest.parts = a.parts;
            for (const auto& w : a.walls)
                if (w.kind == WallKind::cylinder) {
                    b.manifest.pole_x = w.cx;
                    break;
                }
            SolveResult sr = run_explicit(a, opts.solver);
            b.hist = std::move(sr.hist);
            b.fields = std::move(sr.fields);
            const ScreenResult scr = quality_screen(b.hist, sr.report, opts.thresholds);
            try {
                b.manifest.qoi = make_qoi_record(b.hist, sr.report, opts.extract, opts.thresholds);
            } catch (const std::exception& e) {
                // keep the bundle: the screen verdict stands, extraction gets a reason
                QoiRecord rec;
                rec.qc.e_err_pct = 100.0 * sr.report.e_err_max;
                rec.qc.added_mass_pct = 100.0 * sr.report.added_mass_fraction;
                rec.qc.final_time_ms = sr.report.t_end;
                rec.qc.pass = false;
                rec.qc.reasons = scr.reasons;
                rec.qc.reasons.push_back(fmt::format("qoi-extraction: {}", e.what()));
                b.manifest.qoi = rec;
            }
            have_bundle = true;
        } catch (const std::exception& e) {
            out.pass = false;
            out.reasons = {fmt::format("case-error: {}", e.what())};
        }
        if (have_bundle) {
            out.pass = b.manifest.qoi.qc.pass;
            out.reasons = b.manifest.qoi.qc.reasons;
            b.manifest.status = out.pass ? "pass" : "fail";
            try {
                write_bundle(b, out.pass ? root : root / "failed", opts.overwrite);
            } catch (const std::exception& e) {
                out.pass = false;
                out.reasons.push_back(fmt::format("write-error: {}", e.what()));
                abort_with(e.what());
            }
        }
        processed[i] = 1;
    };

    auto worker = [&] {
        for (;;) {
            if (stop.load()) break;
            const std::size_t i = cursor.fetch_add(1);
            if (i >= n) break;
            process(i);
        }
    };

    const std::size_t n_workers = std::clamp<std::size_t>(opts.workers, 1, std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (std::size_t i = 0; i < n; ++i) {
        if (!processed[i]) continue;
        (outcomes[i].pass ? report.n_pass : report.n_fail) += 1;
        report.outcomes.push_back(std::move(outcomes[i]));
    }
    report.interrupted = stop.load();
    report.error = first_error;

    if (space_has_bumper_vars(plan.space)) {
        try {
            write_master_csv(master_table(root), root / "master.csv");
        } catch (const std::exception& e) {
            if (!report.interrupted) {
                report.interrupted = true;
                report.error = e.what();
            }
        }
    }
    write_campaign_report(report, root);
    return report;
}

// --- splits ---

SplitSet make_splits(const std::vector<std::string>& passing_ids,
                     const std::vector<double>& fractions, std::uint64_t seed) {
    if (fractions.size() != 3)
        throw std::invalid_argument("splits need exactly three fractions (train/validation/test)");
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw std::invalid_argument("split fractions must be positive");
        sum += f;
    }
    if (sum > 1.0 + 1e-9) throw std::invalid_argument("split fractions sum above one");

    std::vector<std::string> ids = passing_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw std::invalid_argument("duplicate case ids");

    const long long n = static_cast<long long>(ids.size());
    const long long c0 = std::llround(static_cast<double>(n) * fractions[0]);
    const long long c1 = std::llround(static_cast<double>(n) * fractions[1]);
    long long c2 = (std::abs(sum - 1.0) <= 1e-9)
                       ? n - c0 - c1
                       : std::llround(static_cast<double>(n) * fractions[2]);
    c2 = std::min(c2, n - c0 - c1);
    if (c0 < 1 || c1 < 1 || c2 < 1)
        throw std::invalid_argument(
            fmt::format("too few cases ({}) for non-empty train/validation/test splits", n));

    SplitMix64 rng(seed);
    fisher_yates(ids, rng);

    SplitSet s;
    s.seed = seed;
    s.fractions = fractions;
    s.train.assign(ids.begin(), ids.begin() + c0);
    s.validation.assign(ids.begin() + c0, ids.begin() + c0 + c1);
    s.test.assign(ids.begin() + c0 + c1, ids.begin() + c0 + c1 + c2);
    return s;
}

void write_splits(const SplitSet& s, const fs::path& path) {
    json j;
    j["seed"] = s.seed;
    j["fractions"] = s.fractions;
    j["train"] = s.train;
    j["validation"] = s.validation;
    j["test"] = s.test;
    write_text_file(path, j.dump(2) + "\n");
}

SplitSet read_splits(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(fmt::format("splits parse error in {}: {}", path.string(), e.what()));
    }
    require_keys(j, {"seed", "fractions", "train", "validation", "test"}, "splits");
    SplitSet s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.fractions = j.at("fractions").get<std::vector<double>>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.validation = j.at("validation").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
}

}  // namespace crashbench
