#include "crashbench/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "crashbench/rng.hpp"

namespace crashbench {

using json = nlohmann::ordered_json;
using Ref = ad::Tape::Ref;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// --- learning samples ---

std::vector<int> component_map(const std::vector<std::uint32_t>& part_ids,
                               const std::map<std::uint32_t, std::string>& table, int c_count) {
    if (c_count < 1) throw std::invalid_argument("component_map: need at least one component");
    std::set<std::string> names;
    for (const auto& [id, name] : table) names.insert(name);
    if (static_cast<int>(names.size()) > c_count)
        throw std::invalid_argument(fmt::format(
            "component_map: {} component names do not fit in {} slots", names.size(), c_count));
    std::map<std::string, int> rank;
    int r = 0;
    for (const std::string& n : names) rank[n] = r++;

    std::vector<int> out;
    out.reserve(part_ids.size());
    for (std::uint32_t p : part_ids) {
        auto it = table.find(p);
        if (it != table.end()) {
            out.push_back(rank.at(it->second));
        } else {
            // stable bucket independent of the table contents
            out.push_back(static_cast<int>(hash_mix(0x636f6d70u, p) %
                                           static_cast<std::uint64_t>(c_count)));
        }
    }
    return out;
}

InterfaceGraph interface_graph(const std::vector<std::array<std::uint32_t, 2>>& edges,
                               const std::vector<int>& comp) {
    InterfaceGraph g;
    for (int c : comp) {
        if (c < 0) throw std::invalid_argument("interface_graph: negative component label");
        g.components = std::max(g.components, c + 1);
    }
    for (const auto& e : edges) {
        if (e[0] >= comp.size() || e[1] >= comp.size())
            throw std::out_of_range("interface_graph: edge references unknown node");
        int a = comp[e[0]];
        int b = comp[e[1]];
        if (a == b) continue;
        g.edges.insert({std::min(a, b), std::max(a, b)});
        g.interface_nodes[{a, b}].insert(static_cast<int>(e[0]));
        g.interface_nodes[{b, a}].insert(static_cast<int>(e[1]));
    }
    return g;
}

LearningSample build_sample(const CaseBundle& b, int frame_stride) {
    if (frame_stride < 1) throw std::invalid_argument("build_sample: frame_stride must be >= 1");
    const FieldTrajectory& f = b.fields;
    const std::size_t n = f.node_ids.size();
    if (n == 0) throw std::invalid_argument("build_sample: bundle has no nodes");
    if (f.x0.size() != 3 * n)
        throw std::invalid_argument("build_sample: reference coordinate block mismatch");
    if (f.frames.size() < 2)
        throw std::invalid_argument("build_sample: need at least two animation frames");
    if (f.part_ids.size() != b.manifest.element_nodes.size())
        throw std::invalid_argument("build_sample: per-element part list mismatch");

    LearningSample s;
    s.case_id = b.manifest.case_id;
    s.x0 = ad::Tensor(static_cast<int>(n), 3);
    std::copy(f.x0.begin(), f.x0.end(), s.x0.d.begin());

    std::unordered_map<std::uint32_t, int> node_index;
    node_index.reserve(n);
    for (std::size_t i = 0; i < n; ++i) node_index[f.node_ids[i]] = static_cast<int>(i);

    std::unordered_map<std::uint32_t, int> part_index;
    for (std::size_t i = 0; i < b.manifest.parts.size(); ++i)
        part_index[b.manifest.parts[i].id] = static_cast<int>(i);

    // component names of the parts, ranked alphabetically
    std::set<std::string> comp_names;
    for (const Part& p : b.manifest.parts) comp_names.insert(p.component);
    std::map<std::string, int> comp_rank;
    int r = 0;
    for (const std::string& name : comp_names) comp_rank[name] = r++;

    s.part.assign(n, -1);
    for (std::size_t e = 0; e < b.manifest.element_nodes.size(); ++e) {
        std::array<std::uint32_t, 2> idx{};
        for (int side = 0; side < 2; ++side) {
            auto it = node_index.find(b.manifest.element_nodes[e][static_cast<std::size_t>(side)]);
            if (it == node_index.end())
                throw std::invalid_argument("build_sample: element references unknown node id");
            idx[static_cast<std::size_t>(side)] = static_cast<std::uint32_t>(it->second);
        }
        auto pit = part_index.find(f.part_ids[e]);
        if (pit == part_index.end())
            throw std::invalid_argument("build_sample: element references unknown part id");
        for (std::uint32_t node : idx)
            if (s.part[node] < 0) s.part[node] = pit->second;
        s.edges.push_back(idx);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (s.part[i] < 0)
            throw std::invalid_argument("build_sample: node without an incident element");

    for (std::size_t i = 0; i < n; ++i) {
        const Part& p = b.manifest.parts[static_cast<std::size_t>(s.part[i])];
        s.comp.push_back(comp_rank.at(p.component));
        s.tau.push_back(p.thickness);
    }

    const DesignSpace& space = b.manifest.space;
    if (b.manifest.design.x.size() != space.vars.size())
        throw std::invalid_argument("build_sample: design/space dimension mismatch");
    for (std::size_t j = 0; j < space.vars.size(); ++j) {
        double span = space.vars[j].hi - space.vars[j].lo;
        s.xi.push_back(span > 0.0 ? (b.manifest.design.x[j] - space.vars[j].lo) / span : 0.0);
    }

    for (std::size_t k = 1; k < f.frames.size(); k += static_cast<std::size_t>(frame_stride)) {
        const Frame& fr = f.frames[k];
        if (fr.u.size() != 3 * n)
            throw std::invalid_argument("build_sample: frame displacement block mismatch");
        ad::Tensor u(static_cast<int>(n), 3);
        std::copy(fr.u.begin(), fr.u.end(), u.d.begin());
        s.u.push_back(std::move(u));
    }
    return s;
}

// --- config ---

void validate(const CrashSolverConfig& c) {
    auto req = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(fmt::format("surrogate config: {}", what));
    };
    req(c.latent >= 1, "latent must be positive");
    req(c.slices >= 1, "slices must be positive");
    req(c.enc_layers >= 1, "enc_layers must be positive");
    req(c.global_layers >= 1, "global_layers must be positive");
    req(c.heads >= 1, "heads must be positive");
    req(c.latent % c.heads == 0, "heads must divide latent");
    req(c.part_emb >= 1, "part_emb must be positive");
    req(c.pos_dim >= 1, "pos_dim must be positive");
    req(c.contact_tokens >= 1, "contact_tokens must be positive");
    req(c.mp_rounds >= 0, "mp_rounds must be non-negative");
    req(c.dec_hidden >= 1, "dec_hidden must be positive");
    req(c.frames >= 0, "frames must be non-negative");
    req(c.components >= 1, "components must be positive");
    req(c.parts >= 1, "parts must be positive");
    req(c.xi_dim >= 0, "xi_dim must be non-negative");
    req(c.tau_scale > 0.0, "tau_scale must be positive");
}

namespace {

json config_to_json(const CrashSolverConfig& c) {
    json j;
    j["latent"] = c.latent;
    j["slices"] = c.slices;
    j["enc_layers"] = c.enc_layers;
    j["global_layers"] = c.global_layers;
    j["heads"] = c.heads;
    j["part_emb"] = c.part_emb;
    j["pos_dim"] = c.pos_dim;
    j["contact_tokens"] = c.contact_tokens;
    j["mp_rounds"] = c.mp_rounds;
    j["dec_hidden"] = c.dec_hidden;
    j["frames"] = c.frames;
    j["components"] = c.components;
    j["parts"] = c.parts;
    j["xi_dim"] = c.xi_dim;
    j["tau_scale"] = c.tau_scale;
    return j;
}

CrashSolverConfig config_from_json(const json& j) {
    CrashSolverConfig c;
    c.latent = j.value("latent", c.latent);
    c.slices = j.value("slices", c.slices);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.global_layers = j.value("global_layers", c.global_layers);
    c.heads = j.value("heads", c.heads);
    c.part_emb = j.value("part_emb", c.part_emb);
    c.pos_dim = j.value("pos_dim", c.pos_dim);
    c.contact_tokens = j.value("contact_tokens", c.contact_tokens);
    c.mp_rounds = j.value("mp_rounds", c.mp_rounds);
    c.dec_hidden = j.value("dec_hidden", c.dec_hidden);
    c.frames = j.value("frames", c.frames);
    c.components = j.value("components", c.components);
    c.parts = j.value("parts", c.parts);
    c.xi_dim = j.value("xi_dim", c.xi_dim);
    c.tau_scale = j.value("tau_scale", c.tau_scale);
    validate(c);
    return c;
}

}  // namespace

CrashSolverConfig surrogate_config_from_json_text(const std::string& text) {
    return config_from_json(json::parse(text));
}

std::string surrogate_config_to_json_text(const CrashSolverConfig& c) {
    return config_to_json(c).dump(2);
}

// --- model ---

CrashSolverModel CrashSolverModel::init(const CrashSolverConfig& cfg, std::uint64_t seed,
                                        bool zero_final_layer) {
    validate(cfg);
    CrashSolverModel m;
    m.config = cfg;
    m.init_seed = seed;
    SplitMix64 rng(seed);

    auto push = [&](std::string name, ad::Tensor value) {
        ad::Tensor zero(value.rows, value.cols);
        m.params.push_back(ParamTensor{std::move(name), std::move(value), zero, zero});
    };
    auto xavier = [&](std::string name, int r, int c) {
        ad::Tensor w(r, c);
        double a = std::sqrt(6.0 / static_cast<double>(r + c));
        for (double& v : w.d) v = a * (2.0 * rng.uniform() - 1.0);
        push(std::move(name), std::move(w));
    };
    auto zeros = [&](std::string name, int r, int c) { push(std::move(name), ad::Tensor(r, c)); };
    auto ones = [&](std::string name, int r, int c) {
        push(std::move(name), ad::Tensor::ones(r, c));
    };

    const int L = cfg.latent;
    const int F = 4 + cfg.pos_dim + cfg.xi_dim + cfg.part_emb;
    xavier("feat.w", F, L);
    zeros("feat.b", 1, L);
    xavier("part.emb", cfg.parts, cfg.part_emb);
    for (int l = 0; l < cfg.enc_layers; ++l) {
        xavier(fmt::format("enc{}.slice.w", l), L, cfg.slices);
        zeros(fmt::format("enc{}.slice.b", l), 1, cfg.slices);
        for (const char* w : {"wq", "wk", "wv", "wo"})
            xavier(fmt::format("enc{}.attn.{}", l, w), L, L);
        ones(fmt::format("enc{}.ln.g", l), 1, L);
        zeros(fmt::format("enc{}.ln.b", l), 1, L);
    }
    xavier("contact.bank", cfg.contact_tokens, L);
    for (int l = 0; l < cfg.global_layers; ++l) {
        for (const char* w : {"wq", "wk", "wv", "wo"})
            xavier(fmt::format("glob{}.attn.{}", l, w), L, L);
        ones(fmt::format("glob{}.ln.g", l), 1, L);
        zeros(fmt::format("glob{}.ln.b", l), 1, L);
    }
    for (int r = 0; r < cfg.mp_rounds; ++r) {
        xavier(fmt::format("mp{}.w", r), L, L);
        zeros(fmt::format("mp{}.b", r), 1, L);
    }
    xavier("dec.w1", L + cfg.pos_dim, cfg.dec_hidden);
    zeros("dec.b1", 1, cfg.dec_hidden);
    if (zero_final_layer)
        zeros("dec.w2", cfg.dec_hidden, 3);
    else
        xavier("dec.w2", cfg.dec_hidden, 3);
    zeros("dec.b2", 1, 3);
    return m;
}

std::size_t CrashSolverModel::param_count() const {
    std::size_t n = 0;
    for (const ParamTensor& p : params) n += p.value.size();
    return n;
}

ParamTensor* CrashSolverModel::find(const std::string& name) {
    for (ParamTensor& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

namespace {

struct GraphOut {
    std::vector<Ref> params;
    std::vector<Ref> pred;
    Ref rowsums = -1;
    Ref z = -1;
};

// self-attention over the rows of x ((tokens) x latent)
Ref multi_head_attention(ad::Tape& t, Ref x, int heads, int latent, Ref wq, Ref wk, Ref wv,
                         Ref wo) {
    Ref q = t.matmul(x, wq);
    Ref k = t.matmul(x, wk);
    Ref v = t.matmul(x, wv);
    const int dh = latent / heads;
    std::vector<Ref> heads_out;
    for (int h = 0; h < heads; ++h) {
        Ref qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        Ref kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        Ref vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        Ref scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        heads_out.push_back(t.matmul(t.softmax_rows(scores), vh));
    }
    return t.matmul(t.concat_cols(heads_out), wo);
}

void sincos_features(double* dst, int dim, double value) {
    for (int k = 0; k < dim; ++k) {
        double angle = kPi * std::ldexp(1.0, k / 2) * value;
        dst[k] = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
}

GraphOut build_graph(const CrashSolverModel& m, ad::Tape& t, const LearningSample& s,
                     bool with_grad) {
    const CrashSolverConfig& c = m.config;
    const int n = s.n_nodes();
    const int L = c.latent;
    if (n < 1) throw std::invalid_argument("surrogate: sample has no nodes");
    if (static_cast<int>(s.part.size()) != n || static_cast<int>(s.comp.size()) != n ||
        static_cast<int>(s.tau.size()) != n)
        throw std::invalid_argument("surrogate: per-node label arrays do not match node count");
    for (int i = 0; i < n; ++i) {
        if (s.part[static_cast<std::size_t>(i)] < 0 ||
            s.part[static_cast<std::size_t>(i)] >= c.parts)
            throw std::out_of_range("surrogate: part label outside the embedding table");
        if (s.comp[static_cast<std::size_t>(i)] < 0 ||
            s.comp[static_cast<std::size_t>(i)] >= c.components)
            throw std::out_of_range("surrogate: component label outside the configured count");
    }
    if (static_cast<int>(s.xi.size()) != c.xi_dim)
        throw std::invalid_argument(fmt::format("surrogate: design vector has {} entries, config expects {}",
                                                s.xi.size(), c.xi_dim));
    const int n_frames = s.n_frames() > 0 ? s.n_frames() : c.frames;
    if (n_frames < 1)
        throw std::invalid_argument("surrogate: frame count unknown (no targets, frames == 0)");

    GraphOut out;
    std::unordered_map<std::string, Ref> by_name;
    for (const ParamTensor& p : m.params) {
        Ref r = t.input(p.value, with_grad);
        out.params.push_back(r);
        by_name[p.name] = r;
    }
    auto P = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::logic_error(fmt::format("surrogate: missing parameter {}", name));
        return it->second;
    };

    // constant per-node features: minmax-normalized coordinates, relative
    // thickness, sinusoidal encoding of the normalized coordinates, design
    double lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::numeric_limits<double>::infinity();
        hi[a] = -std::numeric_limits<double>::infinity();
    }
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], s.x0.at(i, a));
            hi[a] = std::max(hi[a], s.x0.at(i, a));
        }
    const int fdim = 4 + c.pos_dim + c.xi_dim;
    ad::Tensor feat(n, fdim);
    std::vector<double> pos(static_cast<std::size_t>(c.pos_dim));
    for (int i = 0; i < n; ++i) {
        double xh[3];
        for (int a = 0; a < 3; ++a) {
            double span = hi[a] - lo[a];
            xh[a] = span > 0.0 ? 2.0 * (s.x0.at(i, a) - lo[a]) / span - 1.0 : 0.0;
            feat.at(i, a) = xh[a];
        }
        feat.at(i, 3) = s.tau[static_cast<std::size_t>(i)] / c.tau_scale;
        for (int k = 0; k < c.pos_dim; ++k) {
            double angle = kPi * std::ldexp(1.0, k / 6) * xh[(k / 2) % 3];
            feat.at(i, 4 + k) = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
        for (int j = 0; j < c.xi_dim; ++j)
            feat.at(i, 4 + c.pos_dim + j) = s.xi[static_cast<std::size_t>(j)];
    }

    ad::Tensor part_onehot(n, c.parts);
    for (int i = 0; i < n; ++i) part_onehot.at(i, s.part[static_cast<std::size_t>(i)]) = 1.0;

    Ref x_in = t.concat_cols({t.constant(feat), t.matmul(t.constant(part_onehot), P("part.emb"))});
    Ref X = t.tanh_(t.add_rowvec(t.matmul(x_in, P("feat.w")), P("feat.b")));

    // component partition and the constant pooling/scatter operators
    std::vector<std::vector<int>> comp_nodes(static_cast<std::size_t>(c.components));
    for (int i = 0; i < n; ++i)
        comp_nodes[static_cast<std::size_t>(s.comp[static_cast<std::size_t>(i)])].push_back(i);
    std::vector<Ref> sel(static_cast<std::size_t>(c.components), -1);
    for (int k = 0; k < c.components; ++k) {
        const auto& nodes = comp_nodes[static_cast<std::size_t>(k)];
        if (nodes.empty()) continue;
        ad::Tensor S(static_cast<int>(nodes.size()), n);
        for (std::size_t row = 0; row < nodes.size(); ++row)
            S.at(static_cast<int>(row), nodes[row]) = 1.0;
        sel[static_cast<std::size_t>(k)] = t.constant(S);
    }
    ad::Tensor mean_rows(c.components, n);
    ad::Tensor comp_onehot(n, c.components);
    for (int k = 0; k < c.components; ++k)
        for (int i : comp_nodes[static_cast<std::size_t>(k)]) {
            mean_rows.at(k, i) = 1.0 / static_cast<double>(comp_nodes[static_cast<std::size_t>(k)].size());
            comp_onehot.at(i, k) = 1.0;
        }
    Ref R = t.constant(mean_rows);
    Ref M = t.constant(comp_onehot);

    // per-component slicing attention, shared weights, assignments recomputed
    // in every layer
    for (int l = 0; l < c.enc_layers; ++l) {
        Ref sw = P(fmt::format("enc{}.slice.w", l));
        Ref sb = P(fmt::format("enc{}.slice.b", l));
        Ref wq = P(fmt::format("enc{}.attn.wq", l));
        Ref wk = P(fmt::format("enc{}.attn.wk", l));
        Ref wv = P(fmt::format("enc{}.attn.wv", l));
        Ref wo = P(fmt::format("enc{}.attn.wo", l));
        Ref lng = P(fmt::format("enc{}.ln.g", l));
        Ref lnb = P(fmt::format("enc{}.ln.b", l));
        Ref next = -1;
        for (int k = 0; k < c.components; ++k) {
            Ref Sk = sel[static_cast<std::size_t>(k)];
            if (Sk < 0) continue;
            const int nk = static_cast<int>(comp_nodes[static_cast<std::size_t>(k)].size());
            Ref Xk = t.matmul(Sk, X);
            Ref A = t.softmax_rows(t.add_rowvec(t.matmul(Xk, sw), sb));
            Ref ones_nk = t.constant(ad::Tensor::ones(nk, 1));
            Ref colsum = t.matmul_tn(A, ones_nk);
            Ref slice_tokens = t.rowscale(t.matmul_tn(A, Xk), t.reciprocal(colsum));
            Ref mixed = t.add(slice_tokens,
                              multi_head_attention(t, slice_tokens, c.heads, L, wq, wk, wv, wo));
            Ref Xk2 = t.layer_norm_rows(t.add(Xk, t.matmul(A, mixed)), lng, lnb);
            Ref scattered = t.matmul_tn(Sk, Xk2);
            next = next < 0 ? scattered : t.add(next, scattered);
            if (l == 0) {
                Ref ones_s = t.constant(ad::Tensor::ones(c.slices, 1));
                Ref rs = t.matmul_tn(Sk, t.matmul(A, ones_s));
                out.rowsums = out.rowsums < 0 ? rs : t.add(out.rowsums, rs);
            }
        }
        X = next;
    }

    // component summaries, refined against the learned contact-state bank
    Ref z = t.matmul(R, X);
    out.z = z;
    Ref tokens = t.concat_rows({z, P("contact.bank")});
    for (int l = 0; l < c.global_layers; ++l) {
        Ref wq = P(fmt::format("glob{}.attn.wq", l));
        Ref wk = P(fmt::format("glob{}.attn.wk", l));
        Ref wv = P(fmt::format("glob{}.attn.wv", l));
        Ref wo = P(fmt::format("glob{}.attn.wo", l));
        Ref mixed = t.add(tokens, multi_head_attention(t, tokens, c.heads, L, wq, wk, wv, wo));
        tokens = t.layer_norm_rows(mixed, P(fmt::format("glob{}.ln.g", l)),
                                   P(fmt::format("glob{}.ln.b", l)));
    }
    Ref H = t.add(X, t.matmul(M, t.slice_rows(tokens, 0, c.components)));

    // interface message passing between touching components
    InterfaceGraph ig = interface_graph(s.edges, s.comp);
    for (int r = 0; r < c.mp_rounds; ++r) {
        Ref w = P(fmt::format("mp{}.w", r));
        Ref b = P(fmt::format("mp{}.b", r));
        Ref zcur = t.matmul(R, H);
        Ref h2 = H;
        for (const auto& [pair, nodes] : ig.interface_nodes) {
            Ref src = t.slice_rows(zcur, pair.second, pair.second + 1);
            Ref msg = t.tanh_(t.add(t.matmul(src, w), b));
            ad::Tensor ind(n, 1);
            for (int node : nodes) ind.at(node, 0) = 1.0;
            h2 = t.add(h2, t.matmul(t.constant(ind), msg));
        }
        H = h2;
    }

    // one-shot temporal decoding: every frame from the same latent state
    Ref ones_col = t.constant(ad::Tensor::ones(n, 1));
    Ref w1 = P("dec.w1");
    Ref b1 = P("dec.b1");
    Ref w2 = P("dec.w2");
    Ref b2 = P("dec.b2");
    for (int f = 0; f < n_frames; ++f) {
        ad::Tensor trow(1, c.pos_dim);
        sincos_features(trow.d.data(), c.pos_dim,
                        static_cast<double>(f + 1) / static_cast<double>(n_frames));
        Ref hf = t.concat_cols({H, t.matmul(ones_col, t.constant(trow))});
        Ref hidden = t.tanh_(t.add_rowvec(t.matmul(hf, w1), b1));
        out.pred.push_back(t.add_rowvec(t.matmul(hidden, w2), b2));
    }
    return out;
}

}  // namespace

std::vector<ad::Tensor> CrashSolverModel::forward(const LearningSample& s,
                                                  ForwardTrace* trace) const {
    ad::Tape tape;
    GraphOut g = build_graph(*this, tape, s, false);
    std::vector<ad::Tensor> pred;
    pred.reserve(g.pred.size());
    for (Ref r : g.pred) pred.push_back(tape.val(r));
    if (trace) {
        trace->assignment_rowsums = tape.val(g.rowsums);
        trace->z = tape.val(g.z);
    }
    return pred;
}

ad::Tape::Ref CrashSolverModel::build_loss(ad::Tape& tape, const LearningSample& s,
                                           std::vector<ad::Tape::Ref>& param_refs) const {
    if (s.u.empty()) throw std::invalid_argument("surrogate: sample has no target frames");
    const int n = s.n_nodes();
    for (const ad::Tensor& u : s.u)
        if (u.rows != n || u.cols != 3)
            throw std::invalid_argument("surrogate: target frame shape mismatch");

    GraphOut g = build_graph(*this, tape, s, true);
    param_refs = g.params;

    long retained = n;
    Ref mask_col = -1;
    if (!s.mask.empty()) {
        if (static_cast<int>(s.mask.size()) != n)
            throw std::invalid_argument("surrogate: mask length mismatch");
        ad::Tensor mc(n, 1);
        retained = 0;
        for (int i = 0; i < n; ++i)
            if (s.mask[static_cast<std::size_t>(i)]) {
                mc.at(i, 0) = 1.0;
                ++retained;
            }
        if (retained == 0) throw std::invalid_argument("surrogate: mask retains no nodes");
        mask_col = tape.constant(mc);
    }

    Ref total = -1;
    for (int f = 0; f < s.n_frames(); ++f) {
        Ref pf = g.pred[static_cast<std::size_t>(f)];
        ad::Tensor target = s.u[static_cast<std::size_t>(f)];
        if (mask_col >= 0) {
            pf = tape.rowscale(pf, mask_col);
            for (int i = 0; i < n; ++i)
                if (!s.mask[static_cast<std::size_t>(i)])
                    for (int a = 0; a < 3; ++a) target.at(i, a) = 0.0;
        }
        Ref e = tape.sse(pf, target);
        total = total < 0 ? e : tape.add(total, e);
    }
    double denom = static_cast<double>(s.n_frames()) * static_cast<double>(retained) * 3.0;
    return tape.scale(total, 1.0 / denom);
}

double surrogate_loss(const std::vector<ad::Tensor>& pred,
                      const std::vector<ad::Tensor>& target) {
    if (pred.size() != target.size())
        throw std::invalid_argument("surrogate_loss: frame count mismatch");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        if (!pred[f].same_shape(target[f]))
            throw std::invalid_argument("surrogate_loss: frame shape mismatch");
        for (std::size_t i = 0; i < pred[f].size(); ++i) {
            double d = pred[f].d[i] - target[f].d[i];
            sum += d * d;
        }
        count += pred[f].size();
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

// --- checkpoints ---

namespace {

void write_u64_le(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint64_t read_u64_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

constexpr char kCkptMagic[4] = {'C', 'S', 'K', '1'};

}  // namespace

void CrashSolverModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write checkpoint {}", path.string()));
    json header;
    header["version"] = 1;
    header["seed"] = init_seed;
    header["config"] = config_to_json(config);
    json tensors = json::array();
    for (const ParamTensor& p : params)
        tensors.push_back({{"name", p.name}, {"rows", p.value.rows}, {"cols", p.value.cols}});
    header["tensors"] = std::move(tensors);
    const std::string text = header.dump();

    out.write(kCkptMagic, 4);
    write_u64_le(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const ParamTensor& p : params)
        out.write(reinterpret_cast<const char*>(p.value.d.data()),
                  static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    if (!out) throw std::runtime_error(fmt::format("short write on checkpoint {}", path.string()));
}

CrashSolverModel CrashSolverModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open checkpoint {}", path.string()));
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw std::runtime_error(fmt::format("{} is not a surrogate checkpoint", path.string()));
    std::uint64_t len = read_u64_le(in);
    if (!in || len == 0 || len > (1u << 24))
        throw std::runtime_error(fmt::format("corrupt checkpoint header in {}", path.string()));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error(fmt::format("truncated checkpoint header in {}", path.string()));

    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(
            fmt::format("bad checkpoint header in {}: {}", path.string(), e.what()));
    }
    CrashSolverModel m;
    m.config = config_from_json(header.at("config"));
    m.init_seed = header.value("seed", 0ull);
    for (const json& desc : header.at("tensors")) {
        const std::string name = desc.at("name").get<std::string>();
        const int rows = desc.at("rows").get<int>();
        const int cols = desc.at("cols").get<int>();
        if (rows < 0 || cols < 0)
            throw std::runtime_error(fmt::format("bad tensor shape in {}", path.string()));
        ad::Tensor value(rows, cols);
        in.read(reinterpret_cast<char*>(value.d.data()),
                static_cast<std::streamsize>(sizeof(double) * value.size()));
        if (!in)
            throw std::runtime_error(
                fmt::format("truncated tensor {} in {}", name, path.string()));
        ad::Tensor zero(rows, cols);
        m.params.push_back(ParamTensor{name, std::move(value), zero, zero});
    }
    return m;
}

// --- training ---

int best_epoch(const std::vector<double>& val_losses) {
    if (val_losses.empty()) return 0;
    std::size_t best = 0;
    for (std::size_t i = 1; i < val_losses.size(); ++i)
        if (val_losses[i] < val_losses[best]) best = i;
    return static_cast<int>(best) + 1;
}

namespace {

double eval_loss(const CrashSolverModel& m, const LearningSample& s) {
    ad::Tape tape;
    std::vector<Ref> refs;
    Ref loss = m.build_loss(tape, s, refs);
    return tape.val(loss).at(0, 0);
}

}  // namespace

TrainResult train(CrashSolverModel& model, const std::vector<LearningSample>& train_set,
                  const std::vector<LearningSample>& val_set, const TrainSchedule& sched) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    if (sched.epochs < 0) throw std::invalid_argument("train: negative epoch count");
    if (model.config.frames == 0) model.config.frames = train_set.front().n_frames();

    TrainResult res;
    long step = 0;
    double loss0 = -1.0;
    std::vector<ad::Tensor> best_values;
    double best_val = std::numeric_limits<double>::infinity();
    int best_ep = 0;

    auto diverged = [&](double loss) {
        return !std::isfinite(loss) || (loss0 >= 0.0 && loss > 1e6 * (loss0 + 1.0));
    };

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= sched.epochs; ++epoch) {
        SplitMix64 shuffle_rng(hash_mix(sched.seed, static_cast<std::uint64_t>(epoch)));
        fisher_yates(order, shuffle_rng);

        double train_sum = 0.0;
        std::size_t train_cnt = 0;
        bool budget_hit = false;
        for (std::size_t idx : order) {
            if (sched.max_steps && step >= *sched.max_steps) {
                budget_hit = true;
                break;
            }
            ad::Tape tape;
            std::vector<Ref> refs;
            Ref loss = model.build_loss(tape, train_set[idx], refs);
            double lv = tape.val(loss).at(0, 0);
            if (diverged(lv))
                throw TrainingDiverged(
                    epoch, step,
                    fmt::format("training diverged at epoch {}, step {}: loss {}", epoch, step, lv));
            if (loss0 < 0.0) loss0 = lv;
            train_sum += lv;
            ++train_cnt;
            tape.backward(loss);

            ++step;
            const double bc1 = 1.0 - std::pow(sched.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(sched.beta2, static_cast<double>(step));
            for (std::size_t p = 0; p < model.params.size(); ++p) {
                ParamTensor& pt = model.params[p];
                const ad::Tensor& g = tape.grad(refs[p]);
                for (std::size_t i = 0; i < pt.value.size(); ++i) {
                    double gi = g.d[i];
                    pt.m.d[i] = sched.beta1 * pt.m.d[i] + (1.0 - sched.beta1) * gi;
                    pt.v.d[i] = sched.beta2 * pt.v.d[i] + (1.0 - sched.beta2) * gi * gi;
                    pt.value.d[i] -= sched.lr * (pt.m.d[i] / bc1) /
                                     (std::sqrt(pt.v.d[i] / bc2) + sched.adam_eps);
                    if (!std::isfinite(pt.value.d[i]))
                        throw TrainingDiverged(epoch, step,
                                               fmt::format("parameter {} became non-finite at "
                                                           "epoch {}, step {}",
                                                           pt.name, epoch, step));
                }
            }
        }
        if (train_cnt == 0) break;  // step budget exhausted before this epoch

        EpochStats es;
        es.epoch = epoch;
        es.train_loss = train_sum / static_cast<double>(train_cnt);
        if (!val_set.empty()) {
            double vsum = 0.0;
            for (const LearningSample& s : val_set) vsum += eval_loss(model, s);
            es.val_loss = vsum / static_cast<double>(val_set.size());
            if (!std::isfinite(es.val_loss))
                throw TrainingDiverged(epoch, step,
                                       fmt::format("validation loss became non-finite at epoch {}",
                                                   epoch));
            if (es.val_loss < best_val) {
                best_val = es.val_loss;
                best_ep = epoch;
                best_values.clear();
                for (const ParamTensor& p : model.params) best_values.push_back(p.value);
            }
        }
        res.history.push_back(es);
        if (budget_hit) break;
    }

    if (!val_set.empty() && best_ep > 0) {
        for (std::size_t p = 0; p < model.params.size(); ++p)
            model.params[p].value = best_values[p];
        res.best_epoch = best_ep;
    } else {
        res.best_epoch = static_cast<int>(res.history.size());
    }
    return res;
}

double grad_check(const CrashSolverModel& model, const LearningSample& s, double eps,
                  int n_probes, std::uint64_t seed) {
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw std::domain_error("grad_check: eps must lie in [1e-7, 1e-3]");
    if (n_probes < 1) throw std::invalid_argument("grad_check: need at least one probe");

    CrashSolverModel work = model;
    ad::Tape tape;
    std::vector<Ref> refs;
    Ref loss = work.build_loss(tape, s, refs);
    tape.backward(loss);
    std::vector<ad::Tensor> grads;
    grads.reserve(refs.size());
    for (Ref r : refs) grads.push_back(tape.grad(r));

    SplitMix64 rng(seed);
    double worst = 0.0;
    for (int probe = 0; probe < n_probes; ++probe) {
        const std::size_t pi = rng.below(work.params.size());
        const std::size_t ei = rng.below(work.params[pi].value.size());
        double& slot = work.params[pi].value.d[ei];
        const double orig = slot;
        slot = orig + eps;
        const double lp = eval_loss(work, s);
        slot = orig - eps;
        const double lm = eval_loss(work, s);
        slot = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double ga = grads[pi].d[ei];
        const double denom = std::max({std::abs(fd), std::abs(ga), 1e-2});
        worst = std::max(worst, std::abs(fd - ga) / denom);
    }
    return worst;
}

// --- tabular baselines ---

void Standardizer::fit(const std::vector<std::vector<double>>& x) {
    if (x.empty()) throw std::invalid_argument("standardizer: empty training set");
    const std::size_t d = x.front().size();
    mean.assign(d, 0.0);
    stddev.assign(d, 0.0);
    for (const auto& row : x) {
        if (row.size() != d) throw std::invalid_argument("standardizer: ragged rows");
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(x.size());
    for (const auto& row : x)
        for (std::size_t j = 0; j < d; ++j) {
            double dv = row[j] - mean[j];
            stddev[j] += dv * dv;
        }
    for (std::size_t j = 0; j < d; ++j)
        stddev[j] = std::sqrt(stddev[j] / static_cast<double>(x.size()));
}

std::vector<double> Standardizer::transform(const std::vector<double>& row) const {
    if (row.size() != mean.size())
        throw std::invalid_argument("standardizer: dimension mismatch");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j)
        out[j] = stddev[j] > 0.0 ? (row[j] - mean[j]) / stddev[j] : 0.0;
    return out;
}

namespace {

// solve a (symmetric) dense system via gaussian elimination, many right sides
std::vector<std::vector<double>> solve_dense(std::vector<std::vector<double>> a,
                                             std::vector<std::vector<double>> b) {
    const std::size_t d = a.size();
    double scale = 0.0;
    for (const auto& row : a)
        for (double v : row) scale = std::max(scale, std::abs(v));
    const double tol = 1e-12 * std::max(scale, 1.0);
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < tol)
            throw std::runtime_error("ridge_fit: singular normal equations");
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = col + 1; r < d; ++r) {
            double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t j = col; j < d; ++j) a[r][j] -= f * a[col][j];
            for (std::size_t j = 0; j < b[r].size(); ++j) b[r][j] -= f * b[col][j];
        }
    }
    for (std::size_t col = d; col-- > 0;) {
        for (std::size_t j = 0; j < b[col].size(); ++j) {
            double acc = b[col][j];
            for (std::size_t k = col + 1; k < d; ++k) acc -= a[col][k] * b[k][j];
            b[col][j] = acc / a[col][col];
        }
    }
    return b;
}

}  // namespace

RidgeModel ridge_fit(const std::vector<std::vector<double>>& x,
                     const std::vector<std::vector<double>>& y, double alpha) {
    if (x.empty()) throw std::invalid_argument("ridge_fit: empty training set");
    if (y.size() != x.size()) throw std::invalid_argument("ridge_fit: x/y row mismatch");
    if (alpha < 0.0) throw std::invalid_argument("ridge_fit: negative regularization");
    const std::size_t d = x.front().size();
    const std::size_t m = y.front().size();
    for (const auto& row : y)
        if (row.size() != m) throw std::invalid_argument("ridge_fit: ragged targets");

    RidgeModel model;
    model.scaler.fit(x);
    std::vector<std::vector<double>> z;
    z.reserve(x.size());
    for (const auto& row : x) z.push_back(model.scaler.transform(row));

    model.intercept.assign(m, 0.0);
    for (const auto& row : y)
        for (std::size_t t = 0; t < m; ++t) model.intercept[t] += row[t];
    for (std::size_t t = 0; t < m; ++t) model.intercept[t] /= static_cast<double>(y.size());

    // normal equations on standardized features with centered targets; the
    // intercept is the target mean and stays unpenalized
    std::vector<std::vector<double>> gram(d, std::vector<double>(d, 0.0));
    std::vector<std::vector<double>> rhs(d, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < z.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = j; k < d; ++k) gram[j][k] += z[i][j] * z[i][k];
            for (std::size_t t = 0; t < m; ++t)
                rhs[j][t] += z[i][j] * (y[i][t] - model.intercept[t]);
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = 0; k < j; ++k) gram[j][k] = gram[k][j];
        gram[j][j] += alpha;
    }
    std::vector<std::vector<double>> w = solve_dense(std::move(gram), std::move(rhs));

    model.weights.assign(m, std::vector<double>(d, 0.0));
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t t = 0; t < m; ++t) model.weights[t][j] = w[j][t];
    return model;
}

std::vector<double> ridge_predict(const RidgeModel& m, const std::vector<double>& query) {
    std::vector<double> z = m.scaler.transform(query);
    std::vector<double> out = m.intercept;
    for (std::size_t t = 0; t < out.size(); ++t)
        for (std::size_t j = 0; j < z.size(); ++j) out[t] += m.weights[t][j] * z[j];
    return out;
}

std::vector<double> knn_predict(const std::vector<std::vector<double>>& x,
                                const std::vector<std::vector<double>>& y,
                                const std::vector<double>& query, std::size_t k) {
    if (x.empty() || y.size() != x.size())
        throw std::invalid_argument("knn_predict: bad training set");
    if (k == 0 || k > x.size())
        throw std::invalid_argument("knn_predict: k must lie in [1, n]");

    Standardizer sc;
    sc.fit(x);
    const std::vector<double> zq = sc.transform(query);
    std::vector<double> dist(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> zi = sc.transform(x[i]);
        double acc = 0.0;
        for (std::size_t j = 0; j < zq.size(); ++j) {
            double dv = zi[j] - zq[j];
            acc += dv * dv;
        }
        dist[i] = std::sqrt(acc);
    }
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
                      });

    // an exact hit short-circuits the inverse-distance blend
    if (dist[idx[0]] < 1e-12) return y[idx[0]];

    const std::size_t m = y.front().size();
    std::vector<double> out(m, 0.0);
    double wsum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t i = idx[r];
        double w = 1.0 / dist[i];
        wsum += w;
        for (std::size_t t = 0; t < m; ++t) out[t] += w * y[i][t];
    }
    for (double& v : out) v /= wsum;
    return out;
}

}  // namespace crashbench
