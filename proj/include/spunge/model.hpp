#pragma once

#include "spunge/container.hpp"
#include "spunge/param_set.hpp"
#include "spunge/task_vector.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace spunge {

// Token-wise MLP. Each position sees its own token embedding concatenated
// with the previous token's embedding (a learned start vector at position 0),
// so next-token prediction can condition on local context without attention:
//
//   x_i  = [embed[t_i] ; i > 0 ? embed[t_{i-1}] : start]
//   h_0  = tanh(W_0 x_i + b_0)
//   h_l  = tanh(W_l h_{l-1} + b_l)          l = 1..L-1
//   logits_i = head h_{L-1}
struct ModelSpec {
    int64_t vocab_size = 0;
    int64_t embed_dim = 0;
    int64_t num_layers = 0;
    int64_t hidden_dim = 0;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size < 1 || embed_dim < 1 || num_layers < 1 || hidden_dim < 1) {
            throw Error(ErrorCode::bad_argument, "model dimensions must be >= 1");
        }
    }

    int64_t layer_input_dim(int64_t layer) const { return layer == 0 ? 2 * embed_dim : hidden_dim; }

    json to_json() const {
        return {{"vocab_size", vocab_size},
                {"embed_dim", embed_dim},
                {"num_layers", num_layers},
                {"hidden_dim", hidden_dim},
                {"seed", seed}};
    }

    static ModelSpec from_json(const json & j) {
        ModelSpec s;
        s.vocab_size = j.at("vocab_size").get<int64_t>();
        s.embed_dim = j.at("embed_dim").get<int64_t>();
        s.num_layers = j.at("num_layers").get<int64_t>();
        s.hidden_dim = j.at("hidden_dim").get<int64_t>();
        s.seed = j.at("seed").get<uint64_t>();
        return s;
    }
};

inline std::string layer_weight_name(int64_t l) { return "layers." + std::to_string(l) + ".W"; }
inline std::string layer_bias_name(int64_t l) { return "layers." + std::to_string(l) + ".b"; }

struct ModelState {
    ModelSpec spec;
    ParamSet params;
};

inline ModelState init_model(const ModelSpec & spec) {
    spec.validate();
    const int64_t V = spec.vocab_size, E = spec.embed_dim, L = spec.num_layers, H = spec.hidden_dim;

    auto fill_uniform = [&](const std::string & name, int64_t n, double scale) {
        Rng rng(derive_seed(spec.seed, "init." + name));
        std::vector<float> data(static_cast<size_t>(n));
        for (float & v : data) {
            v = static_cast<float>(rng.uniform(-scale, scale));
        }
        return data;
    };

    std::vector<ParamEntry> entries;
    entries.push_back({"embed", {V, E}, fill_uniform("embed", V * E, 1.0 / std::sqrt(double(E)))});
    entries.push_back({"start", {E}, fill_uniform("start", E, 1.0 / std::sqrt(double(E)))});
    for (int64_t l = 0; l < L; ++l) {
        int64_t in = spec.layer_input_dim(l);
        entries.push_back({layer_weight_name(l), {H, in},
                           fill_uniform(layer_weight_name(l), H * in, 1.0 / std::sqrt(double(in)))});
        entries.push_back({layer_bias_name(l), {H}, std::vector<float>(static_cast<size_t>(H), 0.0f)});
    }
    entries.push_back({"head", {V, H}, fill_uniform("head", V * H, 1.0 / std::sqrt(double(H)))});

    ModelState m;
    m.spec = spec;
    m.params = ParamSet::from_entries(std::move(entries));
    return m;
}

// Low-rank adapter over selected 2-D entries. B starts at zero so a freshly
// attached adapter leaves the forward pass untouched; training then moves
// only A and B while the base stays frozen.
struct AdapterState {
    int64_t rank = 0;
    std::map<std::string, LowRankFactors> factors;
};

inline AdapterState attach_adapter(const ModelState & m, int64_t rank, const std::vector<std::string> & targets,
                                   uint64_t seed) {
    if (rank < 1) {
        throw Error(ErrorCode::bad_argument, "adapter rank must be >= 1");
    }
    AdapterState a;
    a.rank = rank;
    for (const std::string & name : targets) {
        const ParamEntry * e = m.params.find(name);
        if (e == nullptr) {
            throw Error(ErrorCode::name_mismatch, "adapter target '" + name + "' not in model");
        }
        if (e->shape.size() != 2) {
            throw Error(ErrorCode::shape_mismatch, "adapter target '" + name + "' is not a matrix");
        }
        int64_t out = e->shape[0], in = e->shape[1];
        LowRankFactors f;
        f.a_shape = {rank, in};
        f.b_shape = {out, rank};
        f.a.resize(static_cast<size_t>(rank * in));
        f.b.assign(static_cast<size_t>(out * rank), 0.0f);
        Rng rng(derive_seed(seed, "adapter." + name));
        double scale = 1.0 / std::sqrt(double(in));
        for (float & v : f.a) {
            v = static_cast<float>(rng.uniform(-scale, scale));
        }
        a.factors[name] = std::move(f);
    }
    return a;
}

inline TaskVector adapter_delta(const ModelState & m, const AdapterState & a) {
    return expand_low_rank(m.params, a.factors);
}

namespace detail {

// Double-precision working copy of a model (plus optional adapter factors).
// All loss evaluation and gradient math runs against this, so a test can
// perturb any parameter in double and re-evaluate the exact same function
// the analytic gradients differentiate.
struct Workspace {
    ModelSpec spec;
    std::vector<double> embed, start, head;
    std::vector<std::vector<double>> w, b;

    struct Factors {
        std::vector<double> a, b; // a: r x in, b: out x r
        int64_t r = 0, in = 0, out = 0;
    };
    std::map<std::string, Factors> adapter; // keyed by target entry name

    // effective weights seen by the forward pass (base + B*A where adapted)
    std::vector<double> embed_eff, head_eff;
    std::vector<std::vector<double>> w_eff;

    void materialize() {
        embed_eff = embed;
        head_eff = head;
        w_eff = w;
        for (const auto & [name, f] : adapter) {
            std::vector<double> * target = nullptr;
            if (name == "embed") {
                target = &embed_eff;
            } else if (name == "head") {
                target = &head_eff;
            } else {
                for (int64_t l = 0; l < spec.num_layers; ++l) {
                    if (name == layer_weight_name(l)) {
                        target = &w_eff[static_cast<size_t>(l)];
                        break;
                    }
                }
            }
            if (target == nullptr) {
                throw Error(ErrorCode::name_mismatch, "adapter target '" + name + "' not materializable");
            }
            for (int64_t i = 0; i < f.out; ++i) {
                for (int64_t k = 0; k < f.r; ++k) {
                    double bik = f.b[static_cast<size_t>(i * f.r + k)];
                    if (bik == 0.0) {
                        continue;
                    }
                    for (int64_t j = 0; j < f.in; ++j) {
                        (*target)[static_cast<size_t>(i * f.in + j)] += bik * f.a[static_cast<size_t>(k * f.in + j)];
                    }
                }
            }
        }
    }
};

inline std::vector<double> widen(const std::vector<float> & v) {
    return std::vector<double>(v.begin(), v.end());
}

inline Workspace build_workspace(const ModelState & m, const AdapterState * adapter = nullptr) {
    Workspace ws;
    ws.spec = m.spec;
    ws.embed = widen(m.params.at("embed").data);
    ws.start = widen(m.params.at("start").data);
    ws.head = widen(m.params.at("head").data);
    ws.w.resize(static_cast<size_t>(m.spec.num_layers));
    ws.b.resize(static_cast<size_t>(m.spec.num_layers));
    for (int64_t l = 0; l < m.spec.num_layers; ++l) {
        ws.w[static_cast<size_t>(l)] = widen(m.params.at(layer_weight_name(l)).data);
        ws.b[static_cast<size_t>(l)] = widen(m.params.at(layer_bias_name(l)).data);
    }
    if (adapter != nullptr) {
        for (const auto & [name, f] : adapter->factors) {
            Workspace::Factors wf;
            wf.a = widen(f.a);
            wf.b = widen(f.b);
            wf.r = f.a_shape[0];
            wf.in = f.a_shape[1];
            wf.out = f.b_shape[0];
            ws.adapter[name] = std::move(wf);
        }
    }
    ws.materialize();
    return ws;
}

// Activations for one sequence: h[l] is T x H row-major, logits T x V.
struct SeqActivations {
    std::vector<std::vector<double>> h;
    std::vector<double> logits;
};

inline void check_tokens(const ModelSpec & spec, std::span<const int32_t> tokens) {
    for (int32_t t : tokens) {
        if (t < 0 || t >= spec.vocab_size) {
            throw Error(ErrorCode::bad_argument, "token id out of range: " + std::to_string(t));
        }
    }
}

inline SeqActivations forward_seq(const Workspace & ws, std::span<const int32_t> tokens, bool want_logits) {
    const ModelSpec & spec = ws.spec;
    check_tokens(spec, tokens);
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t E = spec.embed_dim, H = spec.hidden_dim, L = spec.num_layers, V = spec.vocab_size;

    SeqActivations act;
    act.h.assign(static_cast<size_t>(L), std::vector<double>(static_cast<size_t>(T * H)));
    if (want_logits) {
        act.logits.resize(static_cast<size_t>(T * V));
    }

    std::vector<double> x(static_cast<size_t>(2 * E));
    for (int64_t i = 0; i < T; ++i) {
        const double * cur = &ws.embed_eff[static_cast<size_t>(tokens[static_cast<size_t>(i)]) * E];
        const double * prev =
            i > 0 ? &ws.embed_eff[static_cast<size_t>(tokens[static_cast<size_t>(i - 1)]) * E] : ws.start.data();
        std::copy(cur, cur + E, x.begin());
        std::copy(prev, prev + E, x.begin() + E);

        const double * in = x.data();
        int64_t in_dim = 2 * E;
        for (int64_t l = 0; l < L; ++l) {
            double * h = &act.h[static_cast<size_t>(l)][static_cast<size_t>(i * H)];
            const std::vector<double> & W = ws.w_eff[static_cast<size_t>(l)];
            const std::vector<double> & bias = ws.b[static_cast<size_t>(l)];
            for (int64_t r = 0; r < H; ++r) {
                double acc = bias[static_cast<size_t>(r)];
                const double * wrow = &W[static_cast<size_t>(r * in_dim)];
                for (int64_t c = 0; c < in_dim; ++c) {
                    acc += wrow[c] * in[c];
                }
                h[r] = std::tanh(acc);
            }
            in = h;
            in_dim = H;
        }
        if (want_logits) {
            const double * hl = &act.h[static_cast<size_t>(L - 1)][static_cast<size_t>(i * H)];
            double * lg = &act.logits[static_cast<size_t>(i * V)];
            for (int64_t r = 0; r < V; ++r) {
                double acc = 0.0;
                const double * wrow = &ws.head_eff[static_cast<size_t>(r * H)];
                for (int64_t c = 0; c < H; ++c) {
                    acc += wrow[c] * hl[c];
                }
                lg[r] = acc;
            }
        }
    }
    return act;
}

// argmax with lowest-index tie break
inline int32_t argmax_token(std::span<const double> logits) {
    int32_t best = 0;
    double best_v = logits[0];
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > best_v) {
            best_v = logits[i];
            best = static_cast<int32_t>(i);
        }
    }
    return best;
}

} // namespace detail

// Per-position activations and logits for one token sequence.
struct ForwardTrace {
    std::vector<std::vector<std::vector<double>>> hidden; // hidden[l][pos] is a length-H vector
    std::vector<std::vector<double>> logits;              // logits[pos] is a length-V vector
};

inline ForwardTrace forward(const ModelState & m, std::span<const int32_t> tokens,
                            const AdapterState * adapter = nullptr) {
    detail::Workspace ws = detail::build_workspace(m, adapter);
    detail::SeqActivations act = detail::forward_seq(ws, tokens, true);
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t H = m.spec.hidden_dim, V = m.spec.vocab_size, L = m.spec.num_layers;
    ForwardTrace tr;
    tr.hidden.resize(static_cast<size_t>(L));
    for (int64_t l = 0; l < L; ++l) {
        tr.hidden[static_cast<size_t>(l)].resize(static_cast<size_t>(T));
        for (int64_t i = 0; i < T; ++i) {
            const double * h = &act.h[static_cast<size_t>(l)][static_cast<size_t>(i * H)];
            tr.hidden[static_cast<size_t>(l)][static_cast<size_t>(i)].assign(h, h + H);
        }
    }
    tr.logits.resize(static_cast<size_t>(T));
    for (int64_t i = 0; i < T; ++i) {
        const double * lg = &act.logits[static_cast<size_t>(i * V)];
        tr.logits[static_cast<size_t>(i)].assign(lg, lg + V);
    }
    return tr;
}

inline void save_model(const ModelState & m, const std::filesystem::path & path,
                       const json & corpus_spec = json()) {
    json extra;
    extra["kind"] = "model";
    extra["model_spec"] = m.spec.to_json();
    if (!corpus_spec.is_null()) {
        extra["corpus_spec"] = corpus_spec;
    }
    save_params(m.params, path, extra);
}

struct LoadedModel {
    ModelState model;
    json corpus_spec; // null when absent
};

inline LoadedModel load_model(const std::filesystem::path & path) {
    LoadedParams lp = load_params(path);
    if (!lp.manifest.contains("model_spec")) {
        throw Error(ErrorCode::corrupt_manifest, "not a model container (no model_spec): " + path.string());
    }
    LoadedModel out;
    out.model.spec = ModelSpec::from_json(lp.manifest["model_spec"]);
    out.model.params = std::move(lp.params);
    out.model.spec.validate();
    if (lp.manifest.contains("corpus_spec")) {
        out.corpus_spec = lp.manifest["corpus_spec"];
    }
    return out;
}

} // namespace spunge
