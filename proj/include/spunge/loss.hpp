#pragma once

#include "spunge/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace spunge {

// Which scalar objective to differentiate.
//
//   cross_entropy : mean over sequences of mean next-token CE (positions
//                   0..T-2 predict the following token).
//   rmu_forget    : mean over sequences of (1/T) sum_t ||h_layer(t) - target||^2,
//                   pushing layer activations onto a fixed scaled direction.
//   rmu_retain    : same form, but the target is the reference model's
//                   activation at the same token, anchoring behavior.
//
// trainable_layers empty means every parameter is trainable; otherwise only
// the listed layers' weights and biases receive gradients (embeddings, start
// vector and head are frozen at zero gradient).
struct LossSpec {
    enum class Kind { cross_entropy, rmu_forget, rmu_retain };
    Kind kind = Kind::cross_entropy;
    int64_t layer = 0;                     // activation layer for the rmu losses
    std::vector<double> target_direction;  // c*u, length hidden_dim (rmu_forget)
    const ModelState * reference = nullptr; // frozen initial model (rmu_retain)
    std::vector<int64_t> trainable_layers;
};

namespace detail {

struct GradBuf {
    std::vector<double> embed, start, head;
    std::vector<std::vector<double>> w, b;

    explicit GradBuf(const ModelSpec & spec) {
        embed.assign(static_cast<size_t>(spec.vocab_size * spec.embed_dim), 0.0);
        start.assign(static_cast<size_t>(spec.embed_dim), 0.0);
        head.assign(static_cast<size_t>(spec.vocab_size * spec.hidden_dim), 0.0);
        w.resize(static_cast<size_t>(spec.num_layers));
        b.resize(static_cast<size_t>(spec.num_layers));
        for (int64_t l = 0; l < spec.num_layers; ++l) {
            w[static_cast<size_t>(l)].assign(static_cast<size_t>(spec.hidden_dim * spec.layer_input_dim(l)), 0.0);
            b[static_cast<size_t>(l)].assign(static_cast<size_t>(spec.hidden_dim), 0.0);
        }
    }
};

// Backprop from layer `top` down to the inputs for one position. `dh` is
// dL/dh_top at that position and is consumed. Weight gradients go into `g`
// as gradients w.r.t. the *effective* matrices.
inline void backprop_position(const Workspace & ws, const SeqActivations & act,
                              std::span<const int32_t> tokens, int64_t pos, int64_t top,
                              std::vector<double> & dh, GradBuf & g) {
    const ModelSpec & spec = ws.spec;
    const int64_t E = spec.embed_dim, H = spec.hidden_dim;

    std::vector<double> dz(static_cast<size_t>(H));
    std::vector<double> dprev;
    for (int64_t l = top; l >= 0; --l) {
        const int64_t in_dim = spec.layer_input_dim(l);
        const double * h = &act.h[static_cast<size_t>(l)][static_cast<size_t>(pos * H)];
        for (int64_t r = 0; r < H; ++r) {
            dz[static_cast<size_t>(r)] = dh[static_cast<size_t>(r)] * (1.0 - h[r] * h[r]);
        }

        // input to this layer
        std::vector<double> x;
        const double * in = nullptr;
        if (l > 0) {
            in = &act.h[static_cast<size_t>(l - 1)][static_cast<size_t>(pos * H)];
        } else {
            x.resize(static_cast<size_t>(2 * E));
            const int32_t cur = tokens[static_cast<size_t>(pos)];
            const double * ce = &ws.embed_eff[static_cast<size_t>(cur) * E];
            std::copy(ce, ce + E, x.begin());
            if (pos > 0) {
                const int32_t prev = tokens[static_cast<size_t>(pos - 1)];
                const double * pe = &ws.embed_eff[static_cast<size_t>(prev) * E];
                std::copy(pe, pe + E, x.begin() + E);
            } else {
                std::copy(ws.start.begin(), ws.start.end(), x.begin() + E);
            }
            in = x.data();
        }

        std::vector<double> & gw = g.w[static_cast<size_t>(l)];
        std::vector<double> & gb = g.b[static_cast<size_t>(l)];
        for (int64_t r = 0; r < H; ++r) {
            const double dzr = dz[static_cast<size_t>(r)];
            if (dzr != 0.0) {
                double * grow = &gw[static_cast<size_t>(r * in_dim)];
                for (int64_t c = 0; c < in_dim; ++c) {
                    grow[c] += dzr * in[c];
                }
            }
            gb[static_cast<size_t>(r)] += dzr;
        }

        dprev.assign(static_cast<size_t>(in_dim), 0.0);
        const std::vector<double> & W = ws.w_eff[static_cast<size_t>(l)];
        for (int64_t r = 0; r < H; ++r) {
            const double dzr = dz[static_cast<size_t>(r)];
            if (dzr == 0.0) {
                continue;
            }
            const double * wrow = &W[static_cast<size_t>(r * in_dim)];
            for (int64_t c = 0; c < in_dim; ++c) {
                dprev[static_cast<size_t>(c)] += wrow[c] * dzr;
            }
        }

        if (l > 0) {
            dh.assign(dprev.begin(), dprev.end());
        } else {
            const int32_t cur = tokens[static_cast<size_t>(pos)];
            for (int64_t c = 0; c < E; ++c) {
                g.embed[static_cast<size_t>(cur) * E + static_cast<size_t>(c)] += dprev[static_cast<size_t>(c)];
            }
            if (pos > 0) {
                const int32_t prev = tokens[static_cast<size_t>(pos - 1)];
                for (int64_t c = 0; c < E; ++c) {
                    g.embed[static_cast<size_t>(prev) * E + static_cast<size_t>(c)] +=
                        dprev[static_cast<size_t>(E + c)];
                }
            } else {
                for (int64_t c = 0; c < E; ++c) {
                    g.start[static_cast<size_t>(c)] += dprev[static_cast<size_t>(E + c)];
                }
            }
        }
    }
}

// Evaluate the configured loss over a batch; when `grads` is non-null, also
// accumulate dLoss/dparams (w.r.t. effective weights) into it.
inline double eval_loss(const Workspace & ws, const std::vector<std::vector<int32_t>> & batch,
                        const LossSpec & spec, GradBuf * grads) {
    const ModelSpec & mspec = ws.spec;
    const int64_t H = mspec.hidden_dim, V = mspec.vocab_size, L = mspec.num_layers;
    if (batch.empty()) {
        throw Error(ErrorCode::empty_dataset, "loss over empty batch");
    }
    if (spec.kind != LossSpec::Kind::cross_entropy) {
        if (spec.layer < 0 || spec.layer >= L) {
            throw Error(ErrorCode::bad_argument, "loss layer index out of range");
        }
    }
    if (spec.kind == LossSpec::Kind::rmu_forget &&
        spec.target_direction.size() != static_cast<size_t>(H)) {
        throw Error(ErrorCode::bad_argument, "target_direction length must equal hidden_dim");
    }
    std::optional<Workspace> ref_ws;
    if (spec.kind == LossSpec::Kind::rmu_retain) {
        if (spec.reference == nullptr) {
            throw Error(ErrorCode::bad_argument, "rmu_retain needs a reference model");
        }
        ref_ws = build_workspace(*spec.reference);
    }

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    std::vector<double> dh(static_cast<size_t>(H));
    std::vector<double> prob(static_cast<size_t>(V));

    for (const std::vector<int32_t> & tokens : batch) {
        const int64_t T = static_cast<int64_t>(tokens.size());
        if (T < 1) {
            throw Error(ErrorCode::bad_argument, "empty token sequence");
        }
        const bool want_logits = spec.kind == LossSpec::Kind::cross_entropy;
        if (want_logits && T < 2) {
            throw Error(ErrorCode::bad_argument, "cross-entropy needs sequences of at least 2 tokens");
        }
        SeqActivations act = forward_seq(ws, tokens, want_logits);

        if (spec.kind == LossSpec::Kind::cross_entropy) {
            const double wgt = inv_batch / static_cast<double>(T - 1);
            for (int64_t i = 0; i + 1 < T; ++i) {
                const double * lg = &act.logits[static_cast<size_t>(i * V)];
                double mx = lg[0];
                for (int64_t r = 1; r < V; ++r) {
                    mx = std::max(mx, lg[r]);
                }
                double z = 0.0;
                for (int64_t r = 0; r < V; ++r) {
                    prob[static_cast<size_t>(r)] = std::exp(lg[r] - mx);
                    z += prob[static_cast<size_t>(r)];
                }
                const int32_t next = tokens[static_cast<size_t>(i + 1)];
                total += wgt * (std::log(z) - (lg[next] - mx));
                if (grads != nullptr) {
                    // dlogits = (softmax - onehot) * wgt; dh = head^T dlogits
                    std::fill(dh.begin(), dh.end(), 0.0);
                    const double * hl = &act.h[static_cast<size_t>(L - 1)][static_cast<size_t>(i * H)];
                    for (int64_t r = 0; r < V; ++r) {
                        double dlg = (prob[static_cast<size_t>(r)] / z - (r == next ? 1.0 : 0.0)) * wgt;
                        if (dlg == 0.0) {
                            continue;
                        }
                        double * ghrow = &grads->head[static_cast<size_t>(r * H)];
                        const double * whrow = &ws.head_eff[static_cast<size_t>(r * H)];
                        for (int64_t c = 0; c < H; ++c) {
                            ghrow[c] += dlg * hl[c];
                            dh[static_cast<size_t>(c)] += whrow[c] * dlg;
                        }
                    }
                    backprop_position(ws, act, tokens, i, L - 1, dh, *grads);
                }
            }
        } else {
            const double wgt = inv_batch / static_cast<double>(T);
            SeqActivations ref_act;
            if (ref_ws.has_value()) {
                ref_act = forward_seq(*ref_ws, tokens, false);
            }
            for (int64_t i = 0; i < T; ++i) {
                const double * h = &act.h[static_cast<size_t>(spec.layer)][static_cast<size_t>(i * H)];
                const double * target = spec.kind == LossSpec::Kind::rmu_forget
                                            ? spec.target_direction.data()
                                            : &ref_act.h[static_cast<size_t>(spec.layer)][static_cast<size_t>(i * H)];
                double sq = 0.0;
                for (int64_t c = 0; c < H; ++c) {
                    const double diff = h[c] - target[c];
                    sq += diff * diff;
                    dh[static_cast<size_t>(c)] = 2.0 * diff * wgt;
                }
                total += wgt * sq;
                if (grads != nullptr) {
                    backprop_position(ws, act, tokens, i, spec.layer, dh, *grads);
                }
            }
        }
    }

    if (!std::isfinite(total)) {
        throw Error(ErrorCode::numeric, "non-finite loss");
    }
    return total;
}

inline bool layer_trainable(const LossSpec & spec, int64_t l) {
    if (spec.trainable_layers.empty()) {
        return true;
    }
    return std::find(spec.trainable_layers.begin(), spec.trainable_layers.end(), l) != spec.trainable_layers.end();
}

} // namespace detail

struct LossResult {
    double loss = 0.0;
    ParamSet grads;
};

// Loss and gradients for the base parameters (no adapter). Gradients come
// back as a ParamSet with the model's layout; frozen entries are zero.
inline LossResult loss_and_grads(const ModelState & m, const std::vector<std::vector<int32_t>> & batch,
                                 const LossSpec & spec) {
    detail::Workspace ws = detail::build_workspace(m);
    detail::GradBuf g(m.spec);
    LossResult out;
    out.loss = detail::eval_loss(ws, batch, spec, &g);

    const bool all = spec.trainable_layers.empty();
    std::vector<ParamEntry> entries;
    auto push = [&](const std::string & name, std::vector<int64_t> shape, const std::vector<double> & src,
                    bool trainable) {
        ParamEntry e;
        e.name = name;
        e.shape = std::move(shape);
        e.data.resize(src.size());
        if (trainable) {
            for (size_t i = 0; i < src.size(); ++i) {
                e.data[i] = static_cast<float>(src[i]);
            }
        } else {
            std::fill(e.data.begin(), e.data.end(), 0.0f);
        }
        entries.push_back(std::move(e));
    };
    const ModelSpec & s = m.spec;
    push("embed", {s.vocab_size, s.embed_dim}, g.embed, all);
    push("start", {s.embed_dim}, g.start, all);
    for (int64_t l = 0; l < s.num_layers; ++l) {
        const bool t = detail::layer_trainable(spec, l);
        push(layer_weight_name(l), {s.hidden_dim, s.layer_input_dim(l)}, g.w[static_cast<size_t>(l)], t);
        push(layer_bias_name(l), {s.hidden_dim}, g.b[static_cast<size_t>(l)], t);
    }
    push("head", {s.vocab_size, s.hidden_dim}, g.head, all);
    out.grads = ParamSet::from_entries(std::move(entries));
    return out;
}

struct AdapterGrads {
    std::map<std::string, LowRankFactors> factors;
};

// Loss and gradients w.r.t. adapter factors only; the base stays frozen.
// dA = B^T dW_eff and dB = dW_eff A^T, with dW_eff from ordinary backprop.
inline std::pair<double, AdapterGrads> adapter_loss_and_grads(const ModelState & m, const AdapterState & adapter,
                                                              const std::vector<std::vector<int32_t>> & batch,
                                                              const LossSpec & spec) {
    detail::Workspace ws = detail::build_workspace(m, &adapter);
    detail::GradBuf g(m.spec);
    double loss = detail::eval_loss(ws, batch, spec, &g);

    AdapterGrads out;
    for (const auto & [name, f] : adapter.factors) {
        const std::vector<double> * dw = nullptr;
        if (name == "embed") {
            dw = &g.embed;
        } else if (name == "head") {
            dw = &g.head;
        } else {
            for (int64_t l = 0; l < m.spec.num_layers; ++l) {
                if (name == layer_weight_name(l)) {
                    dw = &g.w[static_cast<size_t>(l)];
                    break;
                }
            }
        }
        if (dw == nullptr) {
            throw Error(ErrorCode::name_mismatch, "adapter target '" + name + "' has no gradient buffer");
        }
        const int64_t r = f.a_shape[0], in = f.a_shape[1], out_dim = f.b_shape[0];
        LowRankFactors fg;
        fg.a_shape = f.a_shape;
        fg.b_shape = f.b_shape;
        fg.a.assign(static_cast<size_t>(r * in), 0.0f);
        fg.b.assign(static_cast<size_t>(out_dim * r), 0.0f);
        const detail::Workspace::Factors & wf = ws.adapter.at(name);
        for (int64_t k = 0; k < r; ++k) {
            for (int64_t j = 0; j < in; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < out_dim; ++i) {
                    acc += wf.b[static_cast<size_t>(i * r + k)] * (*dw)[static_cast<size_t>(i * in + j)];
                }
                fg.a[static_cast<size_t>(k * in + j)] = static_cast<float>(acc);
            }
        }
        for (int64_t i = 0; i < out_dim; ++i) {
            for (int64_t k = 0; k < r; ++k) {
                double acc = 0.0;
                for (int64_t j = 0; j < in; ++j) {
                    acc += (*dw)[static_cast<size_t>(i * in + j)] * wf.a[static_cast<size_t>(k * in + j)];
                }
                fg.b[static_cast<size_t>(i * r + k)] = static_cast<float>(acc);
            }
        }
        out.factors[name] = std::move(fg);
    }
    return {loss, std::move(out)};
}

} // namespace spunge
