#pragma once

#include "spunge/loss.hpp"
#include "spunge/param_set.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace spunge {

// Bias-corrected Adam. Moments live in double keyed by entry name; the step
// counter advances once per call, whatever mix of entries gets updated.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::map<std::string, std::vector<double>> m, v;
};

namespace detail {

inline void adam_update(AdamState & st, const std::string & key, std::span<float> p, std::span<const float> g,
                        double lr) {
    std::vector<double> & m = st.m[key];
    std::vector<double> & v = st.v[key];
    if (m.empty()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
        v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] = static_cast<float>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + st.eps));
    }
}

} // namespace detail

inline ParamSet adam_step(AdamState & st, const ParamSet & params, const ParamSet & grads, double lr) {
    require_same_layout(params, grads, "adam_step");
    ++st.step;
    std::vector<ParamEntry> out(params.entries().begin(), params.entries().end());
    for (size_t i = 0; i < out.size(); ++i) {
        detail::adam_update(st, out[i].name, out[i].data, grads.entries()[i].data, lr);
    }
    return ParamSet::from_entries(std::move(out));
}

inline void adam_step(AdamState & st, AdapterState & adapter, const AdapterGrads & grads, double lr) {
    ++st.step;
    for (auto & [name, f] : adapter.factors) {
        const LowRankFactors & g = grads.factors.at(name);
        detail::adam_update(st, name + ".A", f.a, g.a, lr);
        detail::adam_update(st, name + ".B", f.b, g.b, lr);
    }
}

} // namespace spunge
