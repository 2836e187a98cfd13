#pragma once

#include "spunge/task_vector.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

namespace spunge {

enum class TrimScope {
    global,    // top-k over the whole flattened vector
    per_entry, // top-k within each named entry
};

struct MergeSpec {
    double trim_fraction = 0.2; // k in (0, 1]
    double lambda = 1.0;        // > 0
    TrimScope scope = TrimScope::global;

    void validate() const {
        if (!(trim_fraction > 0.0 && trim_fraction <= 1.0)) {
            throw Error(ErrorCode::bad_argument, "trim_fraction must be in (0, 1]");
        }
        if (!(lambda > 0.0)) {
            throw Error(ErrorCode::bad_argument, "merge lambda must be > 0");
        }
    }
};

// sign with sign(0) = 0, used for both election and agreement everywhere.
inline int sign_of(double v) {
    if (v > 0.0) return 1;
    if (v < 0.0) return -1;
    return 0;
}

// Number of components kept from a d-dimensional vector at fraction k:
// ceil(k*d), with a small guard so binary representations of decimals like
// 0.2 cannot push an exact product just past the next integer.
inline int64_t trim_keep_count(double k, int64_t d) {
    int64_t m = static_cast<int64_t>(std::ceil(k * static_cast<double>(d) - 1e-9));
    return std::clamp<int64_t>(m, 0, d);
}

struct MergeTrace {
    std::vector<int64_t> kept_counts;           // per task vector (merge order): components surviving trim
    std::vector<int8_t> elected_signs;          // flat index p -> -1/0/+1
    std::vector<int32_t> agreement_set_sizes;   // flat index p -> |A^p|
    std::vector<std::vector<float>> magnitudes; // per task vector, |trimmed components|; informational
    MergeSpec spec;

    json to_json() const {
        json j;
        j["kept_counts"] = kept_counts;
        j["elected_signs"] = elected_signs;
        j["agreement_set_sizes"] = agreement_set_sizes;
        j["magnitudes"] = magnitudes;
        j["spec"] = {
            {"trim_fraction", spec.trim_fraction},
            {"lambda", spec.lambda},
            {"scope", spec.scope == TrimScope::global ? "global" : "per-entry"},
        };
        return j;
    }
};

namespace detail {

// Zero all but the m largest-magnitude components among flat indices
// [begin, end). Ties at the threshold keep the lower flat index.
template <typename Float>
inline void keep_top_m(std::vector<Float> & flat, int64_t begin, int64_t end, int64_t m) {
    int64_t d = end - begin;
    if (m >= d) {
        return;
    }
    std::vector<int64_t> idx(static_cast<size_t>(d));
    std::iota(idx.begin(), idx.end(), begin);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return std::fabs(flat[static_cast<size_t>(a)]) > std::fabs(flat[static_cast<size_t>(b)]);
    });
    for (int64_t i = m; i < d; ++i) {
        flat[static_cast<size_t>(idx[static_cast<size_t>(i)])] = Float(0);
    }
}

template <typename Float>
inline void trim_flat(std::vector<Float> & flat, const ParamSet & layout, const MergeSpec & spec) {
    int64_t d = static_cast<int64_t>(flat.size());
    if (spec.scope == TrimScope::global) {
        keep_top_m(flat, 0, d, trim_keep_count(spec.trim_fraction, d));
    } else {
        int64_t off = 0;
        for (const ParamEntry & e : layout.entries()) {
            int64_t n = e.numel();
            keep_top_m(flat, off, off + n, trim_keep_count(spec.trim_fraction, n));
            off += n;
        }
    }
}

inline int64_t total_keep_count(const ParamSet & layout, const MergeSpec & spec) {
    if (spec.scope == TrimScope::global) {
        return trim_keep_count(spec.trim_fraction, layout.total_elements());
    }
    int64_t m = 0;
    for (const ParamEntry & e : layout.entries()) {
        m += trim_keep_count(spec.trim_fraction, e.numel());
    }
    return m;
}

inline std::vector<float> flatten(const ParamSet & ps) {
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(ps.total_elements()));
    for (const ParamEntry & e : ps.entries()) {
        flat.insert(flat.end(), e.data.begin(), e.data.end());
    }
    return flat;
}

inline ParamSet unflatten(const ParamSet & layout, const std::vector<float> & flat) {
    std::vector<ParamEntry> out;
    out.reserve(layout.size());
    size_t off = 0;
    for (const ParamEntry & e : layout.entries()) {
        ParamEntry n;
        n.name = e.name;
        n.shape = e.shape;
        n.data.assign(flat.begin() + static_cast<ptrdiff_t>(off),
                      flat.begin() + static_cast<ptrdiff_t>(off + e.data.size()));
        off += e.data.size();
        out.push_back(std::move(n));
    }
    return ParamSet::from_entries(std::move(out));
}

} // namespace detail

// Sparsify a task vector to its largest-magnitude components.
inline TaskVector trim(const TaskVector & tau, const MergeSpec & spec) {
    spec.validate();
    std::vector<float> flat = detail::flatten(tau.delta);
    detail::trim_flat(flat, tau.delta, spec);
    TaskVector out;
    out.base_fingerprint = tau.base_fingerprint;
    out.delta = detail::unflatten(tau.delta, flat);
    return out;
}

// Elected sign per flat component: sign of the componentwise sum over all
// trimmed task vectors, summed in the order given.
inline std::vector<int8_t> elect_signs(const std::vector<TaskVector> & taus) {
    if (taus.empty()) {
        throw Error(ErrorCode::bad_argument, "elect_signs: no task vectors");
    }
    for (const TaskVector & t : taus) {
        if (t.base_fingerprint != taus[0].base_fingerprint) {
            throw Error(ErrorCode::fingerprint_mismatch, "elect_signs: task vectors from different bases");
        }
        require_same_layout(t.delta, taus[0].delta, "elect_signs");
    }
    size_t d = static_cast<size_t>(taus[0].delta.total_elements());
    std::vector<double> sum(d, 0.0);
    for (const TaskVector & t : taus) {
        size_t p = 0;
        for (const ParamEntry & e : t.delta.entries()) {
            for (float v : e.data) {
                sum[p++] += static_cast<double>(v);
            }
        }
    }
    std::vector<int8_t> signs(d);
    for (size_t p = 0; p < d; ++p) {
        signs[p] = static_cast<int8_t>(sign_of(sum[p]));
    }
    return signs;
}

// Per component, mean over only the task vectors whose sign matches the
// elected sign. No matching vector (including elected sign 0) gives 0.
inline TaskVector disjoint_mean(const std::vector<TaskVector> & taus, const std::vector<int8_t> & signs,
                                std::vector<int32_t> * agreement_sizes = nullptr) {
    if (taus.empty()) {
        throw Error(ErrorCode::bad_argument, "disjoint_mean: no task vectors");
    }
    size_t d = static_cast<size_t>(taus[0].delta.total_elements());
    if (signs.size() != d) {
        throw Error(ErrorCode::shape_mismatch, "disjoint_mean: sign vector length mismatch");
    }
    std::vector<std::vector<float>> flats;
    flats.reserve(taus.size());
    for (const TaskVector & t : taus) {
        flats.push_back(detail::flatten(t.delta));
    }
    std::vector<float> out(d, 0.0f);
    if (agreement_sizes != nullptr) {
        agreement_sizes->assign(d, 0);
    }
    for (size_t p = 0; p < d; ++p) {
        if (signs[p] == 0) {
            continue;
        }
        double acc = 0.0;
        int32_t count = 0;
        for (const std::vector<float> & f : flats) {
            if (sign_of(f[p]) == signs[p]) {
                acc += static_cast<double>(f[p]);
                ++count;
            }
        }
        if (count > 0) {
            out[p] = static_cast<float>(acc / count);
        }
        if (agreement_sizes != nullptr) {
            (*agreement_sizes)[p] = count;
        }
    }
    TaskVector tv;
    tv.base_fingerprint = taus[0].base_fingerprint;
    tv.delta = detail::unflatten(taus[0].delta, out);
    return tv;
}

// Full TIES merge: per model, task vector against theta_init, trim, elect an
// aggregate sign per component, disjoint-mean the agreeing components, then
// theta_init + lambda * tau_u.
//
// Task vectors are held in double precision end to end and rounded to float32
// exactly once, in the final reconstruction; with k = 1, lambda = 1 and one
// model the merge therefore reproduces that model bit for bit. Models are
// processed in ascending checksum order, so permuting the input list cannot
// change a single output bit either.
inline std::pair<ParamSet, MergeTrace> ties(const ParamSet & theta_init, const std::vector<ParamSet> & models,
                                            const MergeSpec & spec) {
    spec.validate();
    if (models.empty()) {
        throw Error(ErrorCode::bad_argument, "ties: need at least one model");
    }
    for (const ParamSet & m : models) {
        require_same_layout(m, theta_init, "ties");
    }

    std::vector<size_t> order(models.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<uint64_t> sums(models.size());
    for (size_t i = 0; i < models.size(); ++i) {
        sums[i] = checksum(models[i]);
    }
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return sums[a] < sums[b]; });

    size_t n = models.size();
    size_t d = static_cast<size_t>(theta_init.total_elements());
    std::vector<double> init_flat(d);
    {
        size_t p = 0;
        for (const ParamEntry & e : theta_init.entries()) {
            for (float v : e.data) {
                init_flat[p++] = static_cast<double>(v);
            }
        }
    }

    MergeTrace trace;
    trace.spec = spec;
    std::vector<std::vector<double>> trimmed(n);
    for (size_t i = 0; i < n; ++i) {
        const ParamSet & model = models[order[i]];
        std::vector<double> tau(d);
        size_t p = 0;
        for (const ParamEntry & e : model.entries()) {
            for (float v : e.data) {
                tau[p] = static_cast<double>(v) - init_flat[p];
                ++p;
            }
        }
        detail::trim_flat(tau, theta_init, spec);
        trace.kept_counts.push_back(detail::total_keep_count(theta_init, spec));
        std::vector<float> mags(d);
        for (size_t q = 0; q < d; ++q) {
            mags[q] = static_cast<float>(std::fabs(tau[q]));
        }
        trace.magnitudes.push_back(std::move(mags));
        trimmed[i] = std::move(tau);
    }

    trace.elected_signs.resize(d);
    trace.agreement_set_sizes.assign(d, 0);
    std::vector<float> merged_flat(d);
    for (size_t p = 0; p < d; ++p) {
        double sum = 0.0;
        for (size_t t = 0; t < n; ++t) {
            sum += trimmed[t][p];
        }
        int elected = sign_of(sum);
        trace.elected_signs[p] = static_cast<int8_t>(elected);
        double tau_u = 0.0;
        if (elected != 0) {
            double acc = 0.0;
            int32_t count = 0;
            for (size_t t = 0; t < n; ++t) {
                if (sign_of(trimmed[t][p]) == elected) {
                    acc += trimmed[t][p];
                    ++count;
                }
            }
            trace.agreement_set_sizes[p] = count;
            if (count > 0) {
                tau_u = acc / count;
            }
        }
        merged_flat[p] = static_cast<float>(init_flat[p] + spec.lambda * tau_u);
    }

    return {detail::unflatten(theta_init, merged_flat), std::move(trace)};
}

} // namespace spunge
