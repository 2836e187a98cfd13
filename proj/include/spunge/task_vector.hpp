#pragma once

#include "spunge/container.hpp"
#include "spunge/param_set.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spunge {

// Low-rank factor pair for one adapted matrix entry: delta = B (out x r) * A (r x in).
struct LowRankFactors {
    std::vector<int64_t> a_shape; // r x in
    std::vector<float> a;
    std::vector<int64_t> b_shape; // out x r
    std::vector<float> b;

    int64_t rank() const { return a_shape.empty() ? 0 : a_shape[0]; }
};

struct RankInfo {
    int64_t rank = 0;
    std::vector<int64_t> a_shape;
    std::vector<int64_t> b_shape;
};

// The delta between a fine-tuned model and the base it came from. The
// fingerprint pins the base: applying a task vector to any other parameter
// set is a hard error, not a silent wrong answer.
struct TaskVector {
    uint64_t base_fingerprint = 0;
    ParamSet delta;
    std::map<std::string, RankInfo> rank_info; // present when the delta was expanded from factors
};

struct NegationSpec {
    double lambda = 1.0; // >= 0
};

inline TaskVector task_vector(const ParamSet & theta_init, const ParamSet & theta_ft) {
    require_same_layout(theta_init, theta_ft, "task_vector");
    TaskVector tv;
    tv.base_fingerprint = checksum(theta_init);
    tv.delta = axpy(-1.0, theta_init, theta_ft);
    return tv;
}

// theta_init - lambda * tau.delta
inline ParamSet apply_negation(const ParamSet & theta_init, const TaskVector & tau, const NegationSpec & spec = {}) {
    if (spec.lambda < 0.0) {
        throw Error(ErrorCode::bad_argument, "negation lambda must be >= 0");
    }
    if (tau.base_fingerprint != checksum(theta_init)) {
        throw Error(ErrorCode::fingerprint_mismatch,
                    "task vector was computed against a different base model");
    }
    return axpy(-spec.lambda, tau.delta, theta_init);
}

// Expand per-entry low-rank factors into a dense task vector over `base`'s
// layout. Entries without factors get zero deltas. Merging then treats
// adapter-trained and fully fine-tuned deltas uniformly.
inline TaskVector expand_low_rank(const ParamSet & base, const std::map<std::string, LowRankFactors> & factors) {
    std::vector<ParamEntry> out;
    out.reserve(base.size());
    TaskVector tv;
    tv.base_fingerprint = checksum(base);
    for (const ParamEntry & be : base.entries()) {
        ParamEntry e;
        e.name = be.name;
        e.shape = be.shape;
        auto it = factors.find(be.name);
        if (it == factors.end()) {
            e.data.assign(be.data.size(), 0.0f);
        } else {
            const LowRankFactors & f = it->second;
            if (be.shape.size() != 2 || f.a_shape.size() != 2 || f.b_shape.size() != 2) {
                throw Error(ErrorCode::shape_mismatch, "low-rank expansion needs matrix shapes for '" + be.name + "'");
            }
            int64_t out_dim = be.shape[0], in_dim = be.shape[1];
            int64_t r = f.a_shape[0];
            if (r < 1 || f.a_shape[1] != in_dim || f.b_shape[0] != out_dim || f.b_shape[1] != r ||
                static_cast<int64_t>(f.a.size()) != r * in_dim || static_cast<int64_t>(f.b.size()) != out_dim * r) {
                throw Error(ErrorCode::shape_mismatch, "factor shapes inconsistent with base entry '" + be.name + "'");
            }
            e.data.assign(static_cast<size_t>(out_dim * in_dim), 0.0f);
            for (int64_t i = 0; i < out_dim; ++i) {
                for (int64_t j = 0; j < in_dim; ++j) {
                    double acc = 0.0;
                    for (int64_t k = 0; k < r; ++k) {
                        acc += static_cast<double>(f.b[i * r + k]) * static_cast<double>(f.a[k * in_dim + j]);
                    }
                    e.data[static_cast<size_t>(i * in_dim + j)] = static_cast<float>(acc);
                }
            }
            tv.rank_info[be.name] = RankInfo{r, f.a_shape, f.b_shape};
        }
        out.push_back(std::move(e));
    }
    for (const auto & [name, f] : factors) {
        if (base.find(name) == nullptr) {
            throw Error(ErrorCode::name_mismatch, "factors given for unknown base entry '" + name + "'");
        }
    }
    tv.delta = ParamSet::from_entries(std::move(out));
    return tv;
}

inline void save_task_vector(const TaskVector & tv, const std::filesystem::path & path) {
    json extra;
    extra["kind"] = "task_vector";
    extra["base_fingerprint"] = tv.base_fingerprint;
    json ri = json::object();
    for (const auto & [name, info] : tv.rank_info) {
        ri[name] = {{"rank", info.rank}, {"a_shape", info.a_shape}, {"b_shape", info.b_shape}};
    }
    extra["rank_info"] = std::move(ri);
    save_params(tv.delta, path, extra);
}

inline TaskVector load_task_vector(const std::filesystem::path & path) {
    LoadedParams lp = load_params(path);
    if (!lp.manifest.contains("kind") || lp.manifest["kind"] != "task_vector" ||
        !lp.manifest.contains("base_fingerprint")) {
        throw Error(ErrorCode::corrupt_manifest, "not a task vector container: " + path.string());
    }
    TaskVector tv;
    tv.base_fingerprint = lp.manifest["base_fingerprint"].get<uint64_t>();
    tv.delta = std::move(lp.params);
    if (lp.manifest.contains("rank_info")) {
        for (const auto & [name, j] : lp.manifest["rank_info"].items()) {
            RankInfo info;
            info.rank = j["rank"].get<int64_t>();
            info.a_shape = j["a_shape"].get<std::vector<int64_t>>();
            info.b_shape = j["b_shape"].get<std::vector<int64_t>>();
            tv.rank_info[name] = std::move(info);
        }
    }
    return tv;
}

} // namespace spunge
