#pragma once

#include "spunge/common.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace spunge {

// One named tensor: row-major float32 data plus its shape.
struct ParamEntry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) {
            n *= d;
        }
        return n;
    }
};

// An immutable, name-sorted set of parameter tensors. All arithmetic on
// parameter sets goes through free functions that return new sets; nothing
// here mutates its inputs, which is what makes sharing across the parallel
// pipeline phases safe.
class ParamSet {
public:
    ParamSet() = default;

    static ParamSet from_entries(std::vector<ParamEntry> entries) {
        std::sort(entries.begin(), entries.end(),
                  [](const ParamEntry & a, const ParamEntry & b) { return a.name < b.name; });
        for (size_t i = 0; i < entries.size(); ++i) {
            const ParamEntry & e = entries[i];
            if (e.name.empty()) {
                throw Error(ErrorCode::bad_argument, "param entry with empty name");
            }
            if (i > 0 && entries[i - 1].name == e.name) {
                throw Error(ErrorCode::bad_argument, "duplicate param name: " + e.name);
            }
            if (e.shape.empty()) {
                throw Error(ErrorCode::shape_mismatch, "param entry '" + e.name + "' has empty shape");
            }
            for (int64_t d : e.shape) {
                if (d <= 0) {
                    throw Error(ErrorCode::shape_mismatch,
                                "param entry '" + e.name + "' has non-positive dimension");
                }
            }
            if (e.numel() != static_cast<int64_t>(e.data.size())) {
                throw Error(ErrorCode::shape_mismatch,
                            "param entry '" + e.name + "' shape/data length mismatch");
            }
        }
        ParamSet ps;
        ps.entries_ = std::move(entries);
        return ps;
    }

    const std::vector<ParamEntry> & entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const ParamEntry & e : entries_) {
            n += e.numel();
        }
        return n;
    }

    const ParamEntry * find(std::string_view name) const {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), name,
                                   [](const ParamEntry & e, std::string_view n) { return e.name < n; });
        if (it == entries_.end() || it->name != name) {
            return nullptr;
        }
        return &*it;
    }

    const ParamEntry & at(std::string_view name) const {
        const ParamEntry * e = find(name);
        if (e == nullptr) {
            throw Error(ErrorCode::name_mismatch, "no param entry named '" + std::string(name) + "'");
        }
        return *e;
    }

    bool same_layout(const ParamSet & other) const {
        if (entries_.size() != other.entries_.size()) {
            return false;
        }
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape) {
                return false;
            }
        }
        return true;
    }

    bool operator==(const ParamSet & other) const {
        if (!same_layout(other)) {
            return false;
        }
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].data != other.entries_[i].data) {
                return false;
            }
        }
        return true;
    }

private:
    std::vector<ParamEntry> entries_;
};

// FNV-1a over the raw little-endian float payload in entry order. Equals the
// container file's payload_checksum, so a set's fingerprint can be checked
// against a file without deserializing it.
inline uint64_t checksum(const ParamSet & ps) {
    uint64_t h = 1469598103934665603ull;
    for (const ParamEntry & e : ps.entries()) {
        h = fnv1a64(e.data.data(), e.data.size() * sizeof(float), h);
    }
    return h;
}

inline void require_same_layout(const ParamSet & x, const ParamSet & y, const char * what) {
    if (!x.same_layout(y)) {
        throw Error(ErrorCode::shape_mismatch, std::string(what) + ": name/shape mismatch between parameter sets");
    }
}

// a*x + y, elementwise. Accumulates in double, stores float32.
inline ParamSet axpy(double a, const ParamSet & x, const ParamSet & y) {
    require_same_layout(x, y, "axpy");
    std::vector<ParamEntry> out;
    out.reserve(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const ParamEntry & ex = x.entries()[i];
        const ParamEntry & ey = y.entries()[i];
        ParamEntry e;
        e.name = ex.name;
        e.shape = ex.shape;
        e.data.resize(ex.data.size());
        for (size_t j = 0; j < ex.data.size(); ++j) {
            e.data[j] = static_cast<float>(a * static_cast<double>(ex.data[j]) + static_cast<double>(ey.data[j]));
        }
        out.push_back(std::move(e));
    }
    return ParamSet::from_entries(std::move(out));
}

inline ParamSet zeros_like(const ParamSet & x) {
    std::vector<ParamEntry> out;
    out.reserve(x.size());
    for (const ParamEntry & ex : x.entries()) {
        ParamEntry e;
        e.name = ex.name;
        e.shape = ex.shape;
        e.data.assign(ex.data.size(), 0.0f);
        out.push_back(std::move(e));
    }
    return ParamSet::from_entries(std::move(out));
}

} // namespace spunge
