#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spunge {

enum class ErrorCode {
    io,
    corrupt_manifest,
    checksum_mismatch,
    shape_mismatch,
    name_mismatch,
    fingerprint_mismatch,
    bad_argument,
    empty_dataset,
    vocab_too_small,
    numeric,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string & msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

// FNV-1a, 64-bit. Used for payload checksums, base-model fingerprints and
// seed derivation; one routine so all of them agree.
inline uint64_t fnv1a64(const void * data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto * p = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// splitmix64 step. Small state, counter-friendly, identical output on every
// platform (unlike the std:: distributions).
inline uint64_t splitmix64(uint64_t & state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Named sub-seed derivation: every independent random stream in a run is
// keyed by (base_seed, label) or (base_seed, index) so that parallel
// schedules cannot change what any stream produces.
inline uint64_t derive_seed(uint64_t base, std::string_view label) {
    uint64_t h = fnv1a64(label);
    h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return splitmix64(h);
}

inline uint64_t derive_seed(uint64_t base, uint64_t index) {
    uint64_t h = base ^ (0xa0761d6478bd642full + index * 0xe7037ed1a0b428dbull);
    return splitmix64(h);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    size_t index(size_t n) { return static_cast<size_t>(next_u64() % n); }

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(T & seq) {
        if (seq.size() < 2) {
            return;
        }
        for (size_t i = seq.size() - 1; i > 0; --i) {
            size_t j = index(i + 1);
            using std::swap;
            swap(seq[i], seq[j]);
        }
    }

private:
    uint64_t state_;
};

} // namespace spunge
