#pragma once

#include "spunge/common.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace spunge {

struct Sample {
    std::vector<int32_t> tokens;
    std::string attribute;
    int level = 1; // 1..5 severity
    bool is_harmful = false;

    bool operator==(const Sample &) const = default;
};

// Synthetic attribute-structured behavior corpus. The vocabulary is laid out
// as n attribute markers, then n disjoint harmful token sets, then benign
// tokens. Benign text walks a fixed successor cycle (so next-token prediction
// is learnable to high accuracy); a harmful continuation after a marker walks
// that attribute's harmful token cycle instead. Severity is the number of
// harmful tokens in the sample, clamped to 1..5, which gives the level
// threshold rule something real to filter on.
struct CorpusSpec {
    int64_t n_attributes = 5;
    int64_t vocab_size = 64;
    int64_t harmful_tokens_per_attribute = 3;
    int64_t train_sequences = 4000;
    int64_t forget_sequences = 1000;
    int64_t eval_benign_sequences = 256;
    int64_t eval_context_sequences = 250;
    double harmful_probability = 0.5;  // p_h: probability a generated sample is harmful
    double harmful_token_density = 0.6; // within a harmful continuation, per-token harmful probability
    int64_t sequence_length = 12;
    int64_t context_length = 4;  // eval contexts: benign run then a marker
    uint64_t seed = 0;
    std::vector<std::string> attribute_names; // optional; defaults to group_<i>

    static constexpr int64_t kMinBenignTokens = 8;

    void validate() const {
        if (n_attributes < 1) {
            throw Error(ErrorCode::bad_argument, "n_attributes must be >= 1");
        }
        if (!(harmful_probability > 0.0 && harmful_probability < 1.0)) {
            throw Error(ErrorCode::bad_argument, "harmful_probability must be in (0, 1)");
        }
        if (!(harmful_token_density > 0.0 && harmful_token_density <= 1.0)) {
            throw Error(ErrorCode::bad_argument, "harmful_token_density must be in (0, 1]");
        }
        if (sequence_length < 2 || context_length < 1) {
            throw Error(ErrorCode::bad_argument, "sequence_length must be >= 2 and context_length >= 1");
        }
        if (harmful_tokens_per_attribute < 1) {
            throw Error(ErrorCode::bad_argument, "harmful_tokens_per_attribute must be >= 1");
        }
        if (!attribute_names.empty() && static_cast<int64_t>(attribute_names.size()) != n_attributes) {
            throw Error(ErrorCode::bad_argument, "attribute_names length must equal n_attributes");
        }
        if (benign_count() < kMinBenignTokens) {
            throw Error(ErrorCode::vocab_too_small,
                        "vocab too small for marker/harmful layout plus " + std::to_string(kMinBenignTokens) +
                            " benign tokens");
        }
    }

    // token layout
    int32_t marker_token(int64_t a) const { return static_cast<int32_t>(a); }
    int32_t harmful_token(int64_t a, int64_t j) const {
        return static_cast<int32_t>(n_attributes + a * harmful_tokens_per_attribute + j);
    }
    int64_t benign_base() const { return n_attributes * (1 + harmful_tokens_per_attribute); }
    int64_t benign_count() const { return vocab_size - benign_base(); }
    int32_t benign_token(int64_t j) const { return static_cast<int32_t>(benign_base() + j); }

    bool is_marker(int32_t t) const { return t >= 0 && t < n_attributes; }
    bool is_harmful_token(int32_t t) const {
        return t >= n_attributes && t < benign_base();
    }
    int64_t harmful_token_attribute(int32_t t) const {
        return (t - n_attributes) / harmful_tokens_per_attribute;
    }

    std::string attribute_name(int64_t a) const {
        if (!attribute_names.empty()) {
            return attribute_names[static_cast<size_t>(a)];
        }
        return "group_" + std::to_string(a);
    }

    int64_t attribute_index(const std::string & name) const {
        for (int64_t a = 0; a < n_attributes; ++a) {
            if (attribute_name(a) == name) {
                return a;
            }
        }
        return -1;
    }

    json to_json() const {
        json j{{"n_attributes", n_attributes},
               {"vocab_size", vocab_size},
               {"harmful_tokens_per_attribute", harmful_tokens_per_attribute},
               {"train_sequences", train_sequences},
               {"forget_sequences", forget_sequences},
               {"eval_benign_sequences", eval_benign_sequences},
               {"eval_context_sequences", eval_context_sequences},
               {"harmful_probability", harmful_probability},
               {"harmful_token_density", harmful_token_density},
               {"sequence_length", sequence_length},
               {"context_length", context_length},
               {"seed", seed}};
        if (!attribute_names.empty()) {
            j["attribute_names"] = attribute_names;
        }
        return j;
    }

    static CorpusSpec from_json(const json & j) {
        CorpusSpec s;
        s.n_attributes = j.at("n_attributes").get<int64_t>();
        s.vocab_size = j.at("vocab_size").get<int64_t>();
        s.harmful_tokens_per_attribute = j.at("harmful_tokens_per_attribute").get<int64_t>();
        s.train_sequences = j.at("train_sequences").get<int64_t>();
        s.forget_sequences = j.at("forget_sequences").get<int64_t>();
        s.eval_benign_sequences = j.at("eval_benign_sequences").get<int64_t>();
        s.eval_context_sequences = j.at("eval_context_sequences").get<int64_t>();
        s.harmful_probability = j.at("harmful_probability").get<double>();
        s.harmful_token_density = j.at("harmful_token_density").get<double>();
        s.sequence_length = j.at("sequence_length").get<int64_t>();
        s.context_length = j.at("context_length").get<int64_t>();
        s.seed = j.at("seed").get<uint64_t>();
        if (j.contains("attribute_names")) {
            s.attribute_names = j["attribute_names"].get<std::vector<std::string>>();
        }
        return s;
    }
};

struct Corpus {
    std::vector<Sample> train;
    std::vector<Sample> forget;       // harmful-only, attribute-annotated
    std::vector<Sample> eval_benign;  // pure benign cycles, no markers
    std::vector<Sample> eval_contexts; // benign run ending at an attribute marker
};

namespace detail {

// Benign text: walk the benign cycle from the given phase.
inline void append_benign_run(const CorpusSpec & spec, std::vector<int32_t> & out, int64_t count,
                              int64_t & phase) {
    for (int64_t i = 0; i < count; ++i) {
        out.push_back(spec.benign_token(phase));
        phase = (phase + 1) % spec.benign_count();
    }
}

inline Sample make_sample(const CorpusSpec & spec, Rng & rng, bool harmful) {
    Sample s;
    const int64_t len = spec.sequence_length;
    int64_t benign_phase = static_cast<int64_t>(rng.index(static_cast<size_t>(spec.benign_count())));

    if (!harmful && !rng.bernoulli(0.5)) {
        // pure benign sequence, no marker
        detail::append_benign_run(spec, rng, s.tokens, len, benign_phase);
        s.attribute = "";
        s.level = 1;
        s.is_harmful = false;
        return s;
    }

    const int64_t a = static_cast<int64_t>(rng.index(static_cast<size_t>(spec.n_attributes)));
    const int64_t prefix = static_cast<int64_t>(rng.index(4)); // 0..3 benign tokens before the marker
    detail::append_benign_run(spec, rng, s.tokens, std::min(prefix, len - 2), benign_phase);
    s.tokens.push_back(spec.marker_token(a));
    s.attribute = spec.attribute_name(a);

    int64_t harmful_count = 0;
    int64_t harmful_phase = 0;
    bool first_continuation = true;
    while (static_cast<int64_t>(s.tokens.size()) < len) {
        // harmful continuations always open with the attribute's first
        // harmful token so the marker -> harmful transition is learnable
        const bool emit_harmful = harmful && (first_continuation || rng.bernoulli(spec.harmful_token_density));
        first_continuation = false;
        if (emit_harmful) {
            s.tokens.push_back(spec.harmful_token(a, harmful_phase));
            harmful_phase = (harmful_phase + 1) % spec.harmful_tokens_per_attribute;
            ++harmful_count;
        } else {
            detail::append_benign_run(spec, rng, s.tokens, 1, benign_phase);
        }
    }
    s.is_harmful = harmful_count > 0;
    s.level = static_cast<int>(std::clamp<int64_t>(harmful_count, 1, 5));
    return s;
}

} // namespace detail

inline Corpus generate(const CorpusSpec & spec) {
    spec.validate();
    Corpus c;

    {
        Rng rng(derive_seed(spec.seed, "corpus.train"));
        c.train.reserve(static_cast<size_t>(spec.train_sequences));
        for (int64_t i = 0; i < spec.train_sequences; ++i) {
            c.train.push_back(detail::make_sample(spec, rng, rng.bernoulli(spec.harmful_probability)));
        }
    }
    {
        Rng rng(derive_seed(spec.seed, "corpus.forget"));
        c.forget.reserve(static_cast<size_t>(spec.forget_sequences));
        for (int64_t i = 0; i < spec.forget_sequences; ++i) {
            c.forget.push_back(detail::make_sample(spec, rng, true));
        }
    }
    {
        Rng rng(derive_seed(spec.seed, "corpus.eval_benign"));
        c.eval_benign.reserve(static_cast<size_t>(spec.eval_benign_sequences));
        for (int64_t i = 0; i < spec.eval_benign_sequences; ++i) {
            Sample s;
            int64_t phase = static_cast<int64_t>(rng.index(static_cast<size_t>(spec.benign_count())));
            detail::append_benign_run(spec, rng, s.tokens, spec.sequence_length, phase);
            s.attribute = "";
            s.level = 1;
            s.is_harmful = false;
            c.eval_benign.push_back(std::move(s));
        }
    }
    {
        Rng rng(derive_seed(spec.seed, "corpus.eval_contexts"));
        c.eval_contexts.reserve(static_cast<size_t>(spec.eval_context_sequences));
        for (int64_t i = 0; i < spec.eval_context_sequences; ++i) {
            Sample s;
            const int64_t a = static_cast<int64_t>(rng.index(static_cast<size_t>(spec.n_attributes)));
            int64_t phase = static_cast<int64_t>(rng.index(static_cast<size_t>(spec.benign_count())));
            detail::append_benign_run(spec, rng, s.tokens, spec.context_length - 1, phase);
            s.tokens.push_back(spec.marker_token(a));
            s.attribute = spec.attribute_name(a);
            s.level = 1;
            s.is_harmful = false;
            c.eval_contexts.push_back(std::move(s));
        }
    }
    return c;
}

inline std::string attr(const Sample & s) { return s.attribute; }

// Partition by attribute value: result[i] holds, in input order, the samples
// whose attribute equals values[i].
inline std::vector<std::vector<Sample>> split_by_attribute(const std::vector<Sample> & d,
                                                           const std::vector<std::string> & values) {
    for (size_t i = 0; i < values.size(); ++i) {
        for (size_t j = i + 1; j < values.size(); ++j) {
            if (values[i] == values[j]) {
                throw Error(ErrorCode::bad_argument, "duplicate attribute value: " + values[i]);
            }
        }
    }
    std::vector<std::vector<Sample>> out(values.size());
    for (const Sample & s : d) {
        for (size_t i = 0; i < values.size(); ++i) {
            if (s.attribute == values[i]) {
                out[i].push_back(s);
                break;
            }
        }
    }
    return out;
}

// Keep samples at or above the severity threshold; optionally append retain
// data for unlearning methods that want desirable examples mixed in.
inline std::vector<Sample> proc(const std::vector<Sample> & subset, int min_level,
                                const std::vector<Sample> * retain_augment = nullptr) {
    if (min_level < 1 || min_level > 5) {
        throw Error(ErrorCode::bad_argument, "min_level must be in 1..5");
    }
    std::vector<Sample> out;
    for (const Sample & s : subset) {
        if (s.level >= min_level) {
            out.push_back(s);
        }
    }
    if (retain_augment != nullptr) {
        out.insert(out.end(), retain_augment->begin(), retain_augment->end());
    }
    return out;
}

inline void write_jsonl(const std::vector<Sample> & samples, const std::filesystem::path & path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw Error(ErrorCode::io, "cannot open for writing: " + path.string());
    }
    for (const Sample & s : samples) {
        json j{{"tokens", s.tokens}, {"attribute", s.attribute}, {"level", s.level}, {"is_harmful", s.is_harmful}};
        f << j.dump() << '\n';
    }
    if (!f) {
        throw Error(ErrorCode::io, "write failed: " + path.string());
    }
}

inline std::vector<Sample> read_jsonl(const std::filesystem::path & path) {
    std::ifstream f(path);
    if (!f) {
        throw Error(ErrorCode::io, "cannot open: " + path.string());
    }
    std::vector<Sample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw Error(ErrorCode::corrupt_manifest,
                        "bad JSONL at " + path.string() + ":" + std::to_string(lineno));
        }
        Sample s;
        s.tokens = j.at("tokens").get<std::vector<int32_t>>();
        s.attribute = j.at("attribute").get<std::string>();
        s.level = j.at("level").get<int>();
        s.is_harmful = j.at("is_harmful").get<bool>();
        if (s.tokens.empty()) {
            throw Error(ErrorCode::corrupt_manifest,
                        "empty token list at " + path.string() + ":" + std::to_string(lineno));
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace spunge
