#pragma once

#include "spunge/param_set.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace spunge {

using json = nlohmann::json;

// Single-file container: one line of UTF-8 JSON manifest, '\n', then the raw
// little-endian float32 payload. Entry offsets are relative to the start of
// the payload. `extra` lets callers stash extension fields in the manifest
// root (model specs, task-vector fingerprints) without a second format.
inline void save_params(const ParamSet & ps, const std::filesystem::path & path, const json & extra = json::object()) {
    json manifest = extra;
    manifest["format_version"] = 1;
    json entries = json::array();
    uint64_t offset = 0;
    for (const ParamEntry & e : ps.entries()) {
        uint64_t len = static_cast<uint64_t>(e.data.size()) * sizeof(float);
        entries.push_back({
            {"name", e.name},
            {"shape", e.shape},
            {"byte_offset", offset},
            {"byte_length", len},
        });
        offset += len;
    }
    manifest["entries"] = std::move(entries);
    manifest["payload_checksum"] = checksum(ps);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw Error(ErrorCode::io, "cannot open for writing: " + path.string());
    }
    f << manifest.dump() << '\n';
    for (const ParamEntry & e : ps.entries()) {
        f.write(reinterpret_cast<const char *>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!f) {
        throw Error(ErrorCode::io, "write failed: " + path.string());
    }
}

struct LoadedParams {
    ParamSet params;
    json manifest;
};

inline LoadedParams load_params(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error(ErrorCode::io, "cannot open: " + path.string());
    }
    std::string line;
    if (!std::getline(f, line)) {
        throw Error(ErrorCode::corrupt_manifest, "missing manifest line: " + path.string());
    }
    json manifest = json::parse(line, nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object()) {
        throw Error(ErrorCode::corrupt_manifest, "manifest is not valid JSON: " + path.string());
    }
    if (!manifest.contains("format_version") || manifest["format_version"].get<int>() != 1) {
        throw Error(ErrorCode::corrupt_manifest, "unsupported format_version: " + path.string());
    }
    if (!manifest.contains("entries") || !manifest["entries"].is_array() || !manifest.contains("payload_checksum")) {
        throw Error(ErrorCode::corrupt_manifest, "manifest missing required fields: " + path.string());
    }

    std::vector<char> payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    uint64_t want = manifest["payload_checksum"].get<uint64_t>();
    uint64_t got = fnv1a64(payload.data(), payload.size());
    if (want != got) {
        throw Error(ErrorCode::checksum_mismatch, "payload checksum mismatch: " + path.string());
    }

    std::vector<ParamEntry> entries;
    uint64_t prev_end = 0;
    for (const json & je : manifest["entries"]) {
        if (!je.contains("name") || !je.contains("shape") || !je.contains("byte_offset") || !je.contains("byte_length")) {
            throw Error(ErrorCode::corrupt_manifest, "manifest entry missing fields: " + path.string());
        }
        ParamEntry e;
        e.name = je["name"].get<std::string>();
        e.shape = je["shape"].get<std::vector<int64_t>>();
        uint64_t off = je["byte_offset"].get<uint64_t>();
        uint64_t len = je["byte_length"].get<uint64_t>();
        if (off < prev_end || off + len > payload.size() || len % sizeof(float) != 0) {
            throw Error(ErrorCode::corrupt_manifest, "bad entry offsets for '" + e.name + "': " + path.string());
        }
        prev_end = off + len;
        if (static_cast<uint64_t>(e.numel()) * sizeof(float) != len) {
            throw Error(ErrorCode::shape_mismatch,
                        "entry '" + e.name + "' shape disagrees with byte_length: " + path.string());
        }
        e.data.resize(len / sizeof(float));
        std::memcpy(e.data.data(), payload.data() + off, len);
        entries.push_back(std::move(e));
    }

    LoadedParams out;
    try {
        out.params = ParamSet::from_entries(std::move(entries));
    } catch (const Error & err) {
        throw Error(ErrorCode::corrupt_manifest, std::string("invalid entry set: ") + err.what());
    }
    out.manifest = std::move(manifest);
    return out;
}

} // namespace spunge
