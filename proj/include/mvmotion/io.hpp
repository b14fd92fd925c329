#pragma once

// "mvol" volume files: a JSON sidecar (<stem>.json) describing the grid and a
// raw little-endian payload (<stem>.raw), x-fastest. Three-component fields
// are stored as three full scalar sub-volumes concatenated in (dx, dy, dz)
// order. Scalars and fields are f32 on disk, labels u8.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvmotion/grid.hpp"

namespace mvmotion::io {

namespace fs = std::filesystem;
using nlohmann::json;

struct MvolHeader {
    GridDims dims;
    Spacing spacing;
    std::string dtype;  // "f32" | "u8"
    int components = 1;
};

inline json header_to_json(const MvolHeader &h) {
    return json{{"dims", {h.dims.w, h.dims.h, h.dims.d}},
                {"spacing", {h.spacing.sx, h.spacing.sy, h.spacing.sz}},
                {"dtype", h.dtype},
                {"components", h.components},
                {"order", "x-fastest"}};
}

inline MvolHeader header_from_json(const json &j) {
    MvolHeader h;
    const auto &d = j.at("dims");
    const auto &s = j.at("spacing");
    if (d.size() != 3 || s.size() != 3) throw std::invalid_argument("mvol: dims and spacing need 3 entries");
    h.dims = {d[0].get<std::int64_t>(), d[1].get<std::int64_t>(), d[2].get<std::int64_t>()};
    h.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    h.dtype = j.at("dtype").get<std::string>();
    h.components = j.at("components").get<int>();
    if (j.at("order").get<std::string>() != "x-fastest") throw std::invalid_argument("mvol: unsupported order");
    if (h.dtype != "f32" && h.dtype != "u8") throw std::invalid_argument("mvol: unsupported dtype " + h.dtype);
    if (h.components != 1 && h.components != 3) throw std::invalid_argument("mvol: components must be 1 or 3");
    validate_dims(h.dims);
    validate_spacing(h.spacing);
    return h;
}

inline std::string read_text(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path &p, const std::string &text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + p.string());
}

inline std::string dump_json(const json &j) { return j.dump(2) + "\n"; }
inline json read_json(const fs::path &p) { return json::parse(read_text(p)); }
inline void write_json(const fs::path &p, const json &j) { write_text(p, dump_json(j)); }

inline fs::path sidecar_path(const fs::path &stem) { return fs::path(stem.string() + ".json"); }
inline fs::path payload_path(const fs::path &stem) { return fs::path(stem.string() + ".raw"); }

namespace detail {

inline void append_f32(std::string &buf, double v) {
    const auto f = static_cast<float>(v);
    auto bits = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) {
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    }
    char bytes[4];
    std::memcpy(bytes, &bits, 4);
    buf.append(bytes, 4);
}

inline double read_f32(const std::string &buf, std::size_t offset) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, buf.data() + offset, 4);
    if constexpr (std::endian::native == std::endian::big) {
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    }
    return static_cast<double>(std::bit_cast<float>(bits));
}

inline void write_pair(const fs::path &stem, const MvolHeader &h, const std::string &payload) {
    write_json(sidecar_path(stem), header_to_json(h));
    write_text(payload_path(stem), payload);
}

inline std::string read_payload(const fs::path &stem, const MvolHeader &h, std::size_t bytes_per_sample) {
    std::string payload = read_text(payload_path(stem));
    const std::size_t expect = h.dims.count() * static_cast<std::size_t>(h.components) * bytes_per_sample;
    if (payload.size() != expect) {
        throw std::runtime_error("mvol payload " + payload_path(stem).string() + " has " +
                                 std::to_string(payload.size()) + " bytes, expected " + std::to_string(expect));
    }
    return payload;
}

}  // namespace detail

inline void write_scalar(const fs::path &stem, const ScalarVolume &v) {
    std::string payload;
    payload.reserve(v.size() * 4);
    for (double x : v.data()) detail::append_f32(payload, x);
    detail::write_pair(stem, {v.dims(), v.spacing(), "f32", 1}, payload);
}

inline void write_labels(const fs::path &stem, const LabelVolume &v) {
    std::string payload(v.data().begin(), v.data().end());
    detail::write_pair(stem, {v.dims(), v.spacing(), "u8", 1}, payload);
}

inline void write_field(const fs::path &stem, const DisplacementField &f) {
    std::string payload;
    payload.reserve(f.size() * 12);
    for (int c = 0; c < 3; ++c)
        for (const Vec3 &v : f.data()) detail::append_f32(payload, v[c]);
    detail::write_pair(stem, {f.dims(), f.spacing(), "f32", 3}, payload);
}

/// Several scalar volumes of identical geometry stored as one 3-component
/// mvol (used for the per-frame SAX/2CH/4CH edge maps).
inline void write_multi(const fs::path &stem, const std::vector<ScalarVolume> &vols) {
    if (vols.size() != 3) throw std::invalid_argument("write_multi expects exactly 3 volumes");
    std::string payload;
    for (const auto &v : vols) {
        require_same_dims(v, vols.front(), "write_multi");
        for (double x : v.data()) detail::append_f32(payload, x);
    }
    detail::write_pair(stem, {vols[0].dims(), vols[0].spacing(), "f32", 3}, payload);
}

inline MvolHeader read_header(const fs::path &stem) { return header_from_json(read_json(sidecar_path(stem))); }

inline ScalarVolume read_scalar(const fs::path &stem) {
    const auto h = read_header(stem);
    if (h.dtype != "f32" || h.components != 1) throw std::invalid_argument(stem.string() + ": not a scalar f32 volume");
    const auto payload = detail::read_payload(stem, h, 4);
    ScalarVolume v(h.dims, h.spacing);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = detail::read_f32(payload, 4 * i);
    return v;
}

inline LabelVolume read_labels(const fs::path &stem) {
    const auto h = read_header(stem);
    if (h.dtype != "u8" || h.components != 1) throw std::invalid_argument(stem.string() + ": not a u8 label volume");
    const auto payload = detail::read_payload(stem, h, 1);
    LabelVolume v(h.dims, h.spacing);
    std::memcpy(v.data().data(), payload.data(), payload.size());
    validate_labels(v);
    return v;
}

inline DisplacementField read_field(const fs::path &stem) {
    const auto h = read_header(stem);
    if (h.dtype != "f32" || h.components != 3) throw std::invalid_argument(stem.string() + ": not a 3-component field");
    const auto payload = detail::read_payload(stem, h, 4);
    DisplacementField f(h.dims, h.spacing);
    const std::size_t n = f.size();
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) f[i][c] = detail::read_f32(payload, 4 * (c * n + i));
    return f;
}

inline std::vector<ScalarVolume> read_multi(const fs::path &stem) {
    const auto h = read_header(stem);
    if (h.dtype != "f32" || h.components != 3) throw std::invalid_argument(stem.string() + ": not a 3-component volume");
    const auto payload = detail::read_payload(stem, h, 4);
    std::vector<ScalarVolume> out(3, ScalarVolume(h.dims, h.spacing));
    const std::size_t n = h.dims.count();
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) out[c][i] = detail::read_f32(payload, 4 * (c * n + i));
    return out;
}

/// FNV-1a, 64 bit. Used for content hashes in manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

inline std::string file_hash(const fs::path &p) { return hex64(fnv1a64(read_text(p))); }

}  // namespace mvmotion::io
