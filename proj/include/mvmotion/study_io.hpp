#pragma once

// On-disk layout of studies and field sets.
//
// study/
//   manifest.json   subject, frame count, ES index, LV axis, slice offsets,
//                   one entry per artifact with its content hash
//   config.json     phantom configuration
//   planes.json     acquisition planes
//   frames/image_TTT, label_TTT, gt_TTT, edges_TTT   (mvol pairs)
//   gt/             ground-truth field set (method "gt")
//
// fields/
//   manifest.json   method, frame count, per-frame entries, failures
//   field_TTT       backward field of frame TTT (frame 0 is implicitly zero)

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvmotion/io.hpp"
#include "mvmotion/phantom.hpp"

namespace mvmotion::io {

inline std::string frame_stem(const std::string &kind, int t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d", kind.c_str(), t);
    return buf;
}

/// Hash over the sidecar and payload of an mvol pair.
inline std::string mvol_hash(const fs::path &stem) {
    return hex64(fnv1a64(read_text(sidecar_path(stem)) + read_text(payload_path(stem))));
}

inline void check_hash(const fs::path &stem, const std::string &expected) {
    const std::string got = mvol_hash(stem);
    if (got != expected) {
        throw std::invalid_argument("content hash mismatch for " + stem.string() + ": manifest " + expected + ", file " + got);
    }
}

inline json planes_to_json(const PlaneSet &set) {
    json arr = json::array();
    for (const auto &p : set.all()) arr.push_back(plane_to_json(p));
    return arr;
}

inline PlaneSet planes_from_json(const json &j) {
    if (!j.is_array()) throw std::invalid_argument("planes file must hold a JSON array");
    PlaneSet set;
    for (const auto &e : j) {
        PlaneSpec p = plane_from_json(e);
        switch (p.kind()) {
            case ViewKind::sax: set.sax.push_back(p); break;
            case ViewKind::two_chamber: set.two_chamber = p; break;
            case ViewKind::four_chamber: set.four_chamber = p; break;
        }
    }
    if (set.sax.empty()) throw std::invalid_argument("planes file has no SAX plane");
    return set;
}

inline std::string study_subject(const PhantomConfig &c) { return "phantom-s" + std::to_string(c.seed); }

// ------------------------------------------------------------ field sets

struct FieldSet {
    std::string method;
    int frames = 0;
    std::map<int, DisplacementField> fields;  // frame -> backward field, frames >= 1
    std::vector<std::pair<int, std::string>> failures;

    /// Field of frame t; frame 0 is the zero field.
    DisplacementField at(int t, const GridDims &dims, const Spacing &spacing) const {
        if (t == 0) return DisplacementField(dims, spacing);
        auto it = fields.find(t);
        if (it == fields.end()) throw std::runtime_error("field set '" + method + "' has no field for frame " + std::to_string(t));
        return it->second;
    }
};

inline void write_field_set(const fs::path &dir, const FieldSet &set) {
    fs::create_directories(dir);
    json entries = json::array();
    for (const auto &[t, f] : set.fields) {
        const auto stem = frame_stem("field", t);
        write_field(dir / stem, f);
        entries.push_back({{"frame", t}, {"path", stem}, {"hash", mvol_hash(dir / stem)}});
    }
    json fails = json::array();
    for (const auto &[t, msg] : set.failures) fails.push_back({{"frame", t}, {"message", msg}});
    write_json(dir / "manifest.json", {{"format", "mvmotion-fields"},
                                      {"version", 1},
                                      {"method", set.method},
                                      {"frames", set.frames},
                                      {"fields", entries},
                                      {"failures", fails}});
}

inline FieldSet read_field_set(const fs::path &dir) {
    const json m = read_json(dir / "manifest.json");
    if (m.value("format", "") != "mvmotion-fields") throw std::invalid_argument(dir.string() + " is not a field set");
    FieldSet set;
    set.method = m.at("method").get<std::string>();
    set.frames = m.at("frames").get<int>();
    for (const auto &e : m.at("fields")) {
        const int t = e.at("frame").get<int>();
        if (t < 1 || t >= set.frames) throw std::invalid_argument("field set frame " + std::to_string(t) + " out of range");
        const fs::path stem = dir / e.at("path").get<std::string>();
        check_hash(stem, e.at("hash").get<std::string>());
        set.fields.emplace(t, read_field(stem));
    }
    for (const auto &e : m.at("failures")) set.failures.emplace_back(e.at("frame").get<int>(), e.at("message").get<std::string>());
    return set;
}

// ------------------------------------------------------------ studies

inline void write_study(const fs::path &dir, const PhantomStudy &st) {
    fs::create_directories(dir / "frames");
    write_json(dir / "config.json", phantom_config_to_json(st.config));
    write_json(dir / "planes.json", planes_to_json(st.planes));
    json artifacts = json::array();
    auto add = [&](int t, const std::string &kind) {
        const std::string rel = "frames/" + frame_stem(kind, t);
        artifacts.push_back({{"frame", t}, {"kind", kind}, {"path", rel}, {"hash", mvol_hash(dir / rel)}});
    };
    for (int t = 0; t < st.frames(); ++t) {
        const auto ut = static_cast<std::size_t>(t);
        write_scalar(dir / "frames" / frame_stem("image", t), st.images[ut]);
        add(t, "image");
        write_labels(dir / "frames" / frame_stem("label", t), st.labels[ut]);
        add(t, "label");
        write_field(dir / "frames" / frame_stem("gt", t), st.gt_fields[ut]);
        add(t, "gt");
        write_multi(dir / "frames" / frame_stem("edges", t),
                    {st.edges[ut][0], st.edges[ut][1], st.edges[ut][2]});
        add(t, "edges");
    }
    json offsets = json::array();
    for (const auto &[dx, dy] : st.slice_offsets_mm) offsets.push_back({dx, dy});
    const auto &c = st.config.center_mm;
    write_json(dir / "manifest.json", {{"format", "mvmotion-study"},
                                      {"version", 1},
                                      {"subject", study_subject(st.config)},
                                      {"frames", st.frames()},
                                      {"es_index", st.es_index},
                                      {"lv_axis", {{"point_mm", {c.x, c.y, c.z}}, {"direction", {0.0, 0.0, 1.0}}}},
                                      {"slice_offsets_mm", offsets},
                                      {"artifacts", artifacts}});

    FieldSet gt;
    gt.method = "gt";
    gt.frames = st.frames();
    for (int t = 1; t < st.frames(); ++t) gt.fields.emplace(t, st.gt_fields[static_cast<std::size_t>(t)]);
    write_field_set(dir / "gt", gt);
}

struct LoadedStudy {
    std::string subject;
    PhantomStudy study;
};

inline LoadedStudy load_study(const fs::path &dir) {
    const json m = read_json(dir / "manifest.json");
    if (m.value("format", "") != "mvmotion-study") throw std::invalid_argument(dir.string() + " is not a study directory");
    LoadedStudy out;
    out.subject = m.at("subject").get<std::string>();
    PhantomStudy &st = out.study;
    st.config = phantom_config_from_json(read_json(dir / "config.json"));
    const int frames = m.at("frames").get<int>();
    if (frames != st.config.frames) throw std::invalid_argument("manifest frame count disagrees with config.json");
    st.es_index = m.at("es_index").get<int>();
    st.planes = planes_from_json(read_json(dir / "planes.json"));
    st.masks = rasterize_planes(st.planes, st.config.dims, st.config.spacing);
    for (const auto &o : m.at("slice_offsets_mm")) st.slice_offsets_mm.emplace_back(o.at(0).get<double>(), o.at(1).get<double>());

    st.images.resize(static_cast<std::size_t>(frames));
    st.labels.resize(static_cast<std::size_t>(frames));
    st.gt_fields.resize(static_cast<std::size_t>(frames));
    st.edges.resize(static_cast<std::size_t>(frames));
    std::vector<int> seen(static_cast<std::size_t>(frames), 0);
    for (const auto &a : m.at("artifacts")) {
        const int t = a.at("frame").get<int>();
        if (t < 0 || t >= frames) throw std::invalid_argument("artifact frame " + std::to_string(t) + " out of range");
        const auto ut = static_cast<std::size_t>(t);
        const std::string kind = a.at("kind").get<std::string>();
        const fs::path stem = dir / a.at("path").get<std::string>();
        check_hash(stem, a.at("hash").get<std::string>());
        if (kind == "image") {
            st.images[ut] = read_scalar(stem);
        } else if (kind == "label") {
            st.labels[ut] = read_labels(stem);
        } else if (kind == "gt") {
            st.gt_fields[ut] = read_field(stem);
        } else if (kind == "edges") {
            auto e = read_multi(stem);
            st.edges[ut] = {std::move(e[0]), std::move(e[1]), std::move(e[2])};
        } else {
            throw std::invalid_argument("unknown artifact kind '" + kind + "'");
        }
        ++seen[ut];
    }
    for (int t = 0; t < frames; ++t) {
        if (seen[static_cast<std::size_t>(t)] != 4) {
            throw std::invalid_argument("frame " + std::to_string(t) + " does not list exactly 4 artifacts");
        }
        require_same_dims(st.images[static_cast<std::size_t>(t)], st.images[0], "study frame");
    }
    if (!(st.images[0].dims() == st.config.dims)) throw std::invalid_argument("study images disagree with config dims");
    return out;
}

/// LV axis stored in a study manifest.
inline std::pair<Vec3, Vec3> study_lv_axis(const fs::path &dir) {
    const json m = read_json(dir / "manifest.json");
    const auto &a = m.at("lv_axis");
    auto v = [](const json &x) { return Vec3{x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>()}; };
    return {v(a.at("point_mm")), v(a.at("direction"))};
}

}  // namespace mvmotion::io
