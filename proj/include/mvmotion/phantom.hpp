#pragma once

// Synthetic beating left ventricle with analytically known motion.
//
// Frame 0 (ED) is a thick-walled half ellipsoid: cavity inside the endocardial
// ellipsoid, myocardium between endo- and epicardium, everything above the
// basal plane (z > centre) is background. Frame t is the pull-back of frame 0
// through the inverse of a forward motion A_t, so the exact backward field is
// phi_t(p) = A_t^-1(p) - p.
//
// Two motion models are available. `linear` is A_t(q) = R_z(theta) diag(c,c,l) q
// and shrinks the myocardium along with the cavity. `shell` (the default)
// keeps the longitudinal scaling l and twist but replaces the in-plane scaling
// by a volume-preserving radial map that takes the equatorial endocardial
// radius a to c*a:
//
//     r_ed^2 = l r_t^2 + k(z) (1 - exp(-r_t^2 / w^2)),   k(z) = a(z)^2 (1 - c^2 l)
//
// where a(z) is the endocardial radius at ED height z. The map is
// orientation preserving and incompressible away from the axis (r_t >> w).

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mvmotion/grid.hpp"
#include "mvmotion/multiview.hpp"
#include "mvmotion/rng.hpp"

namespace mvmotion {

enum class MotionModel { shell, linear };

struct PhantomConfig {
    GridDims dims{64, 64, 32};
    Spacing spacing{1.25, 1.25, 2.0};
    Vec3 endo_radii{12.0, 12.0, 30.0};
    Vec3 epi_radii{20.0, 20.0, 38.0};
    Vec3 center_mm{40.0, 40.0, 54.0};
    int frames = 20;
    double radial_amplitude = 0.15;        // A
    double longitudinal_amplitude = 0.10;  // B
    double twist = 0.0;                    // radians at the apex, at peak contraction
    double noise_sigma = 0.05;
    double misalignment_mm = 0.0;
    std::uint64_t seed = 1;
    MotionModel motion = MotionModel::shell;
    std::int64_t sax_stride = 2;
    double background_intensity = 0.0;
    double myocardium_intensity = 1.0;
    double cavity_intensity = 0.5;
    double edge_width_mm = 0.6;

    void validate() const {
        auto fail = [](const std::string &field, const std::string &why) {
            throw std::invalid_argument("phantom config field '" + field + "' " + why);
        };
        try {
            validate_dims(dims);
        } catch (const std::exception &) {
            fail("dims", "must be >= 2 along every axis");
        }
        try {
            validate_spacing(spacing);
        } catch (const std::exception &) {
            fail("spacing", "must be strictly positive");
        }
        for (int a = 0; a < 3; ++a) {
            if (!(endo_radii[a] > 0.0)) fail("endo_radii", "must be strictly positive");
            if (!(epi_radii[a] > endo_radii[a])) fail("epi_radii", "must exceed endo_radii componentwise");
        }
        if (frames < 2) fail("frames", "must be >= 2");
        if (!(radial_amplitude >= 0.0 && radial_amplitude < 0.5)) fail("radial_amplitude", "must lie in [0, 0.5)");
        if (!(longitudinal_amplitude >= 0.0 && longitudinal_amplitude < 0.5)) {
            fail("longitudinal_amplitude", "must lie in [0, 0.5)");
        }
        if (!std::isfinite(twist)) fail("twist", "must be finite");
        if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
        if (!(misalignment_mm >= 0.0)) fail("misalignment_mm", "must be >= 0");
        if (sax_stride < 1) fail("sax_stride", "must be >= 1");
        if (!(edge_width_mm > 0.0)) fail("edge_width_mm", "must be > 0");
    }

    int es_index() const { return static_cast<int>(std::lround(frames / 2.0)); }
};

inline nlohmann::json phantom_config_to_json(const PhantomConfig &c) {
    auto v = [](const Vec3 &a) { return nlohmann::json::array({a.x, a.y, a.z}); };
    return {{"dims", {c.dims.w, c.dims.h, c.dims.d}},
            {"spacing", {c.spacing.sx, c.spacing.sy, c.spacing.sz}},
            {"endo_radii", v(c.endo_radii)},
            {"epi_radii", v(c.epi_radii)},
            {"center_mm", v(c.center_mm)},
            {"frames", c.frames},
            {"radial_amplitude", c.radial_amplitude},
            {"longitudinal_amplitude", c.longitudinal_amplitude},
            {"twist", c.twist},
            {"noise_sigma", c.noise_sigma},
            {"misalignment_mm", c.misalignment_mm},
            {"seed", c.seed},
            {"motion", c.motion == MotionModel::shell ? "shell" : "linear"},
            {"sax_stride", c.sax_stride},
            {"background_intensity", c.background_intensity},
            {"myocardium_intensity", c.myocardium_intensity},
            {"cavity_intensity", c.cavity_intensity},
            {"edge_width_mm", c.edge_width_mm}};
}

/// Missing keys keep their defaults; present keys are type-checked.
inline PhantomConfig phantom_config_from_json(const nlohmann::json &j) {
    PhantomConfig c;
    auto vec = [&](const char *key, Vec3 &out) {
        if (!j.contains(key)) return;
        const auto &a = j.at(key);
        if (!a.is_array() || a.size() != 3) throw std::invalid_argument(std::string("phantom config field '") + key + "' needs 3 numbers");
        out = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    };
    auto num = [&](const char *key, auto &out) {
        if (!j.contains(key)) return;
        try {
            out = j.at(key).get<std::remove_reference_t<decltype(out)>>();
        } catch (const nlohmann::json::exception &) {
            throw std::invalid_argument(std::string("phantom config field '") + key + "' has the wrong type");
        }
    };
    if (j.contains("dims")) {
        const auto &d = j.at("dims");
        if (!d.is_array() || d.size() != 3) throw std::invalid_argument("phantom config field 'dims' needs 3 integers");
        c.dims = {d[0].get<std::int64_t>(), d[1].get<std::int64_t>(), d[2].get<std::int64_t>()};
    }
    if (j.contains("spacing")) {
        Vec3 s;
        vec("spacing", s);
        c.spacing = {s.x, s.y, s.z};
    }
    vec("endo_radii", c.endo_radii);
    vec("epi_radii", c.epi_radii);
    vec("center_mm", c.center_mm);
    num("frames", c.frames);
    num("radial_amplitude", c.radial_amplitude);
    num("longitudinal_amplitude", c.longitudinal_amplitude);
    num("twist", c.twist);
    num("noise_sigma", c.noise_sigma);
    num("misalignment_mm", c.misalignment_mm);
    num("seed", c.seed);
    num("sax_stride", c.sax_stride);
    num("background_intensity", c.background_intensity);
    num("myocardium_intensity", c.myocardium_intensity);
    num("cavity_intensity", c.cavity_intensity);
    num("edge_width_mm", c.edge_width_mm);
    if (j.contains("motion")) {
        const auto m = j.at("motion").get<std::string>();
        if (m == "shell") c.motion = MotionModel::shell;
        else if (m == "linear") c.motion = MotionModel::linear;
        else throw std::invalid_argument("phantom config field 'motion' must be \"shell\" or \"linear\"");
    }
    c.validate();
    return c;
}

/// Closed-form motion of the phantom at one frame. Coordinates are mm
/// relative to the LV centre.
class PhantomMotion {
  public:
    PhantomMotion(const PhantomConfig &cfg, int t) : cfg_(cfg) {
        const double pi = std::acos(-1.0);
        const double s = std::sin(pi * t / cfg.frames);
        phase_ = s * s;
        c_ = 1.0 - cfg.radial_amplitude * phase_;
        l_ = 1.0 - cfg.longitudinal_amplitude * phase_;
        twist_ = cfg.twist * phase_;
        const double a = cfg.endo_radii.x;
        k_ = a * a * (1.0 - c_ * c_ * l_);
        w2_ = (0.3 * a) * (0.3 * a);
        zc2_ = cfg.endo_radii.z * cfg.endo_radii.z;
    }

    double phase() const { return phase_; }
    double in_plane_factor() const { return c_; }
    double longitudinal_factor() const { return l_; }

    double twist_angle(double z_ed) const { return twist_ * z_ed / cfg_.epi_radii.z; }

    /// Maps a point of frame t back to its ED position.
    Vec3 backward(const Vec3 &q) const {
        const double z0 = q.z / l_;
        const double ang = -twist_angle(z0);
        const double ca = std::cos(ang), sa = std::sin(ang);
        const double x1 = ca * q.x - sa * q.y;
        const double y1 = sa * q.x + ca * q.y;
        double scale;
        if (cfg_.motion == MotionModel::linear) {
            scale = 1.0 / c_;
        } else {
            const double rt2 = x1 * x1 + y1 * y1;
            const double k = k_at(z0);
            if (rt2 > 0.0) {
                const double r02 = l_ * rt2 + k * (1.0 - std::exp(-rt2 / w2_));
                scale = std::sqrt(r02 / rt2);
            } else {
                scale = std::sqrt(l_ + k / w2_);
            }
        }
        return {x1 * scale, y1 * scale, z0};
    }

    /// ED position to frame t (inverse of `backward`).
    Vec3 forward(const Vec3 &q0) const {
        double scale;
        if (cfg_.motion == MotionModel::linear) {
            scale = c_;
        } else {
            const double r02 = q0.x * q0.x + q0.y * q0.y;
            const double k = k_at(q0.z);
            // solve l u + k (1 - exp(-u/w2)) = r02 for u = r_t^2 (monotone in u)
            double u = r02;
            for (int it = 0; it < 100; ++it) {
                const double e = std::exp(-u / w2_);
                const double g = l_ * u + k * (1.0 - e) - r02;
                const double dg = l_ + k / w2_ * e;
                const double step = g / dg;
                u = std::max(0.0, u - step);
                if (std::abs(step) < 1e-15 * (1.0 + u)) break;
            }
            scale = r02 > 0.0 ? std::sqrt(u / r02) : 1.0 / std::sqrt(l_ + k / w2_);
        }
        const double x1 = q0.x * scale, y1 = q0.y * scale;
        const double ang = twist_angle(q0.z);
        const double ca = std::cos(ang), sa = std::sin(ang);
        return {ca * x1 - sa * y1, sa * x1 + ca * y1, l_ * q0.z};
    }

  private:
    const PhantomConfig &cfg_;
    double phase_ = 0.0, c_ = 1.0, l_ = 1.0, twist_ = 0.0, k_ = 0.0, w2_ = 1.0, zc2_ = 1.0;

    // k scaled by the squared endocardial radius at ED height z (zero below the
    // endocardial apex, where the map degenerates to incompressible shortening)
    double k_at(double z_ed) const {
        if (z_ed >= 0.0) return k_;
        return k_ * std::max(0.0, 1.0 - z_ed * z_ed / zc2_);
    }
};

/// ED anatomy evaluated at a point (mm relative to the LV centre).
inline std::uint8_t ed_label(const PhantomConfig &c, const Vec3 &q) {
    if (q.z > 0.0) return labels::background;
    auto rho2 = [&](const Vec3 &r) {
        return (q.x / r.x) * (q.x / r.x) + (q.y / r.y) * (q.y / r.y) + (q.z / r.z) * (q.z / r.z);
    };
    if (rho2(c.endo_radii) < 1.0) return labels::cavity;
    if (rho2(c.epi_radii) < 1.0) return labels::myocardium;
    return labels::background;
}

namespace detail {

/// First-order signed distance (positive inside) to an axis-aligned ellipsoid.
inline double ellipsoid_inside_distance(const Vec3 &q, const Vec3 &r) {
    const double f = (q.x / r.x) * (q.x / r.x) + (q.y / r.y) * (q.y / r.y) + (q.z / r.z) * (q.z / r.z) - 1.0;
    const Vec3 g{2.0 * q.x / (r.x * r.x), 2.0 * q.y / (r.y * r.y), 2.0 * q.z / (r.z * r.z)};
    const double gn = norm(g);
    if (gn < 1e-12) return std::min(r.x, std::min(r.y, r.z));
    return -f / gn;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Noise-free ED intensity with smooth transitions (width edge_width_mm).
inline double ed_intensity(const PhantomConfig &c, const Vec3 &q) {
    const double w = c.edge_width_mm;
    const double in_epi = detail::sigmoid(detail::ellipsoid_inside_distance(q, c.epi_radii) / w);
    const double in_endo = detail::sigmoid(detail::ellipsoid_inside_distance(q, c.endo_radii) / w);
    const double below_base = detail::sigmoid(-q.z / w);
    return c.background_intensity +
           below_base * (in_epi * (c.myocardium_intensity - c.background_intensity) +
                         in_endo * (c.cavity_intensity - c.myocardium_intensity));
}

inline Vec3 voxel_mm(const Spacing &s, std::int64_t x, std::int64_t y, std::int64_t z) {
    return {x * s.sx, y * s.sy, z * s.sz};
}

struct PhantomStudy {
    PhantomConfig config;
    std::vector<ScalarVolume> images;            // I_t^sa
    std::vector<LabelVolume> labels;             // S_t
    std::vector<DisplacementField> gt_fields;    // backward phi_t^gt, voxel units
    PlaneSet planes;
    ViewMasks masks;
    std::vector<std::array<ScalarVolume, 3>> edges;  // per frame: sax, 2ch, 4ch targets E_t^i
    std::vector<std::pair<double, double>> slice_offsets_mm;  // per z slab, from apply_misalignment
    int es_index = 0;

    int frames() const { return static_cast<int>(images.size()); }
};

/// Union of the SAX masks.
inline PlaneMask sax_union(const ViewMasks &m, const GridDims &dims, const Spacing &s) {
    PlaneMask u(dims, s);
    for (const auto &mask : m.sax)
        for (std::size_t i = 0; i < u.size(); ++i) u[i] |= mask[i];
    return u;
}

/// Per-view ground-truth 2D edge maps of the myocardium: plane mask (.) 3D
/// contour of the label volume. Views without a plane get an all-zero map.
inline std::array<ScalarVolume, 3> view_edge_maps(const LabelVolume &seg, const ViewMasks &masks) {
    const auto edge = extract_edge_map(seg, labels::myocardium).edge;
    const PlaneMask sax = sax_union(masks, seg.dims(), seg.spacing());
    std::array<ScalarVolume, 3> out{slice_volume(edge, sax), ScalarVolume(seg.dims(), seg.spacing()),
                                    ScalarVolume(seg.dims(), seg.spacing())};
    if (masks.two_chamber) out[1] = slice_volume(edge, *masks.two_chamber);
    if (masks.four_chamber) out[2] = slice_volume(edge, *masks.four_chamber);
    return out;
}

inline PhantomStudy generate(const PhantomConfig &cfg) {
    cfg.validate();
    PhantomStudy st;
    st.config = cfg;
    st.es_index = cfg.es_index();
    const auto &d = cfg.dims;
    const auto &s = cfg.spacing;
    Rng rng(cfg.seed);

    LabelVolume ed_labels(d, s);
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                ed_labels(x, y, z) = ed_label(cfg, voxel_mm(s, x, y, z) - cfg.center_mm);
            }

    st.planes = make_standard_planes(d, s, cfg.center_mm, cfg.sax_stride);
    st.masks = rasterize_planes(st.planes, d, s);

    for (int t = 0; t < cfg.frames; ++t) {
        const PhantomMotion motion(cfg, t);
        ScalarVolume img(d, s);
        DisplacementField gt(d, s);
        std::size_t i = 0;
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                    const Vec3 q = voxel_mm(s, x, y, z) - cfg.center_mm;
                    const Vec3 q0 = t == 0 ? q : motion.backward(q);
                    img[i] = ed_intensity(cfg, q0);
                    const Vec3 disp = q0 - q;
                    gt[i] = {disp.x / s.sx, disp.y / s.sy, disp.z / s.sz};
                }
        if (cfg.noise_sigma > 0.0) {
            for (double &v : img.data()) v += cfg.noise_sigma * rng.normal();
        }
        st.images.push_back(std::move(img));
        st.labels.push_back(t == 0 ? ed_labels : warp_labels(ed_labels, gt));
        st.gt_fields.push_back(std::move(gt));
        st.edges.push_back(view_edge_maps(st.labels.back(), st.masks));
    }
    return st;
}

/// Translates every SAX z-slab of every frame in-plane by a per-slice offset
/// drawn uniformly from [-m, m] mm per axis. The offset of a slice is the same
/// in all frames. Labels, ground-truth fields and edge maps are untouched.
inline PhantomStudy apply_misalignment(const PhantomStudy &study, double amplitude_mm, std::uint64_t seed) {
    if (!(amplitude_mm >= 0.0)) throw std::invalid_argument("misalignment amplitude must be >= 0");
    PhantomStudy out = study;
    const auto &d = study.config.dims;
    const auto &s = study.config.spacing;
    out.config.misalignment_mm = amplitude_mm;
    out.slice_offsets_mm.assign(static_cast<std::size_t>(d.d), {0.0, 0.0});
    if (amplitude_mm == 0.0) return out;
    Rng rng(seed);
    for (auto &off : out.slice_offsets_mm) {
        off.first = rng.uniform(-amplitude_mm, amplitude_mm);
        off.second = rng.uniform(-amplitude_mm, amplitude_mm);
    }
    for (std::size_t t = 0; t < out.images.size(); ++t) {
        const ScalarVolume &src = study.images[t];
        ScalarVolume &dst = out.images[t];
        for (std::int64_t z = 0; z < d.d; ++z) {
            const auto [dx, dy] = out.slice_offsets_mm[static_cast<std::size_t>(z)];
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x) {
                    dst(x, y, z) = sample_trilinear(src, {x - dx / s.sx, y - dy / s.sy, static_cast<double>(z)});
                }
        }
    }
    return out;
}

/// Smooth blob pair related by a known translation (voxel units): the moving
/// image sampled at p + shift equals the fixed image at p.
inline std::pair<ScalarVolume, ScalarVolume> translation_pair(const GridDims &dims, const Spacing &s, const Vec3 &shift) {
    ScalarVolume fixed(dims, s), moving(dims, s);
    const Vec3 c{(dims.w - 1) / 2.0, (dims.h - 1) / 2.0, (dims.d - 1) / 2.0};
    const Vec3 r{dims.w / 5.0, dims.h / 5.0, dims.d / 5.0};
    auto blob = [&](const Vec3 &p) {
        const Vec3 q = p - c;
        const double e = (q.x / r.x) * (q.x / r.x) + (q.y / r.y) * (q.y / r.y) + (q.z / r.z) * (q.z / r.z);
        // shell-like profile so there is texture inside the object
        return std::exp(-e) + 0.5 * std::exp(-4.0 * (std::sqrt(e) - 1.2) * (std::sqrt(e) - 1.2));
    };
    for (std::int64_t z = 0; z < dims.d; ++z)
        for (std::int64_t y = 0; y < dims.h; ++y)
            for (std::int64_t x = 0; x < dims.w; ++x) {
                const Vec3 p = voxel_point(x, y, z);
                fixed(x, y, z) = blob(p + shift);
                moving(x, y, z) = blob(p);
            }
    return {fixed, moving};
}

}  // namespace mvmotion
