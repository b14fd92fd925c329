#pragma once

// Acquisition planes over the SAX grid: geometry, rasterized 3D masks,
// slicing of volumes onto planes and myocardial edge maps.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvmotion/grid.hpp"

namespace mvmotion {

enum class ViewKind { sax, two_chamber, four_chamber };

inline std::string view_name(ViewKind k) {
    switch (k) {
        case ViewKind::sax: return "sax";
        case ViewKind::two_chamber: return "2ch";
        case ViewKind::four_chamber: return "4ch";
    }
    return "?";
}

/// A rectangular acquisition plane in millimetre space. The voxel (i,j,k)
/// sits at (i*sx, j*sy, k*sz) mm. The extent is centred on the origin.
struct PlaneSpec {
    std::string id;  // "sax_<k>", "2ch" or "4ch"
    Vec3 origin_mm;
    Vec3 axis_u{1.0, 0.0, 0.0};
    Vec3 axis_v{0.0, 1.0, 0.0};
    double extent_u = 0.0;
    double extent_v = 0.0;

    Vec3 normal() const { return cross(axis_u, axis_v); }

    ViewKind kind() const {
        if (id == "2ch") return ViewKind::two_chamber;
        if (id == "4ch") return ViewKind::four_chamber;
        if (id.rfind("sax", 0) == 0) return ViewKind::sax;
        throw std::invalid_argument("unknown plane id '" + id + "'");
    }

    void validate() const {
        (void)kind();
        constexpr double tol = 1e-9;
        if (std::abs(norm(axis_u) - 1.0) > tol || std::abs(norm(axis_v) - 1.0) > tol ||
            std::abs(dot(axis_u, axis_v)) > tol) {
            throw std::invalid_argument("plane " + id + ": axis vectors are not orthonormal");
        }
        if (!(extent_u > 0.0) || !(extent_v > 0.0)) {
            throw std::invalid_argument("plane " + id + ": extent must be positive");
        }
    }
};

inline nlohmann::json plane_to_json(const PlaneSpec &p) {
    auto v = [](const Vec3 &a) { return nlohmann::json::array({a.x, a.y, a.z}); };
    return {{"id", p.id},
            {"origin_mm", v(p.origin_mm)},
            {"axis_u", v(p.axis_u)},
            {"axis_v", v(p.axis_v)},
            {"extent_mm", {p.extent_u, p.extent_v}}};
}

inline PlaneSpec plane_from_json(const nlohmann::json &j) {
    auto v = [](const nlohmann::json &a) {
        if (a.size() != 3) throw std::invalid_argument("plane vector needs 3 entries");
        return Vec3{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    };
    PlaneSpec p;
    p.id = j.at("id").get<std::string>();
    p.origin_mm = v(j.at("origin_mm"));
    p.axis_u = v(j.at("axis_u"));
    p.axis_v = v(j.at("axis_v"));
    const auto &e = j.at("extent_mm");
    if (e.size() != 2) throw std::invalid_argument("extent_mm needs 2 entries");
    p.extent_u = e[0].get<double>();
    p.extent_v = e[1].get<double>();
    p.validate();
    return p;
}

/// Binary mask over the SAX grid marking the voxels of one plane (M^i).
using PlaneMask = LabelVolume;

inline std::size_t mask_count(const PlaneMask &m) {
    std::size_t n = 0;
    for (auto v : m.data()) n += (v != 0);
    return n;
}

/// Half the voxel diagonal projected on the plane normal; the rasterization
/// slab is [-h, h) around the plane so exactly one voxel layer is kept even
/// when the plane runs midway between voxel centres.
inline double plane_half_thickness(const Vec3 &n, const Spacing &s) {
    return 0.5 * (std::abs(n.x) * s.sx + std::abs(n.y) * s.sy + std::abs(n.z) * s.sz);
}

inline bool voxel_on_plane(const PlaneSpec &spec, const Spacing &s, std::int64_t x, std::int64_t y, std::int64_t z) {
    const Vec3 n = spec.normal();
    const double h = plane_half_thickness(n, s);
    const Vec3 rel = Vec3{x * s.sx, y * s.sy, z * s.sz} - spec.origin_mm;
    const double dist = dot(rel, n);
    if (dist < -h || dist >= h) return false;
    return std::abs(dot(rel, spec.axis_u)) <= 0.5 * spec.extent_u &&
           std::abs(dot(rel, spec.axis_v)) <= 0.5 * spec.extent_v;
}

inline PlaneMask rasterize_plane(const PlaneSpec &spec, const GridDims &dims, const Spacing &spacing) {
    spec.validate();
    PlaneMask mask(dims, spacing);
    std::size_t hits = 0;
    for (std::int64_t z = 0; z < dims.d; ++z)
        for (std::int64_t y = 0; y < dims.h; ++y)
            for (std::int64_t x = 0; x < dims.w; ++x) {
                if (voxel_on_plane(spec, spacing, x, y, z)) {
                    mask(x, y, z) = 1;
                    ++hits;
                }
            }
    if (hits == 0) throw std::invalid_argument("plane " + spec.id + " does not intersect the grid");
    return mask;
}

/// out = vol (.) mask, zero off-plane.
inline ScalarVolume slice_volume(const ScalarVolume &vol, const PlaneMask &mask) {
    require_same_dims(vol, mask, "slice_volume");
    ScalarVolume out(vol.dims(), vol.spacing());
    for (std::size_t i = 0; i < vol.size(); ++i) out[i] = mask[i] ? vol[i] : 0.0;
    return out;
}

struct EdgeMap {
    ScalarVolume edge;
    bool label_absent = false;
};

/// Binary contour of one label: voxels with the label that have at least one
/// 6-neighbour without it. The grid border counts as "without".
inline EdgeMap extract_edge_map(const LabelVolume &seg, std::uint8_t label) {
    const auto &d = seg.dims();
    EdgeMap out{ScalarVolume(d, seg.spacing()), true};
    auto has = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        if (x < 0 || y < 0 || z < 0 || x >= d.w || y >= d.h || z >= d.d) return false;
        return seg(x, y, z) == label;
    };
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                if (seg(x, y, z) != label) continue;
                out.label_absent = false;
                const bool interior = has(x - 1, y, z) && has(x + 1, y, z) && has(x, y - 1, z) && has(x, y + 1, z) &&
                                      has(x, y, z - 1) && has(x, y, z + 1);
                if (!interior) out.edge(x, y, z) = 1.0;
            }
    return out;
}

enum class Border { zero, replicate };

inline std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double &v : k) v /= sum;
    return k;
}

/// Separable Gaussian blur of any grid whose value type supports + and
/// scalar *. sigma in voxels; sigma <= 0 returns the input unchanged.
template <class T>
Grid<T> gaussian_blur(const Grid<T> &in, double sigma, Border border = Border::zero) {
    if (!(sigma > 0.0)) return in;
    const auto kernel = gaussian_kernel(sigma);
    const auto radius = static_cast<std::int64_t>(kernel.size() / 2);
    Grid<T> cur = in;
    const auto &d = in.dims();
    for (int axis = 0; axis < 3; ++axis) {
        Grid<T> next(d, in.spacing());
        const std::int64_t n = d.extent(axis);
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x) {
                    const std::int64_t pos = axis == 0 ? x : (axis == 1 ? y : z);
                    T acc{};
                    for (std::int64_t k = -radius; k <= radius; ++k) {
                        std::int64_t q = pos + k;
                        if (q < 0 || q >= n) {
                            if (border == Border::zero) continue;
                            q = std::clamp<std::int64_t>(q, 0, n - 1);
                        }
                        const T &v = axis == 0 ? cur(q, y, z) : (axis == 1 ? cur(x, q, z) : cur(x, y, q));
                        acc = acc + v * kernel[static_cast<std::size_t>(k + radius)];
                    }
                    next(x, y, z) = acc;
                }
        cur = std::move(next);
    }
    return cur;
}

/// Soft edge map: zero-padded Gaussian blur, rescaled so that the largest
/// blurred value found on an original edge voxel becomes 1, clamped to [0,1].
inline ScalarVolume soften_edges(const ScalarVolume &edge, double sigma_blur) {
    if (sigma_blur < 0.0) throw std::invalid_argument("soften_edges: sigma must be >= 0");
    if (sigma_blur == 0.0) return edge;
    ScalarVolume out = gaussian_blur(edge, sigma_blur, Border::zero);
    double peak = 0.0;
    for (std::size_t i = 0; i < edge.size(); ++i)
        if (edge[i] > 0.0) peak = std::max(peak, out[i]);
    if (peak > 0.0) {
        for (double &v : out.data()) v = std::clamp(v / peak, 0.0, 1.0);
    }
    return out;
}

struct PlaneSet {
    std::vector<PlaneSpec> sax;  // exactly 9 for a complete set
    std::optional<PlaneSpec> two_chamber;
    std::optional<PlaneSpec> four_chamber;

    std::vector<PlaneSpec> all() const {
        std::vector<PlaneSpec> out = sax;
        if (two_chamber) out.push_back(*two_chamber);
        if (four_chamber) out.push_back(*four_chamber);
        return out;
    }
    bool has_lax() const { return two_chamber.has_value() || four_chamber.has_value(); }
};

inline constexpr int sax_plane_count = 9;

/// Rasterized masks grouped by view.
struct ViewMasks {
    std::vector<PlaneMask> sax;
    std::optional<PlaneMask> two_chamber;
    std::optional<PlaneMask> four_chamber;
};

inline ViewMasks rasterize_planes(const PlaneSet &set, const GridDims &dims, const Spacing &spacing) {
    ViewMasks m;
    for (const auto &p : set.sax) m.sax.push_back(rasterize_plane(p, dims, spacing));
    if (set.two_chamber) m.two_chamber = rasterize_plane(*set.two_chamber, dims, spacing);
    if (set.four_chamber) m.four_chamber = rasterize_plane(*set.four_chamber, dims, spacing);
    return m;
}

/// 9 SAX planes centred on the mid-slice (stride in slices), plus the 2CH
/// plane (x-z plane through the LV centre) and the 4CH plane (2CH rotated 60
/// degrees about the long axis).
inline PlaneSet make_standard_planes(const GridDims &dims, const Spacing &s, const Vec3 &lv_center_mm,
                                     std::int64_t sax_stride) {
    if (sax_stride < 1) throw std::invalid_argument("sax stride must be >= 1");
    PlaneSet set;
    const std::int64_t mid = dims.d / 2;
    const double ext_u = dims.w * s.sx, ext_v = dims.h * s.sy;
    for (int k = 0; k < sax_plane_count; ++k) {
        const std::int64_t z = mid + (k - sax_plane_count / 2) * sax_stride;
        if (z < 0 || z >= dims.d) throw std::invalid_argument("SAX planes do not fit in the grid depth");
        PlaneSpec p;
        p.id = "sax_" + std::to_string(k);
        p.origin_mm = {lv_center_mm.x, lv_center_mm.y, z * s.sz};
        p.axis_u = {1.0, 0.0, 0.0};
        p.axis_v = {0.0, 1.0, 0.0};
        p.extent_u = 2.0 * ext_u;
        p.extent_v = 2.0 * ext_v;
        set.sax.push_back(p);
    }
    const double lax_extent = 2.0 * std::sqrt(ext_u * ext_u + ext_v * ext_v + (dims.d * s.sz) * (dims.d * s.sz));
    PlaneSpec two;
    two.id = "2ch";
    two.origin_mm = lv_center_mm;
    two.axis_u = {1.0, 0.0, 0.0};
    two.axis_v = {0.0, 0.0, 1.0};
    two.extent_u = lax_extent;
    two.extent_v = lax_extent;
    set.two_chamber = two;

    const double ang = 60.0 * std::acos(-1.0) / 180.0;
    PlaneSpec four = two;
    four.id = "4ch";
    four.axis_u = {std::cos(ang), std::sin(ang), 0.0};
    set.four_chamber = four;
    return set;
}

}  // namespace mvmotion
