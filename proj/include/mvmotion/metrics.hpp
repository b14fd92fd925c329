#pragma once

// Segmentation overlap, boundary distance, volume change, folding and
// end-point error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mvmotion/grid.hpp"
#include "mvmotion/multiview.hpp"
#include "mvmotion/rng.hpp"

namespace mvmotion {

struct DiceResult {
    double value = 0.0;
    bool both_empty = false;
};

inline DiceResult dice(const LabelVolume &a, const LabelVolume &b, std::uint8_t label) {
    require_same_dims(a, b, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a[i] == label, ib = b[i] == label;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return {1.0, true};
    return {2.0 * static_cast<double>(both) / static_cast<double>(na + nb), false};
}

/// Boundary voxel centres (6-neighbourhood, grid border counts as outside)
/// in millimetres.
inline std::vector<Vec3> boundary_points_mm(const LabelVolume &seg, std::uint8_t label) {
    const auto edge = extract_edge_map(seg, label).edge;
    const auto &d = seg.dims();
    const auto &s = seg.spacing();
    std::vector<Vec3> pts;
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x)
                if (edge(x, y, z) > 0.0) pts.push_back({x * s.sx, y * s.sy, z * s.sz});
    return pts;
}

/// For every point of `from`, the distance to the closest point of `to`.
inline std::vector<double> nearest_distances(const std::vector<Vec3> &from, const std::vector<Vec3> &to) {
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto &a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto &b : to) {
            const Vec3 r = a - b;
            best = std::min(best, dot(r, r));
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

/// Exact directed Hausdorff distance with the early-break scan: a point of
/// `from` stops scanning `to` once it is known not to raise the maximum.
inline double directed_hausdorff(std::vector<Vec3> from, const std::vector<Vec3> &to, std::uint64_t seed = 7) {
    Rng rng(seed);
    for (std::size_t i = from.size(); i > 1; --i) {
        std::swap(from[i - 1], from[rng.next_u64() % i]);
    }
    double cmax2 = 0.0;
    for (const auto &a : from) {
        double cmin2 = std::numeric_limits<double>::infinity();
        bool skip = false;
        for (const auto &b : to) {
            const Vec3 r = a - b;
            const double d2 = dot(r, r);
            if (d2 < cmax2) {
                skip = true;
                break;
            }
            cmin2 = std::min(cmin2, d2);
        }
        if (!skip && cmin2 > cmax2) cmax2 = cmin2;
    }
    return std::sqrt(cmax2);
}

/// Symmetric Hausdorff distance in mm between the label boundaries. With
/// percentile < 100 the directed distances use that percentile of the
/// nearest-point distances instead of the maximum.
inline double hausdorff_mm(const LabelVolume &a, const LabelVolume &b, std::uint8_t label, double percentile = 100.0) {
    require_same_dims(a, b, "hausdorff_mm");
    if (!(a.spacing() == b.spacing())) throw std::invalid_argument("hausdorff_mm: spacing mismatch");
    const auto pa = boundary_points_mm(a, label);
    const auto pb = boundary_points_mm(b, label);
    if (pa.empty() || pb.empty()) throw std::invalid_argument("hausdorff_mm: label set is empty");
    if (percentile >= 100.0) return std::max(directed_hausdorff(pa, pb), directed_hausdorff(pb, pa));
    if (!(percentile > 0.0)) throw std::invalid_argument("hausdorff_mm: percentile must lie in (0, 100]");
    auto pct = [percentile](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(v.size())));
        return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
    };
    return std::max(pct(nearest_distances(pa, pb)), pct(nearest_distances(pb, pa)));
}

inline std::size_t label_count(const LabelVolume &seg, std::uint8_t label) {
    return static_cast<std::size_t>(std::count(seg.data().begin(), seg.data().end(), label));
}

/// |V(reference) - V(warped)| / V(reference) * 100.
inline double volume_difference(const LabelVolume &reference, const LabelVolume &warped, std::uint8_t label) {
    const auto vr = static_cast<double>(label_count(reference, label));
    const auto vw = static_cast<double>(label_count(warped, label));
    if (vr == 0.0) throw std::invalid_argument("volume_difference: reference volume is empty");
    return std::abs(vr - vw) / vr * 100.0;
}

/// Percentage of mask voxels where det(I + grad phi) < 0.
inline double negative_jacobian_fraction(const DisplacementField &field, const LabelVolume &mask) {
    require_same_dims(field, mask, "negative_jacobian_fraction");
    const auto jac = jacobian_determinant(field);
    std::size_t n = 0, neg = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++n;
        neg += jac[i] < 0.0;
    }
    if (n == 0) throw std::invalid_argument("negative_jacobian_fraction: mask is empty");
    return 100.0 * static_cast<double>(neg) / static_cast<double>(n);
}

inline LabelVolume label_mask(const LabelVolume &seg, std::uint8_t label) {
    LabelVolume m(seg.dims(), seg.spacing());
    for (std::size_t i = 0; i < seg.size(); ++i) m[i] = seg[i] == label;
    return m;
}

struct EndPointError {
    double mean_mm = 0.0;
    Vec3 axis_mean_mm;
    double mean_voxels = 0.0;  // same norm without spacing
};

/// Mean end-point error over the mask. Axis means are mean absolute component
/// differences in mm.
inline EndPointError end_point_error(const DisplacementField &estimated, const DisplacementField &truth,
                                     const LabelVolume &mask) {
    require_same_dims(estimated, truth, "end_point_error");
    require_same_dims(estimated, mask, "end_point_error");
    const auto &s = truth.spacing();
    EndPointError e;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++n;
        const Vec3 dv = estimated[i] - truth[i];
        const Vec3 dm{dv.x * s.sx, dv.y * s.sy, dv.z * s.sz};
        e.mean_mm += norm(dm);
        e.mean_voxels += norm(dv);
        e.axis_mean_mm += Vec3{std::abs(dm.x), std::abs(dm.y), std::abs(dm.z)};
    }
    if (n == 0) throw std::invalid_argument("end_point_error: mask is empty");
    const double inv = 1.0 / static_cast<double>(n);
    e.mean_mm *= inv;
    e.mean_voxels *= inv;
    e.axis_mean_mm *= inv;
    return e;
}

}  // namespace mvmotion
