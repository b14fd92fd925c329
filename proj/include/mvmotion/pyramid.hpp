#pragma once

// Integer-factor resampling between pyramid levels. A coarse voxel i covers
// fine voxels [f*i, f*i + f - 1]; its centre sits at fine coordinate
// f*i + (f-1)/2. Partial blocks at the upper border are averaged over the
// voxels that exist.

#include <algorithm>
#include <cstdint>
#include <stdexcept>

#include "mvmotion/grid.hpp"

namespace mvmotion {

inline GridDims coarse_dims(const GridDims &d, std::int64_t f) {
    auto c = [f](std::int64_t n) { return std::max<std::int64_t>(2, (n + f - 1) / f); };
    return {c(d.w), c(d.h), c(d.d)};
}

inline Spacing coarse_spacing(const Spacing &s, std::int64_t f) {
    return {s.sx * f, s.sy * f, s.sz * f};
}

namespace detail {

template <class Fn>
void for_each_block(const GridDims &fine, const GridDims &coarse, std::int64_t f, Fn &&fn) {
    for (std::int64_t z = 0; z < coarse.d; ++z)
        for (std::int64_t y = 0; y < coarse.h; ++y)
            for (std::int64_t x = 0; x < coarse.w; ++x) {
                const std::int64_t x0 = std::min(x * f, fine.w - 1), x1 = std::min(x * f + f, fine.w);
                const std::int64_t y0 = std::min(y * f, fine.h - 1), y1 = std::min(y * f + f, fine.h);
                const std::int64_t z0 = std::min(z * f, fine.d - 1), z1 = std::min(z * f + f, fine.d);
                fn(x, y, z, x0, std::max(x1, x0 + 1), y0, std::max(y1, y0 + 1), z0, std::max(z1, z0 + 1));
            }
}

}  // namespace detail

/// Box-mean downsampling.
inline ScalarVolume downsample_mean(const ScalarVolume &v, std::int64_t f) {
    if (f == 1) return v;
    const GridDims cd = coarse_dims(v.dims(), f);
    ScalarVolume out(cd, coarse_spacing(v.spacing(), f));
    detail::for_each_block(v.dims(), cd, f, [&](auto x, auto y, auto z, auto x0, auto x1, auto y0, auto y1, auto z0, auto z1) {
        double sum = 0.0;
        std::int64_t n = 0;
        for (auto k = z0; k < z1; ++k)
            for (auto j = y0; j < y1; ++j)
                for (auto i = x0; i < x1; ++i, ++n) sum += v(i, j, k);
        out(x, y, z) = sum / static_cast<double>(n);
    });
    return out;
}

/// A coarse voxel is set if any of its fine voxels is set.
inline LabelVolume downsample_any(const LabelVolume &m, std::int64_t f) {
    if (f == 1) return m;
    const GridDims cd = coarse_dims(m.dims(), f);
    LabelVolume out(cd, coarse_spacing(m.spacing(), f));
    detail::for_each_block(m.dims(), cd, f, [&](auto x, auto y, auto z, auto x0, auto x1, auto y0, auto y1, auto z0, auto z1) {
        std::uint8_t any = 0;
        for (auto k = z0; k < z1; ++k)
            for (auto j = y0; j < y1; ++j)
                for (auto i = x0; i < x1; ++i) any |= (m(i, j, k) != 0);
        out(x, y, z) = any;
    });
    return out;
}

/// Box mean of `v` restricted to the voxels where `mask` is set (0 where the
/// block holds no masked voxel). Used for plane-restricted edge targets.
inline ScalarVolume downsample_masked_mean(const ScalarVolume &v, const LabelVolume &mask, std::int64_t f) {
    if (f == 1) return v;
    const GridDims cd = coarse_dims(v.dims(), f);
    ScalarVolume out(cd, coarse_spacing(v.spacing(), f));
    detail::for_each_block(v.dims(), cd, f, [&](auto x, auto y, auto z, auto x0, auto x1, auto y0, auto y1, auto z0, auto z1) {
        double sum = 0.0;
        std::int64_t n = 0;
        for (auto k = z0; k < z1; ++k)
            for (auto j = y0; j < y1; ++j)
                for (auto i = x0; i < x1; ++i)
                    if (mask(i, j, k)) {
                        sum += v(i, j, k);
                        ++n;
                    }
        out(x, y, z) = n ? sum / static_cast<double>(n) : 0.0;
    });
    return out;
}

/// Box-mean of a field, values divided by f (coarse voxel units).
inline DisplacementField downsample_field(const DisplacementField &v, std::int64_t f) {
    if (f == 1) return v;
    const GridDims cd = coarse_dims(v.dims(), f);
    DisplacementField out(cd, coarse_spacing(v.spacing(), f));
    detail::for_each_block(v.dims(), cd, f, [&](auto x, auto y, auto z, auto x0, auto x1, auto y0, auto y1, auto z0, auto z1) {
        Vec3 sum{};
        std::int64_t n = 0;
        for (auto k = z0; k < z1; ++k)
            for (auto j = y0; j < y1; ++j)
                for (auto i = x0; i < x1; ++i, ++n) sum += v(i, j, k);
        out(x, y, z) = sum * (1.0 / (static_cast<double>(n) * static_cast<double>(f)));
    });
    return out;
}

/// Trilinear upsampling of a field by integer ratio r onto `fine` dims; the
/// displacement values are multiplied by r (voxel units change with level).
inline DisplacementField upsample_field(const DisplacementField &coarse, const GridDims &fine, const Spacing &fine_spacing,
                                        std::int64_t r) {
    if (r == 1 && coarse.dims() == fine) return coarse;
    DisplacementField out(fine, fine_spacing);
    const double off = (static_cast<double>(r) - 1.0) / 2.0;
    const double inv = 1.0 / static_cast<double>(r);
    for (std::int64_t z = 0; z < fine.d; ++z)
        for (std::int64_t y = 0; y < fine.h; ++y)
            for (std::int64_t x = 0; x < fine.w; ++x) {
                const Vec3 c{(x - off) * inv, (y - off) * inv, (z - off) * inv};
                out(x, y, z) = sample_field(coarse, c) * static_cast<double>(r);
            }
    return out;
}

}  // namespace mvmotion
