#pragma once

// Grid types and the basic voxel operations everything else is built on.
//
// Displacement convention (used everywhere in this library): fields are
// BACKWARD / pull-back fields stored in voxel units. A warped image is
//
//     out(p) = src(p + phi(p))
//
// so phi(p) points from a voxel of the target frame to the location in the
// source (ED) frame that should be sampled. Spacing is carried in the header
// and only used when converting to millimetres.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvmotion {

struct GridDims {
    std::int64_t w = 2;
    std::int64_t h = 2;
    std::int64_t d = 2;

    std::size_t count() const { return static_cast<std::size_t>(w * h * d); }
    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>(x + w * (y + h * z));
    }
    std::int64_t extent(int axis) const { return axis == 0 ? w : (axis == 1 ? h : d); }
    bool operator==(const GridDims &) const = default;
};

struct Spacing {
    double sx = 1.0;
    double sy = 1.0;
    double sz = 1.0;

    double axis(int a) const { return a == 0 ? sx : (a == 1 ? sy : sz); }
    double voxel_volume() const { return sx * sy * sz; }
    bool operator==(const Spacing &) const = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double &operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3 &o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3 &o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 &operator+=(const Vec3 &o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3 &operator-=(const Vec3 &o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3 &operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
    bool operator==(const Vec3 &) const = default;
};

inline double dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(const Vec3 &a) { return std::sqrt(dot(a, a)); }
inline Vec3 cross(const Vec3 &a, const Vec3 &b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline void validate_dims(const GridDims &dims) {
    if (dims.w < 2 || dims.h < 2 || dims.d < 2) {
        throw std::invalid_argument("grid dims must be >= 2 along every axis, got " + std::to_string(dims.w) + "x" +
                                    std::to_string(dims.h) + "x" + std::to_string(dims.d));
    }
}

inline void validate_spacing(const Spacing &s) {
    if (!(s.sx > 0.0) || !(s.sy > 0.0) || !(s.sz > 0.0)) {
        throw std::invalid_argument("voxel spacing must be strictly positive");
    }
}

/// Dense 3D grid with x-fastest storage. Used for images (double), labels
/// (uint8) and displacement fields (Vec3).
template <class T>
class Grid {
  public:
    using value_type = T;

    Grid() = default;
    Grid(GridDims dims, Spacing spacing, T fill = T{}) : dims_(dims), spacing_(spacing) {
        validate_dims(dims_);
        validate_spacing(spacing_);
        data_.assign(dims_.count(), fill);
    }

    const GridDims &dims() const { return dims_; }
    const Spacing &spacing() const { return spacing_; }
    std::size_t size() const { return data_.size(); }

    T &operator()(std::int64_t x, std::int64_t y, std::int64_t z) { return data_[dims_.index(x, y, z)]; }
    const T &operator()(std::int64_t x, std::int64_t y, std::int64_t z) const { return data_[dims_.index(x, y, z)]; }
    T &operator[](std::size_t i) { return data_[i]; }
    const T &operator[](std::size_t i) const { return data_[i]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T> &storage() { return data_; }
    const std::vector<T> &storage() const { return data_; }

    void fill(const T &v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_geometry(const Grid<T> &o) const { return dims_ == o.dims_ && data_.size() == o.data_.size(); }
    template <class U>
    bool same_dims(const Grid<U> &o) const {
        return dims_ == o.dims();
    }

    bool operator==(const Grid &) const = default;

  private:
    GridDims dims_{0, 0, 0};
    Spacing spacing_{};
    std::vector<T> data_;
};

using ScalarVolume = Grid<double>;
using LabelVolume = Grid<std::uint8_t>;
using DisplacementField = Grid<Vec3>;

namespace labels {
inline constexpr std::uint8_t background = 0;
inline constexpr std::uint8_t myocardium = 1;
inline constexpr std::uint8_t cavity = 2;
inline constexpr int count = 3;
}  // namespace labels

template <class A, class B>
void require_same_dims(const Grid<A> &a, const Grid<B> &b, const char *what) {
    if (!(a.dims() == b.dims())) {
        throw std::invalid_argument(std::string(what) + ": dimension mismatch");
    }
}

inline void validate_labels(const LabelVolume &seg) {
    for (auto v : seg.data()) {
        if (v >= labels::count) {
            throw std::invalid_argument("label volume contains label " + std::to_string(int(v)) +
                                        " outside {0,1,2}");
        }
    }
}

/// Trilinear cell lookup along one axis with clamp-to-border.
/// Returns the lower index, fractional weight and whether the coordinate was
/// clamped (derivative along the axis is then zero).
struct AxisCell {
    std::int64_t i0;
    double f;
    bool clamped;
};

inline AxisCell axis_cell(double c, std::int64_t n) {
    const double hi = static_cast<double>(n - 1);
    bool clamped = false;
    if (!(c >= 0.0)) {
        c = 0.0;
        clamped = true;
    } else if (c > hi) {
        c = hi;
        clamped = true;
    }
    auto i0 = static_cast<std::int64_t>(std::floor(c));
    if (i0 > n - 2) i0 = n - 2;
    return {i0, c - static_cast<double>(i0), clamped};
}

/// Trilinear interpolation at a continuous voxel coordinate; out-of-grid
/// coordinates are clamped to the border.
inline double sample_trilinear(const ScalarVolume &vol, const Vec3 &p) {
    const auto &d = vol.dims();
    const AxisCell cx = axis_cell(p.x, d.w);
    const AxisCell cy = axis_cell(p.y, d.h);
    const AxisCell cz = axis_cell(p.z, d.d);
    const std::size_t sy = static_cast<std::size_t>(d.w);
    const std::size_t sz = static_cast<std::size_t>(d.w * d.h);
    const std::size_t base = d.index(cx.i0, cy.i0, cz.i0);
    const double *v = vol.data().data() + base;
    const double gx = 1.0 - cx.f, gy = 1.0 - cy.f, gz = 1.0 - cz.f;
    return gz * (gy * (gx * v[0] + cx.f * v[1]) + cy.f * (gx * v[sy] + cx.f * v[sy + 1])) +
           cz.f * (gy * (gx * v[sz] + cx.f * v[sz + 1]) + cy.f * (gx * v[sz + sy] + cx.f * v[sz + sy + 1]));
}

struct SampleWithGradient {
    double value;
    Vec3 grad;  // d value / d coordinate, zero along clamped axes
};

/// Trilinear value and its exact derivative with respect to the sample
/// position (piecewise linear, taken from the cell that contains p).
inline SampleWithGradient sample_trilinear_grad(const ScalarVolume &vol, const Vec3 &p) {
    const auto &d = vol.dims();
    const AxisCell cx = axis_cell(p.x, d.w);
    const AxisCell cy = axis_cell(p.y, d.h);
    const AxisCell cz = axis_cell(p.z, d.d);
    const std::size_t sy = static_cast<std::size_t>(d.w);
    const std::size_t sz = static_cast<std::size_t>(d.w * d.h);
    const double *v = vol.data().data() + d.index(cx.i0, cy.i0, cz.i0);
    const double v000 = v[0], v100 = v[1], v010 = v[sy], v110 = v[sy + 1];
    const double v001 = v[sz], v101 = v[sz + 1], v011 = v[sz + sy], v111 = v[sz + sy + 1];
    const double fx = cx.f, fy = cy.f, fz = cz.f;
    const double gx = 1.0 - fx, gy = 1.0 - fy, gz = 1.0 - fz;

    const double c00 = gx * v000 + fx * v100, c10 = gx * v010 + fx * v110;
    const double c01 = gx * v001 + fx * v101, c11 = gx * v011 + fx * v111;
    const double c0 = gy * c00 + fy * c10, c1 = gy * c01 + fy * c11;

    SampleWithGradient out{};
    out.value = gz * c0 + fz * c1;
    if (!cx.clamped) {
        out.grad.x = gz * (gy * (v100 - v000) + fy * (v110 - v010)) + fz * (gy * (v101 - v001) + fy * (v111 - v011));
    }
    if (!cy.clamped) {
        out.grad.y = gz * (c10 - c00) + fz * (c11 - c01);
    }
    if (!cz.clamped) {
        out.grad.z = c1 - c0;
    }
    return out;
}

/// Trilinear interpolation of a vector field (clamp-to-border).
inline Vec3 sample_field(const DisplacementField &field, const Vec3 &p) {
    const auto &d = field.dims();
    const AxisCell cx = axis_cell(p.x, d.w);
    const AxisCell cy = axis_cell(p.y, d.h);
    const AxisCell cz = axis_cell(p.z, d.d);
    Vec3 out{};
    for (int k = 0; k < 2; ++k) {
        const double wz = k ? cz.f : 1.0 - cz.f;
        for (int j = 0; j < 2; ++j) {
            const double wy = j ? cy.f : 1.0 - cy.f;
            for (int i = 0; i < 2; ++i) {
                const double wx = i ? cx.f : 1.0 - cx.f;
                out += field(cx.i0 + i, cy.i0 + j, cz.i0 + k) * (wx * wy * wz);
            }
        }
    }
    return out;
}

inline Vec3 voxel_point(std::int64_t x, std::int64_t y, std::int64_t z) {
    return {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
}

inline ScalarVolume warp_scalar(const ScalarVolume &src, const DisplacementField &field) {
    require_same_dims(src, field, "warp_scalar");
    ScalarVolume out(src.dims(), src.spacing());
    const auto &d = src.dims();
    std::size_t i = 0;
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                out[i] = sample_trilinear(src, voxel_point(x, y, z) + field[i]);
            }
    return out;
}

/// Pull-back composition: (a o b)(p) = b(p) + a(p + b(p)), i.e. sampling
/// through b first and then through a.
inline DisplacementField compose(const DisplacementField &a, const DisplacementField &b) {
    require_same_dims(a, b, "compose");
    DisplacementField out(a.dims(), a.spacing());
    const auto &d = a.dims();
    std::size_t i = 0;
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                out[i] = b[i] + sample_field(a, voxel_point(x, y, z) + b[i]);
            }
    return out;
}

/// Warps labels by warping per-label one-hot channels and taking the argmax;
/// ties go to the smaller label id.
inline LabelVolume warp_labels(const LabelVolume &src, const DisplacementField &field) {
    require_same_dims(src, field, "warp_labels");
    const auto &d = src.dims();
    LabelVolume out(d, src.spacing());
    std::size_t i = 0;
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                const Vec3 p = voxel_point(x, y, z) + field[i];
                const AxisCell cx = axis_cell(p.x, d.w);
                const AxisCell cy = axis_cell(p.y, d.h);
                const AxisCell cz = axis_cell(p.z, d.d);
                std::array<std::uint8_t, 8> lab{};
                std::array<double, 8> wt{};
                int n = 0;
                for (int k = 0; k < 2; ++k) {
                    const double wz = k ? cz.f : 1.0 - cz.f;
                    for (int j = 0; j < 2; ++j) {
                        const double wy = j ? cy.f : 1.0 - cy.f;
                        for (int ii = 0; ii < 2; ++ii) {
                            const double wx = ii ? cx.f : 1.0 - cx.f;
                            const std::uint8_t l = src(cx.i0 + ii, cy.i0 + j, cz.i0 + k);
                            int slot = 0;
                            while (slot < n && lab[slot] != l) ++slot;
                            if (slot == n) {
                                lab[n] = l;
                                wt[n] = 0.0;
                                ++n;
                            }
                            wt[slot] += wx * wy * wz;
                        }
                    }
                }
                std::uint8_t best = lab[0];
                double best_w = wt[0];
                for (int s = 1; s < n; ++s) {
                    if (wt[s] > best_w || (wt[s] == best_w && lab[s] < best)) {
                        best_w = wt[s];
                        best = lab[s];
                    }
                }
                out[i] = best;
            }
    return out;
}

/// Forward differences along each axis; the difference at the last index of
/// an axis is 0.
inline std::array<ScalarVolume, 3> spatial_gradient(const ScalarVolume &vol) {
    const auto &d = vol.dims();
    std::array<ScalarVolume, 3> g{ScalarVolume(d, vol.spacing()), ScalarVolume(d, vol.spacing()),
                                  ScalarVolume(d, vol.spacing())};
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                const double v = vol(x, y, z);
                if (x + 1 < d.w) g[0](x, y, z) = vol(x + 1, y, z) - v;
                if (y + 1 < d.h) g[1](x, y, z) = vol(x, y + 1, z) - v;
                if (z + 1 < d.d) g[2](x, y, z) = vol(x, y, z + 1) - v;
            }
    return g;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

inline double det3(const Mat3 &m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

/// Displacement gradient du_i/dx_j in voxel units; central differences in the
/// interior, one-sided at the boundary.
inline Mat3 field_gradient(const DisplacementField &f, std::int64_t x, std::int64_t y, std::int64_t z) {
    const auto &d = f.dims();
    Mat3 g{};
    const std::array<std::int64_t, 3> p{x, y, z};
    for (int axis = 0; axis < 3; ++axis) {
        const std::int64_t n = d.extent(axis);
        std::array<std::int64_t, 3> lo = p, hi = p;
        double h = 2.0;
        if (p[axis] == 0) {
            hi[axis] += 1;
            h = 1.0;
        } else if (p[axis] == n - 1) {
            lo[axis] -= 1;
            h = 1.0;
        } else {
            lo[axis] -= 1;
            hi[axis] += 1;
        }
        const Vec3 diff = f(hi[0], hi[1], hi[2]) - f(lo[0], lo[1], lo[2]);
        for (int c = 0; c < 3; ++c) g[c][axis] = diff[c] / h;
    }
    return g;
}

/// det(I + grad u) of the map p -> p + phi(p), in voxel units.
inline ScalarVolume jacobian_determinant(const DisplacementField &field) {
    const auto &d = field.dims();
    validate_dims(d);
    ScalarVolume out(d, field.spacing());
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                Mat3 j = field_gradient(field, x, y, z);
                for (int k = 0; k < 3; ++k) j[k][k] += 1.0;
                out(x, y, z) = det3(j);
            }
    return out;
}

inline double min_value(const ScalarVolume &v) { return *std::min_element(v.data().begin(), v.data().end()); }
inline double max_value(const ScalarVolume &v) { return *std::max_element(v.data().begin(), v.data().end()); }

inline bool all_finite(const ScalarVolume &v) {
    return std::all_of(v.data().begin(), v.data().end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const DisplacementField &f) {
    return std::all_of(f.data().begin(), f.data().end(),
                       [](const Vec3 &v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); });
}

}  // namespace mvmotion
