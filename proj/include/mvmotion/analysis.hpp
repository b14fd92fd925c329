#pragma once

// Clinical quantities: LV volume curve, ejection fraction, global wall
// thickness and thickening, global Lagrangian strains, field inversion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvmotion/grid.hpp"

namespace mvmotion {

/// LV long axis in mm: a point on the axis and its direction.
struct LvAxis {
    Vec3 point_mm;
    Vec3 direction{0.0, 0.0, 1.0};
};

struct VolumeCurve {
    std::vector<double> volume_ml;
    std::vector<double> normalized;  // divided by the ED (t = 0) volume
};

/// Cavity volume of S_0 warped by each frame's field.
inline VolumeCurve lv_volume_curve(const LabelVolume &ed_labels, const std::vector<DisplacementField> &fields) {
    if (fields.empty()) throw std::invalid_argument("lv_volume_curve: no frames");
    VolumeCurve c;
    const double voxel_ml = ed_labels.spacing().voxel_volume() / 1000.0;
    for (std::size_t t = 0; t < fields.size(); ++t) {
        if (!ed_labels.same_dims(fields[t]) || fields[t].size() != ed_labels.size()) {
            throw std::invalid_argument("lv_volume_curve: field for frame " + std::to_string(t) + " is missing or has wrong dims");
        }
        const LabelVolume w = warp_labels(ed_labels, fields[t]);
        std::size_t n = 0;
        for (auto v : w.data()) n += v == labels::cavity;
        c.volume_ml.push_back(static_cast<double>(n) * voxel_ml);
    }
    if (!(c.volume_ml[0] > 0.0)) throw std::invalid_argument("lv_volume_curve: ED cavity is empty");
    for (double v : c.volume_ml) c.normalized.push_back(v / c.volume_ml[0]);
    return c;
}

struct EjectionFraction {
    double ef_pct = 0.0;
    std::vector<double> per_frame_pct;  // (V_ED - V_t) / V_ED * 100
};

inline EjectionFraction ejection_fraction(const std::vector<double> &volume) {
    if (volume.empty()) throw std::invalid_argument("ejection_fraction: empty curve");
    const double ved = volume[0];
    if (!(ved > 0.0)) throw std::invalid_argument("ejection_fraction: ED volume must be > 0");
    EjectionFraction e;
    double vmin = ved;
    for (double v : volume) {
        vmin = std::min(vmin, v);
        e.per_frame_pct.push_back((ved - v) / ved * 100.0);
    }
    e.ef_pct = (ved - vmin) / ved * 100.0;
    return e;
}

struct WallThickness {
    double global_mm = 0.0;
    std::vector<std::int64_t> slices;        // z indices that contributed
    std::vector<double> slice_mm;            // mean thickness per contributing slice
    std::vector<std::int64_t> skipped;       // slices with myocardium but no closed ring
};

namespace detail {

inline double bilinear_indicator(const LabelVolume &seg, std::int64_t z, double x, double y,
                                 bool (*pred)(std::uint8_t)) {
    const auto &d = seg.dims();
    if (x < 0.0 || y < 0.0 || x > static_cast<double>(d.w - 1) || y > static_cast<double>(d.h - 1)) return 0.0;
    const AxisCell cx = axis_cell(x, d.w), cy = axis_cell(y, d.h);
    auto v = [&](std::int64_t i, std::int64_t j) { return pred(seg(i, j, z)) ? 1.0 : 0.0; };
    return (1 - cy.f) * ((1 - cx.f) * v(cx.i0, cy.i0) + cx.f * v(cx.i0 + 1, cy.i0)) +
           cy.f * ((1 - cx.f) * v(cx.i0, cy.i0 + 1) + cx.f * v(cx.i0 + 1, cy.i0 + 1));
}

inline bool is_cavity(std::uint8_t l) { return l == labels::cavity; }
inline bool is_lv(std::uint8_t l) { return l == labels::cavity || l == labels::myocardium; }

}  // namespace detail

/// Global wall thickness: 36 rays per SAX slice from the slice's cavity
/// centroid; per ray the distance between the 0.5 crossings of the bilinear
/// cavity indicator (endocardium) and LV indicator (epicardium). The LV axis
/// must run along the grid z axis.
inline WallThickness wall_thickness_global(const LabelVolume &seg, const LvAxis &axis = {}) {
    const Vec3 dir = axis.direction * (1.0 / norm(axis.direction));
    if (std::abs(std::abs(dir.z) - 1.0) > 1e-9) {
        throw std::invalid_argument("wall_thickness_global: LV axis must be parallel to the grid z axis");
    }
    const auto &d = seg.dims();
    const auto &s = seg.spacing();
    constexpr int rays = 36;
    const double step = 0.02;  // mm along the ray
    WallThickness out;
    bool any_myo = false;
    double total = 0.0;
    std::size_t total_rays = 0;
    for (std::int64_t z = 0; z < d.d; ++z) {
        double cx = 0.0, cy = 0.0;
        std::size_t ncav = 0, nmyo = 0;
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                const auto l = seg(x, y, z);
                if (l == labels::cavity) {
                    cx += static_cast<double>(x);
                    cy += static_cast<double>(y);
                    ++ncav;
                }
                nmyo += l == labels::myocardium;
            }
        if (nmyo == 0) continue;
        any_myo = true;
        if (ncav == 0) {
            out.skipped.push_back(z);
            continue;
        }
        cx /= static_cast<double>(ncav);
        cy /= static_cast<double>(ncav);
        const double max_r = std::hypot(d.w * s.sx, d.h * s.sy);
        double slice_sum = 0.0;
        bool closed = true;
        for (int k = 0; k < rays && closed; ++k) {
            const double th = 2.0 * std::numbers::pi * k / rays;
            const double ux = std::cos(th) / s.sx, uy = std::sin(th) / s.sy;  // voxels per mm
            auto crossing = [&](bool (*pred)(std::uint8_t), double from) {
                double prev = detail::bilinear_indicator(seg, z, cx + ux * from, cy + uy * from, pred);
                for (double r = from + step; r <= max_r; r += step) {
                    const double cur = detail::bilinear_indicator(seg, z, cx + ux * r, cy + uy * r, pred);
                    if (prev >= 0.5 && cur < 0.5) return r - step + step * (prev - 0.5) / (prev - cur);
                    prev = cur;
                }
                return -1.0;
            };
            const double endo = crossing(detail::is_cavity, 0.0);
            const double epi = endo < 0.0 ? -1.0 : crossing(detail::is_lv, 0.0);
            if (endo < 0.0 || epi <= endo) {
                closed = false;
                break;
            }
            slice_sum += epi - endo;
        }
        if (!closed) {
            out.skipped.push_back(z);
            continue;
        }
        out.slices.push_back(z);
        out.slice_mm.push_back(slice_sum / rays);
        total += slice_sum;
        total_rays += rays;
    }
    if (!any_myo) throw std::invalid_argument("wall_thickness_global: no myocardium present");
    if (total_rays > 0) out.global_mm = total / static_cast<double>(total_rays);
    return out;
}

inline double fractional_wall_thickening(double ed_mm, double es_mm) {
    if (!(ed_mm > 0.0)) throw std::invalid_argument("fractional_wall_thickening: ED thickness must be > 0");
    return (es_mm - ed_mm) / ed_mm * 100.0;
}

struct Strains {
    double radial = 0.0;
    double circumferential = 0.0;
    double longitudinal = 0.0;
    std::size_t voxels = 0;
};

/// Mean directional Green-Lagrange strains (percent) of a forward field over
/// the mask. Voxels lying on the axis have no radial direction and are left
/// out.
inline Strains global_strains(const DisplacementField &forward, const LabelVolume &mask, const LvAxis &axis) {
    require_same_dims(forward, mask, "global_strains");
    const double len = norm(axis.direction);
    if (!(len > 0.0)) throw std::invalid_argument("global_strains: LV axis direction is zero");
    const Vec3 el = axis.direction * (1.0 / len);
    const auto &d = forward.dims();
    const auto &s = forward.spacing();
    const double sp[3] = {s.sx, s.sy, s.sz};
    Strains out;
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                if (!mask(x, y, z)) continue;
                const Vec3 rel = Vec3{x * s.sx, y * s.sy, z * s.sz} - axis.point_mm;
                Vec3 er = rel - el * dot(rel, el);
                const double rn = norm(er);
                if (rn < 1e-9) continue;
                er *= 1.0 / rn;
                const Vec3 ec = cross(el, er);
                const Vec3 basis[3] = {er, ec, el};
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b) {
                        const double expect = a == b ? 1.0 : 0.0;
                        if (std::abs(dot(basis[a], basis[b]) - expect) > 1e-9) {
                            throw std::logic_error("global_strains: local basis is not orthonormal");
                        }
                    }
                const Mat3 gv = field_gradient(forward, x, y, z);
                Mat3 f{};
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) f[i][j] = gv[i][j] * sp[i] / sp[j] + (i == j ? 1.0 : 0.0);
                Mat3 e{};
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        double c = 0.0;
                        for (int k = 0; k < 3; ++k) c += f[k][i] * f[k][j];
                        e[i][j] = 0.5 * (c - (i == j ? 1.0 : 0.0));
                    }
                auto project = [&](const Vec3 &v) {
                    double r = 0.0;
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) r += v[i] * e[i][j] * v[j];
                    return r * 100.0;
                };
                out.radial += project(er);
                out.circumferential += project(ec);
                out.longitudinal += project(el);
                ++out.voxels;
            }
    if (out.voxels < 10) throw std::invalid_argument("global_strains: fewer than 10 usable masked voxels");
    const double inv = 1.0 / static_cast<double>(out.voxels);
    out.radial *= inv;
    out.circumferential *= inv;
    out.longitudinal *= inv;
    return out;
}

struct InversionOptions {
    int max_iterations = 50;
    double tolerance = 1e-3;  // residual |v + phi(p + v)|, voxels
    double max_step = 1.0;    // Newton step cap, voxels
    double min_nonnegative_fraction = 0.99;
};

/// Forward field v with p + v(p) + phi(p + v(p)) = p, solved per voxel by
/// damped Newton on r(v) = v + phi(p + v) from v = -phi(p), restarted from a
/// small lattice of offsets when that start stalls. With a mask the
/// Jacobian precondition and the convergence check only look at the mask
/// grown by one voxel (enough for central differences on the mask).
inline DisplacementField invert_field(const DisplacementField &backward, const LabelVolume *mask = nullptr,
                                      const InversionOptions &opt = {}) {
    const auto &d = backward.dims();
    if (mask) require_same_dims(backward, *mask, "invert_field");
    {
        const auto jac = jacobian_determinant(backward);
        std::size_t n = 0, ok = 0;
        for (std::size_t i = 0; i < jac.size(); ++i) {
            if (mask && !(*mask)[i]) continue;
            ++n;
            ok += jac[i] >= 0.0;
        }
        if (n > 0 && static_cast<double>(ok) < opt.min_nonnegative_fraction * static_cast<double>(n)) {
            throw std::invalid_argument("invert_field: Jacobian is negative on " +
                                        std::to_string(n - ok) + " of " + std::to_string(n) + " voxels");
        }
    }
    std::vector<char> active(backward.size(), mask ? 0 : 1);
    if (mask) {
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x) {
                    if (!(*mask)(x, y, z)) continue;
                    active[d.index(x, y, z)] = 1;
                    if (x > 0) active[d.index(x - 1, y, z)] = 1;
                    if (x + 1 < d.w) active[d.index(x + 1, y, z)] = 1;
                    if (y > 0) active[d.index(x, y - 1, z)] = 1;
                    if (y + 1 < d.h) active[d.index(x, y + 1, z)] = 1;
                    if (z > 0) active[d.index(x, y, z - 1)] = 1;
                    if (z + 1 < d.d) active[d.index(x, y, z + 1)] = 1;
                }
    }
    std::array<ScalarVolume, 3> comp{ScalarVolume(d, backward.spacing()), ScalarVolume(d, backward.spacing()),
                                     ScalarVolume(d, backward.spacing())};
    for (std::size_t i = 0; i < backward.size(); ++i) {
        comp[0][i] = backward[i].x;
        comp[1][i] = backward[i].y;
        comp[2][i] = backward[i].z;
    }
    DisplacementField v(d, backward.spacing());
    std::size_t failed = 0;
    double worst = 0.0;
    std::size_t i = 0;
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                const Vec3 p = voxel_point(x, y, z);
                auto residual = [&](const Vec3 &w, Mat3 *jac) {
                    const Vec3 q = p + w;
                    const auto sx = sample_trilinear_grad(comp[0], q);
                    const auto sy = sample_trilinear_grad(comp[1], q);
                    const auto sz = sample_trilinear_grad(comp[2], q);
                    if (jac) {
                        *jac = {{{1.0 + sx.grad.x, sx.grad.y, sx.grad.z},
                                 {sy.grad.x, 1.0 + sy.grad.y, sy.grad.z},
                                 {sz.grad.x, sz.grad.y, 1.0 + sz.grad.z}}};
                    }
                    return Vec3{w.x + sx.value, w.y + sy.value, w.z + sz.value};
                };
                auto solve = [&](Vec3 u) {
                    Mat3 j{};
                    Vec3 r = residual(u, &j);
                    double res = norm(r);
                    for (int it = 0; it < opt.max_iterations && res >= opt.tolerance; ++it) {
                        const double det = det3(j);
                        Vec3 step = r;  // plain fixed-point step where J is singular
                        if (std::abs(det) > 1e-8) {
                            // Cramer's rule
                            auto col = [&](int c) {
                                Mat3 m = j;
                                m[0][c] = r.x;
                                m[1][c] = r.y;
                                m[2][c] = r.z;
                                return det3(m) / det;
                            };
                            step = {col(0), col(1), col(2)};
                        }
                        const double len = norm(step);
                        if (!std::isfinite(len)) break;
                        if (len > opt.max_step) step = step * (opt.max_step / len);
                        // the map is piecewise linear, so backtrack across cell kinks
                        bool moved = false;
                        for (int k = 0; k < 30; ++k) {
                            const Vec3 trial = u - step;
                            Mat3 jt{};
                            const Vec3 rt = residual(trial, &jt);
                            if (norm(rt) < res) {
                                u = trial;
                                r = rt;
                                j = jt;
                                res = norm(rt);
                                moved = true;
                                break;
                            }
                            step = step * 0.5;
                        }
                        if (!moved) break;
                    }
                    return std::pair{u, res};
                };
                auto [u, res] = solve(backward[i] * -1.0);
                // the start can sit in the wrong basin where the field bends sharply
                for (int k = 0; k < 125 && active[i] && !(res < opt.tolerance); ++k) {
                    const Vec3 offset{k % 5 - 2.0, (k / 5) % 5 - 2.0, k / 25 - 2.0};
                    if (k == 62) continue;
                    const auto [u2, res2] = solve(backward[i] * -1.0 + offset);
                    if (res2 < res) {
                        u = u2;
                        res = res2;
                    }
                }
                v[i] = u;
                if (active[i] && !(res < opt.tolerance)) {
                    ++failed;
                    worst = std::max(worst, res);
                }
            }
    if (failed > 0) {
        throw std::runtime_error("invert_field: " + std::to_string(failed) + " voxels did not converge (worst residual " +
                                 std::to_string(worst) + " voxels)");
    }
    return v;
}

}  // namespace mvmotion
