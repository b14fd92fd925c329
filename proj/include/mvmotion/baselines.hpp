#pragma once

// Classical single-view registration baselines: diffeomorphic demons and
// cubic B-spline free-form deformation. Both return backward fields
// (warped moving = moving(p + phi(p)) ~ fixed).

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvmotion/grid.hpp"
#include "mvmotion/multiview.hpp"
#include "mvmotion/pyramid.hpp"

namespace mvmotion {

namespace detail {

inline std::int64_t level_factor(int levels, int level) { return std::int64_t{1} << (levels - 1 - level); }

/// Central-difference gradient (one-sided at the border), voxel units.
inline std::array<ScalarVolume, 3> central_gradient(const ScalarVolume &v) {
    const auto &d = v.dims();
    std::array<ScalarVolume, 3> g{ScalarVolume(d, v.spacing()), ScalarVolume(d, v.spacing()),
                                  ScalarVolume(d, v.spacing())};
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                const std::int64_t p[3] = {x, y, z};
                for (int a = 0; a < 3; ++a) {
                    const std::int64_t n = d.extent(a);
                    const std::int64_t lo = std::max<std::int64_t>(p[a] - 1, 0), hi = std::min(p[a] + 1, n - 1);
                    auto at = [&](std::int64_t q) {
                        return a == 0 ? v(q, y, z) : (a == 1 ? v(x, q, z) : v(x, y, q));
                    };
                    g[a](x, y, z) = (at(hi) - at(lo)) / static_cast<double>(hi - lo);
                }
            }
    return g;
}

inline double mse(const ScalarVolume &a, const ScalarVolume &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = a[i] - b[i];
        s += r * r;
    }
    return s / static_cast<double>(a.size());
}

}  // namespace detail

// ---------------------------------------------------------------- demons

struct DemonsConfig {
    int levels = 3;
    std::vector<int> iterations{50, 50, 50};  // coarse to fine
    double sigma_fluid = 2.0;
    double sigma_diffusion = 1.0;
    double kappa = 1.0;
    int exp_steps = 6;

    void validate() const {
        if (levels < 1) throw std::invalid_argument("demons config 'levels' must be >= 1");
        if (iterations.size() != static_cast<std::size_t>(levels)) {
            throw std::invalid_argument("demons config 'iterations' needs one entry per level");
        }
        for (int it : iterations)
            if (it < 0) throw std::invalid_argument("demons config 'iterations' entries must be >= 0");
        if (!(sigma_fluid >= 0.0)) throw std::invalid_argument("demons config 'sigma_fluid' must be >= 0");
        if (!(sigma_diffusion >= 0.0)) throw std::invalid_argument("demons config 'sigma_diffusion' must be >= 0");
        if (!(kappa > 0.0)) throw std::invalid_argument("demons config 'kappa' must be > 0");
        if (exp_steps < 1) throw std::invalid_argument("demons config 'exp_steps' must be >= 1");
    }
};

inline nlohmann::json demons_config_to_json(const DemonsConfig &c) {
    return {{"levels", c.levels},           {"iterations", c.iterations}, {"sigma_fluid", c.sigma_fluid},
            {"sigma_diffusion", c.sigma_diffusion}, {"kappa", c.kappa},   {"exp_steps", c.exp_steps}};
}

inline DemonsConfig demons_config_from_json(const nlohmann::json &j) {
    DemonsConfig c;
    try {
        if (j.contains("levels")) c.levels = j.at("levels").get<int>();
        if (j.contains("iterations")) c.iterations = j.at("iterations").get<std::vector<int>>();
        else c.iterations.assign(static_cast<std::size_t>(std::max(c.levels, 0)), 50);
        if (j.contains("sigma_fluid")) c.sigma_fluid = j.at("sigma_fluid").get<double>();
        if (j.contains("sigma_diffusion")) c.sigma_diffusion = j.at("sigma_diffusion").get<double>();
        if (j.contains("kappa")) c.kappa = j.at("kappa").get<double>();
        if (j.contains("exp_steps")) c.exp_steps = j.at("exp_steps").get<int>();
    } catch (const nlohmann::json::exception &e) {
        throw std::invalid_argument(std::string("demons config: ") + e.what());
    }
    c.validate();
    return c;
}

/// exp(v) by scaling and squaring: phi = v / 2^K, then K self-compositions.
inline DisplacementField exponentiate(const DisplacementField &velocity, int steps) {
    if (steps < 1) throw std::invalid_argument("exponentiate: steps must be >= 1");
    DisplacementField phi = velocity;
    const double scale = std::ldexp(1.0, -steps);
    for (auto &v : phi.storage()) v *= scale;
    for (int k = 0; k < steps; ++k) phi = compose(phi, phi);
    return phi;
}

/// One demons force field for the current warped moving image.
inline DisplacementField demons_force(const ScalarVolume &fixed, const ScalarVolume &warped, double kappa) {
    const auto g = detail::central_gradient(warped);
    DisplacementField u(fixed.dims(), fixed.spacing());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double diff = fixed[i] - warped[i];
        const Vec3 grad{g[0][i], g[1][i], g[2][i]};
        const double denom = dot(grad, grad) + diff * diff / kappa;
        if (denom > 1e-12) u[i] = grad * (diff / denom);
        if (!std::isfinite(u[i].x) || !std::isfinite(u[i].y) || !std::isfinite(u[i].z)) {
            throw std::runtime_error("demons: non-finite force at voxel " + std::to_string(i));
        }
    }
    return u;
}

inline DisplacementField register_demons(const ScalarVolume &fixed, const ScalarVolume &moving,
                                         const DemonsConfig &cfg = {}) {
    cfg.validate();
    require_same_dims(fixed, moving, "register_demons");
    DisplacementField velocity;
    for (int level = 0; level < cfg.levels; ++level) {
        const std::int64_t f = detail::level_factor(cfg.levels, level);
        const ScalarVolume fx = downsample_mean(fixed, f);
        const ScalarVolume mv = downsample_mean(moving, f);
        if (level == 0) {
            velocity = DisplacementField(fx.dims(), fx.spacing());
        } else {
            velocity = upsample_field(velocity, fx.dims(), fx.spacing(), detail::level_factor(cfg.levels, level - 1) / f);
        }
        DisplacementField phi = exponentiate(velocity, cfg.exp_steps);
        for (int it = 0; it < cfg.iterations[static_cast<std::size_t>(level)]; ++it) {
            const ScalarVolume warped = warp_scalar(mv, phi);
            DisplacementField u = gaussian_blur(demons_force(fx, warped, cfg.kappa), cfg.sigma_fluid, Border::replicate);
            for (std::size_t i = 0; i < velocity.size(); ++i) velocity[i] += u[i];
            velocity = gaussian_blur(velocity, cfg.sigma_diffusion, Border::replicate);
            phi = exponentiate(velocity, cfg.exp_steps);
        }
    }
    return exponentiate(velocity, cfg.exp_steps);
}

// ---------------------------------------------------------------- FFD

namespace bspline {

/// Uniform cubic B-spline basis on [0,1): weights of knots i-1..i+2.
inline std::array<double, 4> basis(double u) {
    const double v = 1.0 - u;
    return {v * v * v / 6.0, (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0,
            (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0, u * u * u / 6.0};
}

inline std::array<double, 4> basis_d1(double u) {
    const double v = 1.0 - u;
    return {-v * v / 2.0, (3.0 * u * u - 4.0 * u) / 2.0, (-3.0 * u * u + 2.0 * u + 1.0) / 2.0, u * u / 2.0};
}

}  // namespace bspline

/// Control lattice in fine-voxel coordinates: knot k of axis a sits at
/// origin[a] + k * spacing[a]. Coefficients are displacements in fine voxels.
class BSplineLattice {
  public:
    BSplineLattice() = default;

    /// Smallest lattice with the given knot spacing that covers [0, n-1].
    BSplineLattice(const GridDims &grid, const std::array<double, 3> &spacing) : spacing_(spacing) {
        for (int a = 0; a < 3; ++a) {
            if (!(spacing[a] >= 2.0)) throw std::invalid_argument("FFD knot spacing must be >= 2 voxels");
            origin_[a] = -spacing[a];
            count_[a] = static_cast<std::int64_t>(std::floor(static_cast<double>(grid.extent(a) - 1) / spacing[a])) + 4;
        }
        coef_.assign(total(), Vec3{});
    }

    const std::array<double, 3> &spacing() const { return spacing_; }
    const std::array<double, 3> &origin() const { return origin_; }
    const std::array<std::int64_t, 3> &count() const { return count_; }
    std::size_t total() const { return static_cast<std::size_t>(count_[0] * count_[1] * count_[2]); }
    std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>(i + count_[0] * (j + count_[1] * k));
    }
    std::vector<Vec3> &coefficients() { return coef_; }
    const std::vector<Vec3> &coefficients() const { return coef_; }

    struct AxisSupport {
        std::int64_t first;  // index of the first of 4 knots
        std::array<double, 4> w;
        std::array<double, 4> dw;  // derivative with respect to the coordinate
    };

    AxisSupport support(int a, double x) const {
        const double t = (x - origin_[a]) / spacing_[a];
        auto i = static_cast<std::int64_t>(std::floor(t));
        i = std::clamp<std::int64_t>(i, 1, count_[a] - 3);
        const double u = t - static_cast<double>(i);
        AxisSupport s{i - 1, bspline::basis(u), bspline::basis_d1(u)};
        for (double &d : s.dw) d /= spacing_[a];
        return s;
    }

    /// Displacement (fine voxels) at a continuous fine-voxel coordinate.
    Vec3 evaluate(const Vec3 &p) const {
        const AxisSupport sx = support(0, p.x), sy = support(1, p.y), sz = support(2, p.z);
        Vec3 out{};
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < 4; ++b) {
                const double wyz = sy.w[b] * sz.w[c];
                for (int a = 0; a < 4; ++a) out += coef_[index(sx.first + a, sy.first + b, sz.first + c)] * (sx.w[a] * wyz);
            }
        return out;
    }

    /// Sum of basis weights at p (1 by partition of unity).
    double weight_sum(const Vec3 &p) const {
        const AxisSupport sx = support(0, p.x), sy = support(1, p.y), sz = support(2, p.z);
        double s = 0.0;
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < 4; ++b)
                for (int a = 0; a < 4; ++a) s += sx.w[a] * sy.w[b] * sz.w[c];
        return s;
    }

    /// Exact knot insertion halving the spacing on every axis.
    BSplineLattice refined() const {
        BSplineLattice out;
        for (int a = 0; a < 3; ++a) {
            out.spacing_[a] = spacing_[a] / 2.0;
            out.origin_[a] = origin_[a];
            out.count_[a] = 2 * count_[a] - 1;
        }
        out.coef_.assign(out.total(), Vec3{});
        // Separable subdivision, one axis at a time.
        std::vector<Vec3> cur = coef_;
        std::array<std::int64_t, 3> n = count_;
        for (int a = 0; a < 3; ++a) {
            std::array<std::int64_t, 3> m = n;
            m[a] = 2 * n[a] - 1;
            std::vector<Vec3> next(static_cast<std::size_t>(m[0] * m[1] * m[2]));
            auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> Vec3 {
                const std::int64_t q[3] = {i, j, k};
                if (q[a] < 0 || q[a] >= n[a]) return {};
                return cur[static_cast<std::size_t>(i + n[0] * (j + n[1] * k))];
            };
            for (std::int64_t k = 0; k < m[2]; ++k)
                for (std::int64_t j = 0; j < m[1]; ++j)
                    for (std::int64_t i = 0; i < m[0]; ++i) {
                        std::int64_t q[3] = {i, j, k};
                        const std::int64_t fine = q[a];
                        q[a] = fine / 2;
                        auto shifted = [&](std::int64_t off) {
                            std::int64_t r[3] = {q[0], q[1], q[2]};
                            r[a] += off;
                            return at(r[0], r[1], r[2]);
                        };
                        Vec3 v = fine % 2 == 0 ? (shifted(-1) + shifted(0) * 6.0 + shifted(1)) * 0.125
                                               : (shifted(0) + shifted(1)) * 0.5;
                        next[static_cast<std::size_t>(i + m[0] * (j + m[1] * k))] = v;
                    }
            cur = std::move(next);
            n = m;
        }
        out.coef_ = std::move(cur);
        return out;
    }

    /// Bending energy: mean over interior knots of the squared second
    /// derivatives (cross terms doubled) of the spline, evaluated at the knots.
    double bending_energy(std::vector<Vec3> *grad = nullptr) const {
        if (grad) grad->assign(coef_.size(), Vec3{});
        static constexpr double b0[3] = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
        static constexpr double b1[3] = {-0.5, 0.0, 0.5};
        static constexpr double b2[3] = {1.0, -2.0, 1.0};
        // derivative order per axis for the six terms and their multiplicity
        static constexpr int orders[6][3] = {{2, 0, 0}, {0, 2, 0}, {0, 0, 2}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};
        static constexpr double mult[6] = {1, 1, 1, 2, 2, 2};
        auto stencil = [&](int order, int axis, int o) {
            const double *t = order == 0 ? b0 : (order == 1 ? b1 : b2);
            const double s = spacing_[axis];
            return t[o] / (order == 0 ? 1.0 : (order == 1 ? s : s * s));
        };
        std::size_t n = 0;
        double e = 0.0;
        for (std::int64_t k = 1; k + 1 < count_[2]; ++k)
            for (std::int64_t j = 1; j + 1 < count_[1]; ++j)
                for (std::int64_t i = 1; i + 1 < count_[0]; ++i) ++n;
        if (n == 0) return 0.0;
        const double inv = 1.0 / static_cast<double>(n);
        for (std::int64_t k = 1; k + 1 < count_[2]; ++k)
            for (std::int64_t j = 1; j + 1 < count_[1]; ++j)
                for (std::int64_t i = 1; i + 1 < count_[0]; ++i) {
                    for (int term = 0; term < 6; ++term) {
                        Vec3 d{};
                        for (int c = 0; c < 3; ++c)
                            for (int b = 0; b < 3; ++b)
                                for (int a = 0; a < 3; ++a) {
                                    const double w = stencil(orders[term][0], 0, a) * stencil(orders[term][1], 1, b) *
                                                     stencil(orders[term][2], 2, c);
                                    if (w != 0.0) d += coef_[index(i - 1 + a, j - 1 + b, k - 1 + c)] * w;
                                }
                        e += mult[term] * dot(d, d) * inv;
                        if (!grad) continue;
                        for (int c = 0; c < 3; ++c)
                            for (int b = 0; b < 3; ++b)
                                for (int a = 0; a < 3; ++a) {
                                    const double w = stencil(orders[term][0], 0, a) * stencil(orders[term][1], 1, b) *
                                                     stencil(orders[term][2], 2, c);
                                    if (w != 0.0) (*grad)[index(i - 1 + a, j - 1 + b, k - 1 + c)] += d * (2.0 * mult[term] * w * inv);
                                }
                    }
                }
        return e;
    }

    bool operator==(const BSplineLattice &) const = default;

  private:
    std::array<double, 3> spacing_{};
    std::array<double, 3> origin_{};
    std::array<std::int64_t, 3> count_{};
    std::vector<Vec3> coef_;
};

struct FfdConfig {
    std::array<double, 3> knot_spacing{4.0, 4.0, 4.0};  // finest level, fine voxels
    double bending_weight = 0.01;
    int levels = 3;
    std::vector<int> iterations{40, 40, 40};  // coarse to fine

    void validate() const {
        for (double s : knot_spacing)
            if (!(s >= 2.0)) throw std::invalid_argument("FFD config 'knot_spacing' must be >= 2 voxels");
        if (!(bending_weight >= 0.0)) throw std::invalid_argument("FFD config 'bending_weight' must be >= 0");
        if (levels < 1) throw std::invalid_argument("FFD config 'levels' must be >= 1");
        if (iterations.size() != static_cast<std::size_t>(levels)) {
            throw std::invalid_argument("FFD config 'iterations' needs one entry per level");
        }
        for (int it : iterations)
            if (it < 0) throw std::invalid_argument("FFD config 'iterations' entries must be >= 0");
    }
};

inline nlohmann::json ffd_config_to_json(const FfdConfig &c) {
    return {{"knot_spacing", c.knot_spacing}, {"bending_weight", c.bending_weight}, {"levels", c.levels},
            {"iterations", c.iterations}};
}

inline FfdConfig ffd_config_from_json(const nlohmann::json &j) {
    FfdConfig c;
    try {
        if (j.contains("knot_spacing")) c.knot_spacing = j.at("knot_spacing").get<std::array<double, 3>>();
        if (j.contains("bending_weight")) c.bending_weight = j.at("bending_weight").get<double>();
        if (j.contains("levels")) c.levels = j.at("levels").get<int>();
        if (j.contains("iterations")) c.iterations = j.at("iterations").get<std::vector<int>>();
        else c.iterations.assign(static_cast<std::size_t>(std::max(c.levels, 0)), 40);
    } catch (const nlohmann::json::exception &e) {
        throw std::invalid_argument(std::string("FFD config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Dense field of a lattice on the grid of one pyramid level. The level
/// grid voxel X has fine coordinate f*X + (f-1)/2; values are returned in
/// level voxels.
inline DisplacementField lattice_field(const BSplineLattice &lat, const GridDims &dims, const Spacing &spacing,
                                       std::int64_t f) {
    DisplacementField out(dims, spacing);
    const double off = (static_cast<double>(f) - 1.0) / 2.0;
    const double inv = 1.0 / static_cast<double>(f);
    std::size_t i = 0;
    for (std::int64_t z = 0; z < dims.d; ++z)
        for (std::int64_t y = 0; y < dims.h; ++y)
            for (std::int64_t x = 0; x < dims.w; ++x, ++i) {
                const Vec3 p{static_cast<double>(f * x) + off, static_cast<double>(f * y) + off,
                             static_cast<double>(f * z) + off};
                out[i] = lat.evaluate(p) * inv;
            }
    return out;
}

struct FfdResult {
    DisplacementField field;
    BSplineLattice lattice;
};

namespace detail {

struct FfdLevel {
    const ScalarVolume &fixed;
    const ScalarVolume &moving;
    std::int64_t f;
    double bending_weight;

    double cost(const BSplineLattice &lat, std::vector<Vec3> *grad) const {
        const auto &d = fixed.dims();
        const double off = (static_cast<double>(f) - 1.0) / 2.0;
        const double inv_f = 1.0 / static_cast<double>(f);
        const double inv_n = 1.0 / static_cast<double>(fixed.size());
        double sim = 0.0;
        std::vector<Vec3> be_grad;
        const double be = lat.bending_energy(grad ? &be_grad : nullptr);
        if (grad) {
            grad->assign(lat.total(), Vec3{});
            for (std::size_t k = 0; k < be_grad.size(); ++k) (*grad)[k] = be_grad[k] * bending_weight;
        }
        std::size_t i = 0;
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                    const Vec3 p{static_cast<double>(f * x) + off, static_cast<double>(f * y) + off,
                                 static_cast<double>(f * z) + off};
                    const auto sx = lat.support(0, p.x), sy = lat.support(1, p.y), sz = lat.support(2, p.z);
                    Vec3 u{};
                    for (int c = 0; c < 4; ++c)
                        for (int b = 0; b < 4; ++b) {
                            const double wyz = sy.w[b] * sz.w[c];
                            for (int a = 0; a < 4; ++a)
                                u += lat.coefficients()[lat.index(sx.first + a, sy.first + b, sz.first + c)] * (sx.w[a] * wyz);
                        }
                    const auto s = sample_trilinear_grad(moving, voxel_point(x, y, z) + u * inv_f);
                    const double r = s.value - fixed[i];
                    sim += r * r;
                    if (!grad) continue;
                    const Vec3 g = s.grad * (2.0 * r * inv_n * inv_f);
                    for (int c = 0; c < 4; ++c)
                        for (int b = 0; b < 4; ++b) {
                            const double wyz = sy.w[b] * sz.w[c];
                            for (int a = 0; a < 4; ++a)
                                (*grad)[lat.index(sx.first + a, sy.first + b, sz.first + c)] += g * (sx.w[a] * wyz);
                        }
                }
        return sim * inv_n + bending_weight * be;
    }
};

}  // namespace detail

/// Gradient descent with Armijo backtracking on the control points.
inline FfdResult register_ffd_lattice(const ScalarVolume &fixed, const ScalarVolume &moving, const FfdConfig &cfg = {}) {
    cfg.validate();
    require_same_dims(fixed, moving, "register_ffd");
    std::array<double, 3> coarse_spacing = cfg.knot_spacing;
    for (double &s : coarse_spacing) s *= std::ldexp(1.0, cfg.levels - 1);
    for (int a = 0; a < 3; ++a) {
        if (coarse_spacing[a] > static_cast<double>(fixed.dims().extent(a) - 1)) {
            throw std::invalid_argument("FFD: control lattice is coarser than the grid along axis " + std::to_string(a));
        }
    }
    BSplineLattice lat(fixed.dims(), coarse_spacing);
    for (int level = 0; level < cfg.levels; ++level) {
        if (level > 0) lat = lat.refined();
        const std::int64_t f = detail::level_factor(cfg.levels, level);
        const ScalarVolume fx = downsample_mean(fixed, f);
        const ScalarVolume mv = downsample_mean(moving, f);
        const detail::FfdLevel obj{fx, mv, f, cfg.bending_weight};
        std::vector<Vec3> grad;
        double cost = obj.cost(lat, &grad);
        double alpha = -1.0;
        for (int it = 0; it < cfg.iterations[static_cast<std::size_t>(level)]; ++it) {
            double g2 = 0.0;
            for (const auto &g : grad) g2 += dot(g, g);
            if (!(g2 > 1e-30)) break;
            if (alpha < 0.0) alpha = 1.0 / std::sqrt(g2);  // first trial moves one voxel in total
            bool accepted = false;
            for (int tries = 0; tries < 30 && !accepted; ++tries) {
                BSplineLattice trial = lat;
                auto &c = trial.coefficients();
                for (std::size_t k = 0; k < c.size(); ++k) c[k] -= grad[k] * alpha;
                const double tc = obj.cost(trial, nullptr);
                if (tc <= cost - 1e-4 * alpha * g2) {
                    lat = std::move(trial);
                    accepted = true;
                } else {
                    alpha *= 0.5;
                }
            }
            if (!accepted) break;
            cost = obj.cost(lat, &grad);
            if (!std::isfinite(cost)) throw std::runtime_error("FFD: non-finite cost");
            alpha *= 2.0;
        }
    }
    FfdResult out{lattice_field(lat, fixed.dims(), fixed.spacing(), 1), std::move(lat)};
    return out;
}

inline DisplacementField register_ffd(const ScalarVolume &fixed, const ScalarVolume &moving, const FfdConfig &cfg = {}) {
    return register_ffd_lattice(fixed, moving, cfg).field;
}

}  // namespace mvmotion
