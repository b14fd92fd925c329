#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mvmotion/grid.hpp"
#include "mvmotion/objective.hpp"
#include "mvmotion/rng.hpp"

namespace testing_support {

using namespace mvmotion;

inline ScalarVolume random_volume(const GridDims &d, Rng &rng, double lo = 0.0, double hi = 1.0,
                                  const Spacing &s = {}) {
    ScalarVolume v(d, s);
    for (double &x : v.data()) x = rng.uniform(lo, hi);
    return v;
}

inline DisplacementField random_field(const GridDims &d, Rng &rng, double amp, const Spacing &s = {}) {
    DisplacementField f(d, s);
    for (Vec3 &v : f.data()) v = {rng.uniform(-amp, amp), rng.uniform(-amp, amp), rng.uniform(-amp, amp)};
    return f;
}

inline DisplacementField constant_field(const GridDims &d, const Vec3 &c, const Spacing &s = {}) {
    DisplacementField f(d, s);
    f.fill(c);
    return f;
}

// independent 8-corner oracle, coordinates assumed inside [0, n-1]
inline double corner_oracle(const ScalarVolume &v, const Vec3 &p) {
    const auto &d = v.dims();
    auto lower = [](double c, std::int64_t n) {
        auto i = static_cast<std::int64_t>(std::floor(c));
        return std::min<std::int64_t>(i, n - 2);
    };
    const std::int64_t x0 = lower(p.x, d.w), y0 = lower(p.y, d.h), z0 = lower(p.z, d.d);
    double sum = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double wx = 1.0 - std::abs(p.x - static_cast<double>(x0 + dx));
                const double wy = 1.0 - std::abs(p.y - static_cast<double>(y0 + dy));
                const double wz = 1.0 - std::abs(p.z - static_cast<double>(z0 + dz));
                sum += wx * wy * wz * v(x0 + dx, y0 + dy, z0 + dz);
            }
    return sum;
}

// Random objective on an n^3 grid: two SAX slabs, one 2CH plane, ED edges in
// (0.05, 0.95). Sample points stay inside the grid and away from cell faces so
// the loss is smooth under small perturbations.
struct GradientInstance {
    ObjectiveContext ctx;
    DisplacementField field;
};

inline GradientInstance gradient_instance(std::int64_t n, std::uint64_t seed) {
    Rng rng(seed);
    const GridDims d{n, n, n};
    GradientInstance g;
    g.ctx.source = random_volume(d, rng);
    g.ctx.target = random_volume(d, rng);
    g.ctx.ed_edges = random_volume(d, rng, 0.05, 0.95);
    ViewTerm sax{ViewKind::sax, {}};
    for (std::int64_t z : {std::int64_t{1}, n - 2}) {
        PlaneMask m(d, {});
        for (std::int64_t y = 0; y < n; ++y)
            for (std::int64_t x = 0; x < n; ++x) m(x, y, z) = 1;
        sax.planes.push_back({m, slice_volume(random_volume(d, rng), m)});
    }
    PlaneMask lax(d, {});
    for (std::int64_t z = 0; z < n; ++z)
        for (std::int64_t x = 0; x < n; ++x) lax(x, n / 2, z) = 1;
    g.ctx.views = {sax, {ViewKind::two_chamber, {{lax, slice_volume(random_volume(d, rng), lax)}}}};

    g.field = DisplacementField(d, {});
    std::size_t i = 0;
    for (std::int64_t z = 0; z < n; ++z)
        for (std::int64_t y = 0; y < n; ++y)
            for (std::int64_t x = 0; x < n; ++x, ++i) {
                const Vec3 p = voxel_point(x, y, z);
                Vec3 v;
                for (int a = 0; a < 3; ++a) {
                    double q = std::clamp(p[a] + rng.uniform(-1.0, 1.0), 0.1, static_cast<double>(n) - 1.1);
                    const double frac = q - std::floor(q);
                    if (frac < 0.05) q += 0.1;
                    if (frac > 0.95) q -= 0.1;
                    v[a] = q - p[a];
                }
                g.field[i] = v;
            }
    return g;
}

// Largest relative error of the analytic gradient against central differences
// over components with magnitude above `floor`.
inline double gradient_check(const GradientInstance &g, const LossWeights &w, double h = 1e-4,
                             double floor = 1e-8) {
    const Objective obj(g.ctx);
    DisplacementField grad;
    obj.loss_and_gradient(g.field, w, grad);
    DisplacementField f = g.field;
    double worst = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            double &c = f[i][a];
            const double orig = c;
            c = orig + h;
            const double up = obj.loss(f, w).total;
            c = orig - h;
            const double down = obj.loss(f, w).total;
            c = orig;
            const double fd = (up - down) / (2.0 * h);
            const double an = grad[i][a];
            const double mag = std::max(std::abs(fd), std::abs(an));
            if (mag > floor) worst = std::max(worst, std::abs(an - fd) / mag);
        }
    }
    return worst;
}

// O(n^2) Hausdorff oracle: boundary voxels found by direct neighbour tests,
// every pair of points compared.
inline double brute_hausdorff_mm(const LabelVolume &a, const LabelVolume &b, std::uint8_t label) {
    auto boundary = [label](const LabelVolume &v) {
        const auto &d = v.dims();
        const auto &s = v.spacing();
        std::vector<Vec3> pts;
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x) {
                    if (v(x, y, z) != label) continue;
                    bool edge = false;
                    const std::int64_t nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                    for (const auto &o : nb) {
                        const std::int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= d.w || ny >= d.h || nz >= d.d ||
                            v(nx, ny, nz) != label) {
                            edge = true;
                        }
                    }
                    if (edge) pts.push_back({x * s.sx, y * s.sy, z * s.sz});
                }
        return pts;
    };
    const auto pa = boundary(a), pb = boundary(b);
    auto directed = [](const std::vector<Vec3> &from, const std::vector<Vec3> &to) {
        double worst = 0.0;
        for (const auto &p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto &q : to) best = std::min(best, norm(p - q));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(pa, pb), directed(pb, pa));
}

// fresh scratch directory under the system temp dir
inline std::filesystem::path scratch_dir(const std::string &name) {
    auto p = std::filesystem::temp_directory_path() / ("mvmotion_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing_support
