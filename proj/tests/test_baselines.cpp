#include <gtest/gtest.h>

#include <cmath>

#include "mvmotion/baselines.hpp"
#include "mvmotion/metrics.hpp"
#include "mvmotion/phantom.hpp"
#include "support.hpp"

using namespace mvmotion;
using testing_support::random_field;
using testing_support::random_volume;

namespace {

// mean |phi - shift| over voxels where the fixed blob is visible
double translation_error(const DisplacementField &phi, const ScalarVolume &fixed, const Vec3 &shift) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
        if (fixed[i] < 0.1) continue;
        sum += norm(phi[i] - shift);
        ++n;
    }
    return sum / static_cast<double>(n);
}

double mean_norm(const DisplacementField &f) {
    double s = 0.0;
    for (const auto &v : f.data()) s += norm(v);
    return s / static_cast<double>(f.size());
}

// the ED phantom and a copy contracted about its centre by c
struct ScalingPair {
    ScalarVolume fixed, moving;
    LabelVolume fixed_labels, moving_labels;
};

ScalingPair scaling_pair(double c) {
    PhantomConfig cfg;
    cfg.noise_sigma = 0.0;
    const auto &d = cfg.dims;
    const auto &s = cfg.spacing;
    ScalingPair p{ScalarVolume(d, s), ScalarVolume(d, s), LabelVolume(d, s), LabelVolume(d, s)};
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                const Vec3 q = voxel_mm(s, x, y, z) - cfg.center_mm;
                p.moving(x, y, z) = ed_intensity(cfg, q);
                p.moving_labels(x, y, z) = ed_label(cfg, q);
                p.fixed(x, y, z) = ed_intensity(cfg, q * (1.0 / c));
                p.fixed_labels(x, y, z) = ed_label(cfg, q * (1.0 / c));
            }
    return p;
}

}  // namespace

TEST(Demons, ExponentialOfZeroIsZero) {
    const auto phi = exponentiate(DisplacementField({6, 5, 4}, {}), 6);
    for (const auto &v : phi.data()) EXPECT_EQ(v, Vec3{});
    EXPECT_THROW(exponentiate(DisplacementField({2, 2, 2}, {}), 0), std::invalid_argument);
}

TEST(Demons, ExponentialOfConstantVelocityIsTheTranslation) {
    DisplacementField v({8, 8, 8}, {});
    v.fill({1.0, -0.5, 0.25});
    const auto phi = exponentiate(v, 6);
    for (std::int64_t z = 2; z < 6; ++z)
        for (std::int64_t y = 2; y < 6; ++y)
            for (std::int64_t x = 2; x < 6; ++x) EXPECT_NEAR(norm(phi(x, y, z) - Vec3{1.0, -0.5, 0.25}), 0.0, 1e-12);
}

TEST(Demons, ForceVanishesForIdenticalImages) {
    Rng rng(1);
    const auto v = random_volume({6, 6, 6}, rng);
    const auto force = demons_force(v, v, 1.0);
    for (const auto &u : force.data()) EXPECT_EQ(u, Vec3{});
}

TEST(Demons, IdentityStaysNearZero) {
    const auto [fixed, moving] = translation_pair({32, 32, 32}, {}, {});
    EXPECT_LT(mean_norm(register_demons(fixed, moving)), 0.05);
}

TEST(Demons, RecoversTwoVoxelTranslation) {
    for (const Vec3 &shift : {Vec3{2.0, 0.0, 0.0}, Vec3{0.0, -2.0, 0.0}, Vec3{0.0, 0.0, 2.0}}) {
        const auto [fixed, moving] = translation_pair({32, 32, 32}, {}, shift);
        EXPECT_LT(translation_error(register_demons(fixed, moving), fixed, shift), 0.5);
    }
}

TEST(Demons, FewFoldsOnDefaultPhantom) {
    PhantomConfig c;
    const auto st = generate(c);
    const int es = st.es_index;
    const auto phi = register_demons(st.images[es], st.images[0]);
    const auto warped = warp_labels(st.labels[0], phi);
    EXPECT_LE(negative_jacobian_fraction(phi, label_mask(warped, labels::myocardium)), 0.5);
    EXPECT_GT(dice(warped, st.labels[es], labels::myocardium).value,
              dice(st.labels[0], st.labels[es], labels::myocardium).value);
}

TEST(Demons, ConfigValidationAndJson) {
    DemonsConfig c;
    c.exp_steps = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.sigma_fluid = -1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.iterations = {10, 10};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.kappa = 2.0;
    EXPECT_EQ(demons_config_to_json(demons_config_from_json(demons_config_to_json(c))).dump(),
              demons_config_to_json(c).dump());
    EXPECT_THROW(demons_config_from_json(nlohmann::json{{"levels", "three"}}), std::invalid_argument);
    EXPECT_EQ(demons_config_from_json(nlohmann::json{{"levels", 2}}).iterations.size(), 2u);
}

TEST(BSpline, PartitionOfUnity) {
    const BSplineLattice lat({40, 30, 20}, {4.0, 5.0, 3.0});
    Rng rng(2);
    for (int k = 0; k < 100; ++k) {
        const Vec3 p{rng.uniform(0.0, 39.0), rng.uniform(0.0, 29.0), rng.uniform(0.0, 19.0)};
        EXPECT_NEAR(lat.weight_sum(p), 1.0, 1e-12);
    }
    for (int k = 0; k < 100; ++k) {
        const double u = rng.uniform();
        const auto w = bspline::basis(u);
        const auto dw = bspline::basis_d1(u);
        EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-12);
        EXPECT_NEAR(dw[0] + dw[1] + dw[2] + dw[3], 0.0, 1e-12);
    }
}

TEST(BSpline, BasisDerivativeMatchesFiniteDifference) {
    for (double u : {0.1, 0.37, 0.5, 0.83}) {
        const auto dw = bspline::basis_d1(u);
        const auto up = bspline::basis(u + 1e-6), down = bspline::basis(u - 1e-6);
        for (int k = 0; k < 4; ++k) EXPECT_NEAR(dw[k], (up[k] - down[k]) / 2e-6, 1e-8);
    }
}

TEST(BSpline, DenseFieldIsTwiceContinuous) {
    BSplineLattice lat({33, 33, 33}, {4.0, 4.0, 4.0});
    Rng rng(3);
    for (auto &c : lat.coefficients()) c = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    // across a knot plane x = 16 the value, slope and curvature agree from both sides
    const double h = 1e-4;
    for (int k = 0; k < 20; ++k) {
        const double y = rng.uniform(2, 30), z = rng.uniform(2, 30);
        auto f = [&](double x) { return lat.evaluate({x, y, z}); };
        const Vec3 left = f(16.0 - h), mid = f(16.0), right = f(16.0 + h);
        EXPECT_NEAR(norm(left - mid), norm(right - mid), 1e-6);
        const Vec3 d1l = (mid - f(16.0 - 2 * h)) * (1.0 / h), d1r = (f(16.0 + 2 * h) - mid) * (1.0 / h);
        EXPECT_NEAR(norm(d1l - d1r), 0.0, 1e-3);
        const Vec3 d2l = (mid - left * 2.0 + f(16.0 - 2 * h)) * (1.0 / (h * h));
        const Vec3 d2r = (f(16.0 + 2 * h) - right * 2.0 + mid) * (1.0 / (h * h));
        EXPECT_NEAR(norm(d2l - d2r), 0.0, 1e-2);
    }
}

TEST(BSpline, RefinementIsExact) {
    BSplineLattice lat({30, 26, 22}, {8.0, 8.0, 8.0});
    Rng rng(4);
    for (auto &c : lat.coefficients()) c = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const auto fine = lat.refined();
    EXPECT_EQ(fine.spacing()[0], 4.0);
    for (int k = 0; k < 200; ++k) {
        const Vec3 p{rng.uniform(0, 29), rng.uniform(0, 25), rng.uniform(0, 21)};
        EXPECT_NEAR(norm(lat.evaluate(p) - fine.evaluate(p)), 0.0, 1e-12);
    }
}

TEST(BSpline, BendingEnergyOfAffineFieldIsZero) {
    BSplineLattice lat({24, 24, 24}, {4.0, 4.0, 4.0});
    const auto &n = lat.count();
    for (std::int64_t k = 0; k < n[2]; ++k)
        for (std::int64_t j = 0; j < n[1]; ++j)
            for (std::int64_t i = 0; i < n[0]; ++i)
                lat.coefficients()[lat.index(i, j, k)] = {0.1 * i - 0.2 * k, 0.3 * j, 1.0 + 0.05 * i};
    EXPECT_NEAR(lat.bending_energy(), 0.0, 1e-20);
    EXPECT_THROW(BSplineLattice({24, 24, 24}, {1.5, 4.0, 4.0}), std::invalid_argument);
}

TEST(Ffd, IdentityKeepsControlPointsNearZero) {
    const auto [fixed, moving] = translation_pair({32, 32, 32}, {}, {});
    const auto r = register_ffd_lattice(fixed, moving);
    for (const auto &c : r.lattice.coefficients()) EXPECT_LT(norm(c), 0.05);
}

TEST(Ffd, RecoversTwoVoxelTranslation) {
    for (const Vec3 &shift : {Vec3{2.0, 0.0, 0.0}, Vec3{0.0, 2.0, 0.0}, Vec3{0.0, 0.0, -2.0}}) {
        const auto [fixed, moving] = translation_pair({32, 32, 32}, {}, shift);
        EXPECT_LT(translation_error(register_ffd(fixed, moving), fixed, shift), 0.5);
    }
}

TEST(Ffd, GlobalScalingPhantom) {
    const auto p = scaling_pair(0.9);
    const auto phi = register_ffd(p.fixed, p.moving);
    const auto warped = warp_labels(p.moving_labels, phi);
    EXPECT_GE(dice(warped, p.fixed_labels, labels::myocardium).value, 0.85);
}

TEST(Ffd, RejectsLatticeCoarserThanGrid) {
    const auto [fixed, moving] = translation_pair({12, 12, 12}, {}, {});
    try {
        register_ffd(fixed, moving);  // coarsest knots 16 voxels apart
        FAIL() << "expected an error";
    } catch (const std::invalid_argument &e) {
        EXPECT_NE(std::string(e.what()).find("coarser"), std::string::npos);
    }
}

TEST(Ffd, ConfigValidationAndJson) {
    FfdConfig c;
    c.knot_spacing = {1.0, 4.0, 4.0};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.bending_weight = -0.1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.levels = 2;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.iterations = {5, 5};
    EXPECT_EQ(ffd_config_to_json(ffd_config_from_json(ffd_config_to_json(c))).dump(), ffd_config_to_json(c).dump());
}

TEST(Baselines, InvariantToCommonIntensityOffset) {
    const Vec3 shift{1.0, 0.0, 1.0};
    const auto [fixed, moving] = translation_pair({24, 24, 24}, {}, shift);
    auto f2 = fixed, m2 = moving;
    for (double &v : f2.data()) v += 3.0;
    for (double &v : m2.data()) v += 3.0;
    DemonsConfig dc;
    dc.iterations = {20, 20, 20};
    const auto a = register_demons(fixed, moving, dc), b = register_demons(f2, m2, dc);
    FfdConfig fc;
    fc.knot_spacing = {3.0, 3.0, 3.0};
    fc.iterations = {15, 15, 15};
    const auto c = register_ffd(fixed, moving, fc), d = register_ffd(f2, m2, fc);
    double da = 0.0, dd = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        da = std::max(da, norm(a[i] - b[i]));
        dd = std::max(dd, norm(c[i] - d[i]));
    }
    EXPECT_LT(da, 1e-6);
    EXPECT_LT(dd, 1e-6);
}

TEST(Baselines, RejectMismatchedImages) {
    Rng rng(5);
    const auto a = random_volume({8, 8, 8}, rng), b = random_volume({8, 8, 9}, rng);
    EXPECT_THROW(register_demons(a, b), std::invalid_argument);
    EXPECT_THROW(register_ffd(a, b), std::invalid_argument);
}
