#include <gtest/gtest.h>

#include <cmath>

#include "mvmotion/objective.hpp"
#include "support.hpp"

using namespace mvmotion;
using testing_support::constant_field;
using testing_support::corner_oracle;
using testing_support::gradient_check;
using testing_support::gradient_instance;
using testing_support::random_field;
using testing_support::random_volume;

namespace {

ObjectiveContext plain_context(const ScalarVolume &source, const ScalarVolume &target) {
    ObjectiveContext c;
    c.source = source;
    c.target = target;
    return c;
}

PlaneMask slab(const GridDims &d, std::int64_t z) {
    PlaneMask m(d, {});
    for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x) m(x, y, z) = 1;
    return m;
}

}  // namespace

TEST(LossSmooth, ClosedForms) {
    const GridDims d{5, 4, 3};
    EXPECT_NEAR(loss_smooth(DisplacementField(d, {})), 0.1, 1e-15);
    EXPECT_NEAR(loss_smooth(constant_field(d, {1.5, -2.0, 0.25})), 0.1, 1e-15);
    EXPECT_NEAR(loss_smooth(DisplacementField(d, {}), 0.04), 0.2, 1e-15);

    // u_x = x: only the x differences are nonzero, each equal to one
    for (std::int64_t n : {3, 4, 7}) {
        DisplacementField f({n, n, n}, {});
        for (std::int64_t z = 0; z < n; ++z)
            for (std::int64_t y = 0; y < n; ++y)
                for (std::int64_t x = 0; x < n; ++x) f(x, y, z) = {static_cast<double>(x), 0.0, 0.0};
        const double expected = std::sqrt(0.01 + static_cast<double>(n * n * (n - 1)));
        EXPECT_NEAR(loss_smooth(f), expected, 1e-12);
    }
}

TEST(LossSmooth, InvariantUnderConstantOffset) {
    Rng rng(7);
    const auto f = random_field({6, 5, 4}, rng, 2.0);
    auto g = f;
    for (auto &v : g.data()) v += Vec3{0.3, -1.0, 2.0};
    EXPECT_NEAR(loss_smooth(f), loss_smooth(g), 1e-12);
}

TEST(LossSim, ClosedForms) {
    Rng rng(1);
    const GridDims d{6, 6, 6};
    const auto src = random_volume(d, rng);
    EXPECT_EQ(loss_sim(plain_context(src, src), DisplacementField(d, {})), 0.0);

    auto shifted = src;
    for (double &v : shifted.data()) v += 0.3;
    EXPECT_NEAR(loss_sim(plain_context(src, shifted), DisplacementField(d, {})), 0.09, 1e-12);
}

TEST(LossSim, MatchesPerVoxelOracle) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto g = gradient_instance(6, seed);
        double sum = 0.0;
        const auto &d = g.field.dims();
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x) {
                    const double r =
                        g.ctx.target(x, y, z) - corner_oracle(g.ctx.source, voxel_point(x, y, z) + g.field(x, y, z));
                    sum += r * r;
                }
        EXPECT_NEAR(loss_sim(g.ctx, g.field), sum / static_cast<double>(d.count()), 1e-12);
    }
}

TEST(LossShape, UniformHalfPredictionGivesLn2PerView) {
    Rng rng(3);
    const GridDims d{8, 8, 8};
    auto ctx = plain_context(random_volume(d, rng), random_volume(d, rng));
    ctx.ed_edges = ScalarVolume(d, {}, 0.5);
    ViewTerm sax{ViewKind::sax, {}};
    for (std::int64_t z : {2, 3, 5}) {
        const auto m = slab(d, z);
        sax.planes.push_back({m, slice_volume(random_volume(d, rng), m)});
    }
    ctx.views.push_back(sax);
    EXPECT_NEAR(loss_shape(ctx, random_field(d, rng, 1.0)).value, std::log(2.0), 1e-9);

    PlaneMask lax(d, {});
    for (std::int64_t z = 0; z < 8; ++z)
        for (std::int64_t x = 0; x < 8; ++x) lax(x, 4, z) = 1;
    ctx.views.push_back({ViewKind::two_chamber, {{lax, slice_volume(random_volume(d, rng), lax)}}});
    ctx.views.push_back({ViewKind::four_chamber, {{lax, slice_volume(random_volume(d, rng), lax)}}});
    EXPECT_NEAR(loss_shape(ctx, DisplacementField(d, {})).value, 3.0 * std::log(2.0), 1e-9);
}

TEST(LossShape, MatchesPerViewOracle) {
    const LossWeights w;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto g = gradient_instance(8, seed);
        const auto &d = g.field.dims();
        // each view: mean over planes of the masked mean CE, computed plane by plane
        double expected = 0.0;
        for (const auto &view : g.ctx.views) {
            double view_sum = 0.0;
            for (const auto &p : view.planes) {
                double plane_sum = 0.0;
                std::size_t count = 0;
                for (std::int64_t z = 0; z < d.d; ++z)
                    for (std::int64_t y = 0; y < d.h; ++y)
                        for (std::int64_t x = 0; x < d.w; ++x) {
                            if (!p.mask(x, y, z)) continue;
                            double pred = corner_oracle(*g.ctx.ed_edges, voxel_point(x, y, z) + g.field(x, y, z));
                            pred = std::clamp(pred, w.delta, 1.0 - w.delta);
                            const double t = p.target(x, y, z);
                            plane_sum += -(t * std::log(pred) + (1.0 - t) * std::log(1.0 - pred));
                            ++count;
                        }
                view_sum += plane_sum / static_cast<double>(count);
            }
            expected += view_sum / static_cast<double>(view.planes.size());
        }
        EXPECT_NEAR(loss_shape(g.ctx, g.field, w.delta).value, expected, 1e-10);
    }
}

TEST(LossShape, PredictionsAreClampedAwayFromZero) {
    const GridDims d{4, 4, 4};
    auto ctx = plain_context(ScalarVolume(d, {}), ScalarVolume(d, {}));
    ctx.ed_edges = ScalarVolume(d, {}, 0.0);
    const auto m = slab(d, 1);
    ctx.views.push_back({ViewKind::sax, {{m, slice_volume(ScalarVolume(d, {}, 1.0), m)}}});
    const double v = loss_shape(ctx, DisplacementField(d, {}), 1e-6).value;
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, -std::log(1e-6), 1e-9);
}

TEST(LossShape, EmptyMasksWarnAndContributeNothing) {
    const GridDims d{4, 4, 4};
    Rng rng(2);
    auto ctx = plain_context(random_volume(d, rng), random_volume(d, rng));
    ctx.ed_edges = random_volume(d, rng, 0.1, 0.9);
    const auto m = slab(d, 2);
    const PlaneMask empty(d, {});
    ctx.views.push_back({ViewKind::sax, {{m, slice_volume(random_volume(d, rng), m)}, {empty, ScalarVolume(d, {})}}});
    const auto with_empty = loss_shape(ctx, DisplacementField(d, {}));
    EXPECT_EQ(with_empty.warnings.size(), 1u);

    auto only = ctx;
    only.views[0].planes.pop_back();
    EXPECT_NEAR(loss_shape(only, DisplacementField(d, {})).value, with_empty.value, 1e-15);

    only.views.push_back({ViewKind::four_chamber, {{empty, ScalarVolume(d, {})}}});
    const auto r = loss_shape(only, DisplacementField(d, {}));
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("4ch"), std::string::npos);
    EXPECT_NEAR(r.value, with_empty.value, 1e-15);
}

TEST(Objective, RejectsInvalidContexts) {
    const GridDims d{4, 4, 4};
    Rng rng(4);
    auto ctx = plain_context(random_volume(d, rng), random_volume({4, 4, 5}, rng));
    EXPECT_THROW(Objective{ctx}, std::invalid_argument);

    ctx.target = random_volume(d, rng);
    const auto m = slab(d, 1);
    ctx.views.push_back({ViewKind::sax, {{m, slice_volume(random_volume(d, rng), m)}}});
    EXPECT_THROW(Objective{ctx}, std::invalid_argument);  // shape term without an ED edge map

    ctx.ed_edges = random_volume(d, rng, 0.0, 2.0);
    EXPECT_THROW(Objective{ctx}, std::invalid_argument);

    LossWeights w;
    w.epsilon = 0.0;
    EXPECT_THROW(w.validate(), std::invalid_argument);
    w = {};
    w.delta = 0.5;
    EXPECT_THROW(w.validate(), std::invalid_argument);
    EXPECT_THROW(weights_from_json(nlohmann::json{{"beta", -1.0}}), std::invalid_argument);
}

TEST(Objective, WeightsJsonRoundTrip) {
    LossWeights w;
    w.lambda = 0.01;
    w.beta = 2.0;
    const auto back = weights_from_json(weights_to_json(w));
    EXPECT_EQ(back.lambda, 0.01);
    EXPECT_EQ(back.beta, 2.0);
    EXPECT_EQ(back.epsilon, 0.01);
    EXPECT_EQ(back.delta, 1e-6);
}

TEST(Objective, BreakdownIdentity) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto g = gradient_instance(6, seed);
        LossWeights w;
        w.lambda = 0.3;
        w.beta = 2.0;
        const Objective obj(g.ctx);
        const auto b = obj.loss(g.field, w);
        EXPECT_NEAR(b.total, b.sim + w.lambda * b.smooth + w.beta * b.shape, 1e-14);
        DisplacementField grad;
        const auto c = obj.loss_and_gradient(g.field, w, grad);
        EXPECT_NEAR(c.sim, b.sim, 1e-14);
        EXPECT_NEAR(c.smooth, b.smooth, 1e-14);
        EXPECT_NEAR(c.shape, b.shape, 1e-14);
        EXPECT_NEAR(c.total, b.total, 1e-14);
        EXPECT_NEAR(b.sim, loss_sim(g.ctx, g.field), 1e-15);
        EXPECT_NEAR(b.smooth, loss_smooth(g.field, w.epsilon), 1e-15);
    }
}

TEST(Objective, GradientMatchesCentralDifferences) {
    const LossWeights w;  // lambda 0.005, beta 5, epsilon 0.01
    for (std::int64_t n : {4, 6, 8}) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            EXPECT_LT(gradient_check(gradient_instance(n, seed), w), 1e-4) << "n=" << n << " seed=" << seed;
        }
    }
}

TEST(Objective, GradientOfEachTermSeparately) {
    const auto g = gradient_instance(5, 11);
    EXPECT_LT(gradient_check(g, {0.0, 0.0, 0.01, 1e-6}), 1e-4);
    EXPECT_LT(gradient_check(g, {1.0, 0.0, 0.01, 1e-6}), 1e-4);
    EXPECT_LT(gradient_check(g, {0.0, 1.0, 0.01, 1e-6}), 1e-4);
}

TEST(Objective, ZeroFieldIsStationaryForIdenticalFrames) {
    Rng rng(9);
    const GridDims d{6, 6, 6};
    const auto src = random_volume(d, rng);
    const auto grad = total_loss_gradient(plain_context(src, src), DisplacementField(d, {}), {0.005, 0.0, 0.01, 1e-6});
    for (const auto &v : grad.data()) EXPECT_EQ(v, Vec3{});
}

TEST(Objective, SmallStepAlongNegativeGradientDescends) {
    const LossWeights w;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto g = gradient_instance(6, seed);
        const Objective obj(g.ctx);
        DisplacementField grad;
        const double before = obj.loss_and_gradient(g.field, w, grad).total;
        auto f = g.field;
        for (std::size_t i = 0; i < f.size(); ++i) f[i] += grad[i] * -1e-4;
        EXPECT_LT(obj.loss(f, w).total, before);
    }
}
