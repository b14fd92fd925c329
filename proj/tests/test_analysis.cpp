#include <gtest/gtest.h>

#include <cmath>

#include "mvmotion/analysis.hpp"
#include "mvmotion/metrics.hpp"
#include "mvmotion/phantom.hpp"
#include "support.hpp"

using namespace mvmotion;
using testing_support::constant_field;

namespace {

PhantomConfig still_phantom(int frames) {
    PhantomConfig c;
    c.radial_amplitude = 0.0;
    c.longitudinal_amplitude = 0.0;
    c.noise_sigma = 0.0;
    c.frames = frames;
    return c;
}

// u = (c - 1) * (x, y, 0) about the LV axis, in voxel units
DisplacementField in_plane_scaling(const GridDims &d, const Spacing &s, const Vec3 &axis_mm, double c) {
    DisplacementField f(d, s);
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x) {
                f(x, y, z) = {(c - 1.0) * (x - axis_mm.x / s.sx), (c - 1.0) * (y - axis_mm.y / s.sy), 0.0};
            }
    return f;
}

}  // namespace

TEST(VolumeCurve, ZeroMotionIsFlat) {
    const auto st = generate(still_phantom(5));
    std::vector<DisplacementField> zero(5, DisplacementField(st.config.dims, st.config.spacing));
    const auto c = lv_volume_curve(st.labels[0], zero);
    ASSERT_EQ(c.volume_ml.size(), 5u);
    EXPECT_GT(c.volume_ml[0], 0.0);
    for (int t = 0; t < 5; ++t) {
        EXPECT_EQ(c.volume_ml[t], c.volume_ml[0]);
        EXPECT_EQ(c.normalized[t], 1.0);
    }
    EXPECT_EQ(ejection_fraction(c.volume_ml).ef_pct, 0.0);
}

TEST(VolumeCurve, CountsCavityVoxelsInMillilitres) {
    const GridDims d{4, 4, 4};
    const Spacing s{2.0, 2.5, 4.0};  // 20 mm^3 per voxel
    LabelVolume seg(d, s);
    for (std::size_t i = 0; i < 10; ++i) seg[i] = labels::cavity;
    seg[20] = labels::myocardium;
    const auto c = lv_volume_curve(seg, {DisplacementField(d, s)});
    EXPECT_NEAR(c.volume_ml[0], 0.2, 1e-15);
    EXPECT_EQ(c.normalized[0], 1.0);
    EXPECT_THROW(lv_volume_curve(seg, {}), std::invalid_argument);
    EXPECT_THROW(lv_volume_curve(seg, {DisplacementField(d, s), DisplacementField({4, 4, 3}, s)}),
                 std::invalid_argument);
}

TEST(VolumeCurve, PhantomTruthIsMinimalAtEndSystole) {
    const auto st = generate(PhantomConfig{});
    const auto c = lv_volume_curve(st.labels[0], st.gt_fields);
    const auto it = std::min_element(c.volume_ml.begin(), c.volume_ml.end());
    EXPECT_EQ(static_cast<int>(it - c.volume_ml.begin()), st.config.es_index());
    EXPECT_EQ(c.normalized[0], 1.0);
    const auto ef = ejection_fraction(c.volume_ml);
    EXPECT_GT(ef.ef_pct, 0.0);
    EXPECT_EQ(ef.per_frame_pct[0], 0.0);
}

TEST(EjectionFraction, Examples) {
    const auto e = ejection_fraction({100.0, 70.0, 40.0, 55.0, 90.0});
    EXPECT_NEAR(e.ef_pct, 60.0, 1e-12);
    ASSERT_EQ(e.per_frame_pct.size(), 5u);
    EXPECT_EQ(e.per_frame_pct[0], 0.0);
    EXPECT_NEAR(e.per_frame_pct[1], 30.0, 1e-12);
    EXPECT_NEAR(e.per_frame_pct[4], 10.0, 1e-12);
    EXPECT_EQ(ejection_fraction({5.0, 5.0, 5.0}).ef_pct, 0.0);
    EXPECT_THROW(ejection_fraction({}), std::invalid_argument);
    EXPECT_THROW(ejection_fraction({0.0, 1.0}), std::invalid_argument);
}

TEST(WallThickness, ElongatedShellMatchesRadiusGap) {
    PhantomConfig c = still_phantom(2);
    c.endo_radii = {12.0, 12.0, 300.0};
    c.epi_radii = {20.0, 20.0, 308.0};
    const auto st = generate(c);
    const auto w = wall_thickness_global(st.labels[0]);
    ASSERT_FALSE(w.slices.empty());
    EXPECT_NEAR(w.global_mm, 8.0, 0.5);
    for (double t : w.slice_mm) EXPECT_GT(t, 0.0);
}

TEST(WallThickness, DefaultPhantomBasalSlices) {
    const auto st = generate(still_phantom(2));
    const auto w = wall_thickness_global(st.labels[0]);
    const auto &c = st.config;
    bool any = false;
    for (std::size_t k = 0; k < w.slices.size(); ++k) {
        const double h = c.center_mm.z - static_cast<double>(w.slices[k]) * c.spacing.sz;
        if (h > 6.0) continue;  // caps of the ellipsoids thicken the wall towards the apex
        EXPECT_NEAR(w.slice_mm[k], 8.0, 0.5) << "slice " << w.slices[k];
        any = true;
    }
    EXPECT_TRUE(any);
    EXPECT_THROW(wall_thickness_global(LabelVolume(c.dims, c.spacing)), std::invalid_argument);
    EXPECT_THROW(wall_thickness_global(st.labels[0], {{}, {1.0, 0.0, 0.0}}), std::invalid_argument);
}

TEST(WallThickness, SliceWithoutCavityIsSkipped) {
    const GridDims d{9, 9, 3};
    LabelVolume seg(d, {});
    for (std::int64_t y = 2; y < 7; ++y)
        for (std::int64_t x = 2; x < 7; ++x) {
            seg(x, y, 0) = labels::myocardium;
            seg(x, y, 1) = (x == 4 && y == 4) ? labels::cavity : labels::myocardium;
        }
    const auto w = wall_thickness_global(seg);
    ASSERT_EQ(w.skipped.size(), 1u);
    EXPECT_EQ(w.skipped[0], 0);
    ASSERT_EQ(w.slices.size(), 1u);
    EXPECT_EQ(w.slices[0], 1);
    EXPECT_GT(w.global_mm, 0.0);
}

TEST(WallThickening, Examples) {
    EXPECT_EQ(fractional_wall_thickening(6.6, 6.6), 0.0);
    EXPECT_NEAR(fractional_wall_thickening(6.6, 10.1), 53.0, 0.05);
    EXPECT_LT(fractional_wall_thickening(8.0, 6.0), 0.0);
    EXPECT_THROW(fractional_wall_thickening(0.0, 5.0), std::invalid_argument);
}

TEST(Strains, ZeroFieldIsZero) {
    const auto st = generate(still_phantom(2));
    const auto mask = label_mask(st.labels[0], labels::myocardium);
    const auto s = global_strains(DisplacementField(st.config.dims, st.config.spacing), mask, {st.config.center_mm});
    EXPECT_EQ(s.radial, 0.0);
    EXPECT_EQ(s.circumferential, 0.0);
    EXPECT_EQ(s.longitudinal, 0.0);
    // voxels on the axis itself have no radial direction and are left out
    EXPECT_LE(s.voxels, mask_count(mask));
    EXPECT_GE(s.voxels + static_cast<std::size_t>(st.config.dims.d), mask_count(mask));
}

TEST(Strains, UniformInPlaneContraction) {
    const auto st = generate(still_phantom(2));
    const auto &c = st.config;
    const auto mask = label_mask(st.labels[0], labels::myocardium);
    for (double k : {0.9, 0.8, 1.1}) {
        const auto s = global_strains(in_plane_scaling(c.dims, c.spacing, c.center_mm, k), mask, {c.center_mm});
        const double expected = 0.5 * (k * k - 1.0) * 100.0;
        EXPECT_NEAR(s.circumferential, expected, 1e-9);
        EXPECT_NEAR(s.radial, expected, 1e-9);
        EXPECT_NEAR(s.longitudinal, 0.0, 1e-12);
    }
}

TEST(Strains, PureLongitudinalStretch) {
    const GridDims d{8, 8, 8};
    const Spacing sp{1.0, 1.0, 2.0};
    DisplacementField f(d, sp);
    for (std::int64_t z = 0; z < 8; ++z)
        for (std::int64_t y = 0; y < 8; ++y)
            for (std::int64_t x = 0; x < 8; ++x) f(x, y, z) = {0.0, 0.0, -0.1 * static_cast<double>(z)};
    LabelVolume mask(d, sp);
    mask.fill(1);
    const auto s = global_strains(f, mask, {{3.5, 3.5, 0.0}});
    EXPECT_NEAR(s.longitudinal, 0.5 * (0.81 - 1.0) * 100.0, 1e-9);
    EXPECT_NEAR(s.radial, 0.0, 1e-12);
    EXPECT_NEAR(s.circumferential, 0.0, 1e-12);
}

TEST(Strains, Errors) {
    const GridDims d{4, 4, 4};
    LabelVolume mask(d, {});
    for (std::size_t i = 0; i < 5; ++i) mask[i] = 1;
    EXPECT_THROW(global_strains(DisplacementField(d, {}), mask, {}), std::invalid_argument);
    mask.fill(1);
    EXPECT_THROW(global_strains(DisplacementField(d, {}), mask, {{}, {0.0, 0.0, 0.0}}), std::invalid_argument);
    EXPECT_THROW(global_strains(DisplacementField({4, 4, 5}, {}), mask, {}), std::invalid_argument);
}

TEST(InvertField, ZeroAndConstant) {
    const GridDims d{7, 6, 5};
    const auto zero = invert_field(DisplacementField(d, {}));
    for (const auto &v : zero.data()) EXPECT_EQ(v, Vec3{});
    const Vec3 c{0.75, -1.25, 0.5};
    const auto inv = invert_field(constant_field(d, c));
    for (const auto &v : inv.data()) EXPECT_EQ(v, c * -1.0);
}

TEST(InvertField, PhantomTruthComposesToIdentity) {
    const auto st = generate(PhantomConfig{});
    const auto &lab = st.labels[0];
    const auto mask = label_mask(lab, labels::myocardium);
    for (int t : {5, st.es_index, 15}) {
        const auto fwd = invert_field(st.gt_fields[t], &mask);
        const auto residual = compose(st.gt_fields[t], fwd);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (!mask[i]) continue;
            sum += norm(residual[i]);
            ++n;
        }
        EXPECT_LT(sum / static_cast<double>(n), 0.05) << "frame " << t;
    }
}

TEST(InvertField, RejectsFoldedFields) {
    const GridDims d{8, 8, 8};
    DisplacementField fold(d, {});
    for (std::int64_t z = 0; z < 8; ++z)
        for (std::int64_t y = 0; y < 8; ++y)
            for (std::int64_t x = 0; x < 8; ++x) fold(x, y, z) = {-2.0 * static_cast<double>(x), 0.0, 0.0};
    EXPECT_THROW(invert_field(fold), std::invalid_argument);
}

TEST(Strains, PhantomTruthHasPhysiologicalSigns) {
    const auto st = generate(PhantomConfig{});
    const auto mask = label_mask(st.labels[0], labels::myocardium);
    const auto fwd = invert_field(st.gt_fields[st.es_index], &mask);
    const auto s = global_strains(fwd, mask, {st.config.center_mm});
    EXPECT_GT(s.radial, 0.0);
    EXPECT_LT(s.circumferential, 0.0);
    EXPECT_LT(s.longitudinal, 0.0);
}
