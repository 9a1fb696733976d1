#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace archwarp;
using testutil::Rng;

namespace {

ArchCurve straight() { return build_curve({{-1, 0}, {0, 0}, {1, 0}}); }

CprConfig config(Dims d, double lo, double hi) {
    CprConfig c;
    c.canonical_dims = d;
    c.depth_min = lo;
    c.depth_max = hi;
    return c;
}

ArchCurve dense_arch(double x_extent = 1.0, std::size_t n = 4097) {
    return parabola_curve({0.8, {0.0, -0.5}, {0.0, 1.0}, -x_extent, x_extent}, n);
}

// Smooth ball centred at native coordinate c with radius r (normalized units).
Volume ball(Dims n, NormCoord c, double r) {
    std::vector<float> d(n.size());
    for (std::size_t i = 0; i < n.depth; ++i)
        for (std::size_t j = 0; j < n.height; ++j)
            for (std::size_t k = 0; k < n.width; ++k) {
                const double du = index_to_norm(i, n.depth) - c.u, dv = index_to_norm(j, n.height) - c.v,
                             dw = index_to_norm(k, n.width) - c.w;
                d[n.index(i, j, k)] = static_cast<float>(std::exp(-(du * du + dv * dv + dw * dw) / (r * r)));
            }
    return Volume(n, {1, 1, 1}, d);
}

}  // namespace

TEST(CprConfig, Validation) {
    EXPECT_THROW(config({1, 4, 4}, -0.1, 0.1).validate(), DimensionError);
    EXPECT_THROW(config({4, 4, 4}, 0.1, 0.1).validate(), RangeError);
}

TEST(ForwardMap, StraightArchIsAxisPermutation) {
    const CprConfig cfg = config({8, 8, 8}, -0.5, 0.5);
    const NormCoord n = forward_map(straight(), cfg, {0.0, 0.37, 0.0});
    EXPECT_DOUBLE_EQ(n.u, 0.0);
    EXPECT_DOUBLE_EQ(n.v, 0.37);
    EXPECT_DOUBLE_EQ(n.w, 0.0);
    const NormCoord m = forward_map(straight(), cfg, {0.6, -0.2, -0.4});
    EXPECT_DOUBLE_EQ(m.u, 0.3);  // depth 0.5 * u along +y
    EXPECT_DOUBLE_EQ(m.w, -0.4);
}

TEST(ForwardMap, MidDepthLiesOnCurve) {
    const ArchCurve c = dense_arch(1.0, 65);
    const CprConfig cfg = config({8, 8, 8}, -0.3, 0.3);
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const NormCoord n = forward_map(c, cfg, {0.0, 0.0, rng.uniform(-1, 1)});
        EXPECT_NEAR(c.project(planar_of(n)).d, 0.0, 1e-12);
    }
}

TEST(ForwardMap, ProjectRecoversArcAndDepth) {
    const ArchCurve c = dense_arch();
    const CprConfig cfg = config({8, 8, 8}, -0.1, 0.1);
    Rng rng(2);
    for (int t = 0; t < 1000; ++t) {
        const NormCoord q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const CurveProjection pr = c.project(planar_of(forward_map(c, cfg, q)));
        EXPECT_NEAR(pr.s, 0.5 * (q.w + 1.0) * c.total_length(), 1e-4);
        EXPECT_NEAR(pr.d, cfg.depth_of(q.u), 1e-4);
    }
}

TEST(Flatten, ConstantStaysConstant) {
    const Volume v = Volume::filled({8, 6, 10}, 2.5f);
    const Volume f = flatten(v, dense_arch(1.0, 33), config({5, 6, 7}, -0.3, 0.3));
    for (float x : f.data()) EXPECT_EQ(x, 2.5f);
    EXPECT_EQ(f.dims(), (Dims{5, 6, 7}));
}

TEST(Flatten, StraightArchIsPermutedResample) {
    Rng rng(3);
    const Volume v = testutil::random_volume({9, 7, 11}, rng);
    const CprConfig cfg = config({5, 7, 13}, -0.5, 0.5);
    const Volume f = flatten(v, straight(), cfg);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j)
            for (std::size_t k = 0; k < 13; ++k) {
                const double u = index_to_norm(i, 5), vv = index_to_norm(j, 7), w = index_to_norm(k, 13);
                EXPECT_NEAR(f(i, j, k), testutil::naive_sample(v, {0.5 * u, vv, w}), 1e-6);
            }
}

TEST(Flatten, BallOnCurvePeaksAtMidDepth) {
    const ArchCurve c = dense_arch(1.0, 257);
    const Vec2 p = c.point_at(0.3 * c.total_length()).point;
    const Volume v = ball({48, 16, 64}, native_of(p, 0.0), 0.08);
    const CprConfig cfg = config({33, 16, 64}, -0.3, 0.3);
    const Volume f = flatten(v, c, cfg);
    std::size_t best = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] > f[best]) best = i;
    const std::size_t depth_index = best / (16 * 64);
    EXPECT_LE(std::abs(static_cast<long>(depth_index) - 16), 1);
}

TEST(Flatten, IntensityLinear) {
    Rng rng(4);
    const Volume v = testutil::random_volume({8, 8, 8}, rng);
    std::vector<float> scaled(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) scaled[i] = 3.0f * v[i] - 1.5f;
    const ArchCurve c = dense_arch(1.0, 65);
    const CprConfig cfg = config({6, 8, 9}, -0.3, 0.3);
    const Volume a = flatten(v, c, cfg);
    const Volume b = flatten(Volume(v.dims(), v.spacing(), scaled), c, cfg);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 3.0 * a[i] - 1.5, 1e-5);
}

TEST(SynthPanorama, ConstantVolume) {
    const Image2D img = synth_panorama(Volume::filled({4, 3, 5}, 7.0f));
    for (float p : img.pixels) EXPECT_EQ(p, 7.0f);
    EXPECT_EQ(img.height, 3u);
    EXPECT_EQ(img.width, 5u);
}

TEST(SynthPanorama, SingleVoxelMean) {
    std::vector<float> d(4 * 3 * 5, 0.0f);
    d[Dims{4, 3, 5}.index(2, 1, 3)] = 1.0f;
    const Image2D img = synth_panorama(Volume({4, 3, 5}, {1, 1, 1}, d));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(img(r, c), (r == 1 && c == 3) ? 0.25f : 0.0f);
}

TEST(SynthPanorama, MatchesTripleLoopMean) {
    Rng rng(5);
    const Volume v = testutil::random_volume({6, 5, 7}, rng);
    const Image2D img = synth_panorama(v);
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t k = 0; k < 7; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < 6; ++i) s += v(i, j, k);
            EXPECT_NEAR(img(j, k), s / 6.0, 1e-6);
        }
}

TEST(SynthPanorama, DepthConstantEqualsSlice) {
    Rng rng(6);
    std::vector<float> slice(5 * 7);
    for (float& x : slice) x = static_cast<float>(rng.uniform());
    std::vector<float> d;
    for (int i = 0; i < 4; ++i) d.insert(d.end(), slice.begin(), slice.end());
    const Image2D img = synth_panorama(Volume({4, 5, 7}, {1, 1, 1}, d));
    for (std::size_t i = 0; i < slice.size(); ++i) EXPECT_EQ(img.pixels[i], slice[i]);
}

TEST(SynthPanorama, MaxProjection) {
    std::vector<float> d = {0, 1, 3, 2};
    const Image2D img = synth_panorama(Volume({4, 1, 1}, {1, 1, 1}, d), Projection::Max);
    EXPECT_EQ(img.pixels[0], 3.0f);
}

TEST(InverseMapGrid, StraightArchAffine) {
    const CprConfig cfg = config({8, 8, 8}, -0.5, 0.5);
    const Dims nd{9, 5, 7};
    const Correspondence g = inverse_map_grid(straight(), cfg, nd);
    for (std::size_t i = 0; i < nd.depth; ++i)
        for (std::size_t j = 0; j < nd.height; ++j)
            for (std::size_t k = 0; k < nd.width; ++k) {
                const NormCoord c = g.grid.at(i, j, k);
                EXPECT_NEAR(c.u, 2.0 * index_to_norm(i, nd.depth), 1e-15);
                EXPECT_EQ(c.v, index_to_norm(j, nd.height));
                EXPECT_NEAR(c.w, index_to_norm(k, nd.width), 1e-15);
                EXPECT_EQ(g.mask[nd.index(i, j, k)], in_domain(c) ? 1 : 0);
            }
}

TEST(InverseMapGrid, ForwardOfInverseIsIdentityInDomain) {
    const ArchCurve c = dense_arch();
    const CprConfig cfg = config({8, 8, 8}, -0.1, 0.1);
    const Dims nd{48, 4, 48};
    const Correspondence g = inverse_map_grid(c, cfg, nd);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < nd.depth; ++i)
        for (std::size_t k = 0; k < nd.width; ++k) {
            const std::size_t vox = nd.index(i, 1, k);
            if (!g.mask[vox]) continue;
            const NormCoord back = forward_map(c, cfg, g.grid.at(vox));
            EXPECT_NEAR(back.u, index_to_norm(i, nd.depth), 1e-4);
            EXPECT_NEAR(back.v, index_to_norm(1, nd.height), 1e-15);
            EXPECT_NEAR(back.w, index_to_norm(k, nd.width), 1e-4);
            ++checked;
        }
    EXPECT_GT(checked, 50u);
}

TEST(InverseMapGrid, InDomainFractionMatchesSlabArea) {
    // Arch and slab lie inside the axial square; a symmetric offset band of a
    // curve with |d| below its radius of curvature has area L * (d_max - d_min).
    const ArchCurve c = parabola_curve({0.8, {0.0, -0.5}, {0.0, 1.0}, -0.8, 0.8}, 2049);
    const CprConfig cfg = config({8, 8, 8}, -0.1, 0.1);
    const Dims nd{160, 2, 160};
    const Correspondence g = inverse_map_grid(c, cfg, nd);
    const double area = c.total_length() * (cfg.depth_max - cfg.depth_min);
    const double cell = (2.0 / (nd.depth - 1)) * (2.0 / (nd.width - 1));
    const double expected = area / cell * nd.height;
    EXPECT_NEAR(static_cast<double>(g.in_domain_count()) / expected, 1.0, 0.02);
}
