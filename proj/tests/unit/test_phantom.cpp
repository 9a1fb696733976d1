#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace archwarp;
using testutil::Rng;

namespace {

PhantomSpec small_spec() {
    PhantomSpec s;
    s.dims = {48, 24, 96};
    s.seed = 7;
    return s;
}

}  // namespace

TEST(Phantom, BandOnlyMatchesMonteCarloArea) {
    PhantomSpec s = small_spec();
    s.teeth = 0;
    const Phantom ph = make_phantom(s);
    EXPECT_TRUE(ph.teeth.empty());
    std::size_t band = 0;
    for (float v : ph.volume.data()) {
        EXPECT_TRUE(v == 0.0f || v == 0.5f);
        band += v == 0.5f;
    }

    // Monte-Carlo area in the axial plane of the strip within half-thickness of
    // the parabola whose closest point is interior, using a brute-force
    // closest-sample search on an independent dense sampling.
    std::vector<Vec2> curve(4001);
    for (std::size_t i = 0; i < curve.size(); ++i)
        curve[i] = s.arch.at(s.arch.t_start + (s.arch.t_end - s.arch.t_start) * i / (curve.size() - 1.0));
    Rng rng(700);
    const int samples = 40000;
    int hits = 0;
    const double half = 0.5 * s.band_thickness;
    for (int n = 0; n < samples; ++n) {
        const Vec2 p{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        double best = 1e9;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < curve.size(); ++i) {
            const double dd = norm(p - curve[i]);
            if (dd < best) {
                best = dd;
                arg = i;
            }
        }
        if (best <= half && arg > 0 && arg + 1 < curve.size()) ++hits;
    }
    const double area = 4.0 * hits / samples;
    const Dims& n = s.dims;
    const double cell = (2.0 / (n.width - 1)) * (2.0 / (n.depth - 1));
    std::size_t rows = 0;
    for (std::size_t j = 0; j < n.height; ++j) {
        const double z = index_to_norm(static_cast<double>(j), n.height);
        rows += z >= s.band_bottom && z <= s.band_top;
    }
    const double expected = area / cell * static_cast<double>(rows);
    EXPECT_NEAR(static_cast<double>(band) / expected, 1.0, 0.03) << band << " vs " << expected;
}

TEST(Phantom, DeterministicForSeed) {
    PhantomSpec s = small_spec();
    s.noise = 0.05;
    const Phantom a = make_phantom(s), b = make_phantom(s);
    EXPECT_EQ(a.volume.data(), b.volume.data());
    s.seed = 8;
    const Phantom c = make_phantom(s);
    EXPECT_NE(a.volume.data(), c.volume.data());
    EXPECT_NE(a.teeth[0].radius, c.teeth[0].radius);
}

TEST(Phantom, TeethEvenlySpacedOnArch) {
    const Phantom ph = make_phantom(small_spec());
    ASSERT_EQ(ph.teeth.size(), 14u);
    const double L = ph.curve.total_length();
    for (std::size_t k = 0; k < 14; ++k) {
        const CurveProjection pr = ph.curve.project(ph.teeth[k].center, true);
        EXPECT_NEAR(pr.d, 0.0, 1e-9);
        EXPECT_NEAR(pr.s, (k + 0.5) * L / 14.0, 1e-6);
        EXPECT_LE(std::abs(ph.teeth[k].radius / 0.065 - 1.0), 0.1 + 1e-12);
    }
}

TEST(Phantom, TeethSitOnCanonicalMidDepth) {
    PhantomSpec s = small_spec();
    const Phantom ph = make_phantom(s);
    CprConfig cfg;
    cfg.canonical_dims = {64, 24, 128};
    const Volume can = flatten(ph.volume, ph.curve, cfg);
    const Dims& cd = cfg.canonical_dims;
    const double mid = cfg.u_of(0.0);
    const double mid_index = (mid + 1.0) * 0.5 * (cd.depth - 1);
    std::vector<double> sum(14, 0.0), cnt(14, 0.0);
    for (std::size_t i = 0; i < cd.depth; ++i)
        for (std::size_t j = 0; j < cd.height; ++j)
            for (std::size_t k = 0; k < cd.width; ++k) {
                if (can(i, j, k) <= 0.75f) continue;
                // Teeth are laid out at w = 2 (t + 1/2) / 14 - 1.
                const double w = index_to_norm(static_cast<double>(k), cd.width);
                const auto t = static_cast<std::size_t>(std::clamp((w + 1.0) * 7.0, 0.0, 13.0));
                sum[t] += static_cast<double>(i);
                cnt[t] += 1.0;
            }
    for (std::size_t t = 0; t < 14; ++t) {
        ASSERT_GT(cnt[t], 0.0) << "tooth " << t;
        EXPECT_NEAR(sum[t] / cnt[t], mid_index, 1.0) << "tooth " << t;
    }
}

TEST(Phantom, OverlappingTeethRejected) {
    PhantomSpec s = small_spec();
    s.teeth = 40;
    EXPECT_THROW(make_phantom(s), RangeError);
    s.teeth = 14;
    s.tooth_radius = -1.0;
    EXPECT_THROW(make_phantom(s), RangeError);
}
