#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace archwarp;
using testutil::Rng;

namespace {

Volume from_values(Dims d, std::vector<float> v, Spacing sp = {1.0, 1.0, 1.0}) { return Volume(d, sp, std::move(v)); }

Volume constant(Dims d, float v) { return Volume(d, {1.0, 1.0, 1.0}, std::vector<float>(d.size(), v)); }

double oracle_mse(const Volume& a, const Volume& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    return s / static_cast<double>(a.size());
}

// Uniform-window SSIM with every window's statistics summed directly.
double oracle_ssim(const Volume& x, const Volume& y, std::size_t win) {
    const Dims& n = x.dims();
    const double c1 = 1e-4, c2 = 9e-4, m = static_cast<double>(win * win * win);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t d = 0; d + win <= n.depth; ++d)
        for (std::size_t h = 0; h + win <= n.height; ++h)
            for (std::size_t w = 0; w + win <= n.width; ++w) {
                double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
                for (std::size_t a = 0; a < win; ++a)
                    for (std::size_t b = 0; b < win; ++b)
                        for (std::size_t c = 0; c < win; ++c) {
                            const double vx = x(d + a, h + b, w + c), vy = y(d + a, h + b, w + c);
                            sx += vx;
                            sy += vy;
                            sxx += vx * vx;
                            syy += vy * vy;
                            sxy += vx * vy;
                        }
                const double mx = sx / m, my = sy / m;
                const double vx = sxx / m - mx * mx, vy = syy / m - my * my, cxy = sxy / m - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

BinaryMask make_mask(Dims d, Spacing sp, const std::vector<std::size_t>& on) {
    BinaryMask m{d, sp, std::vector<std::uint8_t>(d.size(), 0)};
    for (std::size_t i : on) m.bits[i] = 1;
    return m;
}

BinaryMask random_blobs(Dims d, Spacing sp, Rng& rng, int blobs) {
    BinaryMask m{d, sp, std::vector<std::uint8_t>(d.size(), 0)};
    for (int b = 0; b < blobs; ++b) {
        const double cd = rng.uniform(0, d.depth - 1.0), ch = rng.uniform(0, d.height - 1.0),
                     cw = rng.uniform(0, d.width - 1.0), r = rng.uniform(1.0, 3.5);
        for (std::size_t i = 0; i < d.depth; ++i)
            for (std::size_t j = 0; j < d.height; ++j)
                for (std::size_t k = 0; k < d.width; ++k) {
                    const double a = i - cd, bb = j - ch, c = k - cw;
                    if (a * a + bb * bb + c * c <= r * r) m.bits[d.index(i, j, k)] = 1;
                }
    }
    return m;
}

// Surface voxels and all-pairs nearest distances, pooled and ranked.
double oracle_hd95(const BinaryMask& a, const BinaryMask& b) {
    const Dims& n = a.dims;
    auto surface = [&](const BinaryMask& m) {
        std::vector<std::array<std::size_t, 3>> s;
        for (std::size_t d = 0; d < n.depth; ++d)
            for (std::size_t h = 0; h < n.height; ++h)
                for (std::size_t w = 0; w < n.width; ++w) {
                    if (!m.bits[n.index(d, h, w)]) continue;
                    const long idx[3] = {static_cast<long>(d), static_cast<long>(h), static_cast<long>(w)};
                    bool edge = false;
                    for (int ax = 0; ax < 3 && !edge; ++ax)
                        for (int dir : {-1, 1}) {
                            long q[3] = {idx[0], idx[1], idx[2]};
                            q[ax] += dir;
                            if (q[ax] < 0 || q[ax] >= static_cast<long>(n[static_cast<std::size_t>(ax)]) ||
                                !m.bits[n.index(static_cast<std::size_t>(q[0]), static_cast<std::size_t>(q[1]),
                                                static_cast<std::size_t>(q[2]))])
                                edge = true;
                        }
                    if (edge) s.push_back({d, h, w});
                }
        return s;
    };
    const auto sa = surface(a), sb = surface(b);
    auto nearest = [&](const std::array<std::size_t, 3>& p, const std::vector<std::array<std::size_t, 3>>& set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : set) {
            double s = 0.0;
            for (std::size_t ax = 0; ax < 3; ++ax) {
                const double dd = (static_cast<double>(p[ax]) - static_cast<double>(q[ax])) * a.spacing[ax];
                s += dd * dd;
            }
            best = std::min(best, std::sqrt(s));
        }
        return best;
    };
    std::vector<double> all;
    for (const auto& p : sa) all.push_back(nearest(p, sb));
    for (const auto& p : sb) all.push_back(nearest(p, sa));
    std::sort(all.begin(), all.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(all.size())));
    return all[rank - 1];
}

}  // namespace

TEST(Psnr, IdenticalIsCapped) {
    Rng rng(500);
    const Volume v = testutil::random_volume({4, 5, 6}, rng);
    EXPECT_EQ(psnr(v, v), kPsnrCapDb);
}

TEST(Psnr, UniformErrorTwentyDb) {
    const Volume gt = constant({4, 4, 4}, 0.25f);
    std::vector<float> p(64);
    for (std::size_t i = 0; i < 64; ++i) p[i] = static_cast<float>(0.25 + (i % 2 ? 0.1 : -0.1));
    const Volume pred = from_values({4, 4, 4}, p);
    EXPECT_NEAR(psnr(pred, gt), 20.0, 1e-6);
}

TEST(Psnr, RandomMatchesOracleAndIsMonotone) {
    Rng rng(501);
    const Volume gt = testutil::random_volume({6, 5, 7}, rng);
    const Volume noise = testutil::random_volume({6, 5, 7}, rng);
    double prev = -1.0;
    for (double scale : {0.5, 0.2, 0.1, 0.01}) {
        std::vector<float> p(gt.size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(gt[i] + scale * (noise[i] - 0.5));
        const Volume pred = from_values(gt.dims(), p);
        const double db = psnr(pred, gt, 1.5);
        EXPECT_NEAR(db, 10.0 * std::log10(2.25 / oracle_mse(pred, gt)), 1e-6);
        EXPECT_GT(db, prev);
        prev = db;
    }
}

TEST(Psnr, Errors) {
    const Volume a = constant({2, 2, 2}, 0.f), b = constant({2, 2, 3}, 0.f);
    EXPECT_THROW(psnr(a, b), DimensionError);
    EXPECT_THROW(psnr(a, a, 0.0), RangeError);
}

TEST(Ssim, IdentityIsOne) {
    Rng rng(502);
    for (int t = 0; t < 3; ++t) {
        const Volume v = testutil::random_volume({9, 8, 10}, rng);
        EXPECT_NEAR(ssim3d(v, v), 1.0, 1e-9);
        SsimOptions g;
        g.gaussian = true;
        EXPECT_NEAR(ssim3d(v, v, g), 1.0, 1e-9);
    }
}

TEST(Ssim, RandomMatchesOracle) {
    Rng rng(503);
    const Volume a = testutil::random_volume({9, 10, 8}, rng), b = testutil::random_volume({9, 10, 8}, rng);
    EXPECT_NEAR(ssim3d(a, b), oracle_ssim(a, b, 7), 1e-6);
    SsimOptions o;
    o.window = 3;
    EXPECT_NEAR(ssim3d(a, b, o), oracle_ssim(a, b, 3), 1e-6);
}

TEST(Ssim, InvertedBinaryIsNegative) {
    // Checkerboard: every 7^3 window holds both classes.
    const Dims d{8, 8, 8};
    std::vector<float> g(d.size()), p(d.size());
    for (std::size_t i = 0; i < d.depth; ++i)
        for (std::size_t j = 0; j < d.height; ++j)
            for (std::size_t k = 0; k < d.width; ++k) {
                const float v = (i + j + k) % 2 ? 1.0f : 0.0f;
                g[d.index(i, j, k)] = v;
                p[d.index(i, j, k)] = 1.0f - v;
            }
    const Volume gt = from_values(d, g), pred = from_values(d, p);
    const double s = ssim3d(pred, gt);
    EXPECT_LT(s, 0.0);
    EXPECT_NEAR(s, oracle_ssim(pred, gt, 7), 1e-9);
}

TEST(Ssim, WindowTooLarge) {
    const Volume v = constant({6, 8, 8}, 0.f);
    EXPECT_THROW(ssim3d(v, v), DimensionError);
}

TEST(Binarize, HalfHalf) {
    std::vector<float> g(16, 0.f);
    for (std::size_t i = 8; i < 16; ++i) g[i] = 1.f;
    const Volume gt = from_values({2, 2, 4}, g);
    const SharedThreshold t = binarize_shared_threshold(gt, gt);
    EXPECT_EQ(t.mu_gt, 0.5);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t.gt.bits[i], i >= 8 ? 1 : 0);
    EXPECT_EQ(t.pred.bits, t.gt.bits);
}

TEST(Binarize, RandomMatchesOracle) {
    Rng rng(504);
    for (int t = 0; t < 10; ++t) {
        Volume pred = testutil::random_volume({5, 6, 7}, rng), gt = testutil::random_volume({5, 6, 7}, rng);
        const SharedThreshold r = binarize_shared_threshold(pred, gt);
        auto norm = [](const Volume& v) {
            float lo = v[0], hi = v[0];
            for (float x : v.data()) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            std::vector<float> out(v.size());
            for (std::size_t i = 0; i < v.size(); ++i)
                out[i] = static_cast<float>((double(v[i]) - double(lo)) / (double(hi) - double(lo)));
            return out;
        };
        const auto np = norm(pred), ng = norm(gt);
        double mu = 0.0;
        for (float x : ng) mu += x;
        mu /= static_cast<double>(ng.size());
        EXPECT_NEAR(r.mu_gt, mu, 1e-12);
        for (std::size_t i = 0; i < ng.size(); ++i) {
            EXPECT_EQ(r.gt.bits[i], static_cast<double>(ng[i]) > r.mu_gt ? 1 : 0);
            EXPECT_EQ(r.pred.bits[i], static_cast<double>(np[i]) > r.mu_gt ? 1 : 0);
        }
    }
}

TEST(Binarize, GtMaskInvariantToPositiveAffine) {
    Rng rng(505);
    const Volume pred = testutil::random_volume({5, 5, 5}, rng);
    std::vector<float> g(125);
    for (float& x : g) x = rng.uniform() < 0.4 ? 1.0f : 0.0f;  // two levels survive rescaling exactly
    g[0] = 0.f;
    g[1] = 1.f;
    std::vector<float> h(g);
    for (float& x : h) x = 3.0f * x + 7.0f;
    const auto a = binarize_shared_threshold(pred, from_values({5, 5, 5}, g));
    const auto b = binarize_shared_threshold(pred, from_values({5, 5, 5}, h));
    EXPECT_EQ(a.gt.bits, b.gt.bits);
}

TEST(Dsc, Examples) {
    const Dims d{1, 1, 6};
    EXPECT_EQ(dsc(make_mask(d, {1, 1, 1}, {0, 1, 2}), make_mask(d, {1, 1, 1}, {0, 1, 2})), 1.0);
    EXPECT_NEAR(dsc(make_mask(d, {1, 1, 1}, {0, 1, 2}), make_mask(d, {1, 1, 1}, {1, 2, 3})), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(dsc(make_mask(d, {1, 1, 1}, {}), make_mask(d, {1, 1, 1}, {})), 1.0);
    EXPECT_THROW(dsc(make_mask(d, {1, 1, 1}, {}), make_mask({1, 2, 3}, {1, 1, 1}, {})), DimensionError);
}

TEST(Dsc, RandomMatchesPopcountAndIsSymmetric) {
    Rng rng(506);
    for (int t = 0; t < 20; ++t) {
        const Dims d{4, 5, 6};
        BinaryMask a{d, {1, 1, 1}, std::vector<std::uint8_t>(d.size())}, b = a;
        for (auto& x : a.bits) x = rng.uniform() < 0.3;
        for (auto& x : b.bits) x = rng.uniform() < 0.5;
        std::size_t ia = 0, ib = 0, both = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            ia += a.bits[i];
            ib += b.bits[i];
            both += a.bits[i] && b.bits[i];
        }
        const double v = dsc(a, b);
        EXPECT_EQ(v, 2.0 * both / static_cast<double>(ia + ib));
        EXPECT_EQ(v, dsc(b, a));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Hd95, TwoPointCase) {
    const Dims d{1, 1, 8};
    const Spacing sp{0.3, 0.3, 0.3};
    EXPECT_EQ(hd95(make_mask(d, sp, {1}), make_mask(d, sp, {5})), 1.2);
}

TEST(Hd95, IdenticalIsZero) {
    Rng rng(507);
    const BinaryMask m = random_blobs({10, 10, 10}, {0.5, 0.4, 0.3}, rng, 2);
    ASSERT_GT(m.count(), 0u);
    EXPECT_EQ(hd95(m, m), 0.0);
}

TEST(Hd95, RandomBlobsMatchBruteForce) {
    Rng rng(508);
    for (int t = 0; t < 6; ++t) {
        const Dims d{9, 11, 10};
        const Spacing sp{rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)};
        const BinaryMask a = random_blobs(d, sp, rng, 3), b = random_blobs(d, sp, rng, 2);
        if (a.count() == 0 || b.count() == 0) continue;
        EXPECT_NEAR(hd95(a, b), oracle_hd95(a, b), 1e-6);
        EXPECT_EQ(hd95(a, b), hd95(b, a));
    }
}

TEST(Hd95, DistanceTransformMatchesBruteForce) {
    Rng rng(509);
    const Dims d{6, 7, 5};
    const Spacing sp{0.7, 0.3, 1.1};
    std::vector<std::uint8_t> sites(d.size(), 0);
    for (auto& s : sites) s = rng.uniform() < 0.05;
    sites[3] = 1;
    const auto f = squared_distance_transform(sites, d, sp);
    for (std::size_t i = 0; i < d.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d.size(); ++j) {
            if (!sites[j]) continue;
            const double a = (double(i / 35) - double(j / 35)) * sp[0];
            const double b = (double(i / 5 % 7) - double(j / 5 % 7)) * sp[1];
            const double c = (double(i % 5) - double(j % 5)) * sp[2];
            best = std::min(best, a * a + b * b + c * c);
        }
        EXPECT_NEAR(f[i], best, 1e-9);
    }
}

TEST(Hd95, EmptyMaskIsError) {
    const Dims d{2, 2, 2};
    EXPECT_THROW(hd95(make_mask(d, {1, 1, 1}, {}), make_mask(d, {1, 1, 1}, {0})), EmptyMaskError);
}
