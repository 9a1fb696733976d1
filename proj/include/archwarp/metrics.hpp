#ifndef ARCHWARP_METRICS_HPP
#define ARCHWARP_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "archwarp/errors.hpp"
#include "archwarp/parallel.hpp"
#include "archwarp/volume.hpp"

namespace archwarp {

/// Returned by psnr when the two volumes are identical.
inline constexpr double kPsnrCapDb = 99.0;

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
    if (!(a == b)) throw DimensionError(std::string(what) + ": dims differ, " + a.str() + " vs " + b.str());
}

inline double mse(const Volume& a, const Volume& b) {
    require_same_dims(a.dims(), b.dims(), "mse");
    const double s = deterministic_sum(a.size(), [&](std::size_t i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        return d * d;
    });
    return s / static_cast<double>(a.size());
}

inline double psnr(const Volume& pred, const Volume& gt, double peak = 1.0) {
    if (!(peak > 0.0)) throw RangeError("psnr peak must be > 0");
    const double m = mse(pred, gt);
    if (m == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / m));
}

struct SsimOptions {
    std::size_t window = 7;
    bool gaussian = false;
    double sigma = 1.5;
    double c1 = 1e-4;  // (0.01)^2 for unit dynamic range
    double c2 = 9e-4;  // (0.03)^2
};

namespace detail {

// Valid-mode separable filter of a D x H x W field along one axis.
inline std::vector<double> filter_axis(const std::vector<double>& in, Dims n, std::size_t axis,
                                       const std::vector<double>& k, Dims& out_dims) {
    out_dims = n;
    const std::size_t win = k.size();
    if (axis == 0) out_dims.depth = n.depth - win + 1;
    if (axis == 1) out_dims.height = n.height - win + 1;
    if (axis == 2) out_dims.width = n.width - win + 1;
    const std::size_t stride = axis == 0 ? n.height * n.width : axis == 1 ? n.width : 1;
    std::vector<double> out(out_dims.size());
    parallel_for(out_dims.depth, [&](std::size_t d0, std::size_t d1) {
        for (std::size_t d = d0; d < d1; ++d)
            for (std::size_t h = 0; h < out_dims.height; ++h)
                for (std::size_t w = 0; w < out_dims.width; ++w) {
                    const double* src = in.data() + n.index(d, h, w);
                    double s = 0.0;
                    for (std::size_t t = 0; t < win; ++t) s += k[t] * src[t * stride];
                    out[out_dims.index(d, h, w)] = s;
                }
    }, 1);
    return out;
}

inline std::vector<double> window_weights(const SsimOptions& o) {
    std::vector<double> k(o.window, 1.0);
    if (o.gaussian) {
        const double c = 0.5 * static_cast<double>(o.window - 1);
        for (std::size_t i = 0; i < o.window; ++i) {
            const double x = static_cast<double>(i) - c;
            k[i] = std::exp(-x * x / (2.0 * o.sigma * o.sigma));
        }
    }
    double s = 0.0;
    for (double x : k) s += x;
    for (double& x : k) x /= s;
    return k;
}

}  // namespace detail

/// Mean SSIM over every valid window position. Inputs are expected to be
/// normalised to [0, 1] already.
inline double ssim3d(const Volume& pred, const Volume& gt, const SsimOptions& opt = {}) {
    require_same_dims(pred.dims(), gt.dims(), "ssim3d");
    const Dims& n = pred.dims();
    if (opt.window == 0) throw RangeError("ssim window must be >= 1");
    if (opt.gaussian && !(opt.sigma > 0.0)) throw RangeError("ssim gaussian sigma must be > 0");
    if (n.depth < opt.window || n.height < opt.window || n.width < opt.window)
        throw DimensionError("ssim window " + std::to_string(opt.window) + " exceeds volume dims " + n.str());

    const std::vector<double> k = detail::window_weights(opt);
    std::vector<std::vector<double>> fields(5, std::vector<double>(n.size()));
    for (std::size_t i = 0; i < n.size(); ++i) {
        const double x = pred[i], y = gt[i];
        fields[0][i] = x;
        fields[1][i] = y;
        fields[2][i] = x * x;
        fields[3][i] = y * y;
        fields[4][i] = x * y;
    }
    Dims od = n;
    for (auto& f : fields) {
        Dims cur = n;
        for (std::size_t a = 0; a < 3; ++a) f = detail::filter_axis(f, cur, a, k, cur);
        od = cur;
    }
    const std::size_t m = od.size();
    const double total = deterministic_sum(m, [&](std::size_t i) {
        const double mx = fields[0][i], my = fields[1][i];
        const double vx = fields[2][i] - mx * mx;
        const double vy = fields[3][i] - my * my;
        const double cxy = fields[4][i] - mx * my;
        return ((2.0 * mx * my + opt.c1) * (2.0 * cxy + opt.c2)) /
               ((mx * mx + my * my + opt.c1) * (vx + vy + opt.c2));
    });
    return total / static_cast<double>(m);
}

/// One byte per voxel; spacing in mm for distance metrics.
struct BinaryMask {
    Dims dims{};
    Spacing spacing{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> bits;

    std::size_t count() const {
        std::size_t c = 0;
        for (auto b : bits) c += b;
        return c;
    }
};

struct SharedThreshold {
    BinaryMask pred;
    BinaryMask gt;
    double mu_gt = 0.0;
};

/// Both volumes min-max normalised independently; both thresholded with the
/// strict rule value > mean(normalised gt).
inline SharedThreshold binarize_shared_threshold(const Volume& pred, const Volume& gt) {
    require_same_dims(pred.dims(), gt.dims(), "binarize");
    const Volume np = normalize_minmax(pred);
    const Volume ng = normalize_minmax(gt);
    SharedThreshold r;
    r.mu_gt = deterministic_sum(ng.size(), [&](std::size_t i) { return static_cast<double>(ng[i]); }) /
              static_cast<double>(ng.size());
    auto mask = [&](const Volume& v) {
        BinaryMask m{v.dims(), v.spacing(), std::vector<std::uint8_t>(v.size())};
        for (std::size_t i = 0; i < v.size(); ++i) m.bits[i] = static_cast<double>(v[i]) > r.mu_gt ? 1 : 0;
        return m;
    };
    r.pred = mask(np);
    r.gt = mask(ng);
    return r;
}

/// Dice coefficient; two empty masks score 1.
inline double dsc(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a.dims, b.dims, "dsc");
    std::size_t inter = 0, ca = 0, cb = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        ca += a.bits[i];
        cb += b.bits[i];
        inter += a.bits[i] & b.bits[i];
    }
    if (ca + cb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

class EmptyMaskError : public DataError {
public:
    using DataError::DataError;
};

/// Foreground voxels with at least one 6-neighbour in background. Neighbours
/// outside the volume count as background.
inline std::vector<std::uint8_t> surface_voxels(const BinaryMask& m) {
    const Dims& n = m.dims;
    std::vector<std::uint8_t> s(n.size(), 0);
    for (std::size_t d = 0; d < n.depth; ++d)
        for (std::size_t h = 0; h < n.height; ++h)
            for (std::size_t w = 0; w < n.width; ++w) {
                const std::size_t i = n.index(d, h, w);
                if (!m.bits[i]) continue;
                const bool edge = d == 0 || h == 0 || w == 0 || d + 1 == n.depth || h + 1 == n.height ||
                                  w + 1 == n.width;
                if (edge || !m.bits[n.index(d - 1, h, w)] || !m.bits[n.index(d + 1, h, w)] ||
                    !m.bits[n.index(d, h - 1, w)] || !m.bits[n.index(d, h + 1, w)] ||
                    !m.bits[n.index(d, h, w - 1)] || !m.bits[n.index(d, h, w + 1)])
                    s[i] = 1;
            }
    return s;
}

namespace detail {

// Lower-envelope 1D squared distance transform along a strided line, with
// sample spacing sp. Infinite entries are not sites.
inline void edt_line(double* f, std::size_t n, std::size_t stride, double sp, std::vector<double>& buf,
                     std::vector<std::size_t>& v, std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    buf.resize(n);
    v.resize(n);
    z.resize(n + 1);
    for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
    std::size_t k = 0;
    bool any = false;
    for (std::size_t q = 0; q < n; ++q) {
        if (buf[q] == inf) continue;
        if (!any) {
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            any = true;
            continue;
        }
        const double xq = static_cast<double>(q) * sp;
        double s = 0.0;
        for (;;) {  // z[0] = -inf, so k never underflows
            const double xv = static_cast<double>(v[k]) * sp;
            s = ((buf[q] + xq * xq) - (buf[v[k]] + xv * xv)) / (2.0 * (xq - xv));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (!any) return;
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double xq = static_cast<double>(q) * sp;
        while (z[k + 1] < xq) ++k;
        const double dx = static_cast<double>(q > v[k] ? q - v[k] : v[k] - q) * sp;
        f[q * stride] = dx * dx + buf[v[k]];
    }
}

}  // namespace detail

/// Squared Euclidean distance (mm^2) from every voxel to the nearest set voxel.
inline std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, Dims n, Spacing sp) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> f(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) f[i] = sites[i] ? 0.0 : inf;
    const std::size_t strides[3] = {n.height * n.width, n.width, 1};
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::size_t len = n[axis];
        const std::size_t lines = n.size() / len;
        parallel_for(lines, [&](std::size_t l0, std::size_t l1) {
            std::vector<double> buf, z;
            std::vector<std::size_t> v;
            for (std::size_t l = l0; l < l1; ++l) {
                // Map line number to its starting voxel.
                std::size_t start = 0;
                if (axis == 0) start = l;
                if (axis == 1) start = (l / n.width) * n.height * n.width + (l % n.width);
                if (axis == 2) start = l * n.width;
                detail::edt_line(f.data() + start, len, strides[axis], sp[axis], buf, v, z);
            }
        }, 64);
    }
    return f;
}

/// 95th percentile (nearest rank) of the pooled surface distances from a to b
/// and from b to a, in mm.
inline double hd95(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a.dims, b.dims, "hd95");
    if (a.spacing != b.spacing) throw DimensionError("hd95: mask spacings differ");
    if (a.count() == 0 || b.count() == 0) throw EmptyMaskError("hd95 is undefined for an empty mask");
    const auto sa = surface_voxels(a);
    const auto sb = surface_voxels(b);
    const auto da = squared_distance_transform(sa, a.dims, a.spacing);
    const auto db = squared_distance_transform(sb, b.dims, b.spacing);
    std::vector<double> dist;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i]) dist.push_back(std::sqrt(db[i]));
        if (sb[i]) dist.push_back(std::sqrt(da[i]));
    }
    std::sort(dist.begin(), dist.end());
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(dist.size())));
    return dist[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace archwarp

#endif
