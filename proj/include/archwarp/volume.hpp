#ifndef ARCHWARP_VOLUME_HPP
#define ARCHWARP_VOLUME_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "archwarp/errors.hpp"
#include "archwarp/parallel.hpp"

namespace archwarp {

/// Extent of a 3D array in (depth, height, width) order. Storage is always
/// depth-major, then row-major: index = (d * height + h) * width + w.
struct Dims {
    std::size_t depth = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    constexpr std::size_t size() const { return depth * height * width; }
    constexpr std::size_t operator[](std::size_t axis) const {
        return axis == 0 ? depth : axis == 1 ? height : width;
    }
    constexpr std::size_t index(std::size_t d, std::size_t h, std::size_t w) const {
        return (d * height + h) * width + w;
    }
    constexpr bool all_at_least(std::size_t n) const {
        return depth >= n && height >= n && width >= n;
    }
    friend constexpr bool operator==(const Dims&, const Dims&) = default;

    std::string str() const {
        return std::to_string(depth) + "x" + std::to_string(height) + "x" + std::to_string(width);
    }
};

/// Millimetres per voxel along (depth, height, width).
using Spacing = std::array<double, 3>;

/// Normalized sampling coordinate. Components run along (depth, height, width);
/// -1 is the centre of the first voxel along an axis and +1 the centre of the
/// last one (corner-aligned).
struct NormCoord {
    double u = 0.0;
    double v = 0.0;
    double w = 0.0;

    constexpr double operator[](std::size_t axis) const { return axis == 0 ? u : axis == 1 ? v : w; }
    friend constexpr bool operator==(const NormCoord&, const NormCoord&) = default;
};

constexpr bool in_domain(const NormCoord& c) {
    return c.u >= -1.0 && c.u <= 1.0 && c.v >= -1.0 && c.v <= 1.0 && c.w >= -1.0 && c.w <= 1.0;
}

/// Normalized coordinate of voxel index i on an axis of n voxels. A single-voxel
/// axis maps to 0.
constexpr double index_to_norm(double i, std::size_t n) {
    return n > 1 ? -1.0 + 2.0 * i / static_cast<double>(n - 1) : 0.0;
}

/// Continuous voxel index of normalized coordinate c on an axis of n voxels.
constexpr double norm_to_index(double c, std::size_t n) {
    return (c + 1.0) * 0.5 * static_cast<double>(n - 1);
}

constexpr double clamp_unit(double c) { return c < -1.0 ? -1.0 : (c > 1.0 ? 1.0 : c); }

/// Linear interpolation cell for a continuous index x on an axis of n >= 2
/// voxels: lower neighbour and fractional offset, with x already in [0, n-1].
struct Cell {
    std::size_t lo;
    double frac;
};

inline Cell locate(double x, std::size_t n) {
    // Snap round-off around voxel centres so grid points sample exactly.
    const double r = std::round(x);
    if (std::abs(x - r) < 1e-9) x = r;
    const double top = static_cast<double>(n - 2);
    double f = std::floor(x);
    if (f > top) f = top;
    if (f < 0.0) f = 0.0;
    return {static_cast<std::size_t>(f), x - f};
}

/// A 3D scalar intensity field with physical spacing.
class Volume {
public:
    Volume() = default;

    Volume(Dims dims, Spacing spacing, std::vector<float> data)
        : dims_(dims), spacing_(spacing), data_(std::move(data)) {
        if (dims_.size() == 0) throw DimensionError("volume dims must be positive, got " + dims_.str());
        if (data_.size() != dims_.size())
            throw DimensionError("volume data holds " + std::to_string(data_.size()) + " samples, dims " +
                                 dims_.str() + " need " + std::to_string(dims_.size()));
        for (double s : spacing_)
            if (!(s > 0.0) || !std::isfinite(s)) throw RangeError("voxel spacing must be finite and > 0");
        for (float x : data_)
            if (!std::isfinite(x)) throw DataError("volume contains a non-finite intensity");
    }

    static Volume filled(Dims dims, float value, Spacing spacing = {1.0, 1.0, 1.0}) {
        return Volume(dims, spacing, std::vector<float>(dims.size(), value));
    }

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    const std::vector<float>& data() const { return data_; }
    std::size_t size() const { return data_.size(); }

    float operator()(std::size_t d, std::size_t h, std::size_t w) const { return data_[dims_.index(d, h, w)]; }
    float operator[](std::size_t i) const { return data_[i]; }

    std::pair<float, float> minmax() const {
        const auto [lo, hi] = std::minmax_element(data_.begin(), data_.end());
        return {*lo, *hi};
    }

private:
    Dims dims_{};
    Spacing spacing_{1.0, 1.0, 1.0};
    std::vector<float> data_;
};

inline void require_samplable(const Volume& vol) {
    if (!vol.dims().all_at_least(2))
        throw DimensionError("trilinear sampling needs every dim >= 2, got " + vol.dims().str());
}

namespace detail {

// Trilinear interpolation at a continuous voxel index already clamped to the
// volume. Callers guarantee every dim >= 2.
inline double trilinear_at_index(const Volume& vol, double xd, double xh, double xw) {
    const Dims& n = vol.dims();
    const Cell cd = locate(xd, n.depth);
    const Cell ch = locate(xh, n.height);
    const Cell cw = locate(xw, n.width);
    const float* p = vol.data().data() + n.index(cd.lo, ch.lo, cw.lo);
    const std::size_t sh = n.width;
    const std::size_t sd = n.width * n.height;
    const double c000 = p[0], c001 = p[1], c010 = p[sh], c011 = p[sh + 1];
    const double c100 = p[sd], c101 = p[sd + 1], c110 = p[sd + sh], c111 = p[sd + sh + 1];
    const double c00 = c000 + (c001 - c000) * cw.frac;
    const double c01 = c010 + (c011 - c010) * cw.frac;
    const double c10 = c100 + (c101 - c100) * cw.frac;
    const double c11 = c110 + (c111 - c110) * cw.frac;
    const double c0 = c00 + (c01 - c00) * ch.frac;
    const double c1 = c10 + (c11 - c10) * ch.frac;
    return c0 + (c1 - c0) * cd.frac;
}

inline double sample_unchecked(const Volume& vol, const NormCoord& c) {
    const Dims& n = vol.dims();
    return trilinear_at_index(vol, norm_to_index(clamp_unit(c.u), n.depth),
                              norm_to_index(clamp_unit(c.v), n.height),
                              norm_to_index(clamp_unit(c.w), n.width));
}

}  // namespace detail

/// Trilinear interpolation under the corner-aligned convention. Coordinates
/// outside [-1, 1] are clamped to the border first.
inline double sample_trilinear(const Volume& vol, const NormCoord& c) {
    require_samplable(vol);
    return detail::sample_unchecked(vol, c);
}

/// Min-max rescale to [0, 1]. A constant volume maps to all zeros.
inline Volume normalize_minmax(const Volume& vol) {
    const auto [lo, hi] = vol.minmax();
    std::vector<float> out(vol.size(), 0.0f);
    if (hi > lo) {
        const double lo_d = lo;
        const double range = static_cast<double>(hi) - lo_d;
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<float>((static_cast<double>(vol[i]) - lo_d) / range);
    }
    return Volume(vol.dims(), vol.spacing(), std::move(out));
}

/// Resamples onto new_dims so that output voxel at normalized coordinate c
/// equals sample_trilinear(vol, c). Spacing is rescaled so the physical
/// first-to-last voxel-centre extent is unchanged.
inline Volume resample(const Volume& vol, Dims new_dims) {
    require_samplable(vol);
    if (!new_dims.all_at_least(2)) throw DimensionError("resample target dims must be >= 2, got " + new_dims.str());
    const Dims& n = vol.dims();
    Spacing sp{};
    for (std::size_t a = 0; a < 3; ++a)
        sp[a] = n[a] == new_dims[a] ? vol.spacing()[a]
                                    : vol.spacing()[a] * static_cast<double>(n[a] - 1) /
                                          static_cast<double>(new_dims[a] - 1);

    std::vector<float> out(new_dims.size());
    std::vector<double> xd(new_dims.depth), xh(new_dims.height), xw(new_dims.width);
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = norm_to_index(index_to_norm(i, new_dims.depth), n.depth);
    for (std::size_t i = 0; i < xh.size(); ++i) xh[i] = norm_to_index(index_to_norm(i, new_dims.height), n.height);
    for (std::size_t i = 0; i < xw.size(); ++i) xw[i] = norm_to_index(index_to_norm(i, new_dims.width), n.width);

    parallel_for(new_dims.depth, [&](std::size_t d0, std::size_t d1) {
        for (std::size_t d = d0; d < d1; ++d)
            for (std::size_t h = 0; h < new_dims.height; ++h)
                for (std::size_t w = 0; w < new_dims.width; ++w)
                    out[new_dims.index(d, h, w)] =
                        static_cast<float>(detail::trilinear_at_index(vol, xd[d], xh[h], xw[w]));
    }, 1);
    return Volume(new_dims, sp, std::move(out));
}

}  // namespace archwarp

#endif
