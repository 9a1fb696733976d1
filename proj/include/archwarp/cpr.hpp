#ifndef ARCHWARP_CPR_HPP
#define ARCHWARP_CPR_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

#include "archwarp/arch_curve.hpp"
#include "archwarp/errors.hpp"
#include "archwarp/grid.hpp"
#include "archwarp/parallel.hpp"
#include "archwarp/volume.hpp"

// Curved planar reformation along an axial arch curve.
//
// Native volumes use axes (D, H, W) = (anterior-posterior y, vertical, left-right x):
// an arch point (x, y) sits at native normalized coordinate (u=y, w=x), and the
// vertical component passes through unchanged. Canonical volumes use
// (depth across the arch, height, arc length).

namespace archwarp {

struct CprConfig {
    Dims canonical_dims{64, 64, 128};
    double depth_min = -0.3;
    double depth_max = 0.3;

    void validate() const {
        if (!canonical_dims.all_at_least(2))
            throw DimensionError("canonical dims must be >= 2, got " + canonical_dims.str());
        if (!(depth_min < depth_max)) throw RangeError("depth range needs d_min < d_max");
    }

    double depth_of(double u) const { return depth_min + 0.5 * (u + 1.0) * (depth_max - depth_min); }
    double u_of(double depth) const { return 2.0 * (depth - depth_min) / (depth_max - depth_min) - 1.0; }
};

constexpr Vec2 planar_of(const NormCoord& native) { return {native.w, native.u}; }
constexpr NormCoord native_of(Vec2 planar, double height) { return {planar.y, height, planar.x}; }

/// Canonical (depth u, height v, arc w) to native normalized coordinates.
/// Arc coordinates outside [-1, 1] extrapolate along the end segments.
inline NormCoord forward_map(const ArchCurve& curve, const CprConfig& cfg, const NormCoord& c) {
    const double s = 0.5 * (c.w + 1.0) * curve.total_length();
    const CurveFrame f = curve.point_at_extended(s);
    const Vec2 q = f.point + cfg.depth_of(c.u) * f.normal;
    return native_of(q, c.v);
}

/// Canonical coordinate assigned to a native position: the end-extended
/// closest-point projection mapped back through the linear arc and depth maps.
inline NormCoord canonical_of(const ArchCurve& curve, const CprConfig& cfg, const NormCoord& native) {
    const CurveProjection pr = curve.project(planar_of(native), true);
    return {cfg.u_of(pr.d), native.v, 2.0 * pr.s / curve.total_length() - 1.0};
}

/// Canonical volume where voxel (u, v, w) samples the native volume at
/// forward_map(u, v, w). Canonical spacing is nominal: arc and depth spacings
/// use the native W and D scales respectively.
inline Volume flatten(const Volume& vol, const ArchCurve& curve, const CprConfig& cfg) {
    cfg.validate();
    require_samplable(vol);
    const Dims& cd = cfg.canonical_dims;
    const Dims& nd = vol.dims();

    // Axial positions depend only on (depth, arc); height passes through.
    std::vector<Vec2> axial(cd.depth * cd.width);
    for (std::size_t i = 0; i < cd.depth; ++i)
        for (std::size_t k = 0; k < cd.width; ++k) {
            const NormCoord c{index_to_norm(static_cast<double>(i), cd.depth), 0.0,
                              index_to_norm(static_cast<double>(k), cd.width)};
            axial[i * cd.width + k] = planar_of(forward_map(curve, cfg, c));
        }

    std::vector<float> out(cd.size());
    parallel_for(cd.depth, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i)
            for (std::size_t j = 0; j < cd.height; ++j) {
                const double v = index_to_norm(static_cast<double>(j), cd.height);
                for (std::size_t k = 0; k < cd.width; ++k)
                    out[cd.index(i, j, k)] =
                        static_cast<float>(detail::sample_unchecked(vol, native_of(axial[i * cd.width + k], v)));
            }
    }, 1);

    const double mm_per_unit_y = vol.spacing()[0] * static_cast<double>(nd.depth - 1) / 2.0;
    const double mm_per_unit_x = vol.spacing()[2] * static_cast<double>(nd.width - 1) / 2.0;
    const Spacing sp{(cfg.depth_max - cfg.depth_min) * mm_per_unit_y / static_cast<double>(cd.depth - 1),
                     vol.spacing()[1] * static_cast<double>(nd.height - 1) / static_cast<double>(cd.height - 1),
                     curve.total_length() * mm_per_unit_x / static_cast<double>(cd.width - 1)};
    return Volume(cd, sp, std::move(out));
}

/// 2D image, row-major (height x width).
struct Image2D {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    float operator()(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

enum class Projection { Mean, Max };

/// Panorama by projecting the canonical volume along its depth axis.
/// Mean projection is the contract; Max is for inspection only.
inline Image2D synth_panorama(const Volume& canonical, Projection mode = Projection::Mean) {
    const Dims& n = canonical.dims();
    Image2D img{n.height, n.width, std::vector<float>(n.height * n.width)};
    for (std::size_t j = 0; j < n.height; ++j)
        for (std::size_t k = 0; k < n.width; ++k) {
            double acc = mode == Projection::Mean ? 0.0 : canonical(0, j, k);
            for (std::size_t i = 0; i < n.depth; ++i) {
                const double x = canonical(i, j, k);
                if (mode == Projection::Mean)
                    acc += x;
                else if (x > acc)
                    acc = x;
            }
            if (mode == Projection::Mean) acc /= static_cast<double>(n.depth);
            img.pixels[j * n.width + k] = static_cast<float>(acc);
        }
    return img;
}

/// Dense correspondence for native voxels with an explicit in-domain mask.
struct Correspondence {
    DenseGrid grid;
    std::vector<std::uint8_t> mask;

    std::size_t in_domain_count() const {
        std::size_t n = 0;
        for (auto m : mask) n += m;
        return n;
    }
};

/// For every native voxel centre, the canonical coordinate that reconstructs
/// it. Coordinates are unclamped; mask marks voxels inside the CPR slab.
inline Correspondence inverse_map_grid(const ArchCurve& curve, const CprConfig& cfg, Dims native_dims) {
    cfg.validate();
    if (native_dims.size() == 0) throw DimensionError("native dims must be positive");
    Correspondence out{DenseGrid(native_dims), std::vector<std::uint8_t>(native_dims.size(), 0)};

    const std::size_t axial_count = native_dims.depth * native_dims.width;
    std::vector<NormCoord> axial(axial_count);
    parallel_for(axial_count, [&](std::size_t b, std::size_t e) {
        for (std::size_t idx = b; idx < e; ++idx) {
            const std::size_t i = idx / native_dims.width;
            const std::size_t k = idx % native_dims.width;
            const NormCoord native{index_to_norm(static_cast<double>(i), native_dims.depth), 0.0,
                                   index_to_norm(static_cast<double>(k), native_dims.width)};
            axial[idx] = canonical_of(curve, cfg, native);
        }
    }, 64);

    for (std::size_t i = 0; i < native_dims.depth; ++i)
        for (std::size_t j = 0; j < native_dims.height; ++j) {
            const double v = index_to_norm(static_cast<double>(j), native_dims.height);
            for (std::size_t k = 0; k < native_dims.width; ++k) {
                const NormCoord a = axial[i * native_dims.width + k];
                const std::size_t vox = native_dims.index(i, j, k);
                const NormCoord c{a.u, v, a.w};
                out.grid.set(vox, c);
                out.mask[vox] = in_domain(c) ? 1 : 0;
            }
        }
    return out;
}

}  // namespace archwarp

#endif
