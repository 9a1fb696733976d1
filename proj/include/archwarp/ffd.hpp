#ifndef ARCHWARP_FFD_HPP
#define ARCHWARP_FFD_HPP

#include <cstddef>
#include <utility>
#include <vector>

#include "archwarp/arch_curve.hpp"
#include "archwarp/cpr.hpp"
#include "archwarp/errors.hpp"
#include "archwarp/grid.hpp"
#include "archwarp/parallel.hpp"
#include "archwarp/volume.hpp"

namespace archwarp {

namespace detail {

// Interpolation cells mapping each of n_out output samples onto an axis of
// n_lat control points, corner-aligned.
inline std::vector<Cell> axis_cells(std::size_t n_out, std::size_t n_lat) {
    std::vector<Cell> cells(n_out);
    for (std::size_t o = 0; o < n_out; ++o)
        cells[o] = locate(norm_to_index(index_to_norm(static_cast<double>(o), n_out), n_lat), n_lat);
    return cells;
}

}  // namespace detail

/// Precomputed separable trilinear map from a lattice to a dense grid. The
/// forward pass is lattice -> grid and the adjoint pass accumulates dense
/// per-voxel gradients back onto control points.
class LatticeUpsampler {
public:
    LatticeUpsampler(Dims lattice_dims, Dims out_dims)
        : lat_(lattice_dims),
          out_(out_dims),
          cd_(detail::axis_cells(out_dims.depth, lattice_dims.depth)),
          ch_(detail::axis_cells(out_dims.height, lattice_dims.height)),
          cw_(detail::axis_cells(out_dims.width, lattice_dims.width)) {
        if (!lattice_dims.all_at_least(2)) throw DimensionError("lattice dims must be >= 2, got " + lattice_dims.str());
        if (!out_dims.all_at_least(2)) throw DimensionError("upsample target dims must be >= 2, got " + out_dims.str());
    }

    const Dims& lattice_dims() const { return lat_; }
    const Dims& out_dims() const { return out_; }

    DenseGrid forward(const ControlLattice& p) const {
        if (!(p.dims() == lat_)) throw DimensionError("lattice dims " + p.dims().str() + " do not match " + lat_.str());
        DenseGrid g(out_);
        const std::size_t npts = lat_.size();
        for (std::size_t c = 0; c < 3; ++c) {
            const double* src = p.coords().data() + c * npts;
            // Along width: (ld, lh, ow).
            std::vector<double> t1(lat_.depth * lat_.height * out_.width);
            for (std::size_t r = 0; r < lat_.depth * lat_.height; ++r)
                for (std::size_t o = 0; o < out_.width; ++o) {
                    const Cell k = cw_[o];
                    const double* row = src + r * lat_.width;
                    t1[r * out_.width + o] = (1.0 - k.frac) * row[k.lo] + k.frac * row[k.lo + 1];
                }
            // Along height: (ld, oh, ow).
            std::vector<double> t2(lat_.depth * out_.height * out_.width);
            for (std::size_t ld = 0; ld < lat_.depth; ++ld)
                for (std::size_t o = 0; o < out_.height; ++o) {
                    const Cell k = ch_[o];
                    const double* a = t1.data() + (ld * lat_.height + k.lo) * out_.width;
                    const double* b = a + out_.width;
                    double* dst = t2.data() + (ld * out_.height + o) * out_.width;
                    for (std::size_t w = 0; w < out_.width; ++w) dst[w] = (1.0 - k.frac) * a[w] + k.frac * b[w];
                }
            // Along depth into the interleaved grid.
            const std::size_t plane = out_.height * out_.width;
            parallel_for(out_.depth, [&](std::size_t o0, std::size_t o1) {
                for (std::size_t o = o0; o < o1; ++o) {
                    const Cell k = cd_[o];
                    const double* a = t2.data() + k.lo * plane;
                    const double* b = a + plane;
                    for (std::size_t q = 0; q < plane; ++q)
                        g.component(o * plane + q, c) = (1.0 - k.frac) * a[q] + k.frac * b[q];
                }
            }, 1);
        }
        return g;
    }

    /// Adjoint of forward: grad holds 3 values per output voxel (interleaved);
    /// returns the lattice-shaped sum of weight * grad.
    ControlLattice adjoint(const std::vector<double>& grad) const {
        if (grad.size() != 3 * out_.size()) throw DimensionError("adjoint input does not match upsample target");
        ControlLattice out(lat_, 0.0);
        const std::size_t npts = lat_.size();
        const std::size_t plane = out_.height * out_.width;
        for (std::size_t c = 0; c < 3; ++c) {
            // Depth: (ld, oh, ow).
            std::vector<double> t2(lat_.depth * plane, 0.0);
            for (std::size_t o = 0; o < out_.depth; ++o) {
                const Cell k = cd_[o];
                double* a = t2.data() + k.lo * plane;
                double* b = a + plane;
                for (std::size_t q = 0; q < plane; ++q) {
                    const double gq = grad[3 * (o * plane + q) + c];
                    a[q] += (1.0 - k.frac) * gq;
                    b[q] += k.frac * gq;
                }
            }
            // Height: (ld, lh, ow).
            std::vector<double> t1(lat_.depth * lat_.height * out_.width, 0.0);
            for (std::size_t ld = 0; ld < lat_.depth; ++ld)
                for (std::size_t o = 0; o < out_.height; ++o) {
                    const Cell k = ch_[o];
                    const double* src = t2.data() + (ld * out_.height + o) * out_.width;
                    double* a = t1.data() + (ld * lat_.height + k.lo) * out_.width;
                    double* b = a + out_.width;
                    for (std::size_t w = 0; w < out_.width; ++w) {
                        a[w] += (1.0 - k.frac) * src[w];
                        b[w] += k.frac * src[w];
                    }
                }
            // Width into the lattice channel.
            double* dst = out.coords().data() + c * npts;
            for (std::size_t r = 0; r < lat_.depth * lat_.height; ++r)
                for (std::size_t o = 0; o < out_.width; ++o) {
                    const Cell k = cw_[o];
                    const double gq = t1[r * out_.width + o];
                    dst[r * lat_.width + k.lo] += (1.0 - k.frac) * gq;
                    dst[r * lat_.width + k.lo + 1] += k.frac * gq;
                }
        }
        return out;
    }

private:
    Dims lat_;
    Dims out_;
    std::vector<Cell> cd_, ch_, cw_;
};

/// Dense grid by independent trilinear interpolation of each coordinate channel.
inline DenseGrid upsample_lattice(const ControlLattice& p, Dims out_dims) {
    return LatticeUpsampler(p.dims(), out_dims).forward(p);
}

/// Backward warp: output voxel x takes canonical(clip(G(x))). Output spacing is
/// supplied by the caller since the grid carries none.
inline Volume warp(const Volume& canonical, const DenseGrid& g, Spacing out_spacing) {
    require_samplable(canonical);
    const Dims& n = g.dims();
    if (n.size() == 0) throw DimensionError("warp grid is empty");
    std::vector<float> out(n.size());
    parallel_for(n.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            out[i] = static_cast<float>(detail::sample_unchecked(canonical, g.at(i)));
    });
    return Volume(n, out_spacing, std::move(out));
}

/// Arch-shaped initial lattice: every control point stores the canonical
/// coordinate that the CPR inverse of the parabola assigns to its native
/// position (heights pass through).
inline ControlLattice arch_prior(Dims dims, const ParabolaParams& parabola, double depth_min, double depth_max,
                                 std::size_t curve_samples = 1025) {
    const ArchCurve curve = parabola_curve(parabola, curve_samples);
    CprConfig cfg;
    cfg.depth_min = depth_min;
    cfg.depth_max = depth_max;
    if (!(depth_min < depth_max)) throw RangeError("depth range needs d_min < d_max");
    ControlLattice p = identity_lattice(dims);
    for (std::size_t pt = 0; pt < dims.size(); ++pt) {
        const NormCoord native{p.channel(0, pt), p.channel(1, pt), p.channel(2, pt)};
        const NormCoord c = canonical_of(curve, cfg, native);
        p.channel(0, pt) = c.u;
        p.channel(1, pt) = c.v;
        p.channel(2, pt) = c.w;
    }
    return p;
}

struct ComposedLattices {
    ControlLattice coarse_raw;
    ControlLattice final_raw;
};

/// Coarse then fine residual composition; no clipping is applied.
inline ComposedLattices compose_coarse_fine(const ControlLattice& p0, const ControlLattice& dp_coarse,
                                            const ControlLattice& dp_fine) {
    p0.require_same(dp_coarse);
    p0.require_same(dp_fine);
    ControlLattice coarse = p0 + dp_coarse;
    ControlLattice fin = coarse + dp_fine;
    return {std::move(coarse), std::move(fin)};
}

}  // namespace archwarp

#endif
