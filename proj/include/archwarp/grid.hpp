#ifndef ARCHWARP_GRID_HPP
#define ARCHWARP_GRID_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "archwarp/errors.hpp"
#include "archwarp/volume.hpp"

namespace archwarp {

/// Sparse control lattice: three coordinate channels (u, v, w) of absolute
/// normalized sampling positions over a Dc x Hc x Wc grid of control points.
/// Stored channel-major, then depth-major, matching the lattice file layout.
class ControlLattice {
public:
    ControlLattice() = default;

    explicit ControlLattice(Dims dims, double fill = 0.0) : dims_(dims), coords_(3 * dims.size(), fill) {
        if (!dims.all_at_least(2)) throw DimensionError("control lattice dims must be >= 2, got " + dims.str());
    }

    ControlLattice(Dims dims, std::vector<double> coords) : dims_(dims), coords_(std::move(coords)) {
        if (!dims.all_at_least(2)) throw DimensionError("control lattice dims must be >= 2, got " + dims.str());
        if (coords_.size() != 3 * dims.size())
            throw DimensionError("control lattice " + dims.str() + " needs " + std::to_string(3 * dims.size()) +
                                 " coordinates, got " + std::to_string(coords_.size()));
        for (double c : coords_)
            if (!std::isfinite(c)) throw DataError("control lattice holds a non-finite coordinate");
    }

    const Dims& dims() const { return dims_; }
    std::size_t point_count() const { return dims_.size(); }
    std::size_t size() const { return coords_.size(); }
    const std::vector<double>& coords() const { return coords_; }
    std::vector<double>& coords() { return coords_; }

    double& operator()(std::size_t axis, std::size_t d, std::size_t h, std::size_t w) {
        return coords_[axis * dims_.size() + dims_.index(d, h, w)];
    }
    double operator()(std::size_t axis, std::size_t d, std::size_t h, std::size_t w) const {
        return coords_[axis * dims_.size() + dims_.index(d, h, w)];
    }
    double& operator[](std::size_t i) { return coords_[i]; }
    double operator[](std::size_t i) const { return coords_[i]; }

    /// Channel `axis` of control point `point` (linear point index).
    double channel(std::size_t axis, std::size_t point) const { return coords_[axis * dims_.size() + point]; }
    double& channel(std::size_t axis, std::size_t point) { return coords_[axis * dims_.size() + point]; }

    ControlLattice& operator+=(const ControlLattice& o) {
        require_same(o);
        for (std::size_t i = 0; i < coords_.size(); ++i) coords_[i] += o.coords_[i];
        return *this;
    }
    ControlLattice& operator-=(const ControlLattice& o) {
        require_same(o);
        for (std::size_t i = 0; i < coords_.size(); ++i) coords_[i] -= o.coords_[i];
        return *this;
    }
    ControlLattice& operator*=(double s) {
        for (double& c : coords_) c *= s;
        return *this;
    }
    friend ControlLattice operator+(ControlLattice a, const ControlLattice& b) { return a += b; }
    friend ControlLattice operator-(ControlLattice a, const ControlLattice& b) { return a -= b; }
    friend ControlLattice operator*(double s, ControlLattice a) { return a *= s; }

    void require_same(const ControlLattice& o) const {
        if (!(o.dims_ == dims_))
            throw DimensionError("control lattice dims differ: " + dims_.str() + " vs " + o.dims_.str());
    }

private:
    Dims dims_{};
    std::vector<double> coords_;
};

/// Dense sampling grid: one normalized coordinate triple per output voxel,
/// interleaved as D x H x W x 3.
class DenseGrid {
public:
    DenseGrid() = default;
    explicit DenseGrid(Dims dims) : dims_(dims), coords_(3 * dims.size(), 0.0) {
        if (dims.size() == 0) throw DimensionError("dense grid dims must be positive");
    }

    const Dims& dims() const { return dims_; }
    std::size_t voxel_count() const { return dims_.size(); }
    const std::vector<double>& coords() const { return coords_; }
    std::vector<double>& coords() { return coords_; }

    NormCoord at(std::size_t voxel) const {
        const double* p = coords_.data() + 3 * voxel;
        return {p[0], p[1], p[2]};
    }
    NormCoord at(std::size_t d, std::size_t h, std::size_t w) const { return at(dims_.index(d, h, w)); }
    void set(std::size_t voxel, const NormCoord& c) {
        double* p = coords_.data() + 3 * voxel;
        p[0] = c.u;
        p[1] = c.v;
        p[2] = c.w;
    }
    double component(std::size_t voxel, std::size_t axis) const { return coords_[3 * voxel + axis]; }
    double& component(std::size_t voxel, std::size_t axis) { return coords_[3 * voxel + axis]; }

private:
    Dims dims_{};
    std::vector<double> coords_;
};

/// Lattice whose control points hold their own normalized positions.
inline ControlLattice identity_lattice(Dims dims) {
    ControlLattice p(dims);
    for (std::size_t d = 0; d < dims.depth; ++d)
        for (std::size_t h = 0; h < dims.height; ++h)
            for (std::size_t w = 0; w < dims.width; ++w) {
                p(0, d, h, w) = index_to_norm(static_cast<double>(d), dims.depth);
                p(1, d, h, w) = index_to_norm(static_cast<double>(h), dims.height);
                p(2, d, h, w) = index_to_norm(static_cast<double>(w), dims.width);
            }
    return p;
}

inline bool is_identity(const ControlLattice& p, double tol = 0.0) {
    const ControlLattice id = identity_lattice(p.dims());
    for (std::size_t i = 0; i < p.size(); ++i)
        if (std::abs(p[i] - id[i]) > tol) return false;
    return true;
}

/// Dense grid mapping every voxel to its own normalized position.
inline DenseGrid identity_grid(Dims dims) {
    DenseGrid g(dims);
    for (std::size_t d = 0; d < dims.depth; ++d)
        for (std::size_t h = 0; h < dims.height; ++h)
            for (std::size_t w = 0; w < dims.width; ++w)
                g.set(dims.index(d, h, w), {index_to_norm(static_cast<double>(d), dims.depth),
                                            index_to_norm(static_cast<double>(h), dims.height),
                                            index_to_norm(static_cast<double>(w), dims.width)});
    return g;
}

inline ControlLattice clip_lattice(ControlLattice p) {
    for (double& c : p.coords()) c = clamp_unit(c);
    return p;
}

inline DenseGrid clip_grid(DenseGrid g) {
    for (double& c : g.coords()) c = clamp_unit(c);
    return g;
}

}  // namespace archwarp

#endif
