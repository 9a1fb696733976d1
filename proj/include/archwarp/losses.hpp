#ifndef ARCHWARP_LOSSES_HPP
#define ARCHWARP_LOSSES_HPP

#include <cmath>
#include <cstddef>
#include <string>

#include "archwarp/errors.hpp"
#include "archwarp/grid.hpp"
#include "archwarp/parallel.hpp"

namespace archwarp {

struct LossWeights {
    double lambda_clip = 0.01;
    double lambda_tv = 0.1;
    double lambda_oob = 1.0;

    void validate() const {
        if (!(lambda_clip >= 0.0 && lambda_tv >= 0.0 && lambda_oob >= 0.0))
            throw RangeError("loss weights must be >= 0");
    }
};

/// How the raw lattice L1 term is reduced over entries.
enum class Reduce { Sum, Mean };

inline Reduce parse_reduce(const std::string& s) {
    if (s == "sum") return Reduce::Sum;
    if (s == "mean") return Reduce::Mean;
    throw RangeError("reduce must be 'sum' or 'mean', got '" + s + "'");
}

inline double sign_or_zero(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// || P_final_raw - P* ||_1, optionally divided by the entry count.
inline double loss_raw(const ControlLattice& p, const ControlLattice& target, Reduce reduce = Reduce::Sum) {
    p.require_same(target);
    const double s = deterministic_sum(p.size(), [&](std::size_t i) { return std::abs(p[i] - target[i]); });
    return reduce == Reduce::Mean ? s / static_cast<double>(p.size()) : s;
}

/// || clip(P) ||_1 with clip to [-1, 1].
inline double loss_clip(const ControlLattice& p) {
    return deterministic_sum(p.size(), [&](std::size_t i) { return std::abs(clamp_unit(p[i])); });
}

namespace detail {

// Calls fn(a, b) for every forward-neighbour pair of flat indices, over all
// three lattice axes and all three channels.
template <class Fn>
void for_each_lattice_edge(const Dims& n, Fn&& fn) {
    const std::size_t npts = n.size();
    for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t base = c * npts;
        for (std::size_t d = 0; d < n.depth; ++d)
            for (std::size_t h = 0; h < n.height; ++h)
                for (std::size_t w = 0; w < n.width; ++w) {
                    const std::size_t i = base + n.index(d, h, w);
                    if (d + 1 < n.depth) fn(i, base + n.index(d + 1, h, w));
                    if (h + 1 < n.height) fn(i, base + n.index(d, h + 1, w));
                    if (w + 1 < n.width) fn(i, base + n.index(d, h, w + 1));
                }
    }
}

}  // namespace detail

/// Anisotropic L1 total variation: absolute forward differences along all
/// lattice axes, summed over the three coordinate channels.
inline double tv(const ControlLattice& p) {
    double s = 0.0;
    detail::for_each_lattice_edge(p.dims(), [&](std::size_t a, std::size_t b) { s += std::abs(p[b] - p[a]); });
    return s;
}

/// Out-of-bound penalty: sum of max(|P| - 1, 0).
inline double oob(const ControlLattice& p) {
    return deterministic_sum(p.size(), [&](std::size_t i) {
        const double e = std::abs(p[i]) - 1.0;
        return e > 0.0 ? e : 0.0;
    });
}

/// Subgradient of tv, taking 0 at exact zero differences.
inline ControlLattice tv_gradient(const ControlLattice& p) {
    ControlLattice g(p.dims(), 0.0);
    detail::for_each_lattice_edge(p.dims(), [&](std::size_t a, std::size_t b) {
        const double s = sign_or_zero(p[b] - p[a]);
        g[b] += s;
        g[a] -= s;
    });
    return g;
}

/// Subgradient of oob, taking 0 at |P| = 1.
inline ControlLattice oob_gradient(const ControlLattice& p) {
    ControlLattice g(p.dims(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (std::abs(p[i]) > 1.0) g[i] = sign_or_zero(p[i]);
    return g;
}

struct LossBreakdown {
    double raw = 0.0;
    double clip = 0.0;
    double tv = 0.0;
    double oob = 0.0;
    double total = 0.0;
};

/// L_raw + lambda_clip * L_clip + lambda_tv * TV + lambda_oob * OOB, all on the
/// raw (unclipped) prediction.
inline LossBreakdown total_loss(const ControlLattice& p, const ControlLattice& target, const LossWeights& w,
                                Reduce reduce = Reduce::Sum) {
    w.validate();
    LossBreakdown b;
    b.raw = loss_raw(p, target, reduce);
    b.clip = loss_clip(p);
    b.tv = tv(p);
    b.oob = oob(p);
    b.total = b.raw + w.lambda_clip * b.clip + w.lambda_tv * b.tv + w.lambda_oob * b.oob;
    return b;
}

/// Subgradient of total_loss with respect to the raw prediction.
inline ControlLattice total_loss_gradient(const ControlLattice& p, const ControlLattice& target, const LossWeights& w,
                                          Reduce reduce = Reduce::Sum) {
    w.validate();
    p.require_same(target);
    const double raw_scale = reduce == Reduce::Mean ? 1.0 / static_cast<double>(p.size()) : 1.0;
    ControlLattice g(p.dims(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        g[i] = raw_scale * sign_or_zero(p[i] - target[i]);
        if (std::abs(p[i]) < 1.0) g[i] += w.lambda_clip * sign_or_zero(p[i]);
    }
    if (w.lambda_tv > 0.0) g += w.lambda_tv * tv_gradient(p);
    if (w.lambda_oob > 0.0) g += w.lambda_oob * oob_gradient(p);
    return g;
}

/// False when a +-eps move of `entry` crosses a kink of total_loss: P = P*,
/// P = 0, |P| = 1, or a zero neighbour difference.
inline bool total_loss_smooth_at(const ControlLattice& p, const ControlLattice& target, std::size_t entry,
                                 double eps) {
    const double x = p[entry];
    if (std::abs(x - target[entry]) <= eps || std::abs(x) <= eps || std::abs(std::abs(x) - 1.0) <= eps) return false;
    bool kink = false;
    detail::for_each_lattice_edge(p.dims(), [&](std::size_t a, std::size_t b) {
        if ((a == entry || b == entry) && std::abs(p[b] - p[a]) <= 2.0 * eps) kink = true;
    });
    return !kink;
}

}  // namespace archwarp

#endif
