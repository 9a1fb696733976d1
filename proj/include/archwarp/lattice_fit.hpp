#ifndef ARCHWARP_LATTICE_FIT_HPP
#define ARCHWARP_LATTICE_FIT_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "archwarp/arch_curve.hpp"
#include "archwarp/cpr.hpp"
#include "archwarp/errors.hpp"
#include "archwarp/ffd.hpp"
#include "archwarp/grid.hpp"
#include "archwarp/losses.hpp"

namespace archwarp {

/// Outcome summary of a fit or optimisation run.
struct FitReport {
    std::size_t iterations = 0;
    double residual = 0.0;  // mean absolute dense-grid (or image) error
    std::map<std::string, double> terms;
    double wall_time_s = 0.0;
};

/// Masked least-squares problem "upsample(P) ~ G*" on a fixed lattice, with
/// the data normal equations accumulated once. Channels decouple, so one
/// banded system serves all three coordinate channels.
class LatticeFitProblem {
public:
    /// mask may be empty (every voxel counts) or hold one flag per voxel.
    LatticeFitProblem(const DenseGrid& target, const std::vector<std::uint8_t>& mask, Dims lattice_dims)
        : lat_(lattice_dims), dense_(target.dims()), target_(&target), mask_(&mask) {
        if (!lattice_dims.all_at_least(2)) throw DimensionError("lattice dims must be >= 2, got " + lattice_dims.str());
        if (!dense_.all_at_least(2)) throw DimensionError("dense grid dims must be >= 2, got " + dense_.str());
        if (!mask.empty() && mask.size() != dense_.size())
            throw DimensionError("mask has " + std::to_string(mask.size()) + " entries for " +
                                 std::to_string(dense_.size()) + " voxels");
        accumulate();
    }

    const Dims& lattice_dims() const { return lat_; }
    std::size_t masked_count() const { return masked_; }

    /// Minimises sum_masked |B P - G*|^2 + lambda_tv * sum_edges (P_a - P_b)^2,
    /// plus an optional squared-hinge pull of entries toward the [-1, 1]
    /// boundary with weight lambda_oob.
    ControlLattice solve(double lambda_tv, double lambda_oob = 0.0, const ControlLattice* start = nullptr) const {
        if (!(lambda_tv >= 0.0) || !(lambda_oob >= 0.0)) throw RangeError("fit weights must be >= 0");
        if (lambda_tv == 0.0) {
            for (std::size_t pt = 0; pt < lat_.size(); ++pt)
                if (!(band_[pt * 27 + 13] > 0.0))
                    throw RankError("control point " + std::to_string(pt) +
                                    " has no masked support; the fit is singular, use a positive lambda_tv");
        }
        const std::size_t npts = lat_.size();
        ControlLattice out(lat_, 0.0);
        for (std::size_t c = 0; c < 3; ++c) {
            std::vector<double> diag(npts, 0.0), shift(npts, 0.0);
            Eigen::VectorXd x = solve_channel(c, lambda_tv, diag, shift);
            if (lambda_oob > 0.0) {
                // Active-set iteration on the squared hinge max(|p| - 1, 0)^2.
                std::vector<std::int8_t> active(npts, 0);
                if (start != nullptr)
                    for (std::size_t i = 0; i < npts; ++i) active[i] = boundary_side(start->channel(c, i));
                else
                    for (std::size_t i = 0; i < npts; ++i) active[i] = boundary_side(x(static_cast<Eigen::Index>(i)));
                for (int it = 0; it < 25; ++it) {
                    for (std::size_t i = 0; i < npts; ++i) {
                        diag[i] = active[i] != 0 ? lambda_oob : 0.0;
                        shift[i] = active[i] != 0 ? lambda_oob * active[i] : 0.0;
                    }
                    x = solve_channel(c, lambda_tv, diag, shift);
                    bool changed = false;
                    for (std::size_t i = 0; i < npts; ++i) {
                        const std::int8_t s = boundary_side(x(static_cast<Eigen::Index>(i)));
                        if (s != active[i]) {
                            active[i] = s;
                            changed = true;
                        }
                    }
                    if (!changed) break;
                }
            }
            for (std::size_t i = 0; i < npts; ++i) out.channel(c, i) = x(static_cast<Eigen::Index>(i));
        }
        return out;
    }

    /// Mean absolute per-component error of upsample(P) on masked voxels.
    double mean_abs_residual(const ControlLattice& p) const { return masked_l1(p) / (3.0 * std::max<double>(1.0, masked_)); }

    /// Sum over masked voxels of || upsample(P)(x) - G*(x) ||_1.
    double masked_l1(const ControlLattice& p) const {
        const DenseGrid g = upsample_lattice(p, dense_);
        double s = 0.0;
        for (std::size_t v = 0; v < dense_.size(); ++v) {
            if (!mask_->empty() && (*mask_)[v] == 0) continue;
            for (std::size_t a = 0; a < 3; ++a) s += std::abs(g.component(v, a) - target_->component(v, a));
        }
        return s;
    }

private:
    static std::int8_t boundary_side(double x) { return x > 1.0 ? 1 : (x < -1.0 ? -1 : 0); }

    static std::size_t offset_slot(long dd, long dh, long dw) {
        return static_cast<std::size_t>((dd + 1) * 9 + (dh + 1) * 3 + (dw + 1));
    }

    void accumulate() {
        const std::size_t npts = lat_.size();
        band_.assign(npts * 27, 0.0);
        for (auto& r : rhs_) r.assign(npts, 0.0);
        const auto cd = detail::axis_cells(dense_.depth, lat_.depth);
        const auto ch = detail::axis_cells(dense_.height, lat_.height);
        const auto cw = detail::axis_cells(dense_.width, lat_.width);
        masked_ = 0;
        std::array<std::size_t, 8> idx{};
        std::array<double, 8> wt{};
        std::array<std::array<long, 3>, 8> pos{};
        for (std::size_t d = 0; d < dense_.depth; ++d)
            for (std::size_t h = 0; h < dense_.height; ++h)
                for (std::size_t w = 0; w < dense_.width; ++w) {
                    const std::size_t vox = dense_.index(d, h, w);
                    if (!mask_->empty() && (*mask_)[vox] == 0) continue;
                    ++masked_;
                    int n = 0;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e) {
                                const std::size_t ld = cd[d].lo + a, lh = ch[h].lo + b, lw = cw[w].lo + e;
                                idx[n] = lat_.index(ld, lh, lw);
                                pos[n] = {static_cast<long>(ld), static_cast<long>(lh), static_cast<long>(lw)};
                                wt[n] = (a ? cd[d].frac : 1.0 - cd[d].frac) * (b ? ch[h].frac : 1.0 - ch[h].frac) *
                                        (e ? cw[w].frac : 1.0 - cw[w].frac);
                                ++n;
                            }
                    const NormCoord g = target_->at(vox);
                    for (int i = 0; i < 8; ++i) {
                        if (wt[i] == 0.0) continue;
                        rhs_[0][idx[i]] += wt[i] * g.u;
                        rhs_[1][idx[i]] += wt[i] * g.v;
                        rhs_[2][idx[i]] += wt[i] * g.w;
                        for (int j = 0; j < 8; ++j) {
                            if (wt[j] == 0.0) continue;
                            band_[idx[i] * 27 + offset_slot(pos[j][0] - pos[i][0], pos[j][1] - pos[i][1],
                                                            pos[j][2] - pos[i][2])] += wt[i] * wt[j];
                        }
                    }
                }
    }

    Eigen::VectorXd solve_channel(std::size_t c, double lambda_tv, const std::vector<double>& diag,
                                  const std::vector<double>& shift) const {
        const std::size_t npts = lat_.size();
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(npts * 27 + npts * 7);
        for (std::size_t d = 0; d < lat_.depth; ++d)
            for (std::size_t h = 0; h < lat_.height; ++h)
                for (std::size_t w = 0; w < lat_.width; ++w) {
                    const std::size_t i = lat_.index(d, h, w);
                    for (long dd = -1; dd <= 1; ++dd)
                        for (long dh = -1; dh <= 1; ++dh)
                            for (long dw = -1; dw <= 1; ++dw) {
                                const double v = band_[i * 27 + offset_slot(dd, dh, dw)];
                                if (v == 0.0) continue;
                                const std::size_t j = lat_.index(static_cast<std::size_t>(static_cast<long>(d) + dd),
                                                                 static_cast<std::size_t>(static_cast<long>(h) + dh),
                                                                 static_cast<std::size_t>(static_cast<long>(w) + dw));
                                trip.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
                            }
                    if (diag[i] != 0.0) trip.emplace_back(static_cast<int>(i), static_cast<int>(i), diag[i]);
                }
        if (lambda_tv > 0.0) {
            const std::array<std::array<std::size_t, 3>, 3> steps{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
            for (std::size_t d = 0; d < lat_.depth; ++d)
                for (std::size_t h = 0; h < lat_.height; ++h)
                    for (std::size_t w = 0; w < lat_.width; ++w)
                        for (const auto& s : steps) {
                            const std::size_t d2 = d + s[0], h2 = h + s[1], w2 = w + s[2];
                            if (d2 >= lat_.depth || h2 >= lat_.height || w2 >= lat_.width) continue;
                            const int a = static_cast<int>(lat_.index(d, h, w));
                            const int b = static_cast<int>(lat_.index(d2, h2, w2));
                            trip.emplace_back(a, a, lambda_tv);
                            trip.emplace_back(b, b, lambda_tv);
                            trip.emplace_back(a, b, -lambda_tv);
                            trip.emplace_back(b, a, -lambda_tv);
                        }
        }
        const int n = static_cast<int>(npts);
        Eigen::SparseMatrix<double> A(n, n);
        A.setFromTriplets(trip.begin(), trip.end());
        Eigen::VectorXd b(n);
        for (std::size_t i = 0; i < npts; ++i) b(static_cast<Eigen::Index>(i)) = rhs_[c][i] + shift[i];

        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
        if (ldlt.info() != Eigen::Success) throw RankError("lattice fit factorisation failed; use a positive lambda_tv");
        const Eigen::VectorXd piv = ldlt.vectorD();
        const double dmax = piv.cwiseAbs().maxCoeff();
        if (!(piv.minCoeff() > 1e-12 * dmax))
            throw RankError("lattice fit normal equations are rank deficient; use a positive lambda_tv");
        Eigen::VectorXd x = ldlt.solve(b);
        if (!x.allFinite()) throw RankError("lattice fit produced non-finite coordinates");
        return x;
    }

    Dims lat_;
    Dims dense_;
    const DenseGrid* target_;
    const std::vector<std::uint8_t>* mask_;
    std::size_t masked_ = 0;
    std::vector<double> band_;
    std::array<std::vector<double>, 3> rhs_;
};

struct LatticeFit {
    ControlLattice lattice;
    FitReport report;
};

/// Fits a control lattice to a dense correspondence grid: quadratic data term
/// over masked voxels plus quadratic smoothness weighted by lambda_tv, solved
/// in closed form. The report carries the L1 objective
/// (masked L1 data error + lambda_tv * TV) and the mean absolute residual.
inline LatticeFit fit_lattice(const DenseGrid& target, const std::vector<std::uint8_t>& mask, Dims lattice_dims,
                              double lambda_tv) {
    const auto t0 = std::chrono::steady_clock::now();
    LatticeFitProblem problem(target, mask, lattice_dims);
    LatticeFit out{problem.solve(lambda_tv), {}};
    const double data = problem.masked_l1(out.lattice);
    out.report.iterations = 1;
    out.report.residual = data / (3.0 * std::max<double>(1.0, problem.masked_count()));
    out.report.terms["data_l1"] = data;
    out.report.terms["tv"] = tv(out.lattice);
    out.report.terms["l1_objective"] = data + lambda_tv * out.report.terms["tv"];
    out.report.terms["masked_voxels"] = static_cast<double>(problem.masked_count());
    out.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

/// Scales back every control point whose displacement from `reference`
/// exceeds tau so that the displacement has length exactly tau.
inline ControlLattice clip_extremes(const ControlLattice& p, double tau, const ControlLattice& reference) {
    if (!(tau > 0.0)) throw RangeError("clip threshold tau must be > 0");
    p.require_same(reference);
    ControlLattice out = p;
    for (std::size_t pt = 0; pt < p.point_count(); ++pt) {
        std::array<double, 3> disp{};
        double len2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            disp[c] = p.channel(c, pt) - reference.channel(c, pt);
            len2 += disp[c] * disp[c];
        }
        const double len = std::sqrt(len2);
        if (len <= tau) continue;
        const double scale = tau / len;
        for (std::size_t c = 0; c < 3; ++c) out.channel(c, pt) = reference.channel(c, pt) + disp[c] * scale;
    }
    return out;
}

/// Displacement measured from the identity lattice.
inline ControlLattice clip_extremes(const ControlLattice& p, double tau) {
    return clip_extremes(p, tau, identity_lattice(p.dims()));
}

inline double max_displacement(const ControlLattice& p, const ControlLattice& reference) {
    double m = 0.0;
    for (std::size_t pt = 0; pt < p.point_count(); ++pt) {
        double len2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = p.channel(c, pt) - reference.channel(c, pt);
            len2 += d * d;
        }
        m = std::max(m, std::sqrt(len2));
    }
    return m;
}

struct SupervisionOptions {
    Dims lattice_dims{8, 8, 16};
    double lambda_tv = 0.1;   // smoothness in the closed-form fit
    double lambda_oob = 1.0;  // boundary pull in the regularisation pass
    double clip_tau = 0.5;    // displacement limit relative to the arch prior
};

/// Cached supervision lattices and the intermediates that produced them.
struct Supervision {
    Correspondence correspondence;
    ParabolaFit parabola;
    ControlLattice prior;        // analytic arch prior, reference for clipping
    ControlLattice fitted;       // after the smooth closed-form fit
    ControlLattice p_star;       // after the boundary-constrained pass
    ControlLattice p_star_clip;  // after clipping extreme displacements
    FitReport report;
};

/// Supervision lattice generation for a canonical/native pair related by the
/// known CPR transform:
///   1. dense correspondence = analytic CPR inverse with in-slab mask;
///   2. closed-form lattice fit on masked voxels;
///   3. regularisation: quadratic smoothness plus a squared-hinge pull toward
///      the [-1, 1] sampling domain;
///   4. clip displacements from the arch prior exceeding clip_tau;
///   5. return P* and P*_clip for caching.
inline Supervision generate_supervision(Dims native_dims, const ArchCurve& curve, const CprConfig& cfg,
                                        const SupervisionOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    Correspondence corr = inverse_map_grid(curve, cfg, native_dims);
    LatticeFitProblem problem(corr.grid, corr.mask, opt.lattice_dims);
    ControlLattice fitted = problem.solve(opt.lambda_tv);
    ControlLattice p_star = opt.lambda_oob > 0.0 ? problem.solve(opt.lambda_tv, opt.lambda_oob, &fitted) : fitted;

    ParabolaFit parabola = fit_parabola(curve);
    ControlLattice prior = arch_prior(opt.lattice_dims, parabola.params, cfg.depth_min, cfg.depth_max);
    ControlLattice p_clip = clip_extremes(p_star, opt.clip_tau, prior);

    FitReport rep;
    rep.iterations = 1;
    const double data = problem.masked_l1(p_star);
    rep.residual = data / (3.0 * std::max<double>(1.0, problem.masked_count()));
    rep.terms["data_l1"] = data;
    rep.terms["tv"] = tv(p_star);
    rep.terms["oob"] = oob(p_star);
    rep.terms["masked_voxels"] = static_cast<double>(problem.masked_count());
    rep.terms["fit_residual_before_boundary"] = problem.mean_abs_residual(fitted);
    rep.terms["clip_residual"] = problem.mean_abs_residual(p_clip);
    rep.terms["max_displacement_from_prior"] = max_displacement(p_star, prior);
    rep.terms["parabola_rms"] = parabola.residual_rms;
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    return {std::move(corr), parabola, std::move(prior), std::move(fitted), std::move(p_star), std::move(p_clip),
            std::move(rep)};
}

}  // namespace archwarp

#endif
