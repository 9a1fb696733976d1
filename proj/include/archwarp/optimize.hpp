#ifndef ARCHWARP_OPTIMIZE_HPP
#define ARCHWARP_OPTIMIZE_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "archwarp/errors.hpp"
#include "archwarp/ffd.hpp"
#include "archwarp/grid.hpp"
#include "archwarp/lattice_fit.hpp"
#include "archwarp/losses.hpp"
#include "archwarp/parallel.hpp"
#include "archwarp/volume.hpp"

namespace archwarp {

/// Optimisation produced a non-finite objective. Carries the last iterate
/// whose objective was finite.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& msg, ControlLattice last_stable)
        : std::runtime_error(msg), last_(std::move(last_stable)) {}
    const ControlLattice& last_stable() const { return last_; }

private:
    ControlLattice last_;
};

namespace detail {

// Trilinear value and its derivative with respect to the continuous index.
inline double trilinear_with_gradient(const Volume& vol, double xd, double xh, double xw, double* grad) {
    const Dims& n = vol.dims();
    const Cell cd = locate(xd, n.depth);
    const Cell ch = locate(xh, n.height);
    const Cell cw = locate(xw, n.width);
    const float* p = vol.data().data() + n.index(cd.lo, ch.lo, cw.lo);
    const std::size_t sh = n.width;
    const std::size_t sd = n.width * n.height;
    const double c000 = p[0], c001 = p[1], c010 = p[sh], c011 = p[sh + 1];
    const double c100 = p[sd], c101 = p[sd + 1], c110 = p[sd + sh], c111 = p[sd + sh + 1];
    const double fw = cw.frac, fh = ch.frac, fd = cd.frac;
    const double c00 = c000 + (c001 - c000) * fw;
    const double c01 = c010 + (c011 - c010) * fw;
    const double c10 = c100 + (c101 - c100) * fw;
    const double c11 = c110 + (c111 - c110) * fw;
    const double c0 = c00 + (c01 - c00) * fh;
    const double c1 = c10 + (c11 - c10) * fh;
    grad[0] = c1 - c0;
    grad[1] = (1.0 - fd) * (c01 - c00) + fd * (c11 - c10);
    const double e0 = (1.0 - fh) * (c001 - c000) + fh * (c011 - c010);
    const double e1 = (1.0 - fh) * (c101 - c100) + fh * (c111 - c110);
    grad[2] = (1.0 - fd) * e0 + fd * e1;
    return c0 + (c1 - c0) * fd;
}

}  // namespace detail

/// Per-term values of the image registration objective.
struct ImageTerms {
    double mse = 0.0;
    double tv = 0.0;
    double oob = 0.0;
    double total = 0.0;
};

/// E(P) = mean_x (canonical(clip(upsample(P)(x))) - native(x))^2
///        + lambda_tv * TV(P - P_ref) + lambda_oob * OOB(P).
/// Smoothness acts on the displacement from the reference lattice (the
/// initial prior), so an exact prior is a stationary point.
class ImageObjective {
public:
    ImageObjective(const Volume& canonical, const Volume& native, const ControlLattice& reference, LossWeights w)
        : canonical_(&canonical), native_(&native), reference_(reference), w_(w),
          up_(reference.dims(), native.dims()) {
        require_samplable(canonical);
        if (!native.dims().all_at_least(2)) throw DimensionError("native dims must be >= 2, got " + native.dims().str());
        w_.validate();
    }

    const Dims& lattice_dims() const { return reference_.dims(); }
    const ControlLattice& reference() const { return reference_; }
    const LossWeights& weights() const { return w_; }

    ImageTerms terms(const ControlLattice& p) const {
        const DenseGrid g = up_.forward(p);
        ImageTerms t;
        const std::size_t n = g.voxel_count();
        t.mse = deterministic_sum(n, [&](std::size_t i) {
                    const double r = detail::sample_unchecked(*canonical_, g.at(i)) - (*native_)[i];
                    return r * r;
                }) /
                static_cast<double>(n);
        t.tv = tv(p - reference_);
        t.oob = oob(p);
        t.total = t.mse + w_.lambda_tv * t.tv + w_.lambda_oob * t.oob;
        return t;
    }

    double value(const ControlLattice& p) const { return terms(p).total; }

    /// Objective and its (sub)gradient with respect to every lattice entry.
    double value_and_gradient(const ControlLattice& p, ControlLattice& grad) const {
        const DenseGrid g = up_.forward(p);
        const Dims& cn = canonical_->dims();
        const std::size_t n = g.voxel_count();
        const double inv_n = 1.0 / static_cast<double>(n);
        const std::array<double, 3> scale{0.5 * static_cast<double>(cn.depth - 1),
                                          0.5 * static_cast<double>(cn.height - 1),
                                          0.5 * static_cast<double>(cn.width - 1)};
        std::vector<double> dense_grad(3 * n, 0.0);
        std::vector<double> sq(n, 0.0);
        parallel_for(n, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                double x[3];
                bool inside[3];
                for (std::size_t a = 0; a < 3; ++a) {
                    const double c = g.component(i, a);
                    inside[a] = c >= -1.0 && c <= 1.0;
                    x[a] = norm_to_index(clamp_unit(c), cn[a]);
                }
                double dsdx[3];
                const double r = detail::trilinear_with_gradient(*canonical_, x[0], x[1], x[2], dsdx) - (*native_)[i];
                sq[i] = r * r;
                for (std::size_t a = 0; a < 3; ++a) {
                    double dg = inside[a] ? 2.0 * inv_n * r * dsdx[a] * scale[a] : 0.0;
                    // On the box face only the inward one-sided derivative is real.
                    const double c = g.component(i, a);
                    if (std::abs(c) == 1.0 && -dg * c > 0.0) dg = 0.0;
                    dense_grad[3 * i + a] = dg;
                }
            }
        });
        double mse = 0.0;
        {
            // Same blocking as deterministic_sum so value() and this agree bitwise.
            mse = deterministic_sum(n, [&](std::size_t i) { return sq[i]; }) * inv_n;
        }
        grad = up_.adjoint(dense_grad);
        const ControlLattice disp = p - reference_;
        if (w_.lambda_tv > 0.0) grad += w_.lambda_tv * tv_gradient(disp);
        if (w_.lambda_oob > 0.0) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double a = std::abs(p[i]);
                if (a > 1.0) {
                    grad[i] += w_.lambda_oob * sign_or_zero(p[i]);
                } else if (a == 1.0) {
                    // Minimum-norm element of the OOB subdifferential [0, lambda] * sign(P),
                    // so an entry sitting on the box face can still move outward.
                    const double s = sign_or_zero(p[i]);
                    if (grad[i] * s < 0.0) grad[i] += s * std::min(w_.lambda_oob, -grad[i] * s);
                }
            }
        }
        return mse + w_.lambda_tv * tv(disp) + w_.lambda_oob * oob(p);
    }

    /// False when perturbing `entry` by +-eps crosses a kink of any term: a
    /// voxel-cell boundary or the clip boundary in the warp, a zero difference
    /// in TV, or |P| = 1 in OOB.
    bool smooth_at(const ControlLattice& p, std::size_t entry, double eps) const {
        const std::size_t npts = p.point_count();
        const std::size_t axis = entry / npts;
        ControlLattice lo = p, hi = p;
        lo[entry] -= eps;
        hi[entry] += eps;
        const DenseGrid gl = up_.forward(lo);
        const DenseGrid gh = up_.forward(hi);
        const std::size_t na = canonical_->dims()[axis];
        for (std::size_t i = 0; i < gl.voxel_count(); ++i) {
            const double a = gl.component(i, axis), b = gh.component(i, axis);
            if (a == b) continue;
            if ((std::abs(a) > 1.0) != (std::abs(b) > 1.0)) return false;
            const Cell ca = locate(norm_to_index(clamp_unit(a), na), na);
            const Cell cb = locate(norm_to_index(clamp_unit(b), na), na);
            if (ca.lo != cb.lo) return false;
            // Grid-point snapping is a kink too.
            if (ca.frac == 0.0 || cb.frac == 0.0) return false;
        }
        if (w_.lambda_oob > 0.0 && std::abs(std::abs(p[entry]) - 1.0) <= eps) return false;
        if (w_.lambda_tv > 0.0) {
            const ControlLattice disp = p - reference_;
            bool kink = false;
            detail::for_each_lattice_edge(p.dims(), [&](std::size_t a, std::size_t b) {
                if ((a == entry || b == entry) && std::abs(disp[b] - disp[a]) <= 2.0 * eps) kink = true;
            });
            if (kink) return false;
        }
        return true;
    }

private:
    const Volume* canonical_;
    const Volume* native_;
    ControlLattice reference_;
    LossWeights w_;
    LatticeUpsampler up_;
};

struct StageConfig {
    std::size_t iterations = 200;
    std::size_t downsample = 1;  // integer factor applied to both volumes
    double initial_step = 1.0;
    double tolerance = 1e-9;     // stop when the relative objective decrease falls below this
};

struct OptimizeConfig {
    StageConfig coarse{200, 2, 1.0, 1e-9};
    StageConfig fine{200, 1, 1.0, 1e-9};
    LossWeights weights{0.0, 1e-6, 1.0};  // lambda_clip is unused by the image objective
};

struct StageResult {
    ControlLattice lattice;
    std::size_t iterations = 0;
    double initial = 0.0;
    double final = 0.0;
};

namespace detail {

// Keeps a trial entry from crossing the unit-box face it started on or
// inside. Entries that start outside may move inward up to the face.
inline void face_clamp(const ControlLattice& from, ControlLattice& to) {
    for (std::size_t i = 0; i < from.size(); ++i) {
        const double a = from[i];
        if (a <= 1.0 && to[i] > 1.0) to[i] = 1.0;
        if (a >= -1.0 && to[i] < -1.0) to[i] = -1.0;
        if (a > 1.0 && to[i] < 1.0) to[i] = 1.0;
        if (a < -1.0 && to[i] > -1.0) to[i] = -1.0;
    }
}

}  // namespace detail

/// Limited-memory BFGS with Armijo backtracking along the face-clamped path.
/// Only iterates that lower the objective are accepted, so the accepted
/// sequence is monotone. Falls back to steepest descent when the quasi-Newton
/// direction stops producing descent.
inline StageResult lbfgs_descent(const ImageObjective& obj, ControlLattice p, const StageConfig& cfg) {
    const std::size_t m = 8;
    const std::size_t n = p.size();
    ControlLattice grad(p.dims());
    double f = obj.value_and_gradient(p, grad);
    if (!std::isfinite(f)) throw DivergenceError("objective is not finite at the starting lattice", p);
    StageResult res{p, 0, f, f};
    std::vector<std::vector<double>> s_hist, y_hist;
    std::vector<double> rho_hist;
    std::vector<double> dir(n), alpha(m);

    auto dot = [n](const double* a, const double* b) {
        double r = 0.0;
        for (std::size_t i = 0; i < n; ++i) r += a[i] * b[i];
        return r;
    };

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double g2 = dot(grad.coords().data(), grad.coords().data());
        if (g2 == 0.0) break;

        // Two-loop recursion for dir = -H * grad.
        for (std::size_t i = 0; i < n; ++i) dir[i] = -grad[i];
        const std::size_t k = s_hist.size();
        for (std::size_t j = k; j-- > 0;) {
            alpha[j] = rho_hist[j] * dot(s_hist[j].data(), dir.data());
            for (std::size_t i = 0; i < n; ++i) dir[i] -= alpha[j] * y_hist[j][i];
        }
        double step = cfg.initial_step;
        if (k > 0) {
            const double gamma = dot(s_hist[k - 1].data(), y_hist[k - 1].data()) /
                                 dot(y_hist[k - 1].data(), y_hist[k - 1].data());
            for (double& x : dir) x *= gamma;
            step = 1.0;
        }
        for (std::size_t j = 0; j < k; ++j) {
            const double beta = rho_hist[j] * dot(y_hist[j].data(), dir.data());
            for (std::size_t i = 0; i < n; ++i) dir[i] += (alpha[j] - beta) * s_hist[j][i];
        }
        double slope = dot(grad.coords().data(), dir.data());
        if (!(slope < 0.0)) {
            for (std::size_t i = 0; i < n; ++i) dir[i] = -grad[i];
            slope = -g2;
            step = cfg.initial_step;
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        bool accepted = false;
        ControlLattice trial(p.dims());
        double ft = 0.0;
        for (int bt = 0; bt < 60; ++bt) {
            trial = p;
            for (std::size_t i = 0; i < n; ++i) trial[i] += step * dir[i];
            detail::face_clamp(p, trial);
            ft = obj.value(trial);
            if (!std::isfinite(ft)) throw DivergenceError("objective became non-finite", p);
            double moved = 0.0;
            for (std::size_t i = 0; i < n; ++i) moved += grad[i] * (trial[i] - p[i]);
            if (ft < f && ft <= f + 1e-4 * std::min(moved, 0.0)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (s_hist.empty()) break;
            // Curvature pairs went stale (typically across an interpolation
            // kink); restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            --it;
            continue;
        }

        ControlLattice new_grad(p.dims());
        const double f_new = obj.value_and_gradient(trial, new_grad);
        std::vector<double> sv(n), yv(n);
        for (std::size_t i = 0; i < n; ++i) {
            sv[i] = trial[i] - p[i];
            yv[i] = new_grad[i] - grad[i];
        }
        const double sy = dot(sv.data(), yv.data());
        if (sy > 1e-12 * std::sqrt(dot(sv.data(), sv.data()) * dot(yv.data(), yv.data()))) {
            if (s_hist.size() == m) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
            s_hist.push_back(std::move(sv));
            y_hist.push_back(std::move(yv));
            rho_hist.push_back(1.0 / sy);
        }
        p = std::move(trial);
        grad = std::move(new_grad);
        res.iterations = it + 1;
        const double decrease = f - f_new;
        f = f_new;
        if (decrease <= cfg.tolerance * std::abs(f_new)) break;
    }
    res.lattice = std::move(p);
    res.final = f;
    return res;
}

struct OptimizeResult {
    ControlLattice dp_coarse;
    ControlLattice dp_fine;
    ControlLattice coarse_raw;
    ControlLattice final_raw;
    FitReport report;
};

inline Dims downsampled(Dims n, std::size_t factor) {
    if (factor <= 1) return n;
    auto f = [factor](std::size_t x) { return std::max<std::size_t>(2, (x + factor - 1) / factor); };
    return {f(n.depth), f(n.height), f(n.width)};
}

/// Classical two-stage lattice registration: a coarse residual on
/// downsampled volumes, then a fine residual at full resolution with the
/// coarse lattice frozen. Returns the composed raw lattices.
inline OptimizeResult optimize_lattice(const Volume& canonical, const Volume& native, const ControlLattice& p0,
                                       const OptimizeConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const ControlLattice zero(p0.dims(), 0.0);

    auto stage_volumes = [&](std::size_t factor) {
        if (factor <= 1) return std::pair<Volume, Volume>{canonical, native};
        return std::pair<Volume, Volume>{resample(canonical, downsampled(canonical.dims(), factor)),
                                         resample(native, downsampled(native.dims(), factor))};
    };

    OptimizeResult out{zero, zero, p0, p0, {}};
    const ImageObjective full(canonical, native, p0, cfg.weights);
    const ImageTerms start = full.terms(p0);

    std::size_t iters = 0;
    {
        const auto [c, n] = stage_volumes(cfg.coarse.downsample);
        const ImageObjective obj(c, n, p0, cfg.weights);
        StageResult s = lbfgs_descent(obj, p0, cfg.coarse);
        iters += s.iterations;
        // A downsampled fit can alias thin structures; keep it only if it does
        // not raise the full-resolution objective.
        const bool keep = full.terms(s.lattice).total <= start.total;
        out.coarse_raw = keep ? s.lattice : p0;
        out.dp_coarse = out.coarse_raw - p0;
        out.report.terms["coarse_rejected"] = keep ? 0.0 : 1.0;
        out.report.terms["coarse_iterations"] = static_cast<double>(s.iterations);
        out.report.terms["coarse_objective"] = s.final;
    }
    {
        const auto [c, n] = stage_volumes(cfg.fine.downsample);
        const ImageObjective obj(c, n, p0, cfg.weights);
        StageResult s = lbfgs_descent(obj, out.coarse_raw, cfg.fine);
        iters += s.iterations;
        out.final_raw = s.lattice;
        out.dp_fine = s.lattice - out.coarse_raw;
        out.report.terms["fine_iterations"] = static_cast<double>(s.iterations);
        out.report.terms["fine_objective"] = s.final;
    }

    const ImageTerms end = full.terms(out.final_raw);
    out.report.iterations = iters;
    out.report.residual = std::sqrt(end.mse);
    out.report.terms["initial_mse"] = start.mse;
    out.report.terms["final_mse"] = end.mse;
    out.report.terms["tv"] = end.tv;
    out.report.terms["oob"] = end.oob;
    out.report.terms["initial_total"] = start.total;
    out.report.terms["total"] = end.total;
    out.report.terms["lambda_tv"] = cfg.weights.lambda_tv;
    out.report.terms["lambda_oob"] = cfg.weights.lambda_oob;
    out.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

struct FdCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // entries at kinks
};

/// Central-difference check of an analytic gradient on a seeded random subset
/// of lattice entries. Relative error uses max(|analytic|, 1e-8).
///
/// value(P) -> double; gradient(P) -> ControlLattice; smooth(P, entry, eps) ->
/// bool excludes entries at kinks.
template <class Value, class Gradient, class Smooth>
FdCheckResult finite_diff_check(Value&& value, Gradient&& gradient, Smooth&& smooth, const ControlLattice& p,
                                double eps, std::uint64_t seed, std::size_t samples = 50) {
    if (!(eps > 0.0)) throw RangeError("finite-difference epsilon must be > 0");
    const ControlLattice g = gradient(p);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Fisher-Yates with raw engine draws keeps the subset reproducible across
    // standard libraries.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    FdCheckResult r;
    for (std::size_t k = 0; k < order.size() && r.checked < samples; ++k) {
        const std::size_t e = order[k];
        if (!smooth(p, e, eps)) {
            ++r.skipped;
            continue;
        }
        ControlLattice lo = p, hi = p;
        lo[e] -= eps;
        hi[e] += eps;
        const double fd = (value(hi) - value(lo)) / (2.0 * eps);
        const double rel = std::abs(fd - g[e]) / std::max(std::abs(g[e]), 1e-8);
        r.max_rel_error = std::max(r.max_rel_error, rel);
        ++r.checked;
    }
    return r;
}

/// Convenience overload for an ImageObjective.
inline FdCheckResult finite_diff_check(const ImageObjective& obj, const ControlLattice& p, double eps,
                                       std::uint64_t seed, std::size_t samples = 50) {
    return finite_diff_check([&](const ControlLattice& q) { return obj.value(q); },
                             [&](const ControlLattice& q) {
                                 ControlLattice g(q.dims());
                                 obj.value_and_gradient(q, g);
                                 return g;
                             },
                             [&](const ControlLattice& q, std::size_t e, double h) { return obj.smooth_at(q, e, h); },
                             p, eps, seed, samples);
}

}  // namespace archwarp

#endif
