#ifndef ARCHWARP_CLI_HPP
#define ARCHWARP_CLI_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "archwarp/acf.hpp"
#include "archwarp/arch_curve.hpp"
#include "archwarp/cpr.hpp"
#include "archwarp/errors.hpp"
#include "archwarp/ffd.hpp"
#include "archwarp/io.hpp"
#include "archwarp/lattice_fit.hpp"
#include "archwarp/losses.hpp"
#include "archwarp/metrics.hpp"
#include "archwarp/optimize.hpp"
#include "archwarp/parallel.hpp"
#include "archwarp/phantom.hpp"

namespace archwarp {

inline std::string fixed6(double x) {
    if (!std::isfinite(x)) return "null";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

inline Dims parse_dims(const std::string& s) {
    std::size_t v[3] = {0, 0, 0};
    char x1 = 0, x2 = 0;
    std::istringstream in(s);
    in >> v[0] >> x1 >> v[1] >> x2 >> v[2];
    if (!in || x1 != 'x' || x2 != 'x' || in.peek() != EOF)
        throw CLI::ValidationError("dims", "expected DxHxW, got '" + s + "'");
    return {v[0], v[1], v[2]};
}

inline std::pair<double, double> parse_pair(const std::string& s) {
    double a = 0, b = 0;
    char comma = 0;
    std::istringstream in(s);
    in >> a >> comma >> b;
    if (!in || comma != ',' || in.peek() != EOF) throw CLI::ValidationError("range", "expected a,b, got '" + s + "'");
    return {a, b};
}

/// Flat {name: value} document with 6-decimal numbers.
inline std::string fixed_document(const std::vector<std::pair<std::string, double>>& kv) {
    std::string s = "{";
    for (std::size_t i = 0; i < kv.size(); ++i) {
        s += (i ? ", \"" : "\"") + kv[i].first + "\": " + fixed6(kv[i].second);
    }
    return s + "}";
}

inline ArchCurve load_curve(const std::filesystem::path& p) { return build_curve(read_arch(p).points); }

struct SelfCheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;
};

/// Invariant checks for the attention fusion on seeded random weights.
inline std::vector<SelfCheckResult> acf_selfcheck(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto rand_map = [&](std::size_t c, std::size_t h, std::size_t w) {
        std::vector<double> d(c * h * w);
        for (double& x : d) x = 2.0 * uniform01(rng) - 1.0;
        return FeatureMap(c, h, w, std::move(d));
    };
    std::vector<SelfCheckResult> out;

    const std::size_t C = 4, Cphi = 5, Cs = 3, D = 6, Cout = 5;
    AcfLevel lv{rand_map(C, 4, 8), rand_map(Cphi, 2, 4), random_level_weights(Cphi, C, Cs, D, Cout, seed + 1)};
    const FeatureMap fs = align_semantic(lv.semantic, lv.weights.proj, 4, 8);
    const TokenSeq xr = flatten_tokens(lv.radiographic), xs = flatten_tokens(fs);

    // Softmax rows.
    AcfLevelWeights hot = lv.weights;
    hot.wq *= 40.0;
    hot.wk *= 40.0;
    const Matrix a = attention_weights(xr, xs, hot);
    double row_err = 0.0;
    bool in_unit = true;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        row_err = std::max(row_err, std::abs(a.row(i).sum() - 1.0));
        in_unit = in_unit && a.row(i).minCoeff() >= 0.0 && a.row(i).maxCoeff() <= 1.0;
    }
    out.push_back({"softmax_rows_stochastic", row_err <= 1e-6 && in_unit, row_err});

    // Gate-zero identity.
    const TokenSeq g0 = gated_residual(xr, cross_attention(xr, xs, lv.weights), 0.0);
    out.push_back({"gate_zero_identity", g0.x == xr.x, 0.0});

    // Permutation of semantic tokens leaves the output unchanged.
    TokenSeq perm = xs;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(xs.x.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t i = 0; i < order.size(); ++i) perm.x.row(static_cast<Eigen::Index>(i)) = xs.x.row(order[i]);
    const double perm_err =
        (cross_attention(xr, xs, lv.weights).x - cross_attention(xr, perm, lv.weights).x).cwiseAbs().maxCoeff();
    out.push_back({"key_permutation_invariance", perm_err <= 1e-12, perm_err});

    // Pyramid shape contract.
    bool shapes = true;
    {
        std::vector<AcfLevel> levels;
        const auto dims = pyramid_dims(16, 32, 5);
        for (std::size_t l = 0; l < dims.size(); ++l)
            levels.push_back({rand_map(C, dims[l].first, dims[l].second), rand_map(Cphi, 3, 5),
                              random_level_weights(Cphi, C, Cs, D, Cout, seed + 10 + l)});
        const auto fused = acf_forward(levels);
        for (std::size_t l = 0; l < dims.size(); ++l)
            shapes = shapes && fused[l].channels() == Cout && fused[l].height() == dims[l].first &&
                     fused[l].width() == dims[l].second;
    }
    out.push_back({"pyramid_shapes", shapes, 0.0});

    // Probe gradient against central differences, on the same weights scaled
    // to unit range so that query/key gradients sit above difference noise.
    for (Matrix* m : {&lv.weights.proj, &lv.weights.wq, &lv.weights.wk, &lv.weights.wv, &lv.weights.wo, &lv.weights.mix})
        *m *= 10.0;
    lv.weights.alpha = 0.7;
    const AcfProbeGradient g = acf_probe_gradient(lv);
    auto probe = [&](const AcfLevel& l) {
        double s = 0.0;
        const FeatureMap f = acf_level_forward(l);
        for (double x : f.data()) s += x;
        return s;
    };
    double worst = 0.0;
    const double h = 1e-6;
    auto check = [&](double& param, double analytic) {
        const double keep = param;
        param = keep + h;
        const double fp = probe(lv);
        param = keep - h;
        const double fm = probe(lv);
        param = keep;
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - analytic) / std::max(std::abs(analytic), 1e-8));
    };
    check(lv.weights.alpha, g.alpha);
    for (Eigen::Index i = 0; i < lv.weights.wq.size(); ++i) check(lv.weights.wq.data()[i], g.wq.data()[i]);
    for (Eigen::Index i = 0; i < lv.weights.wk.size(); ++i) check(lv.weights.wk.data()[i], g.wk.data()[i]);
    for (Eigen::Index i = 0; i < lv.weights.wv.size(); ++i) check(lv.weights.wv.data()[i], g.wv.data()[i]);
    for (Eigen::Index i = 0; i < lv.weights.wo.size(); ++i) check(lv.weights.wo.data()[i], g.wo.data()[i]);
    for (Eigen::Index i = 0; i < lv.weights.mix.size(); ++i) check(lv.weights.mix.data()[i], g.mix.data()[i]);
    out.push_back({"probe_gradient", worst <= 1e-4, worst});
    return out;
}

namespace detail {

struct Shared {
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::string report;
};

inline void maybe_report(const Shared& sh, const FitReport& r) {
    if (!sh.report.empty()) write_report(r, sh.report);
}

}  // namespace detail

/// Command-line entry point. Returns 0 on success, 1 on usage errors and 2 on
/// data errors.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Arch-normalised volume warping toolkit", "archwarp"};
    app.require_subcommand(1);
    app.fallthrough();
    detail::Shared sh;
    app.add_option("--seed", sh.seed, "Seed for all randomness");
    app.add_option("--threads", sh.threads, "Worker threads (0 = hardware)");
    app.add_option("--report", sh.report, "Write a JSON report to this path");

    std::function<void()> action;

    // phantom
    auto* ph = app.add_subcommand("phantom", "Generate a synthetic jaw volume and its arch curve");
    PhantomSpec pspec;
    std::string ph_out, ph_dims = "64x64x128";
    ph->add_option("--teeth", pspec.teeth, "Tooth count")->capture_default_str();
    ph->add_option("--dims", ph_dims, "Volume dims DxHxW")->capture_default_str();
    ph->add_option("--noise", pspec.noise, "Uniform noise amplitude")->capture_default_str();
    ph->add_option("--out", ph_out, "Output directory")->required();
    ph->callback([&] {
        action = [&] {
            pspec.seed = sh.seed;
            pspec.dims = parse_dims(ph_dims);
            const Phantom p = make_phantom(pspec);
            const std::filesystem::path dir(ph_out);
            write_volume(p.volume, dir / "native.json", std::pair{0.0, 1.0});
            write_arch({p.curve.points(), std::pair{pspec.band_bottom, pspec.band_top}}, dir / "arch.json");
            out << fixed_document({{"teeth", static_cast<double>(p.teeth.size())},
                                   {"arc_length", p.curve.total_length()}})
                << "\n";
        };
    });

    // flatten
    auto* fl = app.add_subcommand("flatten", "Curved planar reformation into canonical space");
    std::string fl_in, fl_arch, fl_out, fl_range = "-0.3,0.3", fl_dims = "64x64x128";
    fl->add_option("--in", fl_in, "Native volume header")->required();
    fl->add_option("--arch", fl_arch, "Arch curve file")->required();
    fl->add_option("--out", fl_out, "Canonical volume header")->required();
    fl->add_option("--depth-range", fl_range, "Depth range a,b across the arch")->capture_default_str();
    fl->add_option("--canonical-dims", fl_dims, "Canonical dims DxHxW")->capture_default_str();
    fl->callback([&] {
        action = [&] {
            CprConfig cfg;
            std::tie(cfg.depth_min, cfg.depth_max) = parse_pair(fl_range);
            cfg.canonical_dims = parse_dims(fl_dims);
            const Volume c = flatten(read_volume(fl_in), load_curve(fl_arch), cfg);
            write_volume(c, fl_out);
            const auto [lo, hi] = c.minmax();
            out << fixed_document({{"min", lo}, {"max", hi}}) << "\n";
        };
    });

    // synth-pano
    auto* sp = app.add_subcommand("synth-pano", "Project a canonical volume to a panorama");
    std::string sp_in, sp_out, sp_mode = "mean";
    sp->add_option("--in", sp_in, "Canonical volume header")->required();
    sp->add_option("--out", sp_out, "Output PGM path")->required();
    sp->add_option("--projection", sp_mode, "mean or max")->check(CLI::IsMember({"mean", "max"}))->capture_default_str();
    sp->callback([&] {
        action = [&] {
            const Image2D img =
                synth_panorama(read_volume(sp_in), sp_mode == "max" ? Projection::Max : Projection::Mean);
            write_panorama(img, sp_out, sp_mode);
            out << fixed_document({{"height", static_cast<double>(img.height)},
                                   {"width", static_cast<double>(img.width)}})
                << "\n";
        };
    });

    // fit-lattice
    auto* fit = app.add_subcommand("fit-lattice", "Register canonical to native by lattice optimisation");
    std::string ft_can, ft_nat, ft_arch, ft_out, ft_target, ft_dims = "8x8x16", ft_reduce = "sum", ft_range = "-0.3,0.3";
    LossWeights ft_w = OptimizeConfig{}.weights;
    ft_w.lambda_clip = LossWeights{}.lambda_clip;
    double ft_tau = 0.0;
    std::size_t ft_coarse = 60, ft_fine = 60;
    fit->add_option("--canonical", ft_can, "Canonical volume header")->required();
    fit->add_option("--native", ft_nat, "Native volume header")->required();
    fit->add_option("--arch", ft_arch, "Arch curve for the prior (identity prior if omitted)");
    fit->add_option("--out", ft_out, "Output lattice path")->required();
    fit->add_option("--target", ft_target, "Supervision lattice; reports the training loss stack against it");
    fit->add_option("--lattice-dims", ft_dims, "Lattice dims DxHxW")->capture_default_str();
    fit->add_option("--depth-range", ft_range, "Depth range used for the arch prior")->capture_default_str();
    fit->add_option("--lambda-tv", ft_w.lambda_tv, "TV weight")->capture_default_str();
    fit->add_option("--lambda-oob", ft_w.lambda_oob, "Out-of-bound weight")->capture_default_str();
    fit->add_option("--lambda-clip", ft_w.lambda_clip, "Clip-loss weight (loss report only)")->capture_default_str();
    fit->add_option("--reduce", ft_reduce, "Raw L1 reduction")->check(CLI::IsMember({"sum", "mean"}))->capture_default_str();
    fit->add_option("--clip-tau", ft_tau, "Clip final displacements from the prior beyond tau (0 = off)")
        ->capture_default_str();
    fit->add_option("--coarse-iters", ft_coarse, "Coarse-stage iteration budget")->capture_default_str();
    fit->add_option("--fine-iters", ft_fine, "Fine-stage iteration budget")->capture_default_str();
    fit->callback([&] {
        action = [&] {
            const Volume can = read_volume(ft_can);
            const Volume nat = read_volume(ft_nat);
            const Dims ld = parse_dims(ft_dims);
            ControlLattice p0 = identity_lattice(ld);
            if (!ft_arch.empty()) {
                const auto [dmin, dmax] = parse_pair(ft_range);
                p0 = arch_prior(ld, fit_parabola(load_curve(ft_arch)).params, dmin, dmax);
            }
            OptimizeConfig cfg;
            cfg.weights = ft_w;
            cfg.coarse.iterations = ft_coarse;
            cfg.fine.iterations = ft_fine;
            OptimizeResult r = optimize_lattice(can, nat, p0, cfg);
            ControlLattice result = ft_tau > 0.0 ? clip_extremes(r.final_raw, ft_tau, p0) : r.final_raw;
            if (!ft_target.empty()) {
                const LossBreakdown lb = total_loss(result, read_lattice(ft_target), ft_w, parse_reduce(ft_reduce));
                r.report.terms["loss_raw"] = lb.raw;
                r.report.terms["loss_clip"] = lb.clip;
                r.report.terms["loss_tv"] = lb.tv;
                r.report.terms["loss_oob"] = lb.oob;
                r.report.terms["loss_total"] = lb.total;
            }
            write_lattice(result, ft_out);
            detail::maybe_report(sh, r.report);
            out << fixed_document({{"iterations", static_cast<double>(r.report.iterations)},
                                   {"initial_mse", r.report.terms["initial_mse"]},
                                   {"final_mse", r.report.terms["final_mse"]}})
                << "\n";
        };
    });

    // warp
    auto* wp = app.add_subcommand("warp", "Backward-warp a canonical volume through a lattice");
    std::string wp_can, wp_lat, wp_like, wp_out, wp_dims;
    wp->add_option("--canonical", wp_can, "Canonical volume header")->required();
    wp->add_option("--lattice", wp_lat, "Lattice file")->required();
    wp->add_option("--like", wp_like, "Volume whose dims and spacing the output takes");
    wp->add_option("--dims", wp_dims, "Output dims DxHxW (unit spacing) when --like is absent");
    wp->add_option("--out", wp_out, "Output volume header")->required();
    wp->callback([&] {
        action = [&] {
            Dims d{};
            Spacing s{1.0, 1.0, 1.0};
            if (!wp_like.empty()) {
                const Volume like = read_volume(wp_like);
                d = like.dims();
                s = like.spacing();
            } else if (!wp_dims.empty()) {
                d = parse_dims(wp_dims);
            } else {
                throw CLI::ValidationError("warp", "one of --like or --dims is required");
            }
            const Volume v = warp(read_volume(wp_can), upsample_lattice(read_lattice(wp_lat), d), s);
            write_volume(v, wp_out);
            const auto [lo, hi] = v.minmax();
            out << fixed_document({{"min", lo}, {"max", hi}}) << "\n";
        };
    });

    // fit-supervision
    auto* fs = app.add_subcommand("fit-supervision", "Generate supervision lattices from the analytic CPR inverse");
    std::string fs_arch, fs_like, fs_dims, fs_out, fs_range = "-0.3,0.3", fs_ldims = "8x8x16";
    SupervisionOptions fs_opt;
    fs->add_option("--arch", fs_arch, "Arch curve file")->required();
    fs->add_option("--like", fs_like, "Native volume header giving the output dims");
    fs->add_option("--native-dims", fs_dims, "Native dims DxHxW when --like is absent");
    fs->add_option("--out", fs_out, "Output directory")->required();
    fs->add_option("--depth-range", fs_range, "Depth range a,b across the arch")->capture_default_str();
    fs->add_option("--lattice-dims", fs_ldims, "Lattice dims DxHxW")->capture_default_str();
    fs->add_option("--lambda-tv", fs_opt.lambda_tv, "Smoothness weight")->capture_default_str();
    fs->add_option("--lambda-oob", fs_opt.lambda_oob, "Boundary weight")->capture_default_str();
    fs->add_option("--clip-tau", fs_opt.clip_tau, "Displacement clip threshold")->capture_default_str();
    fs->callback([&] {
        action = [&] {
            Dims nd{};
            if (!fs_like.empty())
                nd = read_volume(fs_like).dims();
            else if (!fs_dims.empty())
                nd = parse_dims(fs_dims);
            else
                throw CLI::ValidationError("fit-supervision", "one of --like or --native-dims is required");
            CprConfig cfg;
            std::tie(cfg.depth_min, cfg.depth_max) = parse_pair(fs_range);
            fs_opt.lattice_dims = parse_dims(fs_ldims);
            const Supervision s = generate_supervision(nd, load_curve(fs_arch), cfg, fs_opt);
            const std::filesystem::path dir(fs_out);
            write_lattice(s.p_star, dir / "p_star.json");
            write_lattice(s.p_star_clip, dir / "p_star_clip.json");
            write_lattice(s.prior, dir / "prior.json");
            detail::maybe_report(sh, s.report);
            out << fixed_document({{"residual", s.report.residual},
                                   {"max_displacement_from_prior", s.report.terms.at("max_displacement_from_prior")}})
                << "\n";
        };
    });

    // eval
    auto* ev = app.add_subcommand("eval", "Compare a prediction with ground truth");
    std::string ev_pred, ev_gt;
    double ev_peak = 1.0;
    bool ev_gauss = false;
    ev->add_option("--pred", ev_pred, "Predicted volume header")->required();
    ev->add_option("--gt", ev_gt, "Ground-truth volume header")->required();
    ev->add_option("--peak", ev_peak, "PSNR peak on normalised inputs")->capture_default_str();
    ev->add_flag("--gaussian-window", ev_gauss, "Gaussian SSIM window instead of uniform");
    ev->callback([&] {
        action = [&] {
            const Volume p = read_volume(ev_pred), g = read_volume(ev_gt);
            require_same_dims(p.dims(), g.dims(), "eval");
            const Volume np = normalize_minmax(p), ng = normalize_minmax(g);
            SsimOptions so;
            so.gaussian = ev_gauss;
            const SharedThreshold b = binarize_shared_threshold(p, g);
            double h = std::nan("");
            if (b.pred.count() > 0 && b.gt.count() > 0) h = hd95(b.pred, b.gt);
            out << fixed_document({{"psnr_db", psnr(np, ng, ev_peak)},
                                   {"ssim", ssim3d(np, ng, so)},
                                   {"dsc", dsc(b.pred, b.gt)},
                                   {"hd95_mm", h},
                                   {"mu_gt", b.mu_gt}})
                << "\n";
        };
    });

    // acf-selfcheck
    auto* ac = app.add_subcommand("acf-selfcheck", "Run attention-fusion invariant checks");
    bool ac_ok = true;
    ac->callback([&] {
        action = [&] {
            for (const auto& r : acf_selfcheck(sh.seed)) {
                out << (r.pass ? "PASS " : "FAIL ") << r.name << " " << fixed6(r.value) << "\n";
                ac_ok = ac_ok && r.pass;
            }
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Help requests exit 0; every other parse failure is a usage error.
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    try {
        set_thread_count(sh.threads);
        if (action) action();
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return ac_ok ? 0 : 2;
}

}  // namespace archwarp

#endif
