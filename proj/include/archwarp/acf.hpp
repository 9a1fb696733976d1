#ifndef ARCHWARP_ACF_HPP
#define ARCHWARP_ACF_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "archwarp/errors.hpp"

// Adaptive cross-attention fusion, forward pass plus the analytic gradient of
// a sum-of-outputs probe. Radiographic tokens query semantic tokens; the
// attended features join the radiographic stream through a scalar gate and
// are then mixed with the aligned semantic map by a 1x1 channel mix.

namespace archwarp {

using Matrix = Eigen::MatrixXd;

/// Channel-major feature map (C x H x W).
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : c_(c), h_(h), w_(w), data_(c * h * w, fill) {
        if (c == 0 || h == 0 || w == 0) throw DimensionError("feature map dims must be >= 1");
    }
    FeatureMap(std::size_t c, std::size_t h, std::size_t w, std::vector<double> data)
        : c_(c), h_(h), w_(w), data_(std::move(data)) {
        if (c == 0 || h == 0 || w == 0) throw DimensionError("feature map dims must be >= 1");
        if (data_.size() != c * h * w) throw DimensionError("feature map data length does not match C*H*W");
        for (double x : data_)
            if (!std::isfinite(x)) throw DataError("feature map contains a non-finite entry");
    }

    std::size_t channels() const { return c_; }
    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t pixels() const { return h_ * w_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * h_ + y) * w_ + x]; }
    double operator()(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * h_ + y) * w_ + x]; }

    std::string shape() const {
        return "(" + std::to_string(c_) + ", " + std::to_string(h_) + ", " + std::to_string(w_) + ")";
    }

private:
    std::size_t c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> data_;
};

/// N x C tokens flattened row-major from an (H, W) map.
struct TokenSeq {
    Matrix x;
    std::size_t height = 0;
    std::size_t width = 0;
};

inline TokenSeq flatten_tokens(const FeatureMap& f) {
    TokenSeq t{Matrix(f.pixels(), f.channels()), f.height(), f.width()};
    for (std::size_t c = 0; c < f.channels(); ++c)
        for (std::size_t p = 0; p < f.pixels(); ++p) t.x(p, c) = f.data()[c * f.pixels() + p];
    return t;
}

inline FeatureMap unflatten_tokens(const TokenSeq& t) {
    if (static_cast<std::size_t>(t.x.rows()) != t.height * t.width)
        throw DimensionError("token count does not match its origin map");
    FeatureMap f(static_cast<std::size_t>(t.x.cols()), t.height, t.width);
    for (std::size_t c = 0; c < f.channels(); ++c)
        for (std::size_t p = 0; p < f.pixels(); ++p) f.data()[c * f.pixels() + p] = t.x(p, c);
    return f;
}

/// Weights of one pyramid level. Shapes (C = radiographic channels,
/// C' = aligned semantic channels, d = embedding dim):
/// proj C' x C_phi, wq C x d, wk C' x d, wv C' x d, wo d x C, mix C_out x (C + C').
struct AcfLevelWeights {
    Matrix proj, wq, wk, wv, wo, mix;
    double alpha = 0.0;

    std::size_t embed_dim() const { return static_cast<std::size_t>(wq.cols()); }

    void validate() const {
        const auto c = wq.rows(), cs = wk.rows(), d = wq.cols();
        if (d == 0) throw DimensionError("embedding dim must be >= 1");
        if (wk.cols() != d || wv.cols() != d || wv.rows() != cs || wo.rows() != d || wo.cols() != c)
            throw DimensionError("attention projection shapes are inconsistent");
        if (proj.rows() != cs) throw DimensionError("semantic projection must output C' channels");
        if (mix.cols() != c + cs) throw DimensionError("mix matrix must have C + C' columns");
        if (!std::isfinite(alpha)) throw DataError("gate alpha must be finite");
    }
};

/// Seeded uniform [-0.1, 0.1] initialisation with alpha = 0.
inline AcfLevelWeights random_level_weights(std::size_t c_phi, std::size_t c, std::size_t c_sem, std::size_t d,
                                            std::size_t c_out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&](Eigen::Index r, Eigen::Index k) {
        Matrix m(r, k);
        for (Eigen::Index j = 0; j < k; ++j)
            for (Eigen::Index i = 0; i < r; ++i)
                m(i, j) = -0.1 + 0.2 * static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return m;
    };
    const auto C = static_cast<Eigen::Index>(c), Cs = static_cast<Eigen::Index>(c_sem);
    const auto D = static_cast<Eigen::Index>(d);
    AcfLevelWeights w;
    w.proj = fill(Cs, static_cast<Eigen::Index>(c_phi));
    w.wq = fill(C, D);
    w.wk = fill(Cs, D);
    w.wv = fill(Cs, D);
    w.wo = fill(D, C);
    w.mix = fill(static_cast<Eigen::Index>(c_out), C + Cs);
    w.alpha = 0.0;
    return w;
}

namespace detail {

struct AxisSample {
    std::size_t lo = 0, hi = 0;
    double frac = 0.0;
};

// Corner-aligned source position for output index o; a single output sample
// reads source index 0.
inline AxisSample corner_sample(std::size_t o, std::size_t n_out, std::size_t n_in) {
    if (n_in == 1 || n_out == 1) return {0, 0, 0.0};
    const double x = static_cast<double>(o) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(x));
    if (lo > n_in - 2) lo = n_in - 2;
    double f = x - static_cast<double>(lo);
    if (f < 1e-12) f = 0.0;
    return {lo, lo + 1, f};
}

}  // namespace detail

/// 1x1 channel projection followed by corner-aligned bilinear resize.
inline FeatureMap align_semantic(const FeatureMap& phi, const Matrix& proj, std::size_t out_h, std::size_t out_w) {
    if (static_cast<std::size_t>(proj.cols()) != phi.channels())
        throw DimensionError("projection expects " + std::to_string(proj.cols()) + " channels, map has " +
                             std::to_string(phi.channels()));
    if (proj.rows() == 0 || out_h == 0 || out_w == 0) throw DimensionError("aligned map dims must be >= 1");
    const std::size_t cs = static_cast<std::size_t>(proj.rows());
    FeatureMap projected(cs, phi.height(), phi.width());
    for (std::size_t k = 0; k < cs; ++k)
        for (std::size_t p = 0; p < phi.pixels(); ++p) {
            double s = 0.0;
            for (std::size_t c = 0; c < phi.channels(); ++c)
                s += proj(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) * phi.data()[c * phi.pixels() + p];
            projected.data()[k * phi.pixels() + p] = s;
        }

    FeatureMap out(cs, out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto sy = detail::corner_sample(y, out_h, phi.height());
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto sx = detail::corner_sample(x, out_w, phi.width());
            for (std::size_t k = 0; k < cs; ++k) {
                const double a = projected(k, sy.lo, sx.lo), b = projected(k, sy.lo, sx.hi);
                const double c = projected(k, sy.hi, sx.lo), d = projected(k, sy.hi, sx.hi);
                const double top = (1.0 - sx.frac) * a + sx.frac * b;
                const double bot = (1.0 - sx.frac) * c + sx.frac * d;
                out(k, y, x) = (1.0 - sy.frac) * top + sy.frac * bot;
            }
        }
    }
    return out;
}

/// Row-wise softmax(Q K^T / sqrt(d)) with max subtraction.
inline Matrix attention_weights(const TokenSeq& xr, const TokenSeq& xs, const AcfLevelWeights& w) {
    if (xr.x.rows() != xs.x.rows())
        throw DimensionError("token counts differ: " + std::to_string(xr.x.rows()) + " vs " +
                             std::to_string(xs.x.rows()));
    if (w.wq.cols() == 0) throw DimensionError("embedding dim must be >= 1");
    if (xr.x.cols() != w.wq.rows() || xs.x.cols() != w.wk.rows())
        throw DimensionError("token channels do not match projection shapes");
    const Matrix q = xr.x * w.wq;
    const Matrix k = xs.x * w.wk;
    Matrix a = (q * k.transpose()) / std::sqrt(static_cast<double>(w.wq.cols()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - m).exp().matrix();
        a.row(i) /= a.row(i).sum();
    }
    return a;
}

/// Single-head cross-attention with output projection back to C channels.
inline TokenSeq cross_attention(const TokenSeq& xr, const TokenSeq& xs, const AcfLevelWeights& w) {
    const Matrix a = attention_weights(xr, xs, w);
    if (xs.x.cols() != w.wv.rows() || w.wv.cols() != w.wo.rows())
        throw DimensionError("value/output projection shapes are inconsistent");
    return {a * (xs.x * w.wv) * w.wo, xr.height, xr.width};
}

inline TokenSeq gated_residual(const TokenSeq& xr, const TokenSeq& attn, double alpha) {
    if (xr.x.rows() != attn.x.rows() || xr.x.cols() != attn.x.cols())
        throw DimensionError("gated residual operands differ in shape");
    TokenSeq out = xr;
    if (alpha != 0.0) out.x += alpha * attn.x;
    return out;
}

/// Per-pixel concatenation [a; b] followed by the mixing matrix.
inline FeatureMap fuse_channels(const FeatureMap& a, const FeatureMap& b, const Matrix& mix) {
    if (a.height() != b.height() || a.width() != b.width())
        throw DimensionError("fusion operands have different spatial dims");
    const std::size_t cin = a.channels() + b.channels();
    if (static_cast<std::size_t>(mix.cols()) != cin || mix.rows() == 0)
        throw DimensionError("mix matrix needs " + std::to_string(cin) + " columns");
    const std::size_t cout = static_cast<std::size_t>(mix.rows());
    FeatureMap out(cout, a.height(), a.width());
    const std::size_t np = a.pixels();
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t p = 0; p < np; ++p) {
            double s = 0.0;
            for (std::size_t c = 0; c < a.channels(); ++c)
                s += mix(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c)) * a.data()[c * np + p];
            for (std::size_t c = 0; c < b.channels(); ++c)
                s += mix(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(a.channels() + c)) *
                     b.data()[c * np + p];
            out.data()[o * np + p] = s;
        }
    return out;
}

struct AcfLevel {
    FeatureMap radiographic;  // F_r, fixes (C, H, W) of the level
    FeatureMap semantic;      // raw semantic features before alignment
    AcfLevelWeights weights;
};

/// One level: align, flatten, attend, gate, unflatten, fuse.
inline FeatureMap acf_level_forward(const AcfLevel& lv) {
    lv.weights.validate();
    if (static_cast<std::size_t>(lv.weights.wq.rows()) != lv.radiographic.channels())
        throw DimensionError("query projection expects " + std::to_string(lv.weights.wq.rows()) +
                             " channels, radiographic map is " + lv.radiographic.shape());
    const FeatureMap fs = align_semantic(lv.semantic, lv.weights.proj, lv.radiographic.height(), lv.radiographic.width());
    const TokenSeq xr = flatten_tokens(lv.radiographic);
    const TokenSeq xs = flatten_tokens(fs);
    const TokenSeq gated = gated_residual(xr, cross_attention(xr, xs, lv.weights), lv.weights.alpha);
    return fuse_channels(unflatten_tokens(gated), fs, lv.weights.mix);
}

/// Spatial dims of a progressive pyramid that halves (rounding up) per level.
inline std::vector<std::pair<std::size_t, std::size_t>> pyramid_dims(std::size_t h, std::size_t w, std::size_t levels) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t l = 0; l < levels; ++l) {
        out.emplace_back(h, w);
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    return out;
}

/// Fused pyramid. Level dims must follow the halving schedule from level 0.
inline std::vector<FeatureMap> acf_forward(const std::vector<AcfLevel>& levels) {
    if (levels.empty()) return {};
    const auto sched = pyramid_dims(levels[0].radiographic.height(), levels[0].radiographic.width(), levels.size());
    std::vector<FeatureMap> out;
    out.reserve(levels.size());
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const auto& r = levels[l].radiographic;
        if (r.height() != sched[l].first || r.width() != sched[l].second)
            throw DimensionError("level " + std::to_string(l) + " has spatial dims (" + std::to_string(r.height()) +
                                 ", " + std::to_string(r.width()) + "), schedule expects (" +
                                 std::to_string(sched[l].first) + ", " + std::to_string(sched[l].second) + ")");
        out.push_back(acf_level_forward(levels[l]));
    }
    return out;
}

/// Gradients of S = sum of all fused outputs of one level.
struct AcfProbeGradient {
    double value = 0.0;
    double alpha = 0.0;
    Matrix wq, wk, wv, wo, mix;
};

inline AcfProbeGradient acf_probe_gradient(const AcfLevel& lv) {
    const AcfLevelWeights& w = lv.weights;
    w.validate();
    const FeatureMap fs = align_semantic(lv.semantic, w.proj, lv.radiographic.height(), lv.radiographic.width());
    const TokenSeq xr = flatten_tokens(lv.radiographic);
    const TokenSeq xs = flatten_tokens(fs);
    const Eigen::Index n = xr.x.rows();
    const Eigen::Index c = xr.x.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.wq.cols()));

    const Matrix q = xr.x * w.wq;
    const Matrix k = xs.x * w.wk;
    const Matrix v = xs.x * w.wv;
    const Matrix a = attention_weights(xr, xs, w);
    const Matrix o = a * v;
    const Matrix attn = o * w.wo;
    const Matrix mixed = xr.x + w.alpha * attn;

    // dS/dz for the concatenated per-pixel input is the column sum of mix.
    const Eigen::RowVectorXd colsum = w.mix.colwise().sum();
    const Matrix g_mixed = Eigen::VectorXd::Ones(n) * colsum.leftCols(c);

    AcfProbeGradient g;
    g.value = (mixed * colsum.leftCols(c).transpose()).sum() + (xs.x * colsum.rightCols(xs.x.cols()).transpose()).sum();
    g.alpha = (g_mixed.array() * attn.array()).sum();
    const Matrix g_attn = w.alpha * g_mixed;
    g.wo = o.transpose() * g_attn;
    const Matrix g_o = g_attn * w.wo.transpose();
    g.wv = xs.x.transpose() * (a.transpose() * g_o);
    const Matrix g_a = g_o * v.transpose();
    const Eigen::VectorXd row_dot = (g_a.array() * a.array()).rowwise().sum();
    const Matrix g_logits = (a.array() * (g_a.colwise() - row_dot).array()).matrix() * scale;
    g.wq = xr.x.transpose() * (g_logits * k);
    g.wk = xs.x.transpose() * (g_logits.transpose() * q);

    g.mix.resize(w.mix.rows(), w.mix.cols());
    const Eigen::RowVectorXd zr = mixed.colwise().sum();
    const Eigen::RowVectorXd zs = xs.x.colwise().sum();
    for (Eigen::Index r = 0; r < w.mix.rows(); ++r) {
        g.mix.row(r).leftCols(c) = zr;
        g.mix.row(r).rightCols(zs.size()) = zs;
    }
    return g;
}

}  // namespace archwarp

#endif
