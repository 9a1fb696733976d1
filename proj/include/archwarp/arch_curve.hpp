#ifndef ARCHWARP_ARCH_CURVE_HPP
#define ARCHWARP_ARCH_CURVE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "archwarp/errors.hpp"

namespace archwarp {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
/// Counter-clockwise quarter turn.
constexpr Vec2 rot90(Vec2 a) { return {-a.y, a.x}; }

class CurveError : public std::invalid_argument {
public:
    enum class Reason { TooFewPoints, NonFinite, DuplicatePoint, SelfIntersection };

    CurveError(Reason r, const std::string& msg) : std::invalid_argument(msg), reason_(r) {}
    Reason reason() const { return reason_; }

private:
    Reason reason_;
};

/// Position and unit frame at an arc-length parameter.
struct CurveFrame {
    Vec2 point;
    Vec2 tangent;
    Vec2 normal;
};

/// Closest-point parameters: arc length of the foot and signed distance,
/// positive on the normal side.
struct CurveProjection {
    double s = 0.0;
    double d = 0.0;
};

/// Planar dental arch polyline in normalized axial coordinates, with an
/// arc-length table. Immutable after construction.
///
/// Normals are the segment tangents turned by +90 degrees and then flipped by
/// normal_sign(): the sign is chosen from the signed area of the closed
/// polyline so that, for an arch, normals point away from the enclosed
/// (lingual) side. Collinear point sets keep the unflipped normal.
class ArchCurve {
public:
    explicit ArchCurve(std::vector<Vec2> points) : points_(std::move(points)) {
        if (points_.size() < 3)
            throw CurveError(CurveError::Reason::TooFewPoints,
                             "arch curve needs at least 3 points, got " + std::to_string(points_.size()));
        for (const Vec2& p : points_)
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw CurveError(CurveError::Reason::NonFinite, "arch curve point is not finite");

        cum_len_.assign(points_.size(), 0.0);
        for (std::size_t i = 1; i < points_.size(); ++i) {
            const double len = norm(points_[i] - points_[i - 1]);
            if (!(len > 0.0))
                throw CurveError(CurveError::Reason::DuplicatePoint,
                                 "arch curve points " + std::to_string(i - 1) + " and " + std::to_string(i) +
                                     " coincide");
            cum_len_[i] = cum_len_[i - 1] + len;
        }
        check_simple();

        double area2 = 0.0;
        for (std::size_t i = 0; i < points_.size(); ++i)
            area2 += cross(points_[i], points_[(i + 1) % points_.size()]);
        const double scale = total_length() * total_length();
        normal_sign_ = area2 > 1e-12 * scale ? -1.0 : 1.0;
    }

    const std::vector<Vec2>& points() const { return points_; }
    const std::vector<double>& cum_len() const { return cum_len_; }
    double total_length() const { return cum_len_.back(); }
    std::size_t segment_count() const { return points_.size() - 1; }
    double normal_sign() const { return normal_sign_; }

    Vec2 segment_tangent(std::size_t seg) const {
        const Vec2 d = points_[seg + 1] - points_[seg];
        return (1.0 / (cum_len_[seg + 1] - cum_len_[seg])) * d;
    }
    Vec2 segment_normal(std::size_t seg) const { return normal_sign_ * rot90(segment_tangent(seg)); }

    /// Frame at arc length s in [0, total_length()]. At an interior vertex the
    /// frame of the following segment is used.
    CurveFrame point_at(double s) const {
        if (!(s >= 0.0 && s <= total_length()))
            throw RangeError("arc length " + std::to_string(s) + " outside [0, " + std::to_string(total_length()) +
                             "]");
        return frame_at(s);
    }

    /// As point_at, but s outside [0, total_length()] extrapolates along the
    /// first or last segment.
    CurveFrame point_at_extended(double s) const { return frame_at(s); }

    /// Exact closest point on the polyline. Ties resolve toward smaller s.
    /// With extend_ends the first and last segments are treated as rays, so
    /// points beyond an end get s < 0 or s > total_length().
    CurveProjection project(Vec2 p, bool extend_ends = false) const {
        const std::size_t nseg = segment_count();
        double best = std::numeric_limits<double>::infinity();
        CurveProjection out;
        for (std::size_t i = 0; i < nseg; ++i) {
            const Vec2 a = points_[i];
            const double len = cum_len_[i + 1] - cum_len_[i];
            const Vec2 t = segment_tangent(i);
            double along = dot(p - a, t);
            const double lo = (extend_ends && i == 0) ? -std::numeric_limits<double>::infinity() : 0.0;
            const double hi = (extend_ends && i + 1 == nseg) ? std::numeric_limits<double>::infinity() : len;
            along = std::clamp(along, lo, hi);
            const Vec2 foot = a + along * t;
            const Vec2 off = p - foot;
            const double dist2 = dot(off, off);
            if (dist2 < best) {
                best = dist2;
                const double side = dot(off, segment_normal(i));
                out.s = along == len ? cum_len_[i + 1] : cum_len_[i] + along;
                out.d = side >= 0.0 ? std::sqrt(dist2) : -std::sqrt(dist2);
                // Interior feet are exactly perpendicular; keep the projection
                // rather than the root for full precision.
                if (along > 0.0 && along < len) out.d = side;
            }
        }
        return out;
    }

    /// Discrete radius of curvature: min over interior vertices of the mean
    /// adjacent segment length divided by the turning angle. Infinity for a
    /// straight polyline.
    double min_radius_of_curvature() const {
        double r = std::numeric_limits<double>::infinity();
        for (std::size_t k = 1; k + 1 < points_.size(); ++k) {
            const Vec2 t0 = segment_tangent(k - 1);
            const Vec2 t1 = segment_tangent(k);
            const double angle = std::abs(std::atan2(cross(t0, t1), dot(t0, t1)));
            if (angle <= 0.0) continue;
            const double mean_len = 0.5 * (cum_len_[k + 1] - cum_len_[k - 1]);
            r = std::min(r, mean_len / angle);
        }
        return r;
    }

    /// Largest turning angle at any interior vertex, in radians.
    double max_turning_angle() const {
        double m = 0.0;
        for (std::size_t k = 1; k + 1 < points_.size(); ++k) {
            const Vec2 t0 = segment_tangent(k - 1);
            const Vec2 t1 = segment_tangent(k);
            m = std::max(m, std::abs(std::atan2(cross(t0, t1), dot(t0, t1))));
        }
        return m;
    }

private:
    CurveFrame frame_at(double s) const {
        const std::size_t nseg = segment_count();
        std::size_t seg = static_cast<std::size_t>(std::upper_bound(cum_len_.begin(), cum_len_.end(), s) -
                                                   cum_len_.begin());
        seg = seg == 0 ? 0 : seg - 1;
        if (seg >= nseg) seg = nseg - 1;
        const Vec2 t = segment_tangent(seg);
        CurveFrame f;
        f.point = points_[seg] + (s - cum_len_[seg]) * t;
        if (s == cum_len_[seg]) f.point = points_[seg];
        f.tangent = t;
        f.normal = normal_sign_ * rot90(t);
        return f;
    }

    void check_simple() const {
        const std::size_t nseg = segment_count();
        const double tol = 1e-12 * total_length();
        // Consecutive segments may only share their joint: reject exact reversal.
        for (std::size_t i = 0; i + 1 < nseg; ++i) {
            const Vec2 t0 = segment_tangent(i);
            const Vec2 t1 = segment_tangent(i + 1);
            if (std::abs(cross(t0, t1)) <= 1e-12 && dot(t0, t1) < 0.0)
                throw CurveError(CurveError::Reason::SelfIntersection,
                                 "arch curve folds back on itself at point " + std::to_string(i + 1));
        }
        for (std::size_t i = 0; i < nseg; ++i)
            for (std::size_t j = i + 2; j < nseg; ++j)
                if (segments_touch(points_[i], points_[i + 1], points_[j], points_[j + 1], tol))
                    throw CurveError(CurveError::Reason::SelfIntersection,
                                     "arch curve segments " + std::to_string(i) + " and " + std::to_string(j) +
                                         " intersect");
    }

    static double point_segment_dist(Vec2 p, Vec2 a, Vec2 b) {
        const Vec2 ab = b - a;
        const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
        return norm(p - (a + t * ab));
    }

    static bool segments_touch(Vec2 a, Vec2 b, Vec2 c, Vec2 d, double tol) {
        const double o1 = cross(b - a, c - a);
        const double o2 = cross(b - a, d - a);
        const double o3 = cross(d - c, a - c);
        const double o4 = cross(d - c, b - c);
        if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) return true;
        return point_segment_dist(c, a, b) <= tol || point_segment_dist(d, a, b) <= tol ||
               point_segment_dist(a, c, d) <= tol || point_segment_dist(b, c, d) <= tol;
    }

    std::vector<Vec2> points_;
    std::vector<double> cum_len_;
    double normal_sign_ = 1.0;
};

inline ArchCurve build_curve(std::vector<Vec2> points) { return ArchCurve(std::move(points)); }

/// Parabolic arch prior: in the frame with y-axis `axis` and x-axis `axis`
/// turned by -90 degrees, the arch is y' = a * x'^2 measured from `apex`.
/// [t_start, t_end] is the x' range (relative to the apex) covered by the arch,
/// in traversal order.
struct ParabolaParams {
    double a = 0.0;
    Vec2 apex{};
    Vec2 axis{0.0, 1.0};
    double t_start = -1.0;
    double t_end = 1.0;

    Vec2 frame_x() const { return {axis.y, -axis.x}; }
    Vec2 at(double t) const { return apex + t * frame_x() + (a * t * t) * axis; }
};

struct ParabolaFit {
    ParabolaParams params;
    double residual_rms = 0.0;
    bool degenerate = false;
};

namespace detail {

struct QuadraticFit {
    double c0, c1, c2, rms;
};

// Least-squares y' = c0 + c1 x' + c2 x'^2 in the frame whose x-axis has angle theta.
inline QuadraticFit fit_in_frame(const std::vector<Vec2>& pts, Vec2 centroid, double theta) {
    const Vec2 ex{std::cos(theta), std::sin(theta)};
    const Vec2 ey = rot90(ex);
    const Eigen::Index n = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd A(n, 3);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec2 q = pts[static_cast<std::size_t>(i)] - centroid;
        const double x = dot(q, ex);
        A(i, 0) = 1.0;
        A(i, 1) = x;
        A(i, 2) = x * x;
        b(i) = dot(q, ey);
    }
    const Eigen::Vector3d c = A.colPivHouseholderQr().solve(b);
    const double rms = std::sqrt((A * c - b).squaredNorm() / static_cast<double>(n));
    return {c(0), c(1), c(2), rms};
}

}  // namespace detail

/// Least-squares parabola through the curve's points. The frame rotation is
/// searched (coarse scan, then golden section) so an exact parabola in any
/// orientation is recovered with zero residual. Collinear points give a = 0
/// with the degenerate flag.
inline ParabolaFit fit_parabola(const ArchCurve& curve) {
    const std::vector<Vec2>& pts = curve.points();
    const double n = static_cast<double>(pts.size());
    Vec2 centroid{};
    for (const Vec2& p : pts) centroid = centroid + p;
    centroid = (1.0 / n) * centroid;

    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const Vec2& p : pts) {
        const Vec2 q = p - centroid;
        sxx += q.x * q.x;
        syy += q.y * q.y;
        sxy += q.x * q.y;
    }
    const double pca_theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    const double spread = sxx + syy;
    const double minor = 0.5 * (spread - std::hypot(sxx - syy, 2.0 * sxy));

    ParabolaFit out;
    const Vec2 first = pts.front();
    const Vec2 last = pts.back();

    if (minor <= 1e-24 * spread) {
        Vec2 ex{std::cos(pca_theta), std::sin(pca_theta)};
        if (dot(last - first, ex) < 0.0) ex = -1.0 * ex;
        out.degenerate = true;
        out.params.a = 0.0;
        out.params.apex = centroid;
        out.params.axis = rot90(ex);
        out.params.t_start = dot(first - centroid, ex);
        out.params.t_end = dot(last - centroid, ex);
        out.residual_rms = 0.0;
        return out;
    }

    constexpr int kScan = 360;
    const double pi = std::numbers::pi;
    double best_theta = pca_theta;
    double best_rms = detail::fit_in_frame(pts, centroid, pca_theta).rms;
    for (int k = 1; k < kScan; ++k) {
        const double th = pca_theta + pi * k / kScan;
        const double r = detail::fit_in_frame(pts, centroid, th).rms;
        if (r < best_rms) {
            best_rms = r;
            best_theta = th;
        }
    }
    double lo = best_theta - pi / kScan;
    double hi = best_theta + pi / kScan;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = detail::fit_in_frame(pts, centroid, x1).rms;
    double f2 = detail::fit_in_frame(pts, centroid, x2).rms;
    for (int it = 0; it < 100; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = detail::fit_in_frame(pts, centroid, x1).rms;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = detail::fit_in_frame(pts, centroid, x2).rms;
        }
    }
    const double refined = f1 < f2 ? x1 : x2;
    if (std::min(f1, f2) < best_rms) best_theta = refined;

    detail::QuadraticFit q = detail::fit_in_frame(pts, centroid, best_theta);
    if (q.c2 < 0.0) {
        best_theta += pi;
        q = detail::fit_in_frame(pts, centroid, best_theta);
    }
    const Vec2 ex{std::cos(best_theta), std::sin(best_theta)};
    const Vec2 ey = rot90(ex);

    double extent = 0.0;
    for (const Vec2& p : pts) extent = std::max(extent, std::abs(dot(p - centroid, ex)));
    out.residual_rms = q.rms;
    out.params.axis = ey;

    if (std::abs(q.c2) * extent * extent <= 1e-12 * std::max(extent, 1e-300)) {
        out.degenerate = true;
        out.params.a = 0.0;
        out.params.apex = centroid;
    } else {
        const double x0 = -q.c1 / (2.0 * q.c2);
        const double y0 = q.c0 - q.c1 * q.c1 / (4.0 * q.c2);
        out.params.a = q.c2;
        out.params.apex = centroid + x0 * ex + y0 * ey;
    }
    // frame_x() of the stored axis equals ex by construction.
    out.params.t_start = dot(first - out.params.apex, ex);
    out.params.t_end = dot(last - out.params.apex, ex);
    return out;
}

/// Samples a parabola prior into a polyline of `count` points, uniform in x'.
inline ArchCurve parabola_curve(const ParabolaParams& p, std::size_t count = 1025) {
    if (count < 3) throw RangeError("parabola polyline needs at least 3 samples");
    std::vector<Vec2> pts(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double t = p.t_start + (p.t_end - p.t_start) * static_cast<double>(i) / static_cast<double>(count - 1);
        pts[i] = p.at(t);
    }
    return ArchCurve(std::move(pts));
}

}  // namespace archwarp

#endif
