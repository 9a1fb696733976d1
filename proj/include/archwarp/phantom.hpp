#ifndef ARCHWARP_PHANTOM_HPP
#define ARCHWARP_PHANTOM_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "archwarp/arch_curve.hpp"
#include "archwarp/cpr.hpp"
#include "archwarp/errors.hpp"
#include "archwarp/parallel.hpp"
#include "archwarp/volume.hpp"

// Synthetic jaw: a band of mid intensity following a parabolic arch in the
// axial plane, with spherical "teeth" of high intensity spaced evenly by arc
// length along it. All geometry is in normalised native coordinates.

namespace archwarp {

struct PhantomSpec {
    Dims dims{64, 64, 128};
    Spacing spacing{0.3, 0.3, 0.3};
    ParabolaParams arch{0.8, {0.0, -0.5}, {0.0, 1.0}, -0.85, 0.85};  // keeps band and teeth inside the box
    std::size_t curve_samples = 1025;
    std::size_t teeth = 14;
    double tooth_radius = 0.065;
    double radius_jitter = 0.1;     // relative, uniform in [-j, j]
    double band_thickness = 0.2;    // full width across the arch
    double band_bottom = -0.5;      // vertical extent of the band
    double band_top = 0.5;
    double tooth_height = 0.0;      // vertical coordinate of tooth centres
    double background = 0.0;
    double band_intensity = 0.5;
    double tooth_intensity = 1.0;
    double noise = 0.0;             // amplitude of uniform additive noise
    std::uint64_t seed = 0;

    void validate() const {
        if (!dims.all_at_least(2)) throw DimensionError("phantom dims must be >= 2, got " + dims.str());
        if (!(tooth_radius > 0.0)) throw RangeError("tooth radius must be > 0");
        if (!(radius_jitter >= 0.0 && radius_jitter < 1.0)) throw RangeError("radius jitter must be in [0, 1)");
        if (!(band_thickness > 0.0)) throw RangeError("band thickness must be > 0");
        if (!(band_bottom < band_top)) throw RangeError("band needs bottom < top");
        if (!(noise >= 0.0)) throw RangeError("noise amplitude must be >= 0");
    }
};

struct Tooth {
    Vec2 center;  // axial (x, y)
    double height = 0.0;
    double radius = 0.0;
};

struct Phantom {
    Volume volume;
    ArchCurve curve;
    std::vector<Tooth> teeth;
};

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Tooth centres at arc lengths (k + 1/2) L / n, radii jittered from the seed.
inline std::vector<Tooth> place_teeth(const ArchCurve& curve, const PhantomSpec& spec, std::mt19937_64& rng) {
    std::vector<Tooth> teeth;
    const double L = curve.total_length();
    for (std::size_t k = 0; k < spec.teeth; ++k) {
        const double s = (static_cast<double>(k) + 0.5) * L / static_cast<double>(spec.teeth);
        const double jitter = spec.radius_jitter * (2.0 * uniform01(rng) - 1.0);
        teeth.push_back({curve.point_at(s).point, spec.tooth_height, spec.tooth_radius * (1.0 + jitter)});
    }
    constexpr double kOverlapTol = 1e-9;
    for (std::size_t i = 0; i < teeth.size(); ++i)
        for (std::size_t j = i + 1; j < teeth.size(); ++j) {
            const double gap = norm(teeth[i].center - teeth[j].center);
            if (gap + kOverlapTol < teeth[i].radius + teeth[j].radius)
                throw RangeError("teeth " + std::to_string(i) + " and " + std::to_string(j) +
                                 " overlap: centre distance " + std::to_string(gap) + " < radius sum " +
                                 std::to_string(teeth[i].radius + teeth[j].radius));
        }
    return teeth;
}

inline Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    ArchCurve curve = parabola_curve(spec.arch, spec.curve_samples);
    std::vector<Tooth> teeth = place_teeth(curve, spec, rng);
    const Dims& n = spec.dims;
    const double half = 0.5 * spec.band_thickness;
    const double L = curve.total_length();

    // Band membership depends only on the axial position.
    std::vector<std::uint8_t> in_band(n.depth * n.width, 0);
    parallel_for(in_band.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t idx = b; idx < e; ++idx) {
            const Vec2 p{index_to_norm(static_cast<double>(idx % n.width), n.width),
                         index_to_norm(static_cast<double>(idx / n.width), n.depth)};
            const CurveProjection pr = curve.project(p, true);
            in_band[idx] = (pr.s >= 0.0 && pr.s <= L && std::abs(pr.d) <= half) ? 1 : 0;
        }
    }, 64);

    std::vector<float> data(n.size());
    for (std::size_t i = 0; i < n.depth; ++i) {
        const double y = index_to_norm(static_cast<double>(i), n.depth);
        for (std::size_t j = 0; j < n.height; ++j) {
            const double z = index_to_norm(static_cast<double>(j), n.height);
            const bool band_z = z >= spec.band_bottom && z <= spec.band_top;
            for (std::size_t k = 0; k < n.width; ++k) {
                const double x = index_to_norm(static_cast<double>(k), n.width);
                double v = (band_z && in_band[i * n.width + k]) ? spec.band_intensity : spec.background;
                for (const Tooth& t : teeth) {
                    const double dx = x - t.center.x, dy = y - t.center.y, dz = z - t.height;
                    if (dx * dx + dy * dy + dz * dz <= t.radius * t.radius) {
                        v = spec.tooth_intensity;
                        break;
                    }
                }
                data[n.index(i, j, k)] = static_cast<float>(v);
            }
        }
    }
    if (spec.noise > 0.0)
        for (float& v : data) v += static_cast<float>(spec.noise * (2.0 * uniform01(rng) - 1.0));
    return {Volume(n, spec.spacing, std::move(data)), std::move(curve), std::move(teeth)};
}

}  // namespace archwarp

#endif
