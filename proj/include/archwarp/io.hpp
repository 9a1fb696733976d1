#ifndef ARCHWARP_IO_HPP
#define ARCHWARP_IO_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "archwarp/arch_curve.hpp"
#include "archwarp/cpr.hpp"
#include "archwarp/errors.hpp"
#include "archwarp/grid.hpp"
#include "archwarp/lattice_fit.hpp"
#include "archwarp/volume.hpp"

// File formats.
//
// Volume: a JSON header {dims [D,H,W], spacing_mm [3], dtype "f32le",
// data_file, intensity_range?} next to a raw little-endian float32 file in
// depth-major, then row-major order.
// Lattice: JSON {dims [D,H,W], coords [...]} with coords axis-major then depth-major.
// Arch: JSON {points [[x,y], ...], z_range? [lo, hi]}.
// Panorama: 16-bit binary PGM (big-endian samples) with a JSON sidecar.

namespace archwarp {

using json = nlohmann::json;

/// Malformed structured document; the message names the offending field.
class SchemaError : public DataError {
public:
    using DataError::DataError;
};

namespace detail {

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << s;
    if (!out) throw DataError("write failed for " + p.string());
}

inline json parse_json(const std::filesystem::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::parse_error& e) {
        throw DataError("parse error in " + p.string() + ": " + e.what());
    }
}

inline const json& field(const json& j, const std::string& path, const std::string& key) {
    if (!j.is_object()) throw SchemaError("field '" + path + "': expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw SchemaError("field '" + (path.empty() ? key : path + "." + key) + "': missing");
    return *it;
}

inline double number_at(const json& j, const std::string& path) {
    if (!j.is_number()) throw SchemaError("field '" + path + "': expected a number");
    return j.get<double>();
}

inline std::vector<double> numbers_at(const json& j, const std::string& path, std::optional<std::size_t> len = {}) {
    if (!j.is_array()) throw SchemaError("field '" + path + "': expected an array");
    if (len && j.size() != *len)
        throw SchemaError("field '" + path + "': expected " + std::to_string(*len) + " entries, got " +
                          std::to_string(j.size()));
    std::vector<double> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number_at(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline Dims dims_at(const json& j, const std::string& path) {
    const auto v = numbers_at(j, path, 3);
    std::size_t d[3];
    for (std::size_t a = 0; a < 3; ++a) {
        if (!(v[a] >= 1.0) || v[a] != std::floor(v[a]))
            throw SchemaError("field '" + path + "[" + std::to_string(a) + "]': expected a positive integer");
        d[a] = static_cast<std::size_t>(v[a]);
    }
    return {d[0], d[1], d[2]};
}

inline json dims_json(const Dims& d) { return json::array({d.depth, d.height, d.width}); }

}  // namespace detail

/// Writes `<header>` and the raw data file beside it (same stem, ".raw").
inline void write_volume(const Volume& vol, const std::filesystem::path& header,
                         std::optional<std::pair<double, double>> intensity_range = {}) {
    const std::filesystem::path raw = std::filesystem::path(header).replace_extension(".raw");
    json h;
    h["dims"] = detail::dims_json(vol.dims());
    h["spacing_mm"] = json::array({vol.spacing()[0], vol.spacing()[1], vol.spacing()[2]});
    h["dtype"] = "f32le";
    h["data_file"] = raw.filename().string();
    if (intensity_range) h["intensity_range"] = json::array({intensity_range->first, intensity_range->second});

    std::string bytes(4 * vol.size(), '\0');
    for (std::size_t i = 0; i < vol.size(); ++i) {
        std::uint32_t u = 0;
        const float f = vol[i];
        std::memcpy(&u, &f, 4);
        for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xFFu);
    }
    detail::write_text(raw, bytes);
    detail::write_text(header, h.dump(2) + "\n");
}

inline Volume read_volume(const std::filesystem::path& header) {
    const json h = detail::parse_json(header);
    const Dims dims = detail::dims_at(detail::field(h, "", "dims"), "dims");
    const auto sp = detail::numbers_at(detail::field(h, "", "spacing_mm"), "spacing_mm", 3);
    const json& dt = detail::field(h, "", "dtype");
    if (!dt.is_string()) throw SchemaError("field 'dtype': expected a string");
    if (dt.get<std::string>() != "f32le")
        throw DataError("unsupported dtype '" + dt.get<std::string>() + "' (only f32le is supported)");
    const json& df = detail::field(h, "", "data_file");
    if (!df.is_string()) throw SchemaError("field 'data_file': expected a string");
    if (h.contains("intensity_range")) detail::numbers_at(h["intensity_range"], "intensity_range", 2);

    const std::filesystem::path raw = header.parent_path() / df.get<std::string>();
    const std::string bytes = detail::read_text(raw);
    const std::size_t expected = 4 * dims.size();
    if (bytes.size() != expected)
        throw DataError("length mismatch in " + raw.string() + ": expected " + std::to_string(expected) +
                        " bytes, got " + std::to_string(bytes.size()));
    std::vector<float> data(dims.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
        std::memcpy(&data[i], &u, 4);
        if (std::isnan(data[i])) throw DataError("NaN in volume data at index " + std::to_string(i));
    }
    return Volume(dims, {sp[0], sp[1], sp[2]}, std::move(data));
}

inline json lattice_json(const ControlLattice& p) {
    return json{{"dims", detail::dims_json(p.dims())}, {"coords", p.coords()}};
}

inline void write_lattice(const ControlLattice& p, const std::filesystem::path& path) {
    detail::write_text(path, lattice_json(p).dump() + "\n");
}

inline ControlLattice lattice_from_json(const json& j) {
    const Dims dims = detail::dims_at(detail::field(j, "", "dims"), "dims");
    std::vector<double> coords = detail::numbers_at(detail::field(j, "", "coords"), "coords", 3 * dims.size());
    return ControlLattice(dims, std::move(coords));
}

inline ControlLattice read_lattice(const std::filesystem::path& path) {
    return lattice_from_json(detail::parse_json(path));
}

struct ArchFile {
    std::vector<Vec2> points;
    std::optional<std::pair<double, double>> z_range;
};

inline void write_arch(const ArchFile& a, const std::filesystem::path& path) {
    json pts = json::array();
    for (const Vec2& p : a.points) pts.push_back(json::array({p.x, p.y}));
    json j{{"points", pts}};
    if (a.z_range) j["z_range"] = json::array({a.z_range->first, a.z_range->second});
    detail::write_text(path, j.dump() + "\n");
}

inline ArchFile arch_from_json(const json& j) {
    const json& pts = detail::field(j, "", "points");
    if (!pts.is_array()) throw SchemaError("field 'points': expected an array");
    ArchFile a;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto xy = detail::numbers_at(pts[i], "points[" + std::to_string(i) + "]", 2);
        a.points.push_back({xy[0], xy[1]});
    }
    if (j.contains("z_range")) {
        const auto z = detail::numbers_at(j["z_range"], "z_range", 2);
        a.z_range = std::pair{z[0], z[1]};
    }
    return a;
}

inline ArchFile read_arch(const std::filesystem::path& path) { return arch_from_json(detail::parse_json(path)); }

inline json report_json(const FitReport& r) {
    return json{{"iterations", r.iterations}, {"residual", r.residual}, {"terms", r.terms},
                {"wall_time_s", r.wall_time_s}};
}

inline void write_report(const FitReport& r, const std::filesystem::path& path) {
    detail::write_text(path, report_json(r).dump(2) + "\n");
}

/// 16-bit samples after min-max scaling to [0, 65535].
struct Pgm16 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint16_t> samples;
};

inline Pgm16 quantize_pgm(const Image2D& img, double& lo, double& hi) {
    lo = img.pixels.empty() ? 0.0 : img.pixels[0];
    hi = lo;
    for (float p : img.pixels) {
        lo = std::min<double>(lo, p);
        hi = std::max<double>(hi, p);
    }
    Pgm16 q{img.width, img.height, std::vector<std::uint16_t>(img.pixels.size(), 0)};
    if (hi > lo)
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            q.samples[i] = static_cast<std::uint16_t>(std::lround((img.pixels[i] - lo) / (hi - lo) * 65535.0));
    return q;
}

/// Writes a binary P5 PGM and a `<path>.json` sidecar recording the scaling.
inline void write_panorama(const Image2D& img, const std::filesystem::path& path, const std::string& projection) {
    double lo = 0.0, hi = 0.0;
    const Pgm16 q = quantize_pgm(img, lo, hi);
    std::string out = "P5\n" + std::to_string(q.width) + " " + std::to_string(q.height) + "\n65535\n";
    for (std::uint16_t s : q.samples) {
        out.push_back(static_cast<char>(s >> 8));
        out.push_back(static_cast<char>(s & 0xFF));
    }
    detail::write_text(path, out);
    const json side{{"width", q.width}, {"height", q.height}, {"min", lo}, {"max", hi},
                    {"projection", projection}, {"maxval", 65535}};
    detail::write_text(path.string() + ".json", side.dump(2) + "\n");
}

inline Pgm16 read_pgm16(const std::filesystem::path& path) {
    const std::string s = detail::read_text(path);
    std::istringstream in(s);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || !in || maxval != 65535) throw DataError("not a 16-bit binary PGM: " + path.string());
    in.get();
    const auto offset = static_cast<std::size_t>(in.tellg());
    if (s.size() - offset != 2 * w * h)
        throw DataError("length mismatch in " + path.string() + ": expected " + std::to_string(2 * w * h) +
                        " sample bytes, got " + std::to_string(s.size() - offset));
    Pgm16 q{w, h, std::vector<std::uint16_t>(w * h)};
    for (std::size_t i = 0; i < w * h; ++i)
        q.samples[i] = static_cast<std::uint16_t>((static_cast<unsigned char>(s[offset + 2 * i]) << 8) |
                                                  static_cast<unsigned char>(s[offset + 2 * i + 1]));
    return q;
}

}  // namespace archwarp

#endif
