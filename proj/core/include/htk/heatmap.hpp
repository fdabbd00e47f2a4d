#pragma once

// Dense 2D maps used for ground truth and predictions, plus PGM export.
// Metrics run in double precision, so maps store double regardless of the
// training scalar type.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "htk/common.hpp"

namespace htk {

struct Heatmap {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Heatmap() = default;
    Heatmap(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {
        if (h_ <= 0 || w_ <= 0) throw ShapeError("heatmap extents must be positive");
    }

    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return v.size(); }
};

inline double heatmap_sum(const Heatmap& m) {
    double s = 0.0;
    for (double x : m.v) s += x;
    return s;
}

inline double heatmap_max(const Heatmap& m) {
    double mx = m.v.empty() ? 0.0 : m.v[0];
    for (double x : m.v) mx = std::max(mx, x);
    return mx;
}

// Unit-sum normalization used before distribution metrics. A map with no mass
// becomes uniform so downstream comparisons stay defined.
inline Heatmap normalize_sum(const Heatmap& m) {
    Heatmap out = m;
    const double s = heatmap_sum(m);
    if (s <= 0.0) {
        warn("normalize_sum: map has no mass, substituting a uniform map");
        const double u = 1.0 / static_cast<double>(out.size());
        for (auto& x : out.v) x = u;
        return out;
    }
    for (auto& x : out.v) x /= s;
    return out;
}

// Unit-max normalization used for rendering and threshold protocols.
inline Heatmap normalize_max(const Heatmap& m) {
    Heatmap out = m;
    const double mx = heatmap_max(m);
    if (mx <= 0.0) {
        warn("normalize_max: map has no mass, leaving zeros");
        for (auto& x : out.v) x = 0.0;
        return out;
    }
    for (auto& x : out.v) x /= mx;
    return out;
}

// Unnormalized Gaussian bump evaluated at integer pixel coordinates.
inline Heatmap gaussian_heatmap(int h, int w, double cx, double cy, double sigma) {
    if (sigma <= 0.0) throw ValueError("gaussian_heatmap: sigma must be positive");
    Heatmap out(h, w);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < h; ++y) {
        const double dy = static_cast<double>(y) - cy;
        for (int x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx;
            out.at(y, x) = std::exp(-(dx * dx + dy * dy) * inv2s2);
        }
    }
    return out;
}

// Separable Gaussian blur with clamp-to-edge sampling; radius 3 sigma.
inline Heatmap gaussian_blur(const Heatmap& m, double sigma) {
    if (sigma <= 0.0) return m;
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double ks = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        ks += k[static_cast<std::size_t>(i + r)];
    }
    for (auto& x : k) x /= ks;
    Heatmap tmp(m.h, m.w), out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int xx = std::clamp(x + i, 0, m.w - 1);
                acc += k[static_cast<std::size_t>(i + r)] * m.at(y, xx);
            }
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int yy = std::clamp(y + i, 0, m.h - 1);
                acc += k[static_cast<std::size_t>(i + r)] * tmp.at(yy, x);
            }
            out.at(y, x) = acc;
        }
    return out;
}

// Binary PGM (P5), 8 bit. Input values are expected in [0,1]; callers
// normalize first. Header is exactly "P5\n<w> <h>\n255\n".
inline void save_pgm(const std::filesystem::path& path, const Heatmap& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "P5\n" << m.w << " " << m.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(m.w));
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            double v = m.at(y, x);
            v = std::clamp(v, 0.0, 1.0);
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), m.w);
    }
    if (!out) throw IoError("short write: " + path.string());
}

inline Heatmap load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported pgm: " + path.string());
    in.get();
    Heatmap out(h, w);
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw IoError("truncated pgm: " + path.string());
    for (std::size_t i = 0; i < buf.size(); ++i) out.v[i] = static_cast<double>(buf[i]) / 255.0;
    return out;
}

}  // namespace htk
