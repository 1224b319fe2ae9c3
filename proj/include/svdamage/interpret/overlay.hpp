#pragma once

#include <array>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "svdamage/backbones/archive.hpp"
#include "svdamage/catalog/split.hpp"
#include "svdamage/data/image_io.hpp"
#include "svdamage/interpret/gradcam.hpp"

namespace svdamage {

// Piecewise-linear colormaps on [0, 1].
inline std::array<float, 3> colormap(const std::string& name, double v) {
    v = std::clamp(v, 0.0, 1.0);
    if (name == "gray") return {static_cast<float>(v), static_cast<float>(v), static_cast<float>(v)};
    if (name == "jet") {
        auto ch = [&](double centre) { return static_cast<float>(std::clamp(1.5 - std::abs(4.0 * v - centre), 0.0, 1.0)); };
        return {ch(3.0), ch(2.0), ch(1.0)};
    }
    if (name == "hot") {
        return {static_cast<float>(std::clamp(3.0 * v, 0.0, 1.0)), static_cast<float>(std::clamp(3.0 * v - 1.0, 0.0, 1.0)),
                static_cast<float>(std::clamp(3.0 * v - 2.0, 0.0, 1.0))};
    }
    throw ValidationError("unknown colormap '" + name + "' (expected jet|hot|gray)");
}

// Bilinear upsampling of the heatmap grid to h x w.
inline std::vector<float> upsample(const Heatmap& m, std::size_t h, std::size_t w) {
    std::vector<float> plane(m.values.begin(), m.values.end());
    return resize_plane(plane.data(), m.height, m.width, h, w);
}

inline PixelImage colorize(const Heatmap& m, std::size_t h, std::size_t w, const std::string& cmap) {
    const auto up = upsample(m, h, w);
    PixelImage out(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const auto c = colormap(cmap, up[y * w + x]);
            out.set_rgb(y, x, c[0], c[1], c[2]);
        }
    return out;
}

// (1 - alpha) * image + alpha * colormap(heatmap), clipped to [0, 1].
inline PixelImage overlay(const Heatmap& m, const PixelImage& image, const HeatmapConfig& cfg) {
    check_rgb(image, "overlay");
    cfg.validate();
    const PixelImage heat = colorize(m, image.height, image.width, cfg.colormap);
    PixelImage out = image;
    const auto a = static_cast<float>(cfg.alpha);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = (1.0f - a) * image.values[i] + a * heat.values[i];
    out.clamp();
    return out;
}

// Panels side by side, each resized to the height of the first.
inline PixelImage hconcat(const std::vector<PixelImage>& panels) {
    require(!panels.empty(), "hconcat: no panels");
    const std::size_t h = panels[0].height;
    std::size_t w = 0;
    std::vector<PixelImage> sized;
    for (const auto& p : panels) {
        sized.push_back(resize_bilinear(p, h, std::max<std::size_t>(1, p.width * h / p.height)));
        w += sized.back().width;
    }
    PixelImage out(h, w);
    std::size_t x0 = 0;
    for (const auto& p : sized) {
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < p.width; ++x) out.at(c, y, x0 + x) = p.at(c, y, x);
        x0 += p.width;
    }
    return out;
}

inline std::string class_name(int k) {
    require(k >= 0 && k <= 3, "class index out of range");
    return to_string(static_cast<DamageLabel>(k));
}

// Model display names carry spaces and '+'; those become '-'.
inline std::string heatmap_filename(const std::string& pair_id, const std::string& model, int cls) {
    std::string m;
    for (char c : model) {
        const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
        if (keep) m += c;
        else if (m.empty() || m.back() != '-') m += '-';
    }
    return pair_id + "_" + m + "_" + class_name(cls) + ".png";
}

// Portable float map, greyscale, little-endian, rows stored bottom to top.
inline void write_pfm(const std::filesystem::path& path, const Heatmap& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    f << "Pf\n" << m.width << ' ' << m.height << "\n-1.0\n";
    for (std::size_t y = m.height; y-- > 0;)
        for (std::size_t x = 0; x < m.width; ++x) {
            const auto v = static_cast<float>(m.at(y, x));
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            u = detail::to_le(u);
            f.write(reinterpret_cast<const char*>(&u), 4);
        }
    if (!f) throw RuntimeFailure("failed writing " + path.string());
}

inline Heatmap read_pfm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open " + path.string());
    std::string magic;
    double scale = 0;
    Heatmap m;
    f >> magic >> m.width >> m.height >> scale;
    f.get();
    require(magic == "Pf" && scale < 0, path.string() + ": not a little-endian greyscale PFM");
    m.values.assign(m.width * m.height, 0.0);
    for (std::size_t y = m.height; y-- > 0;)
        for (std::size_t x = 0; x < m.width; ++x) {
            std::uint32_t u;
            f.read(reinterpret_cast<char*>(&u), 4);
            u = detail::to_le(u);
            float v;
            std::memcpy(&v, &u, 4);
            m.values[y * m.width + x] = v;
        }
    require(static_cast<bool>(f), path.string() + ": truncated PFM");
    return m;
}

struct CamExport {
    std::filesystem::path triptych, grid;
};

// pre | post | overlay-on-post, plus the raw grid next to it (.pfm).
inline CamExport export_cam(const std::filesystem::path& dir, const std::string& pair_id, const std::string& model,
                            const Heatmap& m, const PixelImage& pre, const PixelImage& post, const HeatmapConfig& cfg) {
    std::filesystem::create_directories(dir);
    CamExport e;
    e.triptych = dir / heatmap_filename(pair_id, model, m.target_class);
    e.grid = e.triptych;
    e.grid.replace_extension(".pfm");
    write_png(e.triptych, hconcat({pre, post, overlay(m, post, cfg)}));
    write_pfm(e.grid, m);
    return e;
}

} // namespace svdamage
