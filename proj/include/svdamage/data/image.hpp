#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "svdamage/core/error.hpp"

namespace svdamage {

// Planar RGB image, values in [0, 1], stored channel-major (c, y, x).
struct PixelImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 3;
    std::vector<float> values;

    PixelImage() = default;
    PixelImage(std::size_t h, std::size_t w, std::size_t c = 3, float fill = 0.0f)
        : height(h), width(w), channels(c), values(h * w * c, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }

    bool empty() const { return height == 0 || width == 0; }
    bool operator==(const PixelImage&) const = default;

    void set_rgb(std::size_t y, std::size_t x, float r, float g, float b) {
        at(0, y, x) = r;
        at(1, y, x) = g;
        at(2, y, x) = b;
    }

    void clamp() {
        for (auto& v : values) v = std::clamp(v, 0.0f, 1.0f);
    }
};

inline void check_rgb(const PixelImage& img, const char* what) {
    if (img.empty()) throw ValidationError(std::string(what) + ": zero-sized image");
    if (img.channels != 3)
        throw ValidationError(std::string(what) + ": expected 3 channels, got " + std::to_string(img.channels));
    require(img.values.size() == img.height * img.width * img.channels, std::string(what) + ": corrupt image buffer");
}

// Half-pixel-centre bilinear sampling of one plane; (sy, sx) in source pixels.
inline float sample_bilinear(const float* plane, std::size_t h, std::size_t w, double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
    const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

// Bilinear resize with half-pixel centres: src = (dst + 0.5) * in / out - 0.5,
// clamped to the border.
inline std::vector<float> resize_plane(const float* plane, std::size_t h, std::size_t w, std::size_t oh,
                                       std::size_t ow) {
    std::vector<float> out(oh * ow);
    const double ry = static_cast<double>(h) / static_cast<double>(oh);
    const double rx = static_cast<double>(w) / static_cast<double>(ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
            out[y * ow + x] = sample_bilinear(plane, h, w, (static_cast<double>(y) + 0.5) * ry - 0.5,
                                              (static_cast<double>(x) + 0.5) * rx - 0.5);
    return out;
}

inline PixelImage resize_bilinear(const PixelImage& img, std::size_t oh, std::size_t ow) {
    require(!img.empty() && oh > 0 && ow > 0, "resize: zero-sized image");
    if (oh == img.height && ow == img.width) return img;
    PixelImage out(oh, ow, img.channels);
    for (std::size_t c = 0; c < img.channels; ++c) {
        auto plane = resize_plane(img.values.data() + c * img.height * img.width, img.height, img.width, oh, ow);
        std::copy(plane.begin(), plane.end(), out.values.begin() + static_cast<long>(c * oh * ow));
    }
    return out;
}

struct CropWindow {
    std::size_t top = 0, left = 0, height = 0, width = 0;
    bool operator==(const CropWindow&) const = default;
};

inline PixelImage crop(const PixelImage& img, const CropWindow& win) {
    if (win.height == 0 || win.width == 0 || win.top + win.height > img.height || win.left + win.width > img.width)
        throw ValidationError("crop window " + std::to_string(win.height) + "x" + std::to_string(win.width) + "+" +
                              std::to_string(win.top) + "+" + std::to_string(win.left) + " exceeds image bounds " +
                              std::to_string(img.height) + "x" + std::to_string(img.width));
    PixelImage out(win.height, win.width, img.channels);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < win.height; ++y)
            for (std::size_t x = 0; x < win.width; ++x) out.at(c, y, x) = img.at(c, win.top + y, win.left + x);
    return out;
}

inline PixelImage hflip(const PixelImage& img) {
    PixelImage out(img.height, img.width, img.channels);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

} // namespace svdamage
