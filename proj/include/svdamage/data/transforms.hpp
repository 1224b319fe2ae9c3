#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "svdamage/core/random.hpp"
#include "svdamage/core/tensor.hpp"
#include "svdamage/data/image.hpp"

namespace svdamage {

struct TransformConfig {
    std::size_t target_size = 224;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
    // Crop area as a fraction of the frame; the crop keeps the frame's aspect.
    double crop_scale_min = 0.8;
    double crop_scale_max = 1.0;
    double flip_probability = 0.5;
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
    std::string interpolation = "bilinear";

    void validate() const {
        if (target_size == 0) throw ValidationError("target_size must be positive");
        for (double s : std) if (!(s > 0)) throw ValidationError("normalization std must be > 0");
        if (!(crop_scale_min > 0) || crop_scale_min > crop_scale_max)
            throw ValidationError("crop_scale range must satisfy 0 < min <= max");
        if (crop_scale_max > 1.0) throw ValidationError("crop window exceeding image bounds (crop_scale_max > 1)");
        if (flip_probability < 0 || flip_probability > 1) throw ValidationError("flip_probability must be in [0,1]");
        if (brightness < 0 || contrast < 0 || saturation < 0)
            throw ValidationError("jitter strengths must be non-negative");
        if (interpolation != "bilinear") throw ValidationError("unsupported interpolation '" + interpolation + "'");
    }

    // Identity augmentation: full-frame crop, no flip, no jitter.
    static TransformConfig no_augmentation(std::size_t size = 224) {
        TransformConfig c;
        c.target_size = size;
        c.crop_scale_min = c.crop_scale_max = 1.0;
        c.flip_probability = 0;
        c.brightness = c.contrast = c.saturation = 0;
        return c;
    }
};

// Resize to target_size x target_size, then (v - mean_c) / std_c.
// Output is a [3, S, S] tensor.
inline Tensor<float> preprocess(const PixelImage& image, const TransformConfig& cfg) {
    check_rgb(image, "preprocess");
    const std::size_t S = cfg.target_size;
    require(S > 0, "preprocess: target_size must be positive");
    const PixelImage r = resize_bilinear(image, S, S);
    Tensor<float> out({3, S, S});
    for (std::size_t c = 0; c < 3; ++c) {
        const double m = cfg.mean[c], s = cfg.std[c];
        for (std::size_t i = 0; i < S * S; ++i)
            out[c * S * S + i] = static_cast<float>((r.values[c * S * S + i] - m) / s);
    }
    return out;
}

inline PixelImage denormalize(const Tensor<float>& t, const TransformConfig& cfg) {
    require(t.rank() == 3 && t.dim(0) == 3, "denormalize expects a [3, H, W] tensor");
    PixelImage img(t.dim(1), t.dim(2), 3);
    const std::size_t n = t.dim(1) * t.dim(2);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i)
            img.values[c * n + i] = static_cast<float>(t[c * n + i] * cfg.std[c] + cfg.mean[c]);
    return img;
}

// Stacks [3, S, S] tensors into one channels-last [B, S, S, 3] batch.
inline Tensor<float> to_batch_nhwc(const std::vector<const Tensor<float>*>& chw) {
    require(!chw.empty(), "to_batch_nhwc: empty batch");
    const std::size_t H = chw[0]->dim(1), W = chw[0]->dim(2);
    Tensor<float> out({chw.size(), H, W, 3});
    for (std::size_t b = 0; b < chw.size(); ++b) {
        require(chw[b]->shape() == chw[0]->shape(), "to_batch_nhwc: mixed shapes");
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) out.at(b, y, x, c) = (*chw[b])[(c * H + y) * W + x];
    }
    return out;
}

struct PhotometricJitter {
    double brightness = 1, contrast = 1, saturation = 1;
};

inline PixelImage apply_jitter(const PixelImage& img, const PhotometricJitter& j) {
    PixelImage out = img;
    const std::size_t n = img.height * img.width;
    float* r = out.values.data();
    float* g = r + n;
    float* b = g + n;
    if (j.brightness != 1)
        for (auto& v : out.values) v = static_cast<float>(v * j.brightness);
    if (j.contrast != 1) {
        double mean = 0;
        for (std::size_t i = 0; i < n; ++i) mean += 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        mean /= static_cast<double>(n);
        for (auto& v : out.values) v = static_cast<float>(mean + (v - mean) * j.contrast);
    }
    if (j.saturation != 1)
        for (std::size_t i = 0; i < n; ++i) {
            const double grey = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
            for (float* ch : {r, g, b}) ch[i] = static_cast<float>(grey + (ch[i] - grey) * j.saturation);
        }
    out.clamp();
    return out;
}

struct AugmentedPair {
    PixelImage pre, post;
    CropWindow pre_crop, post_crop;
    bool pre_flipped = false, post_flipped = false;
    PhotometricJitter pre_jitter, post_jitter;
};

namespace detail {

inline PhotometricJitter draw_jitter(Rng& rng, const TransformConfig& cfg) {
    PhotometricJitter j;
    auto factor = [&](double s) { return s > 0 ? uniform(rng, std::max(0.0, 1.0 - s), 1.0 + s) : 1.0; };
    j.brightness = factor(cfg.brightness);
    j.contrast = factor(cfg.contrast);
    j.saturation = factor(cfg.saturation);
    return j;
}

} // namespace detail

// One crop window and flip decision shared by both images; photometric jitter
// drawn independently for each. Outputs keep the input dimensions.
inline AugmentedPair augment_pair(const PixelImage& pre, const PixelImage& post, const TransformConfig& cfg,
                                  std::uint64_t seed) {
    check_rgb(pre, "augment_pair(pre)");
    check_rgb(post, "augment_pair(post)");
    if (pre.height != post.height || pre.width != post.width)
        throw ValidationError("augment_pair: pre and post dimensions differ");
    cfg.validate();
    Rng geo(derive_seed(seed, 0));
    const double area = uniform(geo, cfg.crop_scale_min, cfg.crop_scale_max);
    const double side = std::sqrt(area);
    CropWindow win;
    win.height = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * pre.height)), 1, pre.height);
    win.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * pre.width)), 1, pre.width);
    win.top = static_cast<std::size_t>(uniform_int(geo, 0, static_cast<long>(pre.height - win.height)));
    win.left = static_cast<std::size_t>(uniform_int(geo, 0, static_cast<long>(pre.width - win.width)));
    const bool flip = cfg.flip_probability > 0 && uniform(geo) < cfg.flip_probability;

    Rng pre_rng(derive_seed(seed, 1)), post_rng(derive_seed(seed, 2));
    AugmentedPair out;
    out.pre_crop = out.post_crop = win;
    out.pre_flipped = out.post_flipped = flip;
    out.pre_jitter = detail::draw_jitter(pre_rng, cfg);
    out.post_jitter = detail::draw_jitter(post_rng, cfg);
    auto geometric = [&](const PixelImage& img) {
        PixelImage g = resize_bilinear(crop(img, win), img.height, img.width);
        return flip ? hflip(g) : g;
    };
    out.pre = apply_jitter(geometric(pre), out.pre_jitter);
    out.post = apply_jitter(geometric(post), out.post_jitter);
    return out;
}

} // namespace svdamage
