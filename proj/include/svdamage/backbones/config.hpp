#pragma once

#include <array>
#include <string>

#include "svdamage/core/error.hpp"

namespace svdamage {

enum class BackboneFamily { convnext, swin };
enum class BackboneVariant { tiny, small, base, mini };

inline std::string to_string(BackboneFamily f) { return f == BackboneFamily::convnext ? "convnext" : "swin"; }

inline std::string to_string(BackboneVariant v) {
    switch (v) {
    case BackboneVariant::tiny: return "tiny";
    case BackboneVariant::small: return "small";
    case BackboneVariant::base: return "base";
    case BackboneVariant::mini: return "mini";
    }
    return "?";
}

inline BackboneFamily parse_family(const std::string& s) {
    if (s == "convnext") return BackboneFamily::convnext;
    if (s == "swin") return BackboneFamily::swin;
    throw ValidationError("unknown backbone family '" + s + "' (expected convnext|swin)");
}

inline BackboneVariant parse_variant(const std::string& s) {
    if (s == "tiny") return BackboneVariant::tiny;
    if (s == "small") return BackboneVariant::small;
    if (s == "base") return BackboneVariant::base;
    if (s == "mini") return BackboneVariant::mini;
    throw ValidationError("unknown backbone variant '" + s + "' (expected tiny|small|base|mini)");
}

struct BackboneConfig {
    BackboneFamily family = BackboneFamily::convnext;
    BackboneVariant variant = BackboneVariant::mini;
    std::array<std::size_t, 4> stage_depths{2, 2, 2, 2};
    std::array<std::size_t, 4> stage_dims{16, 32, 64, 128};
    std::array<std::size_t, 4> heads{2, 2, 2, 2}; // swin only
    std::size_t patch_size = 4;                    // stem stride
    std::size_t window_size = 7;                   // swin only
    std::size_t kernel_size = 7;                   // convnext only
    std::size_t input_channels = 3;
    double layer_scale_init = 1e-6;                // convnext only

    std::size_t feature_dim() const { return stage_dims[3]; }

    // Total spatial reduction from input to stage-4 output.
    std::size_t total_stride() const { return patch_size * 8; }

    void validate() const {
        require(input_channels == 3 || input_channels == 6, "backbone input_channels must be 3 or 6");
        for (std::size_t i = 0; i < 4; ++i) {
            require(stage_depths[i] > 0 && stage_dims[i] > 0, "backbone stages need positive depth and dim");
            if (family == BackboneFamily::swin)
                require(heads[i] > 0 && stage_dims[i] % heads[i] == 0,
                        "swin stage dim must be divisible by its head count");
        }
        require(patch_size > 0 && window_size > 0 && kernel_size % 2 == 1, "backbone geometry invalid");
    }

    static BackboneConfig make(BackboneFamily family, BackboneVariant variant, std::size_t input_channels = 3) {
        BackboneConfig c;
        c.family = family;
        c.variant = variant;
        c.input_channels = input_channels;
        if (family == BackboneFamily::convnext) {
            switch (variant) {
            case BackboneVariant::tiny: c.stage_depths = {3, 3, 9, 3}; c.stage_dims = {96, 192, 384, 768}; break;
            case BackboneVariant::small: c.stage_depths = {3, 3, 27, 3}; c.stage_dims = {96, 192, 384, 768}; break;
            case BackboneVariant::base: c.stage_depths = {3, 3, 27, 3}; c.stage_dims = {128, 256, 512, 1024}; break;
            case BackboneVariant::mini:
                c.stage_depths = {2, 2, 2, 2};
                c.stage_dims = {16, 32, 64, 128};
                c.layer_scale_init = 0.1;
                break;
            }
        } else {
            switch (variant) {
            case BackboneVariant::tiny:
                c.stage_depths = {2, 2, 6, 2}; c.stage_dims = {96, 192, 384, 768}; c.heads = {3, 6, 12, 24};
                break;
            case BackboneVariant::small:
                c.stage_depths = {2, 2, 18, 2}; c.stage_dims = {96, 192, 384, 768}; c.heads = {3, 6, 12, 24};
                break;
            case BackboneVariant::base:
                c.stage_depths = {2, 2, 18, 2}; c.stage_dims = {128, 256, 512, 1024}; c.heads = {4, 8, 16, 32};
                break;
            case BackboneVariant::mini:
                c.stage_depths = {2, 2, 2, 2}; c.stage_dims = {16, 32, 64, 128}; c.heads = {2, 2, 2, 2};
                break;
            }
        }
        return c;
    }
};

} // namespace svdamage
