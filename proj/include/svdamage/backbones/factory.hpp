#pragma once

#include <memory>

#include "svdamage/backbones/convnext.hpp"
#include "svdamage/backbones/swin.hpp"

namespace svdamage {

template <typename T>
std::unique_ptr<Backbone<T>> make_backbone(const BackboneConfig& cfg) {
    if (cfg.family == BackboneFamily::convnext) return std::make_unique<ConvNeXt<T>>(cfg);
    return std::make_unique<Swin<T>>(cfg);
}

} // namespace svdamage
