#pragma once

#include <memory>
#include <vector>

#include "svdamage/backbones/backbone.hpp"
#include "svdamage/nn/layers.hpp"

namespace svdamage {

// depthwise kxk conv -> LayerNorm -> Linear(C, 4C) -> GELU -> Linear(4C, C)
// -> layer scale, added to the block input.
template <typename T>
class ConvNeXtBlock {
public:
    ConvNeXtBlock(const std::string& path, std::size_t dim, std::size_t kernel, double layer_scale)
        : dwconv_(nn::join_path(path, "conv_dw"), dim, kernel), norm_(nn::join_path(path, "norm"), dim, 1e-6),
          fc1_(nn::join_path(path, "mlp.fc1"), dim, 4 * dim), fc2_(nn::join_path(path, "mlp.fc2"), 4 * dim, dim),
          scale_(nn::join_path(path, "gamma"), dim, layer_scale) {}

    void init(std::mt19937_64& rng) {
        dwconv_.init(rng);
        fc1_.init(rng);
        fc2_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> h = dwconv_.forward(x);
        h = norm_.forward(h);
        h = fc1_.forward(h);
        h = act_.forward(h);
        h = fc2_.forward(h);
        h = scale_.forward(h);
        h += x;
        return h;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> d = scale_.backward(g);
        d = fc2_.backward(d);
        d = act_.backward(d);
        d = fc1_.backward(d);
        d = norm_.backward(d);
        d = dwconv_.backward(d);
        d += g;
        return d;
    }

    void collect(nn::ParamList<T>& out) {
        dwconv_.collect(out);
        norm_.collect(out);
        fc1_.collect(out);
        fc2_.collect(out);
        scale_.collect(out);
    }

private:
    nn::DepthwiseConv2d<T> dwconv_;
    nn::LayerNorm<T> norm_;
    nn::Linear<T> fc1_, fc2_;
    nn::Gelu<T> act_;
    nn::ChannelScale<T> scale_;
};

// Four-stage ConvNeXt: patchify stem (stride 4) then three LayerNorm +
// 2x2 stride-2 downsamples between stages.
template <typename T>
class ConvNeXt final : public Backbone<T> {
public:
    explicit ConvNeXt(BackboneConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        require(cfg_.family == BackboneFamily::convnext, "ConvNeXt built from a non-convnext config");
        stem_conv_ = nn::PatchConv<T>("stem.0", cfg_.input_channels, cfg_.stage_dims[0], cfg_.patch_size);
        stem_norm_ = nn::LayerNorm<T>("stem.1", cfg_.stage_dims[0], 1e-6);
        for (std::size_t s = 0; s < 4; ++s) {
            const std::string sp = "stages." + std::to_string(s);
            if (s > 0) {
                down_norm_[s] = nn::LayerNorm<T>(sp + ".downsample.0", cfg_.stage_dims[s - 1], 1e-6);
                down_conv_[s] = nn::PatchConv<T>(sp + ".downsample.1", cfg_.stage_dims[s - 1], cfg_.stage_dims[s], 2);
            }
            for (std::size_t b = 0; b < cfg_.stage_depths[s]; ++b)
                blocks_[s].emplace_back(sp + ".blocks." + std::to_string(b), cfg_.stage_dims[s], cfg_.kernel_size,
                                        cfg_.layer_scale_init);
        }
    }

    void init(std::mt19937_64& rng) override {
        stem_conv_.init(rng);
        for (std::size_t s = 0; s < 4; ++s) {
            if (s > 0) down_conv_[s].init(rng);
            for (auto& b : blocks_[s]) b.init(rng);
        }
    }

    FeatureMap<T> forward(const Tensor<T>& x) override {
        this->check_input(x);
        Tensor<T> h = stem_norm_.forward(stem_conv_.forward(x));
        for (std::size_t s = 0; s < 4; ++s) {
            if (s > 0) h = down_conv_[s].forward(down_norm_[s].forward(h));
            for (auto& b : blocks_[s]) h = b.forward(h);
            this->stage_out_[s] = h;
        }
        return FeatureMap<T>{FeatureLayout::spatial, h, 4};
    }

    Tensor<T> backward(const Tensor<T>& grad) override {
        Tensor<T> g = grad;
        for (std::size_t s = 4; s-- > 0;) {
            this->stage_grad_[s] = g;
            for (auto it = blocks_[s].rbegin(); it != blocks_[s].rend(); ++it) g = it->backward(g);
            if (s > 0) g = down_norm_[s].backward(down_conv_[s].backward(g));
        }
        return stem_conv_.backward(stem_norm_.backward(g));
    }

    void collect(nn::ParamList<T>& out) override {
        stem_conv_.collect(out);
        stem_norm_.collect(out);
        for (std::size_t s = 0; s < 4; ++s) {
            if (s > 0) {
                down_norm_[s].collect(out);
                down_conv_[s].collect(out);
            }
            for (auto& b : blocks_[s]) b.collect(out);
        }
    }

    const BackboneConfig& config() const override { return cfg_; }

private:
    BackboneConfig cfg_;
    nn::PatchConv<T> stem_conv_;
    nn::LayerNorm<T> stem_norm_;
    std::array<nn::LayerNorm<T>, 4> down_norm_;
    std::array<nn::PatchConv<T>, 4> down_conv_;
    std::array<std::vector<ConvNeXtBlock<T>>, 4> blocks_;
};

} // namespace svdamage
