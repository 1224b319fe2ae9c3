#pragma once

#include <array>
#include <memory>
#include <random>
#include <string>

#include "svdamage/backbones/config.hpp"
#include "svdamage/core/tensor.hpp"
#include "svdamage/nn/param.hpp"

namespace svdamage {

enum class FeatureLayout { spatial, tokens };

// Backbone output. Values are always stored channels-last [B, h, w, D];
// for token layout the grid is the token grid (N = h * w).
template <typename T>
struct FeatureMap {
    FeatureLayout layout = FeatureLayout::spatial;
    Tensor<T> values;
    int source_stage = 4;

    std::size_t batch() const { return values.dim(0); }
    std::size_t height() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }
    std::size_t channels() const { return values.dim(3); }
    std::size_t tokens() const { return height() * width(); }

    // [B, N, D] view of the grid.
    Tensor<T> as_tokens() const { return values.reshaped({batch(), tokens(), channels()}); }
};

template <typename T>
class Backbone {
public:
    virtual ~Backbone() = default;

    // x is [B, H, W, Cin] with H, W divisible by the total stride.
    virtual FeatureMap<T> forward(const Tensor<T>& x) = 0;

    // Back-propagates a gradient w.r.t. the final features, accumulating
    // parameter gradients. Returns the gradient w.r.t. the input.
    virtual Tensor<T> backward(const Tensor<T>& grad_features) = 0;

    virtual void collect(nn::ParamList<T>& out) = 0;
    virtual void init(std::mt19937_64& rng) = 0;
    virtual const BackboneConfig& config() const = 0;

    // Output of stage `s` (0-based) from the last forward pass, and the
    // gradient reaching it during the last backward pass.
    const Tensor<T>& stage_output(std::size_t s) const { return stage_out_.at(s); }
    const Tensor<T>& stage_grad(std::size_t s) const { return stage_grad_.at(s); }

    nn::ParamList<T> parameters() {
        nn::ParamList<T> p;
        collect(p);
        return p;
    }

protected:
    void check_input(const Tensor<T>& x) const {
        const auto& c = config();
        require(x.rank() == 4, "backbone input must be [B, H, W, C], got " + shape_str(x.shape()));
        require(x.dim(3) == c.input_channels, "backbone expects " + std::to_string(c.input_channels) +
                                                   " input channels, got " + std::to_string(x.dim(3)));
        require(x.dim(1) % c.total_stride() == 0 && x.dim(2) % c.total_stride() == 0,
                "backbone input spatial dims " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                    " must be divisible by " + std::to_string(c.total_stride()));
    }

    std::array<Tensor<T>, 4> stage_out_;
    std::array<Tensor<T>, 4> stage_grad_;
};

} // namespace svdamage
