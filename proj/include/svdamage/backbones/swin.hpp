#pragma once

#include <cmath>
#include <vector>

#include "svdamage/backbones/backbone.hpp"
#include "svdamage/backbones/window.hpp"
#include "svdamage/nn/attention.hpp"
#include "svdamage/nn/layers.hpp"

namespace svdamage {

// Multi-head self-attention inside (optionally shifted) local windows.
template <typename T>
class WindowAttention {
public:
    WindowAttention(const std::string& path, std::size_t dim, std::size_t heads)
        : dim_(dim), heads_(heads), qkv_(nn::join_path(path, "qkv"), dim, 3 * dim),
          proj_(nn::join_path(path, "proj"), dim, dim) {}

    void init(std::mt19937_64& rng) {
        qkv_.init(rng);
        proj_.init(rng);
    }

    // x is [B, H, W, C]; returns the same shape.
    Tensor<T> forward(const Tensor<T>& x, const WindowPlan& plan) {
        plan_ = plan;
        B_ = x.dim(0);
        const std::size_t N = plan.tokens_per_window(), nW = plan.num_windows(), C = dim_;
        Tensor<T> win({B_ * nW, N, C});
        const std::size_t HW = plan.H * plan.W;
        for (std::size_t b = 0; b < B_; ++b)
            for (std::size_t slot = 0; slot < nW * N; ++slot) {
                const long src = plan.source[slot];
                if (src >= 0) std::copy_n(x.data() + (b * HW + static_cast<std::size_t>(src)) * C, C,
                                          win.data() + (b * nW * N + slot) * C);
            }
        Tensor<T> qkv = qkv_.forward(win);
        Tensor<T> q({B_ * nW, N, C}), k({B_ * nW, N, C}), v({B_ * nW, N, C});
        for (std::size_t r = 0; r < B_ * nW * N; ++r) {
            std::copy_n(qkv.data() + r * 3 * C, C, q.data() + r * C);
            std::copy_n(qkv.data() + r * 3 * C + C, C, k.data() + r * C);
            std::copy_n(qkv.data() + r * 3 * C + 2 * C, C, v.data() + r * C);
        }
        mask_ = plan.mask<T>(nn::ScaledDotAttention<T>::masked_value());
        const T scale = T(1) / std::sqrt(static_cast<T>(C / heads_));
        Tensor<T> o = attn_.forward(nn::split_heads(q, heads_), nn::split_heads(k, heads_), nn::split_heads(v, heads_),
                                    scale, &mask_, heads_);
        Tensor<T> y = proj_.forward(nn::merge_heads(o, heads_));
        Tensor<T> out(x.shape());
        for (std::size_t b = 0; b < B_; ++b)
            for (std::size_t slot = 0; slot < nW * N; ++slot) {
                const long src = plan.source[slot];
                if (src >= 0) std::copy_n(y.data() + (b * nW * N + slot) * C, C,
                                          out.data() + (b * HW + static_cast<std::size_t>(src)) * C);
            }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        const std::size_t N = plan_.tokens_per_window(), nW = plan_.num_windows(), C = dim_;
        const std::size_t HW = plan_.H * plan_.W;
        Tensor<T> gy({B_ * nW, N, C});
        for (std::size_t b = 0; b < B_; ++b)
            for (std::size_t slot = 0; slot < nW * N; ++slot) {
                const long src = plan_.source[slot];
                if (src >= 0) std::copy_n(g.data() + (b * HW + static_cast<std::size_t>(src)) * C, C,
                                          gy.data() + (b * nW * N + slot) * C);
            }
        Tensor<T> go = proj_.backward(gy);
        auto grads = attn_.backward(nn::split_heads(go, heads_));
        Tensor<T> dq = nn::merge_heads(grads.dq, heads_), dk = nn::merge_heads(grads.dk, heads_),
                  dv = nn::merge_heads(grads.dv, heads_);
        Tensor<T> dqkv({B_ * nW, N, 3 * C});
        for (std::size_t r = 0; r < B_ * nW * N; ++r) {
            std::copy_n(dq.data() + r * C, C, dqkv.data() + r * 3 * C);
            std::copy_n(dk.data() + r * C, C, dqkv.data() + r * 3 * C + C);
            std::copy_n(dv.data() + r * C, C, dqkv.data() + r * 3 * C + 2 * C);
        }
        Tensor<T> dwin = qkv_.backward(dqkv);
        Tensor<T> dx({B_, plan_.H, plan_.W, C});
        for (std::size_t b = 0; b < B_; ++b)
            for (std::size_t slot = 0; slot < nW * N; ++slot) {
                const long src = plan_.source[slot];
                if (src < 0) continue;
                T* dst = dx.data() + (b * HW + static_cast<std::size_t>(src)) * C;
                const T* s = dwin.data() + (b * nW * N + slot) * C;
                for (std::size_t c = 0; c < C; ++c) dst[c] += s[c];
            }
        return dx;
    }

    void collect(nn::ParamList<T>& out) {
        qkv_.collect(out);
        proj_.collect(out);
    }

    const Tensor<T>& attention_probabilities() const { return attn_.probabilities(); }

private:
    std::size_t dim_, heads_, B_ = 0;
    nn::Linear<T> qkv_, proj_;
    nn::ScaledDotAttention<T> attn_;
    WindowPlan plan_;
    Tensor<T> mask_;
};

template <typename T>
class SwinBlock {
public:
    SwinBlock(const std::string& path, std::size_t dim, std::size_t heads, std::size_t window, bool shifted)
        : window_(window), shifted_(shifted), norm1_(nn::join_path(path, "norm1"), dim, 1e-5),
          attn_(nn::join_path(path, "attn"), dim, heads), norm2_(nn::join_path(path, "norm2"), dim, 1e-5),
          fc1_(nn::join_path(path, "mlp.fc1"), dim, 4 * dim), fc2_(nn::join_path(path, "mlp.fc2"), 4 * dim, dim) {}

    void init(std::mt19937_64& rng) {
        attn_.init(rng);
        fc1_.init(rng);
        fc2_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const WindowPlan plan = WindowPlan::make(x.dim(1), x.dim(2), window_, shifted_ ? window_ / 2 : 0);
        Tensor<T> h = attn_.forward(norm1_.forward(x), plan);
        h += x;
        Tensor<T> m = fc2_.forward(act_.forward(fc1_.forward(norm2_.forward(h))));
        m += h;
        return m;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> dh = norm2_.backward(fc1_.backward(act_.backward(fc2_.backward(g))));
        dh += g;
        Tensor<T> dx = norm1_.backward(attn_.backward(dh));
        dx += dh;
        return dx;
    }

    void collect(nn::ParamList<T>& out) {
        norm1_.collect(out);
        attn_.collect(out);
        norm2_.collect(out);
        fc1_.collect(out);
        fc2_.collect(out);
    }

    bool shifted() const { return shifted_; }

private:
    std::size_t window_;
    bool shifted_;
    nn::LayerNorm<T> norm1_;
    WindowAttention<T> attn_;
    nn::LayerNorm<T> norm2_;
    nn::Linear<T> fc1_, fc2_;
    nn::Gelu<T> act_;
};

// 2x2 neighbourhood concat -> LayerNorm(4C) -> Linear(4C, 2C) without bias.
template <typename T>
class PatchMerging {
public:
    PatchMerging() = default;
    PatchMerging(const std::string& path, std::size_t dim, std::size_t out_dim)
        : dim_(dim), norm_(nn::join_path(path, "norm"), 4 * dim, 1e-5),
          reduction_(nn::join_path(path, "reduction"), 4 * dim, out_dim, false) {}

    void init(std::mt19937_64& rng) { reduction_.init(rng); }

    Tensor<T> forward(const Tensor<T>& x) {
        const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = dim_;
        require(H % 2 == 0 && W % 2 == 0, "patch merging needs an even token grid");
        in_shape_ = x.shape();
        Tensor<T> cat({B, H / 2, W / 2, 4 * C});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < H / 2; ++i)
                for (std::size_t j = 0; j < W / 2; ++j)
                    for (std::size_t q = 0; q < 4; ++q) {
                        // Order (0,0), (1,0), (0,1), (1,1) as in the reference implementation.
                        const std::size_t di = q & 1, dj = q >> 1;
                        std::copy_n(&x.at(b, 2 * i + di, 2 * j + dj, 0), C, &cat.at(b, i, j, q * C));
                    }
        return reduction_.forward(norm_.forward(cat));
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> dcat = norm_.backward(reduction_.backward(g));
        const std::size_t B = in_shape_[0], H = in_shape_[1], W = in_shape_[2], C = dim_;
        Tensor<T> dx(in_shape_);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < H / 2; ++i)
                for (std::size_t j = 0; j < W / 2; ++j)
                    for (std::size_t q = 0; q < 4; ++q) {
                        const std::size_t di = q & 1, dj = q >> 1;
                        std::copy_n(&dcat.at(b, i, j, q * C), C, &dx.at(b, 2 * i + di, 2 * j + dj, 0));
                    }
        return dx;
    }

    void collect(nn::ParamList<T>& out) {
        norm_.collect(out);
        reduction_.collect(out);
    }

private:
    std::size_t dim_ = 0;
    nn::LayerNorm<T> norm_;
    nn::Linear<T> reduction_;
    Shape in_shape_;
};

// Four-stage Swin: patch embedding, alternating regular / shifted window
// blocks, patch merging between stages, final LayerNorm.
template <typename T>
class Swin final : public Backbone<T> {
public:
    explicit Swin(BackboneConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        require(cfg_.family == BackboneFamily::swin, "Swin built from a non-swin config");
        embed_ = nn::PatchConv<T>("patch_embed.proj", cfg_.input_channels, cfg_.stage_dims[0], cfg_.patch_size);
        embed_norm_ = nn::LayerNorm<T>("patch_embed.norm", cfg_.stage_dims[0], 1e-5);
        for (std::size_t s = 0; s < 4; ++s) {
            const std::string sp = "layers." + std::to_string(s);
            if (s > 0) merge_[s] = PatchMerging<T>(sp + ".downsample", cfg_.stage_dims[s - 1], cfg_.stage_dims[s]);
            for (std::size_t b = 0; b < cfg_.stage_depths[s]; ++b)
                blocks_[s].emplace_back(sp + ".blocks." + std::to_string(b), cfg_.stage_dims[s], cfg_.heads[s],
                                        cfg_.window_size, b % 2 == 1);
        }
        norm_ = nn::LayerNorm<T>("norm", cfg_.stage_dims[3], 1e-5);
    }

    void init(std::mt19937_64& rng) override {
        embed_.init(rng);
        for (std::size_t s = 0; s < 4; ++s) {
            if (s > 0) merge_[s].init(rng);
            for (auto& b : blocks_[s]) b.init(rng);
        }
    }

    FeatureMap<T> forward(const Tensor<T>& x) override {
        this->check_input(x);
        Tensor<T> h = embed_norm_.forward(embed_.forward(x));
        for (std::size_t s = 0; s < 4; ++s) {
            if (s > 0) h = merge_[s].forward(h);
            for (auto& b : blocks_[s]) h = b.forward(h);
            if (s == 3) h = norm_.forward(h);
            this->stage_out_[s] = h;
        }
        return FeatureMap<T>{FeatureLayout::tokens, h, 4};
    }

    Tensor<T> backward(const Tensor<T>& grad) override {
        Tensor<T> g = grad;
        for (std::size_t s = 4; s-- > 0;) {
            this->stage_grad_[s] = g;
            if (s == 3) g = norm_.backward(g);
            for (auto it = blocks_[s].rbegin(); it != blocks_[s].rend(); ++it) g = it->backward(g);
            if (s > 0) g = merge_[s].backward(g);
        }
        return embed_.backward(embed_norm_.backward(g));
    }

    void collect(nn::ParamList<T>& out) override {
        embed_.collect(out);
        embed_norm_.collect(out);
        for (std::size_t s = 0; s < 4; ++s) {
            if (s > 0) merge_[s].collect(out);
            for (auto& b : blocks_[s]) b.collect(out);
        }
        norm_.collect(out);
    }

    const BackboneConfig& config() const override { return cfg_; }

    // Token grid entering stage 1 for an input of the given size.
    std::size_t stage1_grid(std::size_t input_extent) const { return input_extent / cfg_.patch_size; }

private:
    BackboneConfig cfg_;
    nn::PatchConv<T> embed_;
    nn::LayerNorm<T> embed_norm_;
    std::array<PatchMerging<T>, 4> merge_;
    std::array<std::vector<SwinBlock<T>>, 4> blocks_;
    nn::LayerNorm<T> norm_;
};

} // namespace svdamage
