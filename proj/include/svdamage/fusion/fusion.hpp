#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "svdamage/core/tensor.hpp"
#include "svdamage/nn/attention.hpp"
#include "svdamage/nn/layers.hpp"
#include "svdamage/nn/param.hpp"

namespace svdamage {

enum class FusionStrategy { none, s1_channel_concat, s2_cross_attention, s3_feature_fusion, s4_siamese_diff, s5_dual_swin };

inline std::string to_string(FusionStrategy s) {
    switch (s) {
    case FusionStrategy::none: return "none";
    case FusionStrategy::s1_channel_concat: return "s1_channel_concat";
    case FusionStrategy::s2_cross_attention: return "s2_cross_attention";
    case FusionStrategy::s3_feature_fusion: return "s3_feature_fusion";
    case FusionStrategy::s4_siamese_diff: return "s4_siamese_diff";
    case FusionStrategy::s5_dual_swin: return "s5_dual_swin";
    }
    return "?";
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    require(a.shape() == b.shape(),
            std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// S1: stacks [B, H, W, 3] pre and post images into [B, H, W, 6];
// channels 0-2 are pre, 3-5 are post.
template <typename T>
Tensor<T> fuse_channel_concat(const Tensor<T>& pre, const Tensor<T>& post) {
    require_same_shape(pre, post, "channel concat");
    require(pre.rank() == 4 && pre.dim(3) == 3, "channel concat expects [B, H, W, 3] images");
    const std::size_t pixels = pre.size() / 3;
    Tensor<T> out({pre.dim(0), pre.dim(1), pre.dim(2), 6});
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy_n(pre.data() + p * 3, 3, out.data() + p * 6);
        std::copy_n(post.data() + p * 3, 3, out.data() + p * 6 + 3);
    }
    return out;
}

// Widens a 3-channel stem kernel [O, 3, p, p] to 6 channels by duplicating it
// across both halves at half scale, so identical halves reproduce the
// original response.
template <typename T>
Tensor<T> duplicate_stem_weight(const Tensor<T>& w3) {
    require(w3.rank() == 4 && w3.dim(1) == 3, "stem adaptation expects a [O, 3, p, p] kernel, got " + shape_str(w3.shape()));
    const std::size_t O = w3.dim(0), P = w3.dim(2) * w3.dim(3);
    Tensor<T> w6({O, 6, w3.dim(2), w3.dim(3)});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < 6; ++c)
            for (std::size_t t = 0; t < P; ++t) w6[(o * 6 + c) * P + t] = T(0.5) * w3[(o * 3 + c % 3) * P + t];
    return w6;
}

// S3: F_fused = alpha * F_pre + (1 - alpha) * F_post.
template <typename T>
Tensor<T> feature_fusion(const Tensor<T>& pre, const Tensor<T>& post, T alpha) {
    require_same_shape(pre, post, "feature fusion");
    Tensor<T> out(pre.shape());
    for (std::size_t i = 0; i < pre.size(); ++i) out[i] = alpha * pre[i] + (T(1) - alpha) * post[i];
    return out;
}

// S4: elementwise |F_pre - F_post|.
template <typename T>
Tensor<T> siamese_diff(const Tensor<T>& pre, const Tensor<T>& post) {
    require_same_shape(pre, post, "siamese difference");
    Tensor<T> out(pre.shape());
    for (std::size_t i = 0; i < pre.size(); ++i) out[i] = std::abs(pre[i] - post[i]);
    return out;
}

template <typename T>
T sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// Learnable alpha = sigmoid(theta), theta starting at 0 (alpha = 0.5).
template <typename T>
class AlphaFusion {
public:
    AlphaFusion() : theta_("fusion.theta", {1}, T(0)) {}

    T alpha() const { return sigmoid(theta_.value[0]); }

    Tensor<T> forward(const Tensor<T>& pre, const Tensor<T>& post) {
        pre_ = pre;
        post_ = post;
        return feature_fusion(pre, post, alpha());
    }

    struct Grads {
        Tensor<T> dpre, dpost;
    };

    Grads backward(const Tensor<T>& g) {
        const T a = alpha();
        Grads r{Tensor<T>(g.shape()), Tensor<T>(g.shape())};
        T dtheta = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            r.dpre[i] = a * g[i];
            r.dpost[i] = (T(1) - a) * g[i];
            dtheta += g[i] * (pre_[i] - post_[i]);
        }
        theta_.grad[0] += dtheta * a * (T(1) - a);
        return r;
    }

    void collect(nn::ParamList<T>& out) { out.push_back(&theta_); }
    nn::Parameter<T>& theta() { return theta_; }

private:
    nn::Parameter<T> theta_;
    Tensor<T> pre_, post_;
};

template <typename T>
class SiameseDiff {
public:
    Tensor<T> forward(const Tensor<T>& pre, const Tensor<T>& post) {
        pre_ = pre;
        post_ = post;
        return siamese_diff(pre, post);
    }

    struct Grads {
        Tensor<T> dpre, dpost;
    };

    Grads backward(const Tensor<T>& g) {
        Grads r{Tensor<T>(g.shape()), Tensor<T>(g.shape())};
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T d = pre_[i] - post_[i];
            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            r.dpre[i] = s * g[i];
            r.dpost[i] = -s * g[i];
        }
        return r;
    }

private:
    Tensor<T> pre_, post_;
};

// Cross-attention with pre-disaster tokens as queries and post-disaster
// tokens as keys and values: softmax(Q K^T / sqrt(d_k)) V per head, where
// Q = F_pre W_q, K = F_post W_k, V = F_post W_v. With `residual` the
// queries' source features are added back (dual-Swin fusion).
template <typename T>
class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(std::size_t dim, std::size_t heads, bool residual)
        : dim_(dim), heads_(heads), residual_(residual), wq_("fusion.w_q", dim, dim, false),
          wk_("fusion.w_k", dim, dim, false), wv_("fusion.w_v", dim, dim, false) {
        require(heads > 0 && dim % heads == 0, "cross-attention: feature dim " + std::to_string(dim) +
                                                   " not divisible by head count " + std::to_string(heads));
    }

    void init(std::mt19937_64& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dim_));
        nn::uniform_fill(wq_.weight().value, bound, rng);
        nn::uniform_fill(wk_.weight().value, bound, rng);
        nn::uniform_fill(wv_.weight().value, bound, rng);
    }

    // Sets all three projections to the identity.
    void set_identity() {
        for (auto* l : {&wq_, &wk_, &wv_}) {
            l->weight().value.zero();
            for (std::size_t i = 0; i < dim_; ++i) l->weight().value[i * dim_ + i] = T(1);
        }
    }

    // pre: [B, N, D], post: [B, M, D] -> [B, N, D]
    Tensor<T> forward(const Tensor<T>& pre, const Tensor<T>& post) {
        require(pre.rank() == 3 && post.rank() == 3 && pre.dim(0) == post.dim(0),
                "cross-attention expects [B, N, D] token tensors");
        require(pre.dim(2) == dim_ && post.dim(2) == dim_,
                "cross-attention: token dim mismatch, expected " + std::to_string(dim_));
        Tensor<T> q = wq_.forward(pre), k = wk_.forward(post), v = wv_.forward(post);
        const T scale = T(1) / std::sqrt(static_cast<T>(dim_ / heads_));
        Tensor<T> o = nn::merge_heads(
            attn_.forward(nn::split_heads(q, heads_), nn::split_heads(k, heads_), nn::split_heads(v, heads_), scale),
            heads_);
        if (residual_) o += pre;
        return o;
    }

    struct Grads {
        Tensor<T> dpre, dpost;
    };

    Grads backward(const Tensor<T>& g) {
        auto ga = attn_.backward(nn::split_heads(g, heads_));
        Tensor<T> dpre = wq_.backward(nn::merge_heads(ga.dq, heads_));
        Tensor<T> dpost = wk_.backward(nn::merge_heads(ga.dk, heads_));
        dpost += wv_.backward(nn::merge_heads(ga.dv, heads_));
        if (residual_) dpre += g;
        return {std::move(dpre), std::move(dpost)};
    }

    void collect(nn::ParamList<T>& out) {
        wq_.collect(out);
        wk_.collect(out);
        wv_.collect(out);
    }

    // [B * heads, N, M] probabilities of the last forward pass.
    const Tensor<T>& attention() const { return attn_.probabilities(); }
    std::size_t heads() const { return heads_; }
    std::size_t key_dim() const { return dim_ / heads_; }
    bool residual() const { return residual_; }

private:
    std::size_t dim_ = 0, heads_ = 1;
    bool residual_ = false;
    nn::Linear<T> wq_, wk_, wv_;
    nn::ScaledDotAttention<T> attn_;
};

template <typename T>
struct DamageLogits {
    Tensor<T> logits;        // [B, K]
    Tensor<T> probabilities; // [B, K]
    std::vector<int> labels; // argmax per row
};

template <typename T>
DamageLogits<T> logits_to_prediction(const Tensor<T>& logits) {
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    DamageLogits<T> out{logits, Tensor<T>(logits.shape()), std::vector<int>(B, 0)};
    for (std::size_t b = 0; b < B; ++b) {
        const T* row = logits.data() + b * K;
        T mx = row[0];
        std::size_t arg = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (row[k] > mx) {
                mx = row[k];
                arg = k;
            }
        T sum = 0;
        for (std::size_t k = 0; k < K; ++k) sum += (out.probabilities[b * K + k] = std::exp(row[k] - mx));
        for (std::size_t k = 0; k < K; ++k) out.probabilities[b * K + k] /= sum;
        out.labels[b] = static_cast<int>(arg);
    }
    return out;
}

// Global average pool over the grid -> LayerNorm -> Linear(D, num_classes).
template <typename T>
class ClassifierHead {
public:
    ClassifierHead() = default;
    ClassifierHead(std::size_t dim, std::size_t num_classes)
        : dim_(dim), classes_(num_classes), norm_("head.norm", dim, 1e-6), fc_("head.fc", dim, num_classes) {
        require(num_classes == 3 || num_classes == 4, "classifier head supports 3 or 4 classes");
    }

    void init(std::mt19937_64& rng) { fc_.init(rng); }

    // features: [B, h, w, D] or [B, N, D]
    Tensor<T> forward(const Tensor<T>& features) {
        require(features.shape().back() == dim_, "classifier head expects feature dim " + std::to_string(dim_) +
                                                     ", got " + shape_str(features.shape()));
        in_shape_ = features.shape();
        const std::size_t B = features.dim(0), P = features.size() / (B * dim_);
        Tensor<T> pooled({B, dim_});
        for (std::size_t b = 0; b < B; ++b) {
            T* out = pooled.data() + b * dim_;
            for (std::size_t p = 0; p < P; ++p) {
                const T* in = features.data() + (b * P + p) * dim_;
                for (std::size_t c = 0; c < dim_; ++c) out[c] += in[c];
            }
            for (std::size_t c = 0; c < dim_; ++c) out[c] /= static_cast<T>(P);
        }
        return fc_.forward(norm_.forward(pooled));
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> dpooled = norm_.backward(fc_.backward(g));
        const std::size_t B = in_shape_[0], P = shape_numel(in_shape_) / (B * dim_);
        Tensor<T> dx(in_shape_);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t c = 0; c < dim_; ++c)
                    dx[(b * P + p) * dim_ + c] = dpooled[b * dim_ + c] / static_cast<T>(P);
        return dx;
    }

    void collect(nn::ParamList<T>& out) {
        norm_.collect(out);
        fc_.collect(out);
    }

    std::size_t num_classes() const { return classes_; }
    std::size_t input_dim() const { return dim_; }
    nn::Linear<T>& fc() { return fc_; }
    nn::LayerNorm<T>& norm() { return norm_; }

private:
    std::size_t dim_ = 0, classes_ = 3;
    nn::LayerNorm<T> norm_;
    nn::Linear<T> fc_;
    Shape in_shape_;
};

template <typename T>
DamageLogits<T> classify(const Tensor<T>& features, ClassifierHead<T>& head) {
    return logits_to_prediction(head.forward(features));
}

} // namespace svdamage
