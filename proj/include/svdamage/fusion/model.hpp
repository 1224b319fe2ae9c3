#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "svdamage/backbones/factory.hpp"
#include "svdamage/fusion/fusion.hpp"

namespace svdamage {

// One row of the model roster: a named (strategy, backbone family) pair.
struct ModelKind {
    std::string name;
    FusionStrategy strategy;
    BackboneFamily family;
};

inline const std::vector<ModelKind>& dual_channel_roster() {
    static const std::vector<ModelKind> roster = {
        {"s1_concat", FusionStrategy::s1_channel_concat, BackboneFamily::convnext},
        {"baseline_concat_swin", FusionStrategy::s1_channel_concat, BackboneFamily::swin},
        {"s2_xattn_convnext", FusionStrategy::s2_cross_attention, BackboneFamily::convnext},
        {"s2_xattn_swin", FusionStrategy::s2_cross_attention, BackboneFamily::swin},
        {"s3_fusion_convnext", FusionStrategy::s3_feature_fusion, BackboneFamily::convnext},
        {"s4_siamese_convnext", FusionStrategy::s4_siamese_diff, BackboneFamily::convnext},
        {"s5_dual_swin", FusionStrategy::s5_dual_swin, BackboneFamily::swin},
    };
    return roster;
}

inline ModelKind parse_model_kind(const std::string& name) {
    for (const auto& k : dual_channel_roster())
        if (k.name == name) return k;
    throw ValidationError("unknown fusion strategy '" + name +
                          "' (expected s1_concat|s2_xattn_convnext|s2_xattn_swin|s3_fusion_convnext|"
                          "s4_siamese_convnext|s5_dual_swin|baseline_concat_swin)");
}

// Human-readable row label used in report tables.
inline std::string display_name(const std::string& strategy_name) {
    if (strategy_name == "s1_concat") return "Baseline-ConvNext";
    if (strategy_name == "baseline_concat_swin") return "Baseline-Swin Transformer";
    if (strategy_name == "s2_xattn_convnext") return "Dual-ConvNext + Cross-Attention";
    if (strategy_name == "s2_xattn_swin") return "Dual-Swin Transformer + Cross-Attention";
    if (strategy_name == "s3_fusion_convnext") return "Feature-fusion ConvNext";
    if (strategy_name == "s4_siamese_convnext") return "Siamese ConvNext";
    if (strategy_name == "s5_dual_swin") return "Dual-Swin Transformer";
    return strategy_name;
}

struct ModelSpec {
    FusionStrategy strategy = FusionStrategy::none;
    BackboneConfig backbone;
    std::size_t num_classes = 3;
    std::size_t fusion_heads = 2;
    // Pre and post images go through one shared encoder rather than two
    // independently parameterized ones. Forced for S4, ignored for S1/none.
    bool shared_encoder = false;

    bool dual_input() const { return strategy != FusionStrategy::none; }

    void validate() const {
        backbone.validate();
        const bool convnext = backbone.family == BackboneFamily::convnext;
        if (strategy == FusionStrategy::s3_feature_fusion || strategy == FusionStrategy::s4_siamese_diff)
            require(convnext, to_string(strategy) + " requires a ConvNeXt backbone");
        if (strategy == FusionStrategy::s5_dual_swin) require(!convnext, "s5_dual_swin requires a Swin backbone");
        if (strategy == FusionStrategy::s1_channel_concat)
            require(backbone.input_channels == 6, "channel concatenation needs a 6-channel backbone");
        else
            require(backbone.input_channels == 3, "only channel concatenation uses a 6-channel backbone");
        require(num_classes == 3 || num_classes == 4, "num_classes must be 3 or 4");
    }

    bool uses_second_encoder() const {
        switch (strategy) {
        case FusionStrategy::s2_cross_attention:
        case FusionStrategy::s5_dual_swin: return !shared_encoder;
        case FusionStrategy::s3_feature_fusion: return !shared_encoder;
        default: return false;
        }
    }
};

// Which tensor Grad-CAM reads.
enum class CamBranch { post, pre, fused };

// Backbone(s) + fusion + classifier head. Images are channels-last
// normalized batches [B, H, W, 3]; single-channel models ignore `pre`.
template <typename T>
class DamageModel {
public:
    explicit DamageModel(ModelSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        encoder_ = make_backbone<T>(spec_.backbone);
        if (spec_.uses_second_encoder()) pre_encoder_ = make_backbone<T>(spec_.backbone);
        const std::size_t D = spec_.backbone.feature_dim();
        if (spec_.strategy == FusionStrategy::s2_cross_attention)
            xattn_ = CrossAttention<T>(D, spec_.fusion_heads, false);
        if (spec_.strategy == FusionStrategy::s5_dual_swin) xattn_ = CrossAttention<T>(D, spec_.fusion_heads, true);
        head_ = ClassifierHead<T>(D, spec_.num_classes);
    }

    void init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        encoder_->init(rng);
        if (pre_encoder_) pre_encoder_->init(rng);
        if (xattn_) xattn_->init(rng);
        head_.init(rng);
    }

    const ModelSpec& spec() const { return spec_; }

    Tensor<T> forward(const Tensor<T>* pre, const Tensor<T>& post) {
        if (spec_.dual_input()) require(pre != nullptr, to_string(spec_.strategy) + " needs a pre-disaster image");
        const std::size_t B = post.dim(0);
        switch (spec_.strategy) {
        case FusionStrategy::none:
            feat_post_ = encoder_->forward(post);
            fused_ = feat_post_.values;
            break;
        case FusionStrategy::s1_channel_concat:
            feat_post_ = encoder_->forward(fuse_channel_concat(*pre, post));
            fused_ = feat_post_.values;
            break;
        default: {
            encode_pair(*pre, post, B);
            if (spec_.strategy == FusionStrategy::s3_feature_fusion)
                fused_ = alpha_.forward(feat_pre_.values, feat_post_.values);
            else if (spec_.strategy == FusionStrategy::s4_siamese_diff)
                fused_ = siamese_.forward(feat_pre_.values, feat_post_.values);
            else
                fused_ = xattn_->forward(feat_pre_.as_tokens(), feat_post_.as_tokens())
                             .reshaped(feat_pre_.values.shape());
            break;
        }
        }
        return head_.forward(fused_);
    }

    // Back-propagates dL/dlogits. Encoders are only traversed when
    // `into_backbone` is set; frozen encoders accumulate gradients that the
    // optimizer ignores.
    void backward(const Tensor<T>& dlogits, bool into_backbone) {
        fused_grad_ = head_.backward(dlogits);
        switch (spec_.strategy) {
        case FusionStrategy::none:
        case FusionStrategy::s1_channel_concat:
            post_grad_ = fused_grad_;
            if (into_backbone) encoder_->backward(post_grad_);
            return;
        case FusionStrategy::s3_feature_fusion: {
            auto g = alpha_.backward(fused_grad_);
            pre_grad_ = std::move(g.dpre);
            post_grad_ = std::move(g.dpost);
            break;
        }
        case FusionStrategy::s4_siamese_diff: {
            auto g = siamese_.backward(fused_grad_);
            pre_grad_ = std::move(g.dpre);
            post_grad_ = std::move(g.dpost);
            break;
        }
        default: {
            auto g = xattn_->backward(fused_grad_.reshaped({fused_grad_.dim(0), feat_pre_.tokens(), feat_pre_.channels()}));
            pre_grad_ = g.dpre.reshaped(feat_pre_.values.shape());
            post_grad_ = g.dpost.reshaped(feat_post_.values.shape());
            break;
        }
        }
        if (!into_backbone) return;
        if (pre_encoder_) {
            pre_encoder_->backward(pre_grad_);
            encoder_->backward(post_grad_);
        } else {
            encoder_->backward(concat_batch(pre_grad_, post_grad_));
        }
    }

    // Activations and gradients for Grad-CAM, [B, h, w, D].
    const Tensor<T>& activations(CamBranch b) const {
        if (b == CamBranch::fused) return fused_;
        if (b == CamBranch::pre) {
            require(spec_.dual_input() && spec_.strategy != FusionStrategy::s1_channel_concat,
                    "this model has no separate pre-disaster branch");
            return feat_pre_.values;
        }
        return feat_post_.values;
    }
    const Tensor<T>& gradients(CamBranch b) const {
        if (b == CamBranch::fused) return fused_grad_;
        if (b == CamBranch::pre) return pre_grad_;
        return post_grad_;
    }

    // Encoder that sees the post-disaster image (the only encoder for
    // single-channel and S1 models, the shared one for S4 / shared S3).
    Backbone<T>& post_encoder() { return *encoder_; }
    Backbone<T>* pre_encoder() { return pre_encoder_.get(); }
    ClassifierHead<T>& head() { return head_; }
    AlphaFusion<T>& alpha_fusion() { return alpha_; }
    CrossAttention<T>* cross_attention() { return xattn_ ? &*xattn_ : nullptr; }

    // Every parameter with its checkpoint name.
    std::vector<std::pair<std::string, nn::Parameter<T>*>> named_parameters() {
        std::vector<std::pair<std::string, nn::Parameter<T>*>> out;
        const bool separate = pre_encoder_ != nullptr;
        for (auto* p : encoder_->parameters()) out.emplace_back((separate ? "backbone_post." : "backbone.") + p->path, p);
        if (pre_encoder_)
            for (auto* p : pre_encoder_->parameters()) out.emplace_back("backbone_pre." + p->path, p);
        for (auto* p : fusion_parameters()) out.emplace_back(p->path, p);
        nn::ParamList<T> hp;
        head_.collect(hp);
        for (auto* p : hp) out.emplace_back(p->path, p);
        return out;
    }

    nn::ParamList<T> parameters() {
        nn::ParamList<T> out;
        for (auto& [n, p] : named_parameters()) out.push_back(p);
        return out;
    }

    nn::ParamList<T> backbone_parameters() {
        nn::ParamList<T> out = encoder_->parameters();
        if (pre_encoder_)
            for (auto* p : pre_encoder_->parameters()) out.push_back(p);
        return out;
    }

    nn::ParamList<T> fusion_parameters() {
        nn::ParamList<T> out;
        if (spec_.strategy == FusionStrategy::s3_feature_fusion) alpha_.collect(out);
        if (xattn_) xattn_->collect(out);
        return out;
    }

    nn::ParamList<T> head_parameters() {
        nn::ParamList<T> out;
        head_.collect(out);
        return out;
    }

    // Fusion and head parameters: what exp3 trains.
    nn::ParamList<T> fusion_and_head_parameters() {
        nn::ParamList<T> out = fusion_parameters();
        for (auto* p : head_parameters()) out.push_back(p);
        return out;
    }

    void freeze_backbone(bool frozen = true) { nn::set_frozen(backbone_parameters(), frozen); }
    bool backbone_frozen() {
        for (auto* p : backbone_parameters())
            if (!p->frozen) return false;
        return true;
    }

    const FeatureMap<T>& pre_features() const { return feat_pre_; }
    const FeatureMap<T>& post_features() const { return feat_post_; }
    const Tensor<T>& fused_features() const { return fused_; }

    // Runs the fusion + head on precomputed encoder features (frozen encoders).
    Tensor<T> forward_from_features(const FeatureMap<T>& pre, const FeatureMap<T>& post) {
        require(spec_.strategy != FusionStrategy::none && spec_.strategy != FusionStrategy::s1_channel_concat,
                "forward_from_features needs a two-branch fusion strategy");
        feat_pre_ = pre;
        feat_post_ = post;
        if (spec_.strategy == FusionStrategy::s3_feature_fusion)
            fused_ = alpha_.forward(pre.values, post.values);
        else if (spec_.strategy == FusionStrategy::s4_siamese_diff)
            fused_ = siamese_.forward(pre.values, post.values);
        else
            fused_ = xattn_->forward(pre.as_tokens(), post.as_tokens()).reshaped(pre.values.shape());
        return head_.forward(fused_);
    }

    // Single-input variant for frozen single-channel / S1 encoders.
    Tensor<T> forward_from_features(const FeatureMap<T>& joint) {
        require(spec_.strategy == FusionStrategy::none || spec_.strategy == FusionStrategy::s1_channel_concat,
                "single-feature forward needs a single-branch model");
        feat_post_ = joint;
        fused_ = joint.values;
        return head_.forward(fused_);
    }

    // Encodes a batch without touching fusion/head state.
    std::pair<FeatureMap<T>, FeatureMap<T>> encode(const Tensor<T>* pre, const Tensor<T>& post) {
        if (spec_.strategy == FusionStrategy::none) return {FeatureMap<T>{}, encoder_->forward(post)};
        if (spec_.strategy == FusionStrategy::s1_channel_concat)
            return {FeatureMap<T>{}, encoder_->forward(fuse_channel_concat(*pre, post))};
        encode_pair(*pre, post, post.dim(0));
        return {feat_pre_, feat_post_};
    }

private:
    void encode_pair(const Tensor<T>& pre, const Tensor<T>& post, std::size_t B) {
        if (pre_encoder_) {
            feat_pre_ = pre_encoder_->forward(pre);
            feat_post_ = encoder_->forward(post);
        } else {
            FeatureMap<T> both = encoder_->forward(concat_batch(pre, post));
            feat_pre_ = FeatureMap<T>{both.layout, slice_batch(both.values, 0, B), both.source_stage};
            feat_post_ = FeatureMap<T>{both.layout, slice_batch(both.values, B, 2 * B), both.source_stage};
        }
    }

    ModelSpec spec_;
    std::unique_ptr<Backbone<T>> encoder_, pre_encoder_;
    AlphaFusion<T> alpha_;
    SiameseDiff<T> siamese_;
    std::optional<CrossAttention<T>> xattn_;
    ClassifierHead<T> head_;

    FeatureMap<T> feat_pre_, feat_post_;
    Tensor<T> fused_, fused_grad_, pre_grad_, post_grad_;
};

} // namespace svdamage
