#pragma once

#include <algorithm>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "svdamage/data/transforms.hpp"
#include "svdamage/fusion/model.hpp"

namespace svdamage {

struct HeatmapConfig {
    // "final" (last stage of the chosen branch), "fused" (fusion output),
    // or an encoder stage "stages.N" (ConvNeXt) / "layers.N" (Swin), N in 0..3.
    std::string target_layer = "final";
    CamBranch branch = CamBranch::post;
    std::optional<int> target_class; // nullopt: predicted class
    double alpha = 0.5;
    std::string colormap = "jet";
    double grad_scale = 1.0; // seed gradient on the target logit

    void validate() const {
        require(alpha >= 0 && alpha <= 1, "overlay alpha must lie in [0, 1]");
        require(grad_scale > 0, "grad_scale must be positive");
    }
};

inline CamBranch parse_branch(const std::string& s) {
    if (s == "post") return CamBranch::post;
    if (s == "pre") return CamBranch::pre;
    if (s == "fused") return CamBranch::fused;
    throw ValidationError("unknown Grad-CAM branch '" + s + "' (expected post|pre|fused)");
}

struct Heatmap {
    std::size_t height = 0, width = 0;
    std::vector<double> values; // row-major, in [0, 1]
    std::string layer;
    int target_class = 0;
    int predicted_class = 0;
    std::vector<double> probabilities;

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

// ReLU(sum_c mean_spatial(grad_c) * act_c), divided by its max when positive.
// act and grad are [h, w, D] (one sample).
inline Heatmap cam_from(const double* act, const double* grad, std::size_t h, std::size_t w, std::size_t D) {
    const std::size_t P = h * w;
    std::vector<double> weight(D, 0.0);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t c = 0; c < D; ++c) weight[c] += grad[p * D + c];
    for (auto& v : weight) v /= static_cast<double>(P);
    Heatmap m;
    m.height = h;
    m.width = w;
    m.values.assign(P, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
        double s = 0;
        for (std::size_t c = 0; c < D; ++c) s += weight[c] * act[p * D + c];
        m.values[p] = std::max(0.0, s);
    }
    const double mx = m.max();
    if (mx > 0)
        for (auto& v : m.values) v /= mx;
    return m;
}

template <typename T>
Heatmap cam_from(const Tensor<T>& act, const Tensor<T>& grad, std::size_t sample) {
    require(act.rank() == 4 && act.shape() == grad.shape(), "Grad-CAM needs matching [B, h, w, D] activations and gradients");
    const std::size_t h = act.dim(1), w = act.dim(2), D = act.dim(3), n = h * w * D;
    std::vector<double> a(act.data() + sample * n, act.data() + (sample + 1) * n);
    std::vector<double> g(grad.data() + sample * n, grad.data() + (sample + 1) * n);
    return cam_from(a.data(), g.data(), h, w, D);
}

namespace detail {

inline std::optional<std::size_t> stage_index(const std::string& layer, BackboneFamily family) {
    const std::string prefix = family == BackboneFamily::convnext ? "stages." : "layers.";
    if (layer.size() != prefix.size() + 1 || layer.rfind(prefix, 0) != 0) return std::nullopt;
    const char d = layer.back();
    if (d < '0' || d > '3') return std::nullopt;
    return static_cast<std::size_t>(d - '0');
}

} // namespace detail

// One sample: pre (nullable for single-input models) and post are [1, H, W, 3]
// normalized tensors. Leaves parameter gradients zeroed.
template <typename T>
Heatmap grad_cam(DamageModel<T>& model, const Tensor<T>* pre, const Tensor<T>& post, const HeatmapConfig& cfg) {
    cfg.validate();
    require(post.rank() == 4 && post.dim(0) == 1, "grad_cam expects a single sample");
    const auto& spec = model.spec();
    const bool final_layer = cfg.target_layer == "final" || cfg.target_layer.empty();
    const bool fused = cfg.target_layer == "fused";
    const auto stage = detail::stage_index(cfg.target_layer, spec.backbone.family);
    if (!final_layer && !fused && !stage)
        throw ValidationError("Grad-CAM target layer '" + cfg.target_layer + "' not found (expected final, fused, " +
                              (spec.backbone.family == BackboneFamily::convnext ? "stages.0-3" : "layers.0-3") + ")");
    const bool two_branch = spec.dual_input() && spec.strategy != FusionStrategy::s1_channel_concat;
    if (cfg.branch == CamBranch::pre && !two_branch)
        throw ValidationError("this model has no separate pre-disaster branch");

    auto params = model.parameters();
    nn::zero_grads(params);
    const Tensor<T> logits = model.forward(spec.dual_input() ? pre : nullptr, post);
    const auto pred = logits_to_prediction(logits);
    const int target = cfg.target_class.value_or(pred.labels[0]);
    require(target >= 0 && static_cast<std::size_t>(target) < logits.dim(1),
            "Grad-CAM target class " + std::to_string(target) + " out of range");
    Tensor<T> seed(logits.shape());
    seed[static_cast<std::size_t>(target)] = static_cast<T>(cfg.grad_scale);
    model.backward(seed, stage.has_value());

    Heatmap m;
    if (stage) {
        // A shared encoder sees [pre; post] stacked along the batch.
        Backbone<T>* enc = &model.post_encoder();
        std::size_t sample = 0;
        if (two_branch && cfg.branch == CamBranch::pre) {
            if (model.pre_encoder()) enc = model.pre_encoder();
        } else if (two_branch && !model.pre_encoder()) {
            sample = 1;
        }
        m = cam_from(enc->stage_output(*stage), enc->stage_grad(*stage), sample);
        m.layer = (cfg.branch == CamBranch::pre ? "pre:" : "post:") + cfg.target_layer;
    } else {
        const CamBranch b = fused ? CamBranch::fused : cfg.branch;
        m = cam_from(model.activations(b), model.gradients(b), 0);
        m.layer = b == CamBranch::fused ? "fused" : (b == CamBranch::pre ? "pre:final" : "post:final");
    }
    nn::zero_grads(params);
    m.target_class = target;
    m.predicted_class = pred.labels[0];
    for (std::size_t k = 0; k < logits.dim(1); ++k) m.probabilities.push_back(static_cast<double>(pred.probabilities[k]));
    return m;
}

template <typename T>
Heatmap grad_cam(DamageModel<T>& model, std::nullptr_t, const Tensor<T>& post, const HeatmapConfig& cfg) {
    return grad_cam(model, static_cast<const Tensor<T>*>(nullptr), post, cfg);
}

template <typename T>
Heatmap grad_cam(DamageModel<T>& model, const PixelImage* pre, const PixelImage& post, const TransformConfig& tc,
                 const HeatmapConfig& cfg) {
    auto one = [&](const PixelImage& img) {
        Tensor<float> chw = preprocess(img, tc);
        return to_batch_nhwc({&chw}).template cast<T>();
    };
    Tensor<T> q = one(post);
    if (pre && model.spec().dual_input()) {
        Tensor<T> p = one(*pre);
        return grad_cam(model, &p, q, cfg);
    }
    return grad_cam(model, nullptr, q, cfg);
}

// Serializes Grad-CAM runs on one model; distinct models run in parallel.
template <typename T>
class GradCamRunner {
public:
    explicit GradCamRunner(DamageModel<T>& model) : model_(model) {}

    Heatmap operator()(const Tensor<T>* pre, const Tensor<T>& post, const HeatmapConfig& cfg) {
        std::lock_guard lock(mu_);
        return grad_cam(model_, pre, post, cfg);
    }

private:
    DamageModel<T>& model_;
    std::mutex mu_;
};

} // namespace svdamage
