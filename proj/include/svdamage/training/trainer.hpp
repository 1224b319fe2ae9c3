#pragma once

#include <cmath>
#include <functional>
#include <future>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdamage/backbones/archive.hpp"
#include "svdamage/evaluation/metrics.hpp"
#include "svdamage/training/config.hpp"
#include "svdamage/training/dataset.hpp"
#include "svdamage/training/optim.hpp"

namespace svdamage {

struct StepRecord {
    std::size_t epoch = 0, step = 0;
    double lr = 0, loss = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    MetricsReport val;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    MetricsReport best; // validation metrics of the retained parameters
    std::vector<std::string> warnings;
};

// Model inputs for a run of samples: channels-last normalized batches.
struct Batch {
    Tensor<float> pre, post;
    std::vector<int> labels;
};

inline Tensor<float> stack_batch(const std::vector<const Tensor<float>*>& parts) {
    require(!parts.empty(), "stack_batch: nothing to stack");
    Shape s = parts[0]->shape();
    std::size_t total = 0;
    for (const auto* p : parts) total += p->dim(0);
    s[0] = total;
    Tensor<float> out(s);
    std::size_t off = 0;
    for (const auto* p : parts) {
        std::copy(p->values().begin(), p->values().end(), out.data() + off);
        off += p->size();
    }
    return out;
}

inline Batch make_batch(const ExperimentConfig& cfg, const std::vector<Sample>& samples,
                        const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
                        std::optional<std::uint64_t> augment_seed) {
    std::vector<Tensor<float>> pre, post;
    Batch b;
    for (std::size_t i = begin; i < end; ++i) {
        const Sample& s = samples[idx[i]];
        const bool dual = !s.pre.empty();
        PixelImage a = dual ? s.pre : s.image, p = s.image;
        if (augment_seed) {
            auto aug = augment_pair(a, p, cfg.transform, derive_seed(*augment_seed, idx[i]));
            a = std::move(aug.pre);
            p = std::move(aug.post);
        }
        if (dual) pre.push_back(preprocess(a, cfg.transform));
        post.push_back(preprocess(p, cfg.transform));
        b.labels.push_back(s.label);
    }
    auto ptrs = [](const std::vector<Tensor<float>>& v) {
        std::vector<const Tensor<float>*> o;
        for (const auto& t : v) o.push_back(&t);
        return o;
    };
    if (!pre.empty()) b.pre = to_batch_nhwc(ptrs(pre));
    b.post = to_batch_nhwc(ptrs(post));
    return b;
}

inline bool augmentation_is_identity(const TransformConfig& t) {
    return t.crop_scale_min == 1.0 && t.flip_probability == 0 && t.brightness == 0 && t.contrast == 0 &&
           t.saturation == 0;
}

inline int argmax_row(const Tensor<float>& logits, std::size_t row) {
    const std::size_t K = logits.dim(1);
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
        if (logits.at(row, k) > logits.at(row, best)) best = k;
    return static_cast<int>(best);
}

inline MetricsReport metrics_for(const ExperimentConfig& cfg, const std::vector<int>& preds,
                                 const std::vector<int>& truths) {
    const auto m = confusion(preds, truths, cfg.num_classes());
    MetricsReport r = cfg.experiment == ExperimentKind::exp2_four_class ? experiment2_metrics(m) : weighted_metrics(m);
    r.model = cfg.model_name();
    r.config_hash = config_hash(cfg);
    return r;
}

// Loads pretrained backbone weights into every encoder of the model.
inline void apply_pretrained(DamageModel<float>& model, const std::string& archive) {
    const auto w = load_weights(std::filesystem::path(archive), model.spec().backbone);
    apply_weights(model.post_encoder(), w);
    if (auto* pre = model.pre_encoder()) apply_weights(*pre, w);
}

class Trainer {
public:
    using EpochCallback = std::function<void(const EpochRecord&)>;

    Trainer(const ExperimentConfig& cfg, DamageModel<float>& model, std::ostream* log = nullptr)
        : cfg_(cfg), model_(model), log_(log) {}

    void on_epoch(EpochCallback cb) { callback_ = std::move(cb); }

    // Predicted labels for `samples`, in order, batched by batch_size.
    std::vector<int> predict(const std::vector<Sample>& samples) {
        std::vector<std::size_t> idx(samples.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::vector<int> out;
        for (std::size_t a = 0; a < idx.size(); a += cfg_.batch_size) {
            const std::size_t b = std::min(idx.size(), a + cfg_.batch_size);
            auto batch = make_batch(cfg_, samples, idx, a, b, std::nullopt);
            auto logits = model_.forward(batch.pre.empty() ? nullptr : &batch.pre, batch.post);
            for (std::size_t i = 0; i < b - a; ++i) out.push_back(argmax_row(logits, i));
        }
        return out;
    }

    MetricsReport evaluate(const std::vector<Sample>& samples) {
        std::vector<int> truths;
        for (const auto& s : samples) truths.push_back(s.label);
        return metrics_for(cfg_, predict(samples), truths);
    }

    TrainResult fit(const SplitData& data) {
        TrainResult r;
        r.warnings = data.warnings;
        const bool frozen = cfg_.freeze_backbone;
        if (frozen) model_.freeze_backbone();
        const bool cached = frozen && augmentation_is_identity(cfg_.transform);
        if (cached) build_cache(data);

        std::vector<double> class_weights;
        if (cfg_.class_weights == "balanced") {
            std::vector<double> n(cfg_.num_classes(), 0);
            for (const auto& s : data.train) ++n[static_cast<std::size_t>(s.label)];
            for (double c : n)
                class_weights.push_back(c > 0 ? static_cast<double>(data.train.size()) / (n.size() * c) : 0.0);
        }

        AdamW<float> opt(model_.parameters(), AdamWConfig{0.9, 0.999, 1e-8, cfg_.weight_decay});
        const std::size_t per_epoch = (data.train.size() + cfg_.batch_size - 1) / cfg_.batch_size;
        const std::size_t total = per_epoch * cfg_.epochs;
        std::vector<Tensor<float>> best_values;
        double best_acc = -1;
        std::size_t step = 0;

        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            std::vector<std::size_t> order(data.train.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng rng(derive_seed(cfg_.seed, 1000 + epoch));
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
            const std::uint64_t aug_seed = derive_seed(cfg_.seed, 5000 + epoch);

            auto load = [&](std::size_t bi) {
                const std::size_t a = bi * cfg_.batch_size, b = std::min(order.size(), a + cfg_.batch_size);
                if (cached) return Batch{};
                return make_batch(cfg_, data.train, order, a, b,
                                  augmentation_is_identity(cfg_.transform) ? std::nullopt
                                                                           : std::optional<std::uint64_t>(aug_seed));
            };
            // Outside strict mode the next batch is assembled on a helper
            // thread; batch contents and order are the same either way.
            std::future<Batch> next;
            if (!cfg_.strict_determinism) next = std::async(std::launch::async, load, 0);
            double loss_sum = 0;
            for (std::size_t bi = 0; bi < per_epoch; ++bi) {
                Batch batch = cfg_.strict_determinism ? load(bi) : next.get();
                if (!cfg_.strict_determinism && bi + 1 < per_epoch) next = std::async(std::launch::async, load, bi + 1);
                const std::size_t a = bi * cfg_.batch_size, b = std::min(order.size(), a + cfg_.batch_size);
                if (cached) {
                    batch.labels.clear();
                    for (std::size_t i = a; i < b; ++i) batch.labels.push_back(data.train[order[i]].label);
                }
                const double lr = cosine_lr(step, total, cfg_.lr_max, cfg_.lr_min);
                opt.zero_grad();
                Tensor<float> logits = cached ? forward_cached(order, a, b)
                                              : model_.forward(batch.pre.empty() ? nullptr : &batch.pre, batch.post);
                Tensor<float> dlogits;
                const double loss = cross_entropy_batch(logits, batch.labels, dlogits,
                                                        class_weights.empty() ? nullptr : &class_weights);
                if (!std::isfinite(loss))
                    throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                         std::to_string(bi) + " (step " + std::to_string(step) + ", lr " +
                                         std::to_string(lr) + ")");
                model_.backward(dlogits, !frozen);
                opt.step(lr);
                loss_sum += loss;
                r.steps.push_back({epoch, step, lr, loss});
                if (log_)
                    *log_ << nlohmann::json{{"type", "step"}, {"epoch", epoch}, {"step", step}, {"lr", lr},
                                            {"loss", loss}}
                                 .dump()
                          << '\n';
                ++step;
            }
            EpochRecord er{epoch, loss_sum / static_cast<double>(per_epoch),
                           cached ? evaluate_cached(data.val) : evaluate(data.val)};
            if (log_) {
                *log_ << nlohmann::json{{"type", "epoch"}, {"epoch", epoch}, {"train_loss", er.train_loss},
                                        {"val", to_json(er.val)}}
                             .dump()
                      << '\n';
                log_->flush();
            }
            if (er.val.accuracy > best_acc) {
                best_acc = er.val.accuracy;
                r.best_epoch = epoch;
                r.best = er.val;
                best_values.clear();
                for (auto* p : model_.parameters()) best_values.push_back(p->value);
            }
            r.epochs.push_back(er);
            if (callback_) callback_(er);
        }
        auto params = model_.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
        return r;
    }

private:
    // Frozen encoders with identity augmentation: encode every image once.
    // Validation features are kept per batch_size chunk so evaluation runs
    // exactly the arithmetic of predict().
    void build_cache(const SplitData& data) {
        auto encode_all = [&](const std::vector<Sample>& samples, std::vector<FeatureMap<float>>* per_pre,
                              std::vector<FeatureMap<float>>* per_post, std::vector<FeatureMap<float>>* chunk_pre,
                              std::vector<FeatureMap<float>>* chunk_post) {
            std::vector<std::size_t> idx(samples.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            for (std::size_t a = 0; a < idx.size(); a += cfg_.batch_size) {
                const std::size_t b = std::min(idx.size(), a + cfg_.batch_size);
                auto batch = make_batch(cfg_, samples, idx, a, b, std::nullopt);
                auto [fp, fq] = model_.encode(batch.pre.empty() ? nullptr : &batch.pre, batch.post);
                if (chunk_pre) {
                    chunk_pre->push_back(fp);
                    chunk_post->push_back(fq);
                }
                if (per_pre)
                    for (std::size_t i = 0; i < b - a; ++i) {
                        auto one = [&](const FeatureMap<float>& f) {
                            if (f.values.empty()) return f;
                            return FeatureMap<float>{f.layout, slice_batch(f.values, i, i + 1), f.source_stage};
                        };
                        per_pre->push_back(one(fp));
                        per_post->push_back(one(fq));
                    }
            }
        };
        train_pre_.clear();
        train_post_.clear();
        val_pre_.clear();
        val_post_.clear();
        encode_all(data.train, &train_pre_, &train_post_, nullptr, nullptr);
        encode_all(data.val, nullptr, nullptr, &val_pre_, &val_post_);
    }

    Tensor<float> forward_cached(const std::vector<std::size_t>& order, std::size_t a, std::size_t b) {
        auto gather = [&](const std::vector<FeatureMap<float>>& f) {
            std::vector<const Tensor<float>*> parts;
            for (std::size_t i = a; i < b; ++i) parts.push_back(&f[order[i]].values);
            return FeatureMap<float>{f[order[a]].layout, stack_batch(parts), f[order[a]].source_stage};
        };
        if (train_pre_[order[a]].values.empty()) return model_.forward_from_features(gather(train_post_));
        return model_.forward_from_features(gather(train_pre_), gather(train_post_));
    }

    MetricsReport evaluate_cached(const std::vector<Sample>& samples) {
        std::vector<int> preds, truths;
        for (std::size_t c = 0; c < val_post_.size(); ++c) {
            auto logits = val_pre_[c].values.empty() ? model_.forward_from_features(val_post_[c])
                                                     : model_.forward_from_features(val_pre_[c], val_post_[c]);
            for (std::size_t i = 0; i < logits.dim(0); ++i) preds.push_back(argmax_row(logits, i));
        }
        for (const auto& s : samples) truths.push_back(s.label);
        return metrics_for(cfg_, preds, truths);
    }

    const ExperimentConfig& cfg_;
    DamageModel<float>& model_;
    std::ostream* log_;
    EpochCallback callback_;
    std::vector<FeatureMap<float>> train_pre_, train_post_, val_pre_, val_post_;
};

} // namespace svdamage
