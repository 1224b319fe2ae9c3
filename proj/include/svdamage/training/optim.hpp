#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "svdamage/core/tensor.hpp"
#include "svdamage/nn/param.hpp"

namespace svdamage {

// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
    require(total_steps > 0, "cosine_lr: total_steps must be positive");
    require(step <= total_steps, "cosine_lr: step beyond schedule");
    if (step == total_steps) return lr_min;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

// -log softmax(logits)[label] with log-sum-exp stabilization.
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t label) {
    require(label < logits.size(), "cross_entropy: label " + std::to_string(label) + " out of range for " +
                                       std::to_string(logits.size()) + " classes");
    T mx = logits[0];
    for (T v : logits) mx = std::max(mx, v);
    T sum = 0;
    for (T v : logits) sum += std::exp(v - mx);
    return std::log(sum) + mx - logits[label];
}

// Mean cross-entropy over a [B, K] batch; fills dlogits with d(mean)/dlogits.
// Optional per-class weights scale each sample's term.
template <typename T>
T cross_entropy_batch(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>& dlogits,
                      const std::vector<double>* class_weights = nullptr) {
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    require(labels.size() == B, "cross_entropy_batch: label count mismatch");
    dlogits = Tensor<T>(logits.shape());
    T total = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const auto label = static_cast<std::size_t>(labels[b]);
        std::span<const T> row(logits.data() + b * K, K);
        const T w = class_weights ? static_cast<T>((*class_weights)[label]) : T(1);
        total += w * cross_entropy<T>(row, label);
        T mx = row[0];
        for (T v : row) mx = std::max(mx, v);
        T sum = 0;
        for (T v : row) sum += std::exp(v - mx);
        for (std::size_t k = 0; k < K; ++k) {
            const T p = std::exp(row[k] - mx) / sum;
            dlogits[b * K + k] = w * (p - (k == label ? T(1) : T(0))) / static_cast<T>(B);
        }
    }
    return total / static_cast<T>(B);
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// AdamW with decoupled weight decay. Frozen parameters are skipped entirely.
template <typename T>
class AdamW {
public:
    AdamW(nn::ParamList<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto* p = params_[i];
            if (p->frozen) continue;
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p->value.size(); ++j) {
                const double g = static_cast<double>(p->grad[j]);
                const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * g;
                const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * g * g;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                double w = static_cast<double>(p->value[j]);
                w -= lr * cfg_.weight_decay * w;
                w -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
                p->value[j] = static_cast<T>(w);
            }
        }
    }

    void zero_grad() { nn::zero_grads(params_); }
    std::size_t steps() const { return t_; }

    // Moment estimates, in parameter order (checkpointing / inspection).
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }

private:
    nn::ParamList<T> params_;
    AdamWConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::size_t t_ = 0;
};

} // namespace svdamage
