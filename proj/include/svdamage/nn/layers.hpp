#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "svdamage/core/tensor.hpp"
#include "svdamage/nn/param.hpp"

namespace svdamage::nn {

// Affine map over the last axis. Weight is stored [out, in].
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string path, std::size_t in, std::size_t out, bool bias = true)
        : in_(in), out_(out), has_bias_(bias),
          weight_(join_path(path, "weight"), {out, in}),
          bias_(join_path(path, "bias"), {bias ? out : 0}) {}

    void init(std::mt19937_64& rng, double stddev = 0.02) {
        trunc_normal(weight_.value, stddev, rng);
        bias_.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) {
        require(x.shape().back() == in_, "linear " + weight_.path + ": expected last dim " + std::to_string(in_) +
                                             ", got " + shape_str(x.shape()));
        input_ = x;
        Shape s = x.shape();
        s.back() = out_;
        Tensor<T> y(s);
        auto W = weight_.value.matrix(in_);
        y.matrix(out_).noalias() = x.matrix(in_) * W.transpose();
        if (has_bias_) {
            auto Y = y.matrix(out_);
            Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        auto G = g.matrix(out_);
        weight_.grad.matrix(in_).noalias() += G.transpose() * input_.matrix(in_);
        if (has_bias_) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), out_) += G.colwise().sum();
        }
        Tensor<T> dx(input_.shape());
        dx.matrix(in_).noalias() = G * weight_.value.matrix(in_);
        return dx;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight_);
        if (has_bias_) out.push_back(&bias_);
    }

    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

private:
    std::size_t in_ = 0, out_ = 0;
    bool has_bias_ = true;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

// Normalizes over the last axis (per token / per pixel in channels-last layout).
template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(std::string path, std::size_t dim, double eps = 1e-6)
        : dim_(dim), eps_(eps), gamma_(join_path(path, "weight"), {dim}, T(1)),
          beta_(join_path(path, "bias"), {dim}, T(0)) {}

    Tensor<T> forward(const Tensor<T>& x) {
        require(x.shape().back() == dim_, "layernorm " + gamma_.path + ": expected last dim " + std::to_string(dim_) +
                                              ", got " + shape_str(x.shape()));
        const std::size_t rows = x.size() / dim_;
        xhat_ = Tensor<T>(x.shape());
        rstd_.assign(rows, T(0));
        Tensor<T> y(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = x.data() + r * dim_;
            T mean = 0;
            for (std::size_t c = 0; c < dim_; ++c) mean += in[c];
            mean /= static_cast<T>(dim_);
            T var = 0;
            for (std::size_t c = 0; c < dim_; ++c) var += (in[c] - mean) * (in[c] - mean);
            var /= static_cast<T>(dim_);
            const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps_));
            rstd_[r] = rstd;
            T* xh = xhat_.data() + r * dim_;
            T* out = y.data() + r * dim_;
            for (std::size_t c = 0; c < dim_; ++c) {
                xh[c] = (in[c] - mean) * rstd;
                out[c] = xh[c] * gamma_.value[c] + beta_.value[c];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        const std::size_t rows = g.size() / dim_;
        Tensor<T> dx(g.shape());
        std::vector<T> dxh(dim_);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * dim_;
            const T* xh = xhat_.data() + r * dim_;
            T mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < dim_; ++c) {
                gamma_.grad[c] += gr[c] * xh[c];
                beta_.grad[c] += gr[c];
                dxh[c] = gr[c] * gamma_.value[c];
                mean_d += dxh[c];
                mean_dx += dxh[c] * xh[c];
            }
            mean_d /= static_cast<T>(dim_);
            mean_dx /= static_cast<T>(dim_);
            T* out = dx.data() + r * dim_;
            for (std::size_t c = 0; c < dim_; ++c) out[c] = rstd_[r] * (dxh[c] - mean_d - xh[c] * mean_dx);
        }
        return dx;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    Parameter<T>& gamma() { return gamma_; }
    Parameter<T>& beta() { return beta_; }

private:
    std::size_t dim_ = 0;
    double eps_ = 1e-6;
    Parameter<T> gamma_, beta_;
    Tensor<T> xhat_;
    std::vector<T> rstd_;
};

// Exact (erf) GELU.
template <typename T>
class Gelu {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        Tensor<T> y(x.shape());
        const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> dx(g.shape());
        const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
        const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T x = input_[i];
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            dx[i] = g[i] * (cdf + x * pdf);
        }
        return dx;
    }

private:
    Tensor<T> input_;
};

// Depthwise k x k convolution, stride 1, zero padding k/2, on [B, H, W, C].
// Weight is stored [C, 1, k, k].
template <typename T>
class DepthwiseConv2d {
public:
    DepthwiseConv2d() = default;
    DepthwiseConv2d(std::string path, std::size_t channels, std::size_t kernel)
        : c_(channels), k_(kernel), weight_(join_path(path, "weight"), {channels, 1, kernel, kernel}),
          bias_(join_path(path, "bias"), {channels}) {}

    void init(std::mt19937_64& rng, double stddev = 0.02) {
        trunc_normal(weight_.value, stddev, rng);
        bias_.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) {
        require(x.rank() == 4 && x.dim(3) == c_, "depthwise conv " + weight_.path + ": bad input " + shape_str(x.shape()));
        input_ = x;
        const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2);
        const long pad = static_cast<long>(k_ / 2);
        std::vector<T> wt = transposed_weight();
        Tensor<T> y(x.shape());
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    T* out = &y.at(b, i, j, 0);
                    for (std::size_t c = 0; c < c_; ++c) out[c] = bias_.value[c];
                    for (std::size_t ky = 0; ky < k_; ++ky) {
                        const long yy = static_cast<long>(i) + static_cast<long>(ky) - pad;
                        if (yy < 0 || yy >= static_cast<long>(H)) continue;
                        for (std::size_t kx = 0; kx < k_; ++kx) {
                            const long xx = static_cast<long>(j) + static_cast<long>(kx) - pad;
                            if (xx < 0 || xx >= static_cast<long>(W)) continue;
                            const T* in = &x.at(b, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 0);
                            const T* w = wt.data() + (ky * k_ + kx) * c_;
                            for (std::size_t c = 0; c < c_; ++c) out[c] += w[c] * in[c];
                        }
                    }
                }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        const std::size_t B = g.dim(0), H = g.dim(1), W = g.dim(2);
        const long pad = static_cast<long>(k_ / 2);
        std::vector<T> wt = transposed_weight();
        std::vector<T> dwt(k_ * k_ * c_, T(0));
        Tensor<T> dx(g.shape());
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    const T* go = &g.at(b, i, j, 0);
                    for (std::size_t c = 0; c < c_; ++c) bias_.grad[c] += go[c];
                    for (std::size_t ky = 0; ky < k_; ++ky) {
                        const long yy = static_cast<long>(i) + static_cast<long>(ky) - pad;
                        if (yy < 0 || yy >= static_cast<long>(H)) continue;
                        for (std::size_t kx = 0; kx < k_; ++kx) {
                            const long xx = static_cast<long>(j) + static_cast<long>(kx) - pad;
                            if (xx < 0 || xx >= static_cast<long>(W)) continue;
                            const auto uy = static_cast<std::size_t>(yy), ux = static_cast<std::size_t>(xx);
                            const T* in = &input_.at(b, uy, ux, 0);
                            T* din = &dx.at(b, uy, ux, 0);
                            const T* w = wt.data() + (ky * k_ + kx) * c_;
                            T* dw = dwt.data() + (ky * k_ + kx) * c_;
                            for (std::size_t c = 0; c < c_; ++c) {
                                dw[c] += go[c] * in[c];
                                din[c] += go[c] * w[c];
                            }
                        }
                    }
                }
        for (std::size_t c = 0; c < c_; ++c)
            for (std::size_t t = 0; t < k_ * k_; ++t) weight_.grad[c * k_ * k_ + t] += dwt[t * c_ + c];
        return dx;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    std::vector<T> transposed_weight() const {
        std::vector<T> wt(k_ * k_ * c_);
        for (std::size_t c = 0; c < c_; ++c)
            for (std::size_t t = 0; t < k_ * k_; ++t) wt[t * c_ + c] = weight_.value[c * k_ * k_ + t];
        return wt;
    }

    std::size_t c_ = 0, k_ = 7;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

// Non-overlapping convolution with kernel == stride (patch embedding and
// downsampling). Weight is stored [Cout, Cin, p, p].
template <typename T>
class PatchConv {
public:
    PatchConv() = default;
    PatchConv(std::string path, std::size_t in_ch, std::size_t out_ch, std::size_t patch)
        : cin_(in_ch), cout_(out_ch), p_(patch), weight_(join_path(path, "weight"), {out_ch, in_ch, patch, patch}),
          bias_(join_path(path, "bias"), {out_ch}) {}

    void init(std::mt19937_64& rng, double stddev = 0.02) {
        trunc_normal(weight_.value, stddev, rng);
        bias_.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) {
        require(x.rank() == 4 && x.dim(3) == cin_,
                "patch conv " + weight_.path + ": expected " + std::to_string(cin_) + " input channels, got " +
                    shape_str(x.shape()));
        require(x.dim(1) % p_ == 0 && x.dim(2) % p_ == 0,
                "patch conv " + weight_.path + ": spatial dims " + shape_str(x.shape()) + " not divisible by " +
                    std::to_string(p_));
        in_shape_ = x.shape();
        patches_ = gather(x);
        const std::size_t B = x.dim(0), Ho = x.dim(1) / p_, Wo = x.dim(2) / p_;
        Tensor<T> y({B, Ho, Wo, cout_});
        const std::size_t K = cin_ * p_ * p_;
        y.matrix(cout_).noalias() = patches_.matrix(K) * weight_.value.matrix(K).transpose();
        auto Y = y.matrix(cout_);
        Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), cout_);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        const std::size_t K = cin_ * p_ * p_;
        auto G = g.matrix(cout_);
        weight_.grad.matrix(K).noalias() += G.transpose() * patches_.matrix(K);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), cout_) += G.colwise().sum();
        Tensor<T> dpatch(patches_.shape());
        dpatch.matrix(K).noalias() = G * weight_.value.matrix(K);
        return scatter(dpatch);
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

private:
    // Row per output pixel, column order (cin, ky, kx) to match the weight layout.
    Tensor<T> gather(const Tensor<T>& x) const {
        const std::size_t B = x.dim(0), Ho = x.dim(1) / p_, Wo = x.dim(2) / p_;
        const std::size_t K = cin_ * p_ * p_;
        Tensor<T> m({B * Ho * Wo, K});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    T* row = m.data() + ((b * Ho + i) * Wo + j) * K;
                    for (std::size_t ky = 0; ky < p_; ++ky)
                        for (std::size_t kx = 0; kx < p_; ++kx) {
                            const T* in = &x.at(b, i * p_ + ky, j * p_ + kx, 0);
                            for (std::size_t c = 0; c < cin_; ++c) row[(c * p_ + ky) * p_ + kx] = in[c];
                        }
                }
        return m;
    }

    Tensor<T> scatter(const Tensor<T>& m) const {
        Tensor<T> dx(in_shape_);
        const std::size_t B = in_shape_[0], Ho = in_shape_[1] / p_, Wo = in_shape_[2] / p_;
        const std::size_t K = cin_ * p_ * p_;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    const T* row = m.data() + ((b * Ho + i) * Wo + j) * K;
                    for (std::size_t ky = 0; ky < p_; ++ky)
                        for (std::size_t kx = 0; kx < p_; ++kx) {
                            T* out = &dx.at(b, i * p_ + ky, j * p_ + kx, 0);
                            for (std::size_t c = 0; c < cin_; ++c) out[c] = row[(c * p_ + ky) * p_ + kx];
                        }
                }
        return dx;
    }

    std::size_t cin_ = 3, cout_ = 0, p_ = 4;
    Parameter<T> weight_, bias_;
    Shape in_shape_;
    Tensor<T> patches_;
};

// Per-channel scale (ConvNeXt layer scale).
template <typename T>
class ChannelScale {
public:
    ChannelScale() = default;
    ChannelScale(std::string path, std::size_t dim, double init)
        : dim_(dim), scale_(std::move(path), {dim}, static_cast<T>(init)) {}

    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        Tensor<T> y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * scale_.value[i % dim_];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) {
        Tensor<T> dx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            scale_.grad[i % dim_] += g[i] * input_[i];
            dx[i] = g[i] * scale_.value[i % dim_];
        }
        return dx;
    }

    void collect(ParamList<T>& out) { out.push_back(&scale_); }

private:
    std::size_t dim_ = 0;
    Parameter<T> scale_;
    Tensor<T> input_;
};

} // namespace svdamage::nn
