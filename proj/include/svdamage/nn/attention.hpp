#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "svdamage/core/tensor.hpp"

namespace svdamage::nn {

// softmax(Q K^T * scale + mask) V over independent groups.
//
// Q is [G, N, d], K and V are [G, M, d]. Group g uses mask slice
// (g / mask_div) % mask.dim(0) when a mask [nM, N, M] is supplied; masked
// entries carry a large negative additive bias.
template <typename T>
class ScaledDotAttention {
public:
    Tensor<T> forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale,
                      const Tensor<T>* mask = nullptr, std::size_t mask_div = 1) {
        require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention expects rank-3 [G, N, d] tensors");
        require(q.dim(0) == k.dim(0) && k.dim(0) == v.dim(0) && k.dim(1) == v.dim(1) && q.dim(2) == k.dim(2),
                "attention shape mismatch: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                    shape_str(v.shape()));
        q_ = q;
        k_ = k;
        v_ = v;
        scale_ = scale;
        const std::size_t G = q.dim(0), N = q.dim(1), M = k.dim(1), d = q.dim(2), dv = v.dim(2);
        probs_ = Tensor<T>({G, N, M});
        Tensor<T> out({G, N, dv});
        for (std::size_t g = 0; g < G; ++g) {
            ConstMatMap<T> Q(q.data() + g * N * d, N, d);
            ConstMatMap<T> K(k.data() + g * M * d, M, d);
            ConstMatMap<T> V(v.data() + g * M * dv, M, dv);
            MatMap<T> P(probs_.data() + g * N * M, N, M);
            P.noalias() = (Q * K.transpose()) * scale;
            if (mask) {
                const std::size_t mi = (g / mask_div) % mask->dim(0);
                P += ConstMatMap<T>(mask->data() + mi * N * M, N, M);
            }
            for (Eigen::Index r = 0; r < P.rows(); ++r) {
                const T mx = P.row(r).maxCoeff();
                P.row(r) = (P.row(r).array() - mx).exp();
                P.row(r) /= P.row(r).sum();
            }
            MatMap<T>(out.data() + g * N * dv, N, dv).noalias() = P * V;
        }
        return out;
    }

    struct Grads {
        Tensor<T> dq, dk, dv;
    };

    Grads backward(const Tensor<T>& g_out) {
        const std::size_t G = q_.dim(0), N = q_.dim(1), M = k_.dim(1), d = q_.dim(2), dvd = v_.dim(2);
        Grads r{Tensor<T>(q_.shape()), Tensor<T>(k_.shape()), Tensor<T>(v_.shape())};
        RowMatrix<T> dP(N, M);
        for (std::size_t g = 0; g < G; ++g) {
            ConstMatMap<T> Q(q_.data() + g * N * d, N, d);
            ConstMatMap<T> K(k_.data() + g * M * d, M, d);
            ConstMatMap<T> V(v_.data() + g * M * dvd, M, dvd);
            ConstMatMap<T> P(probs_.data() + g * N * M, N, M);
            ConstMatMap<T> dO(g_out.data() + g * N * dvd, N, dvd);
            MatMap<T>(r.dv.data() + g * M * dvd, M, dvd).noalias() = P.transpose() * dO;
            dP.noalias() = dO * V.transpose();
            // dS = P * (dP - rowsum(dP * P))
            for (Eigen::Index i = 0; i < dP.rows(); ++i) {
                const T dot = (dP.row(i).array() * P.row(i).array()).sum();
                dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
            }
            MatMap<T>(r.dq.data() + g * N * d, N, d).noalias() = (dP * K) * scale_;
            MatMap<T>(r.dk.data() + g * M * d, M, d).noalias() = (dP.transpose() * Q) * scale_;
        }
        return r;
    }

    // Attention probabilities of the last forward pass, [G, N, M].
    const Tensor<T>& probabilities() const { return probs_; }

    static T masked_value() { return static_cast<T>(-1e9); }

private:
    Tensor<T> q_, k_, v_, probs_;
    T scale_ = T(1);
};

// [B, N, H*dh] -> [B*H, N, dh]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2), dh = D / heads;
    require(D % heads == 0, "feature dim " + std::to_string(D) + " not divisible by head count " + std::to_string(heads));
    Tensor<T> out({B * heads, N, dh});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(x.data() + (b * N + n) * D + h * dh, dh, out.data() + ((b * heads + h) * N + n) * dh);
    return out;
}

// [B*H, N, dh] -> [B, N, H*dh]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
    const std::size_t BH = x.dim(0), N = x.dim(1), dh = x.dim(2), B = BH / heads, D = heads * dh;
    Tensor<T> out({B, N, D});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(x.data() + ((b * heads + h) * N + n) * dh, dh, out.data() + (b * N + n) * D + h * dh);
    return out;
}

} // namespace svdamage::nn
