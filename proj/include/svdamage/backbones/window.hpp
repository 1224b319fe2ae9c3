#pragma once

#include <cstddef>
#include <vector>

#include "svdamage/core/tensor.hpp"

namespace svdamage {

// [B, H, W, C] -> [B * nW, window * window, C], windows in row-major order.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window) {
    require(x.rank() == 4, "window_partition expects [B, H, W, C]");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    require(window > 0 && H % window == 0 && W % window == 0,
            "window_partition: grid " + std::to_string(H) + "x" + std::to_string(W) +
                " is not a multiple of window " + std::to_string(window));
    const std::size_t nh = H / window, nw = W / window;
    Tensor<T> out({B * nh * nw, window * window, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t wi = 0; wi < nh; ++wi)
            for (std::size_t wj = 0; wj < nw; ++wj)
                for (std::size_t i = 0; i < window; ++i)
                    for (std::size_t j = 0; j < window; ++j) {
                        const T* src = &x.at(b, wi * window + i, wj * window + j, 0);
                        T* dst = out.data() + (((b * nh + wi) * nw + wj) * window * window + i * window + j) * C;
                        std::copy_n(src, C, dst);
                    }
    return out;
}

// Inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t window, std::size_t H, std::size_t W) {
    require(windows.rank() == 3 && windows.dim(1) == window * window, "window_reverse: bad windowed tensor");
    require(H % window == 0 && W % window == 0, "window_reverse: grid not a multiple of window");
    const std::size_t nh = H / window, nw = W / window, C = windows.dim(2);
    require(windows.dim(0) % (nh * nw) == 0, "window_reverse: window count does not match grid");
    const std::size_t B = windows.dim(0) / (nh * nw);
    Tensor<T> x({B, H, W, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t wi = 0; wi < nh; ++wi)
            for (std::size_t wj = 0; wj < nw; ++wj)
                for (std::size_t i = 0; i < window; ++i)
                    for (std::size_t j = 0; j < window; ++j) {
                        const T* src =
                            windows.data() + (((b * nh + wi) * nw + wj) * window * window + i * window + j) * C;
                        std::copy_n(src, C, &x.at(b, wi * window + i, wj * window + j, 0));
                    }
    return x;
}

// Index plan for one (shifted) window-attention layer over an H x W grid.
// Handles cyclic shift, zero padding up to a window multiple, and the
// attention mask that keeps shifted regions and padding apart.
struct WindowPlan {
    std::size_t H = 0, W = 0, window = 0, shift = 0, Hp = 0, Wp = 0;
    // For every windowed slot (per image): flat source index h*W + w, or -1 for padding.
    std::vector<long> source;
    std::size_t num_windows() const { return (Hp / window) * (Wp / window); }
    std::size_t tokens_per_window() const { return window * window; }

    // Additive mask [nW, w*w, w*w]; T(0) where attention is allowed.
    template <typename T>
    Tensor<T> mask(T masked) const {
        const std::size_t nW = num_windows(), N = tokens_per_window();
        // Region labels on the padded, shifted grid.
        std::vector<int> region(Hp * Wp, 0);
        if (shift > 0) {
            auto band = [&](std::size_t p, std::size_t extent) {
                if (p < extent - window) return 0;
                if (p < extent - shift) return 1;
                return 2;
            };
            for (std::size_t i = 0; i < Hp; ++i)
                for (std::size_t j = 0; j < Wp; ++j) region[i * Wp + j] = band(i, Hp) * 3 + band(j, Wp);
        }
        Tensor<T> m({nW, N, N}, T(0));
        const std::size_t nw = Wp / window;
        for (std::size_t w = 0; w < nW; ++w) {
            const std::size_t wi = w / nw, wj = w % nw;
            for (std::size_t a = 0; a < N; ++a) {
                const std::size_t ia = wi * window + a / window, ja = wj * window + a % window;
                for (std::size_t b = 0; b < N; ++b) {
                    const std::size_t ib = wi * window + b / window, jb = wj * window + b % window;
                    const bool pad_key = source[w * N + b] < 0;
                    if (pad_key || region[ia * Wp + ja] != region[ib * Wp + jb]) m[(w * N + a) * N + b] = masked;
                }
            }
        }
        return m;
    }

    static WindowPlan make(std::size_t H, std::size_t W, std::size_t window, std::size_t shift) {
        WindowPlan p;
        p.H = H;
        p.W = W;
        // A grid that fits inside one window is attended globally without shifting.
        if (H <= window && W <= window) {
            window = std::max(H, W);
            shift = 0;
        }
        p.window = window;
        p.shift = shift;
        p.Hp = (H + window - 1) / window * window;
        p.Wp = (W + window - 1) / window * window;
        const std::size_t nh = p.Hp / window, nw = p.Wp / window, N = window * window;
        p.source.assign(nh * nw * N, -1);
        for (std::size_t wi = 0; wi < nh; ++wi)
            for (std::size_t wj = 0; wj < nw; ++wj)
                for (std::size_t t = 0; t < N; ++t) {
                    // Position on the shifted padded grid; the shift rolls the grid by -shift.
                    const std::size_t si = wi * window + t / window, sj = wj * window + t % window;
                    const std::size_t pi = (si + shift) % p.Hp, pj = (sj + shift) % p.Wp;
                    if (pi < H && pj < W) p.source[(wi * nw + wj) * N + t] = static_cast<long>(pi * W + pj);
                }
        return p;
    }
};

} // namespace svdamage
