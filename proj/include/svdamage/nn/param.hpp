#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "svdamage/core/tensor.hpp"

namespace svdamage::nn {

// A learnable tensor with its gradient buffer. `path` is the canonical layer
// path used by tensor archives and checkpoints (e.g. "stages.0.blocks.1.pwconv1.weight").
template <typename T>
struct Parameter {
    std::string path;
    Tensor<T> value;
    Tensor<T> grad;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string p, Shape shape, T fill = T(0))
        : path(std::move(p)), value(shape, fill), grad(shape, T(0)) {}

    void zero_grad() { grad.zero(); }
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

inline std::string join_path(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

// Truncated normal (at +-2 std), the usual init for transformer/ConvNeXt weights.
template <typename T>
void trunc_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& v : t.values()) {
        double x;
        do { x = nd(rng); } while (std::abs(x) > 2.0 * stddev);
        v = static_cast<T>(x);
    }
}

template <typename T>
void uniform_fill(Tensor<T>& t, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ud(-bound, bound);
    for (auto& v : t.values()) v = static_cast<T>(ud(rng));
}

template <typename T>
void set_frozen(const ParamList<T>& params, bool frozen) {
    for (auto* p : params) p->frozen = frozen;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (auto* p : params) p->zero_grad();
}

} // namespace svdamage::nn
