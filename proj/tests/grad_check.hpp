#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "svdamage/core/tensor.hpp"

namespace svdamage::testing {

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = nd(rng);
    return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Central difference of `loss` w.r.t. x[i].
inline double numeric_grad(const std::function<double()>& loss, double& x, double eps = 1e-5) {
    const double keep = x;
    x = keep + eps;
    const double up = loss();
    x = keep - eps;
    const double down = loss();
    x = keep;
    return (up - down) / (2 * eps);
}

inline bool close(double analytic, double numeric, double rtol = 1e-4, double atol = 1e-7) {
    return std::abs(analytic - numeric) <= atol + rtol * std::max(std::abs(analytic), std::abs(numeric));
}

} // namespace svdamage::testing
