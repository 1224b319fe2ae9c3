#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "svdamage/core/error.hpp"

namespace svdamage {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Over-aligned so vectorized kernels see the same alignment on every
// allocation; with plain malloc, Eigen's peeling (and thus the rounding)
// can change from run to run.
template <typename T>
using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

// Dense row-major tensor. Network activations are channels-last: [B, H, W, C].
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        require(data_.size() == shape_numel(shape_), "tensor data does not match shape " + shape_str(shape_));
    }
    Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(data_.size() == shape_numel(shape_), "tensor data does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    Storage<T>& storage() { return data_; }
    const Storage<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    T& at(std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
        return data_[((b * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    const T& at(std::size_t b, std::size_t h, std::size_t w, std::size_t c) const {
        return data_[((b * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    Tensor reshaped(Shape s) const {
        require(shape_numel(s) == size(), "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }
    void reshape(Shape s) {
        require(shape_numel(s) == size(), "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        shape_ = std::move(s);
    }

    // View as a row-major matrix with `cols` columns.
    MatMap<T> matrix(std::size_t cols) {
        return MatMap<T>(data(), static_cast<Eigen::Index>(size() / cols), static_cast<Eigen::Index>(cols));
    }
    ConstMatMap<T> matrix(std::size_t cols) const {
        return ConstMatMap<T>(data(), static_cast<Eigen::Index>(size() / cols), static_cast<Eigen::Index>(cols));
    }

    Tensor& operator+=(const Tensor& o) {
        require(o.size() == size(), "tensor add size mismatch");
        for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

private:
    Shape shape_;
    Storage<T> data_;
};

// Splits the leading (batch) axis: rows [begin, end).
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    Shape s = x.shape();
    const std::size_t per = x.size() / s[0];
    s[0] = end - begin;
    Storage<T> d(x.data() + begin * per, x.data() + end * per);
    return Tensor<T>(std::move(s), std::move(d));
}

template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == b.rank(), "concat_batch rank mismatch");
    for (std::size_t i = 1; i < a.rank(); ++i)
        require(a.dim(i) == b.dim(i), "concat_batch shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Shape s = a.shape();
    s[0] += b.dim(0);
    Storage<T> d(a.storage());
    d.insert(d.end(), b.storage().begin(), b.storage().end());
    return Tensor<T>(std::move(s), std::move(d));
}

} // namespace svdamage
