// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "plab/common.hpp"
#include "plab/rng.hpp"

namespace plab {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (const int extent : shape) {
        PLAB_CHECK(extent > 0, "tensor extents must be positive, got ", extent);
        n *= extent;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

// Dense row-major tensor. Scalars use shape {1}.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0))
        : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        PLAB_CHECK(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
                   "tensor data length ", data.size(), " does not match shape ", shape_str(shape));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    T at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool all_finite() const {
        for (const T v : data)
            if (!is_finite_value(v)) return false;
        return true;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    static Tensor randn(Shape s, Rng& rng, T stddev = T(1)) {
        Tensor out(std::move(s));
        for (T& v : out.data) v = static_cast<T>(rng.next_normal()) * stddev;
        return out;
    }
};

template <class T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

}  // namespace plab
