// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "plab/common.hpp"
#include "plab/tensor.hpp"

namespace plab {

// Ordered collection of named tensors. Insertion order is stable and defines
// the flattened coordinate layout, checkpoint record order, and mask layout.
template <class T>
class ParamSet {
public:
    void add(std::string name, Tensor<T> value) {
        PLAB_CHECK(!index_.count(name), "duplicate parameter name '", name, "'");
        index_.emplace(name, items_.size());
        items_.emplace_back(std::move(name), std::move(value));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        const auto it = index_.find(name);
        PLAB_CHECK(it != index_.end(), "unknown parameter '", name, "'");
        return items_[it->second].second;
    }
    const Tensor<T>& at(const std::string& name) const {
        const auto it = index_.find(name);
        PLAB_CHECK(it != index_.end(), "unknown parameter '", name, "'");
        return items_[it->second].second;
    }

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    const std::pair<std::string, Tensor<T>>& item(std::size_t i) const { return items_[i]; }
    std::pair<std::string, Tensor<T>>& item(std::size_t i) { return items_[i]; }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    std::int64_t total_coords() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    bool all_finite() const {
        for (const auto& [name, t] : items_)
            if (!t.all_finite()) return false;
        return true;
    }

    static ParamSet zeros_like(const ParamSet& ref) {
        ParamSet out;
        for (const auto& [name, t] : ref) out.add(name, Tensor<T>(t.shape));
        return out;
    }

    static ParamSet ones_like(const ParamSet& ref) {
        ParamSet out;
        for (const auto& [name, t] : ref) out.add(name, Tensor<T>(t.shape, T(1)));
        return out;
    }

    bool same_layout(const ParamSet& other) const {
        if (size() != other.size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (items_[i].first != other.items_[i].first) return false;
            if (items_[i].second.shape != other.items_[i].second.shape) return false;
        }
        return true;
    }

    // this += a * x
    void axpy(T a, const ParamSet& x) {
        PLAB_CHECK(same_layout(x), "parameter layout mismatch in axpy");
        for (std::size_t i = 0; i < size(); ++i) {
            auto& dst = items_[i].second.data;
            const auto& src = x.items_[i].second.data;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += a * src[k];
        }
    }

    // this += a * (mask ∘ x)
    void axpy_masked(T a, const ParamSet& x, const ParamSet& mask) {
        PLAB_CHECK(same_layout(x) && same_layout(mask), "parameter layout mismatch in masked axpy");
        for (std::size_t i = 0; i < size(); ++i) {
            auto& dst = items_[i].second.data;
            const auto& src = x.items_[i].second.data;
            const auto& m = mask.items_[i].second.data;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += a * m[k] * src[k];
        }
    }

    void scale_all(T a) {
        for (auto& [name, t] : items_)
            for (T& v : t.data) v *= a;
    }

    double l2_norm() const {
        double sq = 0.0;
        for (const auto& [name, t] : items_)
            for (const T v : t.data) sq += static_cast<double>(v) * static_cast<double>(v);
        return std::sqrt(sq);
    }

    std::vector<T> flatten() const {
        std::vector<T> out;
        out.reserve(static_cast<std::size_t>(total_coords()));
        for (const auto& [name, t] : items_) out.insert(out.end(), t.data.begin(), t.data.end());
        return out;
    }

    void assign_flat(const std::vector<T>& flat) {
        PLAB_CHECK(static_cast<std::int64_t>(flat.size()) == total_coords(),
                   "flat vector length ", flat.size(), " does not match parameter count ",
                   total_coords());
        std::size_t pos = 0;
        for (auto& [name, t] : items_) {
            std::copy(flat.begin() + pos, flat.begin() + pos + t.data.size(), t.data.begin());
            pos += t.data.size();
        }
    }

    // Name and flat coordinate offset for a global coordinate index.
    std::pair<std::string, std::int64_t> locate(std::int64_t coord) const {
        std::int64_t pos = coord;
        for (const auto& [name, t] : items_) {
            if (pos < t.numel()) return {name, pos};
            pos -= t.numel();
        }
        PLAB_CHECK(false, "coordinate ", coord, " out of range");
        return {};
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
double max_abs_diff(const ParamSet<T>& a, const ParamSet<T>& b) {
    PLAB_CHECK(a.same_layout(b), "parameter layout mismatch in max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.item(i).second.data;
        const auto& y = b.item(i).second.data;
        for (std::size_t k = 0; k < x.size(); ++k)
            worst = std::max(worst, std::abs(static_cast<double>(x[k]) - static_cast<double>(y[k])));
    }
    return worst;
}

template <class T>
bool bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.item(i).second.data != b.item(i).second.data) return false;
    return true;
}

// Indicator set: 1 on coordinates of tensors whose name matches the
// predicate, 0 elsewhere.
template <class T, class Pred>
ParamSet<T> mask_where(const ParamSet<T>& ref, Pred&& name_pred) {
    ParamSet<T> out;
    for (const auto& [name, t] : ref)
        out.add(name, Tensor<T>(t.shape, name_pred(name) ? T(1) : T(0)));
    return out;
}

}  // namespace plab
