// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "plab/common.hpp"
#include "plab/params.hpp"

namespace plab {

// Central-difference gradient oracle: (f(p+h) - f(p-h)) / (2h) per coordinate,
// 2 * #params evaluations. Kept independent of the reverse-mode path so the
// two can check each other.
template <class T>
ParamSet<T> finite_difference_gradient(const std::function<T(const ParamSet<T>&)>& loss_fn,
                                       const ParamSet<T>& params, T step = T(1e-5)) {
    PLAB_CHECK(step > T(0), "finite differences need a positive step, got ", step);
    ParamSet<T> grad = ParamSet<T>::zeros_like(params);
    ParamSet<T> probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.item(i).first;
        auto& probe_data = probe.item(i).second.data;
        auto& grad_data = grad.item(i).second.data;
        const auto& base = params.item(i).second.data;
        for (std::size_t k = 0; k < base.size(); ++k) {
            probe_data[k] = base[k] + step;
            const T up = loss_fn(probe);
            probe_data[k] = base[k] - step;
            const T down = loss_fn(probe);
            probe_data[k] = base[k];
            PLAB_CHECK(is_finite_value(up) && is_finite_value(down),
                       "non-finite loss while probing '", name, "' coordinate ", k);
            grad_data[k] = (up - down) / (T(2) * step);
        }
    }
    return grad;
}

// Relative disagreement with a floor so that near-zero coordinates compare
// absolutely instead of dividing by noise.
template <class T>
double max_relative_error(const ParamSet<T>& a, const ParamSet<T>& b, double floor = 1e-3) {
    PLAB_CHECK(a.same_layout(b), "layout mismatch in max_relative_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.item(i).second.data;
        const auto& y = b.item(i).second.data;
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double xa = std::abs(static_cast<double>(x[k]));
            const double ya = std::abs(static_cast<double>(y[k]));
            const double denom = std::max({xa, ya, floor});
            worst = std::max(worst, std::abs(static_cast<double>(x[k]) - static_cast<double>(y[k])) / denom);
        }
    }
    return worst;
}

}  // namespace plab
