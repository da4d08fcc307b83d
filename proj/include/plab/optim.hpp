// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "plab/params.hpp"

namespace plab::optim {

enum class UpdateScope { prompt_only, full };
enum class OptimizerKind { sgd, adafactor };

inline const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adafactor";
}

// Parameters φ paired with the prompt indicator m and an update scope.
// Under prompt_only every coordinate with m=0 stays bitwise untouched.
template <class T>
struct MaskedParams {
    ParamSet<T>& params;
    const ParamSet<T>& mask;
    UpdateScope scope = UpdateScope::full;
};

template <class T>
void check_finite_grads(const ParamSet<T>& grads) {
    for (const auto& [name, t] : grads)
        PLAB_CHECK(t.all_finite(), "non-finite gradient in '", name, "'");
}

// φ ← φ − α m∘g (prompt_only) or φ ← φ − α g (full). Plain update, no
// momentum, no adaptivity.
template <class T>
void sgd_step(MaskedParams<T> target, const ParamSet<T>& grads, T alpha) {
    check_finite_grads(grads);
    if (target.scope == UpdateScope::prompt_only)
        target.params.axpy_masked(-alpha, grads, target.mask);
    else
        target.params.axpy(-alpha, grads);
}

// Rescales so the global L2 norm is at most 1; direction is preserved.
template <class T>
double clip_to_unit_norm(ParamSet<T>& grads) {
    const double norm = grads.l2_norm();
    if (norm > 1.0) grads.scale_all(static_cast<T>(1.0 / norm));
    return norm;
}

struct AdafactorOptions {
    double lr = 1e-3;
    double eps1 = 1e-30;          // second-moment floor
    double eps2 = 1e-3;           // parameter-scale floor
    double clip_threshold = 1.0;  // RMS update clip
    double decay_exponent = 0.8;  // beta2_t = 1 - t^-decay_exponent
    bool scale_parameter = true;
};

// Factored second-moment adaptive optimizer with a fixed learning rate
// (relative-step and warmup schedules stay off).
template <class T>
class Adafactor {
public:
    explicit Adafactor(const ParamSet<T>& params, AdafactorOptions opts = {}) : opts_(opts) {
        PLAB_CHECK(opts_.lr > 0.0, "learning rate must be positive");
        slots_.reserve(params.size());
        for (const auto& [name, t] : params) {
            Slot s;
            if (t.shape.size() >= 2) {
                s.row = Tensor<T>({t.shape[0]});
                s.col = Tensor<T>({t.shape[1]});
            } else {
                s.full = Tensor<T>(t.shape);
            }
            slots_.push_back(std::move(s));
        }
    }

    std::int64_t step_count() const { return step_; }

    void step(MaskedParams<T> target, const ParamSet<T>& grads) {
        PLAB_CHECK(slots_.size() == target.params.size(), "optimizer state does not match parameters");
        PLAB_CHECK(target.params.same_layout(grads) && target.params.same_layout(target.mask),
                   "gradient/mask layout does not match parameters");
        check_finite_grads(grads);
        ++step_;
        const double beta2t = 1.0 - std::pow(static_cast<double>(step_), -opts_.decay_exponent);
        const bool masked = target.scope == UpdateScope::prompt_only;

        for (std::size_t i = 0; i < slots_.size(); ++i) {
            auto& param = target.params.item(i).second;
            const auto& grad = grads.item(i).second;
            const auto& mask = target.mask.item(i).second;
            Slot& slot = slots_[i];

            std::vector<T> g(grad.data.size());
            for (std::size_t k = 0; k < g.size(); ++k)
                g[k] = masked ? mask.data[k] * grad.data[k] : grad.data[k];

            std::vector<T> update(g.size());
            if (!slot.row.data.empty()) {
                const int rows = param.shape[0], cols = param.shape[1];
                for (int r = 0; r < rows; ++r) {
                    T acc = T(0);
                    for (int c = 0; c < cols; ++c) {
                        const T v = g[static_cast<std::size_t>(r) * cols + c];
                        acc += v * v + static_cast<T>(opts_.eps1);
                    }
                    slot.row.data[static_cast<std::size_t>(r)] =
                        static_cast<T>(beta2t) * slot.row.data[static_cast<std::size_t>(r)] +
                        static_cast<T>(1.0 - beta2t) * (acc / static_cast<T>(cols));
                }
                for (int c = 0; c < cols; ++c) {
                    T acc = T(0);
                    for (int r = 0; r < rows; ++r) {
                        const T v = g[static_cast<std::size_t>(r) * cols + c];
                        acc += v * v + static_cast<T>(opts_.eps1);
                    }
                    slot.col.data[static_cast<std::size_t>(c)] =
                        static_cast<T>(beta2t) * slot.col.data[static_cast<std::size_t>(c)] +
                        static_cast<T>(1.0 - beta2t) * (acc / static_cast<T>(rows));
                }
                T row_mean = T(0);
                for (const T v : slot.row.data) row_mean += v;
                row_mean /= static_cast<T>(rows);
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c) {
                        const T denom = std::sqrt(slot.row.data[static_cast<std::size_t>(r)] / row_mean) *
                                        std::sqrt(slot.col.data[static_cast<std::size_t>(c)]);
                        update[static_cast<std::size_t>(r) * cols + c] =
                            g[static_cast<std::size_t>(r) * cols + c] / denom;
                    }
            } else {
                for (std::size_t k = 0; k < g.size(); ++k) {
                    slot.full.data[k] = static_cast<T>(beta2t) * slot.full.data[k] +
                                        static_cast<T>(1.0 - beta2t) *
                                            (g[k] * g[k] + static_cast<T>(opts_.eps1));
                    update[k] = g[k] / std::sqrt(slot.full.data[k]);
                }
            }

            double update_sq = 0.0;
            for (const T v : update) update_sq += static_cast<double>(v) * static_cast<double>(v);
            const double update_rms = std::sqrt(update_sq / static_cast<double>(update.size()));
            const double clip = std::max(1.0, update_rms / opts_.clip_threshold);

            double lr = opts_.lr;
            if (opts_.scale_parameter) {
                double param_sq = 0.0;
                for (const T v : param.data)
                    param_sq += static_cast<double>(v) * static_cast<double>(v);
                const double param_rms = std::sqrt(param_sq / static_cast<double>(param.data.size()));
                lr *= std::max(opts_.eps2, param_rms);
            }

            const T factor = static_cast<T>(lr / clip);
            if (masked) {
                for (std::size_t k = 0; k < update.size(); ++k)
                    param.data[k] -= mask.data[k] * factor * update[k];
            } else {
                for (std::size_t k = 0; k < update.size(); ++k) param.data[k] -= factor * update[k];
            }
        }
    }

private:
    struct Slot {
        Tensor<T> row;   // factored second moment, rank-2 tensors
        Tensor<T> col;
        Tensor<T> full;  // rank-1 tensors and scalars
    };

    AdafactorOptions opts_;
    std::vector<Slot> slots_;
    std::int64_t step_ = 0;
};

}  // namespace plab::optim
