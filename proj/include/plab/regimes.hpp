// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "plab/example.hpp"
#include "plab/model.hpp"
#include "plab/optim.hpp"
#include "plab/parallel.hpp"
#include "plab/tasks.hpp"

namespace plab::regimes {

enum class RegimeKind { mtl_t_only, mtl_p_only, mtl_tp, fomaml, reptile };

inline const char* regime_name(RegimeKind k) {
    switch (k) {
        case RegimeKind::mtl_t_only: return "mtl_t_only";
        case RegimeKind::mtl_p_only: return "mtl_p_only";
        case RegimeKind::mtl_tp: return "mtl_tp";
        case RegimeKind::fomaml: return "fomaml";
        case RegimeKind::reptile: return "reptile";
    }
    return "?";
}

inline bool is_meta(RegimeKind k) {
    return k == RegimeKind::fomaml || k == RegimeKind::reptile;
}

struct MetaConfig {
    double inner_lr = 0.1;  // α for the inner SGD steps
    int inner_steps = 7;    // T
    int meta_batch = 8;     // B replicas per outer update
};

struct RegimeSpec {
    RegimeKind kind = RegimeKind::mtl_tp;
    MetaConfig meta;
    int batch_size = 16;
    optim::OptimizerKind optimizer = optim::OptimizerKind::adafactor;
    double outer_lr = 1e-3;
    bool clip_updates = true;  // unit-norm clip before training-mode updates

    void validate() const {
        PLAB_CHECK(batch_size >= 1, "batch_size must be >= 1");
        PLAB_CHECK(outer_lr > 0.0, "outer_lr must be positive");
        if (is_meta(kind)) {
            PLAB_CHECK(meta.inner_steps >= 1 && meta.meta_batch >= 1,
                       "meta regimes need inner_steps >= 1 and meta_batch >= 1");
            PLAB_CHECK(meta.inner_lr > 0.0, "inner_lr must be positive");
        }
    }
};

using Batch = std::vector<TemplatizedExample>;

template <class T>
using BatchLossFn = std::function<model::LossGrad<T>(const ParamSet<T>&, std::span<const TemplatizedExample>)>;

template <class T>
BatchLossFn<T> model_loss_fn(const model::ModelConfig& cfg) {
    return [cfg](const ParamSet<T>& p, std::span<const TemplatizedExample> b) {
        return model::batch_loss_and_grads<T>(cfg, p, b);
    };
}

// Gradient-descent update applied to the origin parameters after a meta step
// (or to φ during MTL). Raw gradient in, mutation out.
template <class T>
using UpdateFn = std::function<void(ParamSet<T>&, const ParamSet<T>&)>;

// Data for one replica: T support batches plus one query batch.
struct MetaBatch {
    std::vector<Batch> support;
    Batch query;

    void validate(int expected_steps) const {
        PLAB_CHECK(static_cast<int>(support.size()) == expected_steps, "meta batch has ",
                   support.size(), " support batches, expected ", expected_steps);
    }
};

struct StepLog {
    int step = 0;
    std::string regime;
    double loss = 0.0;
    double grad_norm = 0.0;
};

using TrainLog = std::vector<StepLog>;

template <class T>
struct MetaStepResult {
    ParamSet<T> meta_grad;
    double mean_query_loss = 0.0;
};

namespace detail {

template <class T>
struct ReplicaOutcome {
    ParamSet<T> contribution;  // query gradient (FOMAML) or displacement (Reptile)
    double query_loss = 0.0;
    std::string error;
};

template <class T>
MetaStepResult<T> run_meta_replicas(ParamSet<T>& origin, const ParamSet<T>& mask,
                                    std::span<const MetaBatch> replicas, const MetaConfig& cfg,
                                    const BatchLossFn<T>& loss, bool reptile_full_step,
                                    const UpdateFn<T>& outer_update) {
    PLAB_CHECK(!replicas.empty(), "meta step needs at least one replica batch");
    PLAB_CHECK(static_cast<int>(replicas.size()) == cfg.meta_batch, "got ", replicas.size(),
               " replica batches for meta batch size ", cfg.meta_batch);
    const T alpha = static_cast<T>(cfg.inner_lr);

    std::vector<ReplicaOutcome<T>> outcomes(replicas.size());
    parallel_for(static_cast<int>(replicas.size()), [&](int b) {
        auto& slot = outcomes[static_cast<std::size_t>(b)];
        try {
            const MetaBatch& mb = replicas[static_cast<std::size_t>(b)];
            mb.validate(cfg.inner_steps);
            ParamSet<T> phi = origin;  // clone; origin is never touched here
            for (int t = 0; t < cfg.inner_steps; ++t) {
                const auto lg = loss(phi, mb.support[static_cast<std::size_t>(t)]);
                PLAB_CHECK(is_finite_value(lg.loss), "non-finite inner loss at replica ", b,
                           " step ", t);
                optim::sgd_step<T>({phi, mask, optim::UpdateScope::prompt_only}, lg.grads, alpha);
            }
            const auto query = loss(phi, mb.query);
            PLAB_CHECK(is_finite_value(query.loss), "non-finite query loss at replica ", b);
            slot.query_loss = static_cast<double>(query.loss);
            if (reptile_full_step) {
                optim::sgd_step<T>({phi, mask, optim::UpdateScope::full}, query.grads, alpha);
                // displacement (φ_orig − φ^b) / α
                slot.contribution = origin;
                slot.contribution.axpy(T(-1), phi);
                slot.contribution.scale_all(T(1) / alpha);
            } else {
                slot.contribution = query.grads;
            }
        } catch (const std::exception& e) {
            slot.error = e.what();
        }
    });
    for (const auto& o : outcomes) PLAB_CHECK(o.error.empty(), o.error);

    MetaStepResult<T> result;
    result.meta_grad = ParamSet<T>::zeros_like(origin);
    for (const auto& o : outcomes) {
        result.meta_grad.axpy(T(1) / static_cast<T>(replicas.size()), o.contribution);
        result.mean_query_loss += o.query_loss / static_cast<double>(replicas.size());
    }
    outer_update(origin, result.meta_grad);
    return result;
}

}  // namespace detail

// One first-order meta step: per replica, T prompt-only SGD steps on the
// support batches, then the query gradient at the adapted parameters. The
// replica-averaged query gradient is handed to `outer_update`, which applies
// the single full-scope update to the origin parameters.
template <class T>
MetaStepResult<T> fomaml_step(ParamSet<T>& origin, const ParamSet<T>& mask,
                              std::span<const MetaBatch> replicas, const MetaConfig& cfg,
                              const BatchLossFn<T>& loss, const UpdateFn<T>& outer_update) {
    return detail::run_meta_replicas(origin, mask, replicas, cfg, loss, false, outer_update);
}

// Adapted Reptile step: per replica, T prompt-only steps plus one full-model
// SGD step on the query batch; the meta gradient is the inner-rate-scaled
// mean displacement (1/(αB)) Σ (φ_orig − φ^b).
template <class T>
MetaStepResult<T> reptile_step(ParamSet<T>& origin, const ParamSet<T>& mask,
                               std::span<const MetaBatch> replicas, const MetaConfig& cfg,
                               const BatchLossFn<T>& loss, const UpdateFn<T>& outer_update) {
    return detail::run_meta_replicas(origin, mask, replicas, cfg, loss, true, outer_update);
}

// Builds the training-mode outer update: optional unit-norm clip followed by
// the configured optimizer. The Adafactor state lives in the closure.
template <class T>
UpdateFn<T> make_update_fn(const RegimeSpec& spec, const ParamSet<T>& params,
                           const ParamSet<T>& mask, optim::UpdateScope scope) {
    if (spec.optimizer == optim::OptimizerKind::sgd) {
        const bool clip = spec.clip_updates;
        const T lr = static_cast<T>(spec.outer_lr);
        return [clip, lr, &mask, scope](ParamSet<T>& p, const ParamSet<T>& g) {
            ParamSet<T> grads = g;
            if (clip) optim::clip_to_unit_norm(grads);
            optim::sgd_step<T>({p, mask, scope}, grads, lr);
        };
    }
    optim::AdafactorOptions opts;
    opts.lr = spec.outer_lr;
    auto state = std::make_shared<optim::Adafactor<T>>(params, opts);
    const bool clip = spec.clip_updates;
    return [state, clip, &mask, scope](ParamSet<T>& p, const ParamSet<T>& g) {
        ParamSet<T> grads = g;
        if (clip) optim::clip_to_unit_norm(grads);
        state->step({p, mask, scope}, grads);
    };
}

// One pass of multi-task training over the stream. Scope by variant:
// t_only trains a promptless transformer, p_only trains the prompt with the
// transformer frozen, tp trains everything.
template <class T>
TrainLog mtl_train(ParamSet<T>& params, const ParamSet<T>& mask,
                   std::span<const TemplatizedExample> stream, const RegimeSpec& spec,
                   const BatchLossFn<T>& loss) {
    spec.validate();
    PLAB_CHECK(!is_meta(spec.kind), "mtl_train needs an mtl regime");
    if (spec.kind == RegimeKind::mtl_t_only)
        PLAB_CHECK(!model::has_prompt(params),
                   "mtl_t_only trains a promptless model but prompt parameters are present");
    if (spec.kind == RegimeKind::mtl_p_only)
        PLAB_CHECK(model::has_prompt(params), "mtl_p_only needs prompt parameters to train");

    const auto scope = spec.kind == RegimeKind::mtl_p_only ? optim::UpdateScope::prompt_only
                                                           : optim::UpdateScope::full;
    const auto update = make_update_fn<T>(spec, params, mask, scope);

    TrainLog log;
    int step = 0;
    for (std::size_t pos = 0; pos < stream.size(); pos += static_cast<std::size_t>(spec.batch_size)) {
        const std::size_t take = std::min(stream.size() - pos, static_cast<std::size_t>(spec.batch_size));
        const auto lg = loss(params, stream.subspan(pos, take));
        update(params, lg.grads);
        log.push_back({++step, regime_name(spec.kind), static_cast<double>(lg.loss),
                       lg.grads.l2_norm()});
    }
    return log;
}

// Splits the stream into fixed-size batches; a trailing partial batch is kept
// for MTL and dropped by the meta grouping below.
inline std::vector<Batch> chunk_stream(std::span<const TemplatizedExample> stream, int batch_size) {
    std::vector<Batch> out;
    for (std::size_t pos = 0; pos < stream.size(); pos += static_cast<std::size_t>(batch_size)) {
        const std::size_t take = std::min(stream.size() - pos, static_cast<std::size_t>(batch_size));
        out.emplace_back(stream.begin() + pos, stream.begin() + pos + take);
    }
    return out;
}

// Packs consecutive batches into per-replica meta batches (T support + 1
// query each); leftovers that cannot fill a full outer step are dropped.
inline std::vector<std::vector<MetaBatch>> group_meta_batches(std::vector<Batch> batches,
                                                              const MetaConfig& cfg) {
    const std::size_t per_replica = static_cast<std::size_t>(cfg.inner_steps) + 1;
    const std::size_t per_step = per_replica * static_cast<std::size_t>(cfg.meta_batch);
    std::vector<std::vector<MetaBatch>> steps;
    std::size_t pos = 0;
    while (pos + per_step <= batches.size()) {
        std::vector<MetaBatch> replicas;
        replicas.reserve(static_cast<std::size_t>(cfg.meta_batch));
        for (int b = 0; b < cfg.meta_batch; ++b) {
            MetaBatch mb;
            for (int t = 0; t < cfg.inner_steps; ++t) mb.support.push_back(std::move(batches[pos++]));
            mb.query = std::move(batches[pos++]);
            replicas.push_back(std::move(mb));
        }
        steps.push_back(std::move(replicas));
    }
    return steps;
}

// Drives the chosen regime over exactly one epoch of the mixture stream.
template <class T>
TrainLog continued_pretrain(ParamSet<T>& params, const ParamSet<T>& mask,
                            std::span<const TemplatizedExample> stream, const RegimeSpec& spec,
                            const BatchLossFn<T>& loss) {
    spec.validate();
    if (!is_meta(spec.kind)) return mtl_train(params, mask, stream, spec, loss);

    const auto update = make_update_fn<T>(spec, params, mask, optim::UpdateScope::full);
    auto steps = group_meta_batches(chunk_stream(stream, spec.batch_size), spec.meta);
    TrainLog log;
    int step = 0;
    for (const auto& replicas : steps) {
        const auto result = spec.kind == RegimeKind::fomaml
                                ? fomaml_step<T>(params, mask, replicas, spec.meta, loss, update)
                                : reptile_step<T>(params, mask, replicas, spec.meta, loss, update);
        log.push_back({++step, regime_name(spec.kind), result.mean_query_loss,
                       result.meta_grad.l2_norm()});
    }
    return log;
}

inline void write_train_log_csv(std::ostream& out, const TrainLog& log) {
    out << "step,regime,loss,grad_norm\n";
    char buffer[160];
    for (const auto& row : log) {
        std::snprintf(buffer, sizeof(buffer), "%d,%s,%.10g,%.10g\n", row.step, row.regime.c_str(),
                      row.loss, row.grad_norm);
        out << buffer;
    }
}

}  // namespace plab::regimes
