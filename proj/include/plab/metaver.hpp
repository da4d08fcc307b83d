// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "plab/finite_diff.hpp"
#include "plab/graph.hpp"
#include "plab/params.hpp"
#include "plab/rng.hpp"

namespace plab::metaver {

// All verification runs in 64-bit: the Taylor residuals being measured sit
// below what 32-bit round-off would allow.

struct ScalarLoss {
    std::function<double(const ParamSet<double>&)> value;
    std::function<ParamSet<double>(const ParamSet<double>&)> grad;
};

// Fixed-batch adaptation setting: T masked SGD steps on one training loss,
// then evaluation under a test loss.
struct TaylorSetup {
    ParamSet<double> phi0;
    ScalarLoss train_loss;
    ScalarLoss test_loss;
    double alpha = 0.01;
    int steps = 3;            // T
    ParamSet<double> mask;    // m, 1 on tuned coordinates
};

constexpr int kMaxHessianParams = 50;
constexpr double kHessianStep = 1e-4;

struct Matrix {
    int n = 0;
    std::vector<double> data;

    explicit Matrix(int size = 0) : n(size), data(static_cast<std::size_t>(size) * size, 0.0) {}
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * n + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * n + c]; }
};

inline std::vector<double> matvec(const Matrix& m, const std::vector<double>& v) {
    std::vector<double> out(static_cast<std::size_t>(m.n), 0.0);
    for (int r = 0; r < m.n; ++r) {
        double acc = 0.0;
        for (int c = 0; c < m.n; ++c) acc += m.at(r, c) * v[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>(r)] = acc;
    }
    return out;
}

namespace detail {

inline std::vector<double> mask_apply(const std::vector<double>& mask, std::vector<double> v) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
    return v;
}

inline double l2(const std::vector<double>& v) {
    double sq = 0.0;
    for (const double x : v) sq += x * x;
    return std::sqrt(sq);
}

inline std::vector<double> sub(std::vector<double> a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
}

inline void axpy(std::vector<double>& dst, double f, const std::vector<double>& x) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += f * x[i];
}

}  // namespace detail

// Central-difference Hessian of a loss via its reverse-mode gradient,
// symmetrized; restricted to small parameter vectors.
inline Matrix hessian(const ScalarLoss& loss, const ParamSet<double>& at,
                      double step = kHessianStep) {
    const int n = static_cast<int>(at.total_coords());
    PLAB_CHECK(n <= kMaxHessianParams, "parameter count ", n,
               " too large for the finite-difference Hessian oracle (max ", kMaxHessianParams, ")");
    Matrix h(n);
    ParamSet<double> probe = at;
    std::vector<double> flat = at.flatten();
    for (int j = 0; j < n; ++j) {
        const double saved = flat[static_cast<std::size_t>(j)];
        flat[static_cast<std::size_t>(j)] = saved + step;
        probe.assign_flat(flat);
        const auto up = loss.grad(probe).flatten();
        flat[static_cast<std::size_t>(j)] = saved - step;
        probe.assign_flat(flat);
        const auto down = loss.grad(probe).flatten();
        flat[static_cast<std::size_t>(j)] = saved;
        for (int i = 0; i < n; ++i)
            h.at(i, j) = (up[static_cast<std::size_t>(i)] - down[static_cast<std::size_t>(i)]) /
                         (2.0 * step);
    }
    probe.assign_flat(flat);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double sym = 0.5 * (h.at(i, j) + h.at(j, i));
            h.at(i, j) = sym;
            h.at(j, i) = sym;
        }
    return h;
}

struct UnrollResult {
    ParamSet<double> phi_end;                 // φ_T
    std::vector<ParamSet<double>> grad_trace;  // g_0 … g_{T-1}
};

// Exact masked SGD trace: φ_{i+1} = φ_i − α m∘g_i on the training loss.
inline UnrollResult unroll_prompt_tuning(const TaylorSetup& s) {
    PLAB_CHECK(s.steps >= 0, "step count must be nonnegative");
    UnrollResult out;
    ParamSet<double> phi = s.phi0;
    out.grad_trace.reserve(static_cast<std::size_t>(s.steps));
    for (int i = 0; i < s.steps; ++i) {
        ParamSet<double> g = s.train_loss.grad(phi);
        PLAB_CHECK(g.all_finite(), "non-finite training gradient at unroll step ", i);
        phi.axpy_masked(-s.alpha, g, s.mask);
        out.grad_trace.push_back(std::move(g));
    }
    out.phi_end = std::move(phi);
    return out;
}

struct HessianCache {
    Matrix train_h0;  // L''_train(φ_0)
    Matrix test_h0;   // L''_test(φ_0)
};

inline HessianCache make_hessian_cache(const TaylorSetup& s) {
    return {hessian(s.train_loss, s.phi0), hessian(s.test_loss, s.phi0)};
}

namespace detail {
inline const HessianCache& cache_or(const TaylorSetup& s, const HessianCache* cache,
                                    std::unique_ptr<HessianCache>& owned) {
    if (cache) return *cache;
    owned = std::make_unique<HessianCache>(make_hessian_cache(s));
    return *owned;
}
}  // namespace detail

// ‖g_i − (g_0 − α i H_0 m∘g_0)‖₂: the inner-gradient expansion drops
// second-order terms, so this shrinks as α².
inline double gi_taylor_residual(const TaylorSetup& s, int i, const HessianCache* cache = nullptr) {
    PLAB_CHECK(0 <= i && i < s.steps, "gradient index ", i, " outside the ", s.steps, "-step trace");
    std::unique_ptr<HessianCache> owned;
    const auto& h = detail::cache_or(s, cache, owned);
    const auto unrolled = unroll_prompt_tuning(s);
    const auto g0 = unrolled.grad_trace[0].flatten();
    const auto exact = unrolled.grad_trace[static_cast<std::size_t>(i)].flatten();

    std::vector<double> predicted = g0;
    detail::axpy(predicted, -s.alpha * i,
                 matvec(h.train_h0, detail::mask_apply(s.mask.flatten(), g0)));
    return detail::l2(detail::sub(exact, predicted));
}

// ‖L'_test(φ_T) − (ḡ − α T H̄ m∘g_0)‖₂.
inline double fomaml_taylor_residual(const TaylorSetup& s, const HessianCache* cache = nullptr) {
    std::unique_ptr<HessianCache> owned;
    const auto& h = detail::cache_or(s, cache, owned);
    const auto unrolled = unroll_prompt_tuning(s);
    const auto exact = s.test_loss.grad(unrolled.phi_end).flatten();
    const auto gbar = s.test_loss.grad(s.phi0).flatten();

    std::vector<double> predicted = gbar;
    if (s.steps > 0) {
        const auto g0 = unrolled.grad_trace[0].flatten();
        detail::axpy(predicted, -s.alpha * s.steps,
                     matvec(h.test_h0, detail::mask_apply(s.mask.flatten(), g0)));
    }
    return detail::l2(detail::sub(exact, predicted));
}

// d/dφ_0 L_test(unroll(φ_0)) by central differences straight through the
// whole tuning process; no second-order machinery involved.
inline ParamSet<double> maml_oracle_gradient(const TaylorSetup& s, double fd_step = 1e-5) {
    const int n = static_cast<int>(s.phi0.total_coords());
    PLAB_CHECK(n <= kMaxHessianParams, "parameter count ", n,
               " too large for the unrolled oracle (max ", kMaxHessianParams, ")");
    const auto end_to_end = [&s](const ParamSet<double>& start) {
        TaylorSetup probe = s;
        probe.phi0 = start;
        const auto unrolled = unroll_prompt_tuning(probe);
        const double value = s.test_loss.value(unrolled.phi_end);
        PLAB_CHECK(is_finite_value(value), "non-finite test loss in the unrolled oracle");
        return value;
    };
    return finite_difference_gradient<double>(end_to_end, s.phi0, fd_step);
}

// ‖g_MAML − (ḡ − α T M∘H_0 ḡ − α T H̄ m∘g_0)‖₂. The masked-Hessian term is
// the update Jacobian transposed into gradient space: since the inner update
// moves only masked coordinates, (I − α diag(m) H_0)^T ḡ = ḡ − α H_0 (m∘ḡ),
// so M∘H_0 ḡ is computed as H_0 (m∘ḡ). The row-masked reading m∘(H_0 ḡ)
// breaks the quadratic residual scaling and is not what the chain rule gives.
inline double maml_taylor_residual(const TaylorSetup& s, const HessianCache* cache = nullptr) {
    std::unique_ptr<HessianCache> owned;
    const auto& h = detail::cache_or(s, cache, owned);
    const auto oracle = maml_oracle_gradient(s).flatten();
    const auto gbar = s.test_loss.grad(s.phi0).flatten();
    const auto m = s.mask.flatten();

    std::vector<double> predicted = gbar;
    if (s.steps > 0) {
        const auto g0 = s.train_loss.grad(s.phi0).flatten();
        detail::axpy(predicted, -s.alpha * s.steps,
                     matvec(h.train_h0, detail::mask_apply(m, gbar)));
        detail::axpy(predicted, -s.alpha * s.steps,
                     matvec(h.test_h0, detail::mask_apply(m, g0)));
    }
    return detail::l2(detail::sub(oracle, predicted));
}

// Both routes to the adapted-Reptile meta gradient, computed independently:
// the α-scaled parameter displacement and the accumulated-gradient sum. With
// the full step included these are (1/α)(φ_0 − φ_{T+1}) and
// m∘Σ g_j + g_FOMAML; the equality is exact, not a Taylor statement.
inline double reptile_identity_check(const TaylorSetup& s, bool include_full_step = true) {
    // Route one: displacement.
    const auto unroll_a = unroll_prompt_tuning(s);
    ParamSet<double> phi_end = unroll_a.phi_end;
    if (include_full_step) {
        const auto g = s.test_loss.grad(phi_end);
        PLAB_CHECK(g.all_finite(), "non-finite test gradient in the full tuning step");
        phi_end.axpy(-s.alpha, g);  // unmasked full-model step
    }
    ParamSet<double> displacement = s.phi0;
    displacement.axpy(-1.0, phi_end);
    displacement.scale_all(1.0 / s.alpha);

    // Route two: gradient accumulation from an independent unroll.
    const auto unroll_b = unroll_prompt_tuning(s);
    ParamSet<double> accumulated = ParamSet<double>::zeros_like(s.phi0);
    for (const auto& g : unroll_b.grad_trace) accumulated.axpy_masked(1.0, g, s.mask);
    if (include_full_step) accumulated.axpy(1.0, s.test_loss.grad(unroll_b.phi_end));

    return max_abs_diff(displacement, accumulated);
}

// Lone-gradient and Hessian-times-gradient pieces of the three meta-gradient
// expansions, plus each prediction rebuilt from those pieces.
struct AvgGradInnerReport {
    std::vector<double> gbar, g0, m_g0;
    std::vector<double> h0_gbar;     // H_0 ḡ (raw product)
    std::vector<double> h0_m_gbar;   // H_0 (m∘ḡ), the term entering g_MAML
    std::vector<double> hbar_m_g0;   // H̄ (m∘g_0)
    std::vector<double> h0_m_g0;     // H_0 (m∘g_0)
    std::vector<double> pred_fomaml, pred_maml, pred_reptile;
};

inline AvgGradInnerReport avg_grad_inner_terms(const TaylorSetup& s,
                                               const HessianCache* cache = nullptr) {
    std::unique_ptr<HessianCache> owned;
    const auto& h = detail::cache_or(s, cache, owned);
    AvgGradInnerReport r;
    r.gbar = s.test_loss.grad(s.phi0).flatten();
    r.g0 = s.train_loss.grad(s.phi0).flatten();
    const auto m = s.mask.flatten();
    r.m_g0 = detail::mask_apply(m, r.g0);
    r.h0_gbar = matvec(h.train_h0, r.gbar);
    r.h0_m_gbar = matvec(h.train_h0, detail::mask_apply(m, r.gbar));
    r.hbar_m_g0 = matvec(h.test_h0, r.m_g0);
    r.h0_m_g0 = matvec(h.train_h0, r.m_g0);

    const double t = static_cast<double>(s.steps);
    r.pred_fomaml = r.gbar;
    detail::axpy(r.pred_fomaml, -s.alpha * t, r.hbar_m_g0);

    r.pred_maml = r.gbar;
    detail::axpy(r.pred_maml, -s.alpha * t, r.h0_m_gbar);
    detail::axpy(r.pred_maml, -s.alpha * t, r.hbar_m_g0);

    r.pred_reptile = r.gbar;
    detail::axpy(r.pred_reptile, t, r.m_g0);
    detail::axpy(r.pred_reptile, -s.alpha * t * (t - 1.0) / 2.0, detail::mask_apply(m, r.h0_m_g0));
    detail::axpy(r.pred_reptile, -s.alpha * t, r.hbar_m_g0);
    return r;
}

// ---------------------------------------------------------------------------
// Tiny smooth test models: tanh networks with cross-entropy, whose nonzero
// third derivatives make the dropped second-order terms visible.
// ---------------------------------------------------------------------------

struct TinyNetOptions {
    int inputs = 2;
    int hidden = 4;
    int classes = 2;
    int train_batch = 6;
    int test_batch = 6;
    double alpha = 0.01;
    int steps = 3;
    double mask_density = 0.5;
    double init_scale = 0.7;
};

namespace detail {

inline ScalarLoss make_tanh_ce_loss(const ParamSet<double>& layout, Tensor<double> x,
                                    std::vector<int> labels) {
    auto g = std::make_shared<Graph<double>>();
    std::vector<Graph<double>::NodeId> params;
    for (const auto& [name, t] : layout) params.push_back(g->param(name, t.shape));
    const auto xin = g->constant(std::move(x));
    const auto hidden = g->tanh(g->add(g->matmul(xin, params[0]), params[1]));
    const auto logits = g->add(g->matmul(hidden, params[2]), params[3]);
    const auto loss = g->scale(g->mean(g->pick(g->log_softmax(logits), std::move(labels))), -1.0);

    ScalarLoss out;
    out.value = [g, loss](const ParamSet<double>& p) {
        return evaluate(*g, p).value[static_cast<std::size_t>(loss)].data[0];
    };
    out.grad = [g, loss](const ParamSet<double>& p) {
        const auto ctx = evaluate(*g, p);
        return backward(*g, ctx, loss);
    };
    return out;
}

}  // namespace detail

// Deterministic setup: random tiny net, two fixed batches for the train/test
// losses, and a random coordinate mask guaranteed to touch the first
// gradient.
inline TaylorSetup make_tanh_setup(std::uint64_t seed, const TinyNetOptions& o = {}) {
    Rng rng(derive_seed(seed, "tanh_setup"));
    TaylorSetup s;
    s.alpha = o.alpha;
    s.steps = o.steps;

    s.phi0.add("w1", Tensor<double>::randn({o.inputs, o.hidden}, rng, o.init_scale));
    s.phi0.add("b1", Tensor<double>::randn({o.hidden}, rng, 0.2));
    s.phi0.add("w2", Tensor<double>::randn({o.hidden, o.classes}, rng, o.init_scale));
    s.phi0.add("b2", Tensor<double>::randn({o.classes}, rng, 0.2));

    const auto make_batch = [&](int n) {
        Tensor<double> x = Tensor<double>::randn({n, o.inputs}, rng);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& l : labels) l = rng.next_int(o.classes);
        return std::make_pair(std::move(x), std::move(labels));
    };
    auto [train_x, train_y] = make_batch(o.train_batch);
    auto [test_x, test_y] = make_batch(o.test_batch);
    s.train_loss = detail::make_tanh_ce_loss(s.phi0, std::move(train_x), std::move(train_y));
    s.test_loss = detail::make_tanh_ce_loss(s.phi0, std::move(test_x), std::move(test_y));

    s.mask = ParamSet<double>::zeros_like(s.phi0);
    for (auto& [name, t] : s.mask)
        for (auto& v : t.data) v = rng.next_double() < o.mask_density ? 1.0 : 0.0;

    // The expansions are vacuous if the mask misses the first gradient
    // entirely; point it at the largest coordinate in that case.
    const auto g0 = s.train_loss.grad(s.phi0).flatten();
    auto m = s.mask.flatten();
    double dot = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) dot += std::abs(m[i] * g0[i]);
    if (dot == 0.0) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < g0.size(); ++i)
            if (std::abs(g0[i]) > std::abs(g0[best])) best = i;
        m[best] = 1.0;
        s.mask.assign_flat(m);
    }
    return s;
}

// Least-squares slope of log(residual) against log(alpha).
inline double fitted_loglog_slope(std::span<const double> alphas, std::span<const double> residuals) {
    PLAB_CHECK(alphas.size() == residuals.size() && alphas.size() >= 2,
               "need matched alpha/residual samples");
    double mx = 0.0, my = 0.0;
    const auto n = static_cast<double>(alphas.size());
    std::vector<double> xs(alphas.size()), ys(alphas.size());
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        PLAB_CHECK(residuals[i] > 0.0, "nonpositive residual in slope fit");
        xs[i] = std::log(alphas[i]);
        ys[i] = std::log(residuals[i]);
        mx += xs[i] / n;
        my += ys[i] / n;
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return num / den;
}

// ---------------------------------------------------------------------------
// Default verification sweep shared by the CLI and the acceptance suite.
// ---------------------------------------------------------------------------

struct VerificationOptions {
    int identity_seeds = 100;
    std::vector<double> identity_alphas{0.1, 0.01};
    std::vector<int> identity_steps{1, 3, 7};
    double identity_tolerance = 1e-9;

    int slope_seeds = 20;
    std::vector<double> slope_alphas{1e-2, 5e-3, 2.5e-3};
    int slope_steps = 3;
    double slope_target = 2.0;
    double slope_tolerance = 0.3;

    int consistency_seeds = 10;
    double t0_tolerance = 1e-6;
};

struct VerificationRow {
    std::string check;
    double alpha = 0.0;
    int steps = 0;
    std::uint64_t seed = 0;
    double value = 0.0;
    bool pass = true;
};

inline std::vector<VerificationRow> run_verification_suite(const VerificationOptions& o = {}) {
    std::vector<VerificationRow> rows;

    for (int seed = 0; seed < o.identity_seeds; ++seed) {
        for (const double alpha : o.identity_alphas) {
            for (const int steps : o.identity_steps) {
                TinyNetOptions net;
                net.alpha = alpha;
                net.steps = steps;
                const auto setup = make_tanh_setup(static_cast<std::uint64_t>(seed), net);
                const double dev = reptile_identity_check(setup, true);
                rows.push_back({"reptile_identity", alpha, steps, static_cast<std::uint64_t>(seed),
                                dev, dev <= o.identity_tolerance});
            }
        }
    }

    const struct {
        const char* name;
        std::function<double(const TaylorSetup&, const HessianCache&)> residual;
    } residual_ops[] = {
        {"gi_taylor",
         [](const TaylorSetup& s, const HessianCache& h) {
             return gi_taylor_residual(s, s.steps - 1, &h);
         }},
        {"fomaml_taylor",
         [](const TaylorSetup& s, const HessianCache& h) { return fomaml_taylor_residual(s, &h); }},
        {"maml_taylor",
         [](const TaylorSetup& s, const HessianCache& h) { return maml_taylor_residual(s, &h); }},
    };

    for (const auto& op : residual_ops) {
        double slope_sum = 0.0;
        for (int seed = 0; seed < o.slope_seeds; ++seed) {
            TinyNetOptions net;
            net.steps = o.slope_steps;
            auto setup = make_tanh_setup(static_cast<std::uint64_t>(seed) + 1000, net);
            const auto cache = make_hessian_cache(setup);
            std::vector<double> residuals;
            for (const double alpha : o.slope_alphas) {
                setup.alpha = alpha;
                const double r = op.residual(setup, cache);
                residuals.push_back(r);
                rows.push_back({std::string(op.name) + "_residual", alpha, o.slope_steps,
                                static_cast<std::uint64_t>(seed), r, is_finite_value(r)});
            }
            const double slope = fitted_loglog_slope(o.slope_alphas, residuals);
            slope_sum += slope;
            rows.push_back({std::string(op.name) + "_slope", 0.0, o.slope_steps,
                            static_cast<std::uint64_t>(seed), slope, is_finite_value(slope)});
        }
        const double mean_slope = slope_sum / static_cast<double>(o.slope_seeds);
        rows.push_back({std::string(op.name) + "_slope_mean", 0.0, o.slope_steps, 0, mean_slope,
                        std::abs(mean_slope - o.slope_target) <= o.slope_tolerance});
    }

    for (int seed = 0; seed < o.consistency_seeds; ++seed) {
        TinyNetOptions net;
        net.steps = 0;
        const auto setup = make_tanh_setup(static_cast<std::uint64_t>(seed) + 2000, net);
        const auto oracle = maml_oracle_gradient(setup);
        const auto direct = setup.test_loss.grad(setup.phi0);
        const double err = max_abs_diff(oracle, direct);
        rows.push_back({"maml_t0_consistency", setup.alpha, 0, static_cast<std::uint64_t>(seed),
                        err, err <= o.t0_tolerance});
    }

    return rows;
}

inline void write_verification_csv(std::ostream& out, const std::vector<VerificationRow>& rows) {
    out << "check,alpha,steps,seed,value,pass\n";
    char buffer[200];
    for (const auto& r : rows) {
        std::snprintf(buffer, sizeof(buffer), "%s,%.10g,%d,%llu,%.12g,%d\n", r.check.c_str(),
                      r.alpha, r.steps, static_cast<unsigned long long>(r.seed), r.value,
                      r.pass ? 1 : 0);
        out << buffer;
    }
}

}  // namespace plab::metaver
