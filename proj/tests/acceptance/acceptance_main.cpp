// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion pins its tolerance in code. An optional list of
// criterion numbers on the command line restricts the run.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "plab/experiment.hpp"
#include "plab/finite_diff.hpp"
#include "plab/metaver.hpp"

using namespace plab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::uint64_t fnv_bytes(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <class T>
std::uint64_t non_prompt_checksum(const ParamSet<T>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, tensor] : params) {
        if (model::detail::is_prompt_param(name)) continue;
        h = fnv_bytes(name.data(), name.size(), h);
        h = fnv_bytes(tensor.data.data(), tensor.data.size() * sizeof(T), h);
    }
    return h;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Composite graph touching every differentiable op at a well-conditioned
// size: embedding, two-head masked attention, residual, layer norm, tanh
// feed-forward, elementwise product, log-softmax readout.
struct CompositeProbe {
    Graph<double> graph;
    ParamSet<double> params;
    Graph<double>::NodeId loss = -1;
};

CompositeProbe make_composite_probe(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "composite"));
    CompositeProbe cp;
    auto& g = cp.graph;

    const int vocab = 5, d = 4, heads = 2, n = 5, classes = 2, ff = 6;
    const auto add_param = [&](const std::string& name, Shape shape, double scale) {
        cp.params.add(name, Tensor<double>::randn(shape, rng, scale));
        return g.param(name, std::move(shape));
    };
    const auto table = add_param("table", {vocab, d}, 0.6);
    const auto wq = add_param("wq", {d, d}, 0.5);
    const auto wk = add_param("wk", {d, d}, 0.5);
    const auto wv = add_param("wv", {d, d}, 0.5);
    const auto wo = add_param("wo", {d, d}, 0.5);
    const auto ln_g = add_param("ln_g", {d}, 0.3);
    const auto ln_b = add_param("ln_b", {d}, 0.3);
    const auto w1 = add_param("w1", {d, ff}, 0.5);
    const auto b1 = add_param("b1", {ff}, 0.2);
    const auto w2 = add_param("w2", {ff, classes}, 0.5);
    const auto b2 = add_param("b2", {classes}, 0.2);

    std::vector<int> ids(n), labels(n);
    for (auto& id : ids) id = rng.next_int(vocab);
    for (auto& l : labels) l = rng.next_int(classes);

    const auto x = g.embed(table, ids);
    const auto q = g.matmul(x, wq);
    const auto k = g.matmul(x, wk);
    const auto v = g.matmul(x, wv);
    Tensor<double> mask_t({n, n});
    mask_t.at(0, n - 1) = -1e30;  // one masked attention slot
    const auto mask = g.constant(std::move(mask_t));
    std::vector<Graph<double>::NodeId> head_out;
    const int dh = d / heads;
    for (int h = 0; h < heads; ++h) {
        const auto qh = g.slice(q, 1, h * dh, (h + 1) * dh);
        const auto kh = g.slice(k, 1, h * dh, (h + 1) * dh);
        const auto vh = g.slice(v, 1, h * dh, (h + 1) * dh);
        const auto scores = g.add(g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(dh)), mask);
        head_out.push_back(g.matmul(g.softmax(scores), vh));
    }
    const auto attn = g.matmul(g.concat(head_out, 1), wo);
    const auto resid = g.add(x, attn);
    const auto normed = g.layer_norm(resid, ln_g, ln_b);
    const auto hidden = g.tanh(g.add(g.matmul(normed, w1), b1));
    const auto gated = g.mul(hidden, hidden);  // elementwise product on the path
    const auto logits = g.add(g.matmul(gated, w2), b2);
    const auto picked = g.pick(g.log_softmax(logits), labels);
    cp.loss = g.scale(g.mean(picked), -1.0);
    return cp;
}

// --------------------------------------------------------------------------
// 1. Gradient correctness: reverse mode vs central finite differences over
//    100 seeded tiny models at 64-bit, max relative error <= 1e-4.
// --------------------------------------------------------------------------
Outcome criterion_gradients() {
    double worst = 0.0;
    int models = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        if (seed % 2 == 0) {
            metaver::TinyNetOptions o;
            o.inputs = 2 + static_cast<int>(seed % 3);
            o.hidden = 3 + static_cast<int>(seed % 5);
            o.classes = 2 + static_cast<int>(seed % 2);
            const auto setup = metaver::make_tanh_setup(seed, o);
            const auto grads = setup.train_loss.grad(setup.phi0);
            const auto fd = finite_difference_gradient<double>(setup.train_loss.value, setup.phi0);
            worst = std::max(worst, max_relative_error(grads, fd));
        } else {
            const auto probe = make_composite_probe(seed);
            PLAB_CHECK(probe.params.total_coords() <= 200, "composite probe exceeds 200 parameters");
            const auto ctx = evaluate(probe.graph, probe.params);
            const auto grads = backward(probe.graph, ctx, probe.loss);
            const auto fd = finite_difference_gradient<double>(
                [&](const ParamSet<double>& p) {
                    const auto c = evaluate(probe.graph, p);
                    return c.value[static_cast<std::size_t>(probe.loss)].data[0];
                },
                probe.params);
            worst = std::max(worst, max_relative_error(grads, fd));
        }
        ++models;
    }
    std::ostringstream detail;
    detail << models << " models, max relative error " << worst << " (tolerance 1e-4)";
    return {worst <= 1e-4, detail.str()};
}

// --------------------------------------------------------------------------
// 2. Exact displacement/accumulation identity for the adapted Reptile
//    gradient over 100 seeded setups, alpha in {0.1, 0.01}, T in {1,3,7}.
// --------------------------------------------------------------------------
Outcome criterion_reptile_identity() {
    double worst = 0.0;
    int checks = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        for (const double alpha : {0.1, 0.01}) {
            for (const int steps : {1, 3, 7}) {
                metaver::TinyNetOptions o;
                o.alpha = alpha;
                o.steps = steps;
                const auto setup = metaver::make_tanh_setup(seed, o);
                worst = std::max(worst, metaver::reptile_identity_check(setup, true));
                ++checks;
            }
        }
    }
    std::ostringstream detail;
    detail << checks << " setups, max coordinate deviation " << worst << " (tolerance 1e-9)";
    return {worst <= 1e-9, detail.str()};
}

// --------------------------------------------------------------------------
// 3. Taylor residuals shrink as alpha^2: fitted log-log slope 2.0 +- 0.3
//    averaged over 20 seeds for each residual operation.
// --------------------------------------------------------------------------
Outcome criterion_taylor_scaling() {
    const std::vector<double> alphas{1e-2, 5e-3, 2.5e-3};
    const int seeds = 20;
    const int steps = 3;
    std::ostringstream detail;
    bool pass = true;
    for (const std::string which : {"gi", "fomaml", "maml"}) {
        double total = 0.0;
        for (int seed = 0; seed < seeds; ++seed) {
            metaver::TinyNetOptions o;
            o.steps = steps;
            auto setup = metaver::make_tanh_setup(static_cast<std::uint64_t>(seed) + 500, o);
            const auto cache = metaver::make_hessian_cache(setup);
            std::vector<double> residuals;
            for (const double alpha : alphas) {
                setup.alpha = alpha;
                if (which == "gi")
                    residuals.push_back(metaver::gi_taylor_residual(setup, steps - 1, &cache));
                else if (which == "fomaml")
                    residuals.push_back(metaver::fomaml_taylor_residual(setup, &cache));
                else
                    residuals.push_back(metaver::maml_taylor_residual(setup, &cache));
            }
            total += metaver::fitted_loglog_slope(alphas, residuals);
        }
        const double mean = total / seeds;
        pass = pass && std::abs(mean - 2.0) <= 0.3;
        detail << which << " slope " << mean << "; ";
    }
    detail << "(target 2.0 +- 0.3, " << seeds << " seeds each)";
    return {pass, detail.str()};
}

// --------------------------------------------------------------------------
// 4. Unrolled-gradient oracle consistency: T=0 equals the plain test
//    gradient within 1e-6; the T=1 two-parameter quadratic matches the hand
//    chain rule ((1-a)^2 p, w) within 1e-8.
// --------------------------------------------------------------------------
Outcome criterion_maml_oracle() {
    double worst_t0 = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        metaver::TinyNetOptions o;
        o.steps = 0;
        const auto setup = metaver::make_tanh_setup(seed + 900, o);
        worst_t0 = std::max(worst_t0, max_abs_diff(metaver::maml_oracle_gradient(setup),
                                                   setup.test_loss.grad(setup.phi0)));
    }

    metaver::TaylorSetup quad;
    quad.phi0.add("p", Tensor<double>::scalar(1.0));
    quad.phi0.add("w", Tensor<double>::scalar(1.0));
    quad.alpha = 0.1;
    quad.steps = 1;
    quad.mask = mask_where(quad.phi0, [](const std::string& n) { return n == "p"; });
    metaver::ScalarLoss quadratic;
    quadratic.value = [](const ParamSet<double>& phi) {
        const double p = phi.at("p").data[0], w = phi.at("w").data[0];
        return 0.5 * p * p + 0.5 * w * w;
    };
    quadratic.grad = [](const ParamSet<double>& phi) {
        auto g = ParamSet<double>::zeros_like(phi);
        g.at("p").data[0] = phi.at("p").data[0];
        g.at("w").data[0] = phi.at("w").data[0];
        return g;
    };
    quad.train_loss = quadratic;
    quad.test_loss = quadratic;
    const auto oracle = metaver::maml_oracle_gradient(quad);
    const double err_p = std::abs(oracle.at("p").data[0] - 0.81);
    const double err_w = std::abs(oracle.at("w").data[0] - 1.0);
    const double worst_quad = std::max(err_p, err_w);

    std::ostringstream detail;
    detail << "T=0 max error " << worst_t0 << " (tolerance 1e-6); quadratic hand value error "
           << worst_quad << " (tolerance 1e-8)";
    return {worst_t0 <= 1e-6 && worst_quad <= 1e-8, detail.str()};
}

// --------------------------------------------------------------------------
// 5. Mask isolation: prompt-only training never perturbs non-prompt blobs
//    (checksum comparison) across MTL-P, inner-loop adaptation, and few-shot
//    tuning.
// --------------------------------------------------------------------------
Outcome criterion_mask_isolation() {
    model::ModelConfig cfg;
    cfg.embed_dim = 16;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.prompt_len = 8;
    cfg.ff_mult = 2;
    cfg.prompt_depth = model::PromptDepth::deep;

    tasks::SuiteSpec suite_spec;
    suite_spec.train_examples = 30;
    suite_spec.fewshot_pool = 30;
    suite_spec.eval_examples = 4;
    suite_spec.mixture.per_dataset_cap = 60;
    const auto suite = tasks::generate_synthetic_suite(11, suite_spec);
    const auto stream = tasks::build_mixture(suite_spec.mixture, suite);

    const auto params = model::init_params<float>(cfg, 3);
    const auto mask = model::prompt_mask(params);
    const auto before = non_prompt_checksum(params);
    const auto loss = regimes::model_loss_fn<float>(cfg);
    bool pass = true;
    std::ostringstream detail;

    {  // prompt-only multi-task training (adafactor path)
        auto p = params;
        regimes::RegimeSpec spec;
        spec.kind = regimes::RegimeKind::mtl_p_only;
        spec.batch_size = 16;
        spec.outer_lr = 0.01;
        regimes::mtl_train<float>(p, mask, std::span(stream.data(), 96), spec, loss);
        pass = pass && non_prompt_checksum(p) == before && !bitwise_equal(p, params);
        detail << "mtl_p_only " << (non_prompt_checksum(p) == before ? "ok" : "CHANGED") << "; ";
    }
    {  // inner-loop adaptation (sgd path)
        auto p = params;
        for (int t = 0; t < 7; ++t) {
            const auto lg = loss(p, std::span(stream.data() + 16 * t, 16));
            optim::sgd_step<float>({p, mask, optim::UpdateScope::prompt_only}, lg.grads, 0.1f);
        }
        pass = pass && non_prompt_checksum(p) == before && !bitwise_equal(p, params);
        detail << "inner_loop " << (non_prompt_checksum(p) == before ? "ok" : "CHANGED") << "; ";
    }
    {  // few-shot prompt tuning
        eval::FewShotOptions opts;
        opts.shots = 16;
        opts.epochs = 25;
        const auto tuned = eval::few_shot_prompt_tune<float>(cfg, params, suite.heldout[0],
                                                             suite_spec.mixture, opts, 5);
        pass = pass && non_prompt_checksum(tuned) == before && !bitwise_equal(tuned, params);
        detail << "few_shot " << (non_prompt_checksum(tuned) == before ? "ok" : "CHANGED");
    }
    return {pass, detail.str()};
}

// --------------------------------------------------------------------------
// 6. Data accounting: one meta step consumes exactly T+1 stream batches per
//    replica; one MTL step consumes exactly one batch.
// --------------------------------------------------------------------------
Outcome criterion_data_accounting() {
    ParamSet<double> phi;
    phi.add("p", Tensor<double>::scalar(1.0));
    phi.add("w", Tensor<double>::scalar(1.0));
    const auto mask = mask_where(phi, [](const std::string& n) { return n == "p"; });

    int calls = 0;
    const regimes::BatchLossFn<double> counting_loss =
        [&calls](const ParamSet<double>& p, std::span<const TemplatizedExample>) {
            ++calls;
            model::LossGrad<double> out;
            out.loss = 0.5 * p.at("p").data[0] * p.at("p").data[0];
            out.grads = ParamSet<double>::zeros_like(p);
            out.grads.at("p").data[0] = p.at("p").data[0];
            return out;
        };
    const auto noop = [](ParamSet<double>&, const ParamSet<double>&) {};

    bool pass = true;
    std::ostringstream detail;
    for (const int steps : {1, 3, 7}) {
        regimes::MetaConfig cfg;
        cfg.inner_steps = steps;
        cfg.meta_batch = 1;
        regimes::MetaBatch mb;
        mb.support.resize(static_cast<std::size_t>(steps));
        const std::vector<regimes::MetaBatch> replicas{mb};
        calls = 0;
        regimes::fomaml_step<double>(phi, mask, replicas, cfg, counting_loss, noop);
        pass = pass && calls == steps + 1;
        detail << "fomaml T=" << steps << " used " << calls << "; ";
    }
    {  // one MTL step, one batch
        regimes::RegimeSpec spec;
        spec.kind = regimes::RegimeKind::mtl_tp;
        spec.batch_size = 4;
        spec.optimizer = optim::OptimizerKind::sgd;
        spec.outer_lr = 0.01;
        std::vector<TemplatizedExample> stream(4);  // exactly one batch
        calls = 0;
        regimes::continued_pretrain<double>(phi, mask, stream, spec, counting_loss);
        pass = pass && calls == 1;
        detail << "mtl step used " << calls;
    }
    return {pass, detail.str()};
}

// --------------------------------------------------------------------------
// 7. Metric fidelity: the ARG computation matches a brute-force
//    reimplementation on 1000 random vectors, and uniformly random
//    predictions on the synthetic suite land within +-3 of 0 ARG.
// --------------------------------------------------------------------------
Outcome criterion_metric_fidelity() {
    Rng rng(424242);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + rng.next_int(40);
        std::vector<double> accs(static_cast<std::size_t>(n)), bases(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            bases[static_cast<std::size_t>(i)] = 0.1 + 0.8 * rng.next_double();
            accs[static_cast<std::size_t>(i)] = rng.next_double();
        }
        // reference: literal definition, one template at a time
        double reference = 0.0;
        for (int i = 0; i < n; ++i)
            reference += (accs[static_cast<std::size_t>(i)] - bases[static_cast<std::size_t>(i)]) /
                         bases[static_cast<std::size_t>(i)];
        reference = 100.0 * reference / n;
        worst = std::max(worst, std::abs(eval::compute_arg(accs, bases) - reference));
    }

    const exp::ExperimentConfig c;  // default desk-scale suite
    const auto suite = exp::make_suite(c);
    Rng pred_rng(derive_seed(7, "random_predictions"));
    eval::PredictionSet random_preds;
    for (const auto& d : suite.heldout) {
        for (const auto& tpl : d.templates) {
            eval::TemplatePredictions tp;
            tp.dataset_id = d.dataset_id;
            tp.template_id = tpl.template_id;
            for (const auto& ex : tasks::templatize_all(d.eval_raw, tpl, c.suite.mixture)) {
                eval::ExamplePrediction p;
                p.gold = ex.gold;
                p.n_choices = static_cast<int>(ex.choices.size());
                p.predicted = pred_rng.next_int(p.n_choices);
                tp.examples.push_back(p);
            }
            random_preds.push_back(std::move(tp));
        }
    }
    const double random_arg = eval::report_from_predictions(random_preds).arg;

    std::ostringstream detail;
    detail << "brute-force max |diff| " << worst << " (tolerance 1e-9); random-prediction ARG "
           << random_arg << " (tolerance +-3)";
    return {worst <= 1e-9 && std::abs(random_arg) <= 3.0, detail.str()};
}

// --------------------------------------------------------------------------
// 8. Directional pipeline property over seeds {1,2,3}: (a) continued
//    pretraining beats no pretraining on held-out zero-shot ARG in >=2 of 3
//    seeds; (b) deep 16-shot tuning reaches at least its own zero-shot ARG
//    in >=2 of 3 seeds.
// --------------------------------------------------------------------------
Outcome criterion_directional() {
    int wins_a = 0, wins_b = 0;
    std::ostringstream detail;
    for (const std::uint64_t seed : {1, 2, 3}) {
        exp::ExperimentConfig base;  // desk-scale defaults
        base.seed = seed;

        const auto suite = exp::make_suite(base);
        tasks::MixtureSpec mix = base.suite.mixture;
        mix.epoch_seed = derive_seed(seed, "epoch_order");

        // Untrained promptless baseline.
        model::ModelConfig none_cfg = base.model;
        none_cfg.prompt_depth = model::PromptDepth::none;
        const auto baseline_params = model::init_params<float>(none_cfg, derive_seed(seed, "init"));
        const double baseline_arg =
            eval::zero_shot_eval<float>(none_cfg, baseline_params, suite.heldout, mix).arg;

        // Shallow multi-task training with the trainable prompt.
        auto shallow_cfg = base;
        shallow_cfg.model.prompt_depth = model::PromptDepth::shallow;
        auto shallow_params = model::init_params<float>(shallow_cfg.model, derive_seed(seed, "init"));
        const auto shallow_mask = model::prompt_mask(shallow_params);
        const auto stream = tasks::build_mixture(mix, suite);
        regimes::continued_pretrain<float>(shallow_params, shallow_mask, stream, shallow_cfg.regime,
                                           regimes::model_loss_fn<float>(shallow_cfg.model));
        const double shallow_arg =
            eval::zero_shot_eval<float>(shallow_cfg.model, shallow_params, suite.heldout, mix).arg;

        // Deep variant: zero-shot, then 16-shot prompt tuning per dataset.
        auto deep_cfg = base;
        deep_cfg.model.prompt_depth = model::PromptDepth::deep;
        auto deep_params = model::init_params<float>(deep_cfg.model, derive_seed(seed, "init"));
        const auto deep_mask = model::prompt_mask(deep_params);
        regimes::continued_pretrain<float>(deep_params, deep_mask, stream, deep_cfg.regime,
                                           regimes::model_loss_fn<float>(deep_cfg.model));
        const double deep_zero =
            eval::zero_shot_eval<float>(deep_cfg.model, deep_params, suite.heldout, mix).arg;
        const double deep_few = exp::few_shot_eval<float>(deep_cfg, deep_params, suite).arg;

        if (shallow_arg > baseline_arg) ++wins_a;
        if (deep_few >= deep_zero) ++wins_b;
        detail << "seed " << seed << ": base " << baseline_arg << ", mtl_tp " << shallow_arg
               << ", deep0 " << deep_zero << ", deep16 " << deep_few << "; ";
    }
    detail << "(a) " << wins_a << "/3, (b) " << wins_b << "/3 (need >=2 each)";
    return {wins_a >= 2 && wins_b >= 2, detail.str()};
}

// --------------------------------------------------------------------------
// 9. Determinism: two full pipeline runs with the same config and seed
//    produce bit-identical checkpoints and metric CSVs.
// --------------------------------------------------------------------------
Outcome criterion_determinism() {
    const fs::path dir_a = fs::temp_directory_path() / "plab_accept_det_a";
    const fs::path dir_b = fs::temp_directory_path() / "plab_accept_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    const auto make_config = [](const std::string& out) {
        exp::ExperimentConfig c;
        c.model.embed_dim = 16;
        c.model.num_layers = 1;
        c.model.num_heads = 2;
        c.model.prompt_len = 8;
        c.model.prompt_depth = model::PromptDepth::deep;
        c.suite.train_examples = 100;
        c.suite.fewshot_pool = 32;
        c.suite.eval_examples = 40;
        c.suite.mixture.per_dataset_cap = 200;
        c.eval.shots = 16;
        c.eval.epochs = 10;
        c.seed = 13;
        c.out_dir = out;
        return c;
    };
    exp::run_experiment(make_config(dir_a.string()));
    exp::run_experiment(make_config(dir_b.string()));

    bool pass = true;
    std::ostringstream detail;
    for (const char* file : {"checkpoint.plab", "zero_shot.csv", "few_shot.csv",
                             "training_log.csv"}) {
        const bool same = slurp(dir_a / file) == slurp(dir_b / file) && !slurp(dir_a / file).empty();
        pass = pass && same;
        detail << file << (same ? " ok; " : " DIFFERS; ");
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    return {pass, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient correctness vs finite differences", criterion_gradients},
        {2, "adapted-Reptile exact identity", criterion_reptile_identity},
        {3, "Taylor residual alpha^2 scaling", criterion_taylor_scaling},
        {4, "unrolled oracle consistency", criterion_maml_oracle},
        {5, "prompt-only mask isolation", criterion_mask_isolation},
        {6, "stream batch accounting", criterion_data_accounting},
        {7, "ARG metric fidelity", criterion_metric_fidelity},
        {8, "directional pipeline property", criterion_directional},
        {9, "full-run determinism", criterion_determinism},
    };

    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& criterion : criteria) {
        if (!selected.empty() && !selected.count(criterion.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = criterion.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!outcome.pass) ++failures;
        std::printf("[%s] criterion %d: %s — %s (%.1fs)\n", outcome.pass ? "PASS" : "FAIL",
                    criterion.id, criterion.name, outcome.detail.c_str(), seconds);
        std::fflush(stdout);
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
