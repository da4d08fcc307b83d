// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "plab/model.hpp"
#include "plab/optim.hpp"
#include "plab/parallel.hpp"
#include "plab/rng.hpp"
#include "plab/tasks.hpp"

namespace plab::eval {

// 100 * mean over templates of (accuracy - baseline) / baseline.
inline double compute_arg(std::span<const double> accuracies, std::span<const double> baselines) {
    PLAB_CHECK(accuracies.size() == baselines.size(), "accuracy/baseline length mismatch: ",
               accuracies.size(), " vs ", baselines.size());
    PLAB_CHECK(!accuracies.empty(), "no templates to aggregate");
    double total = 0.0;
    for (std::size_t i = 0; i < accuracies.size(); ++i) {
        PLAB_CHECK(baselines[i] > 0.0, "baseline must be positive, got ", baselines[i],
                   " at template ", i);
        total += (accuracies[i] - baselines[i]) / baselines[i];
    }
    return 100.0 * total / static_cast<double>(accuracies.size());
}

struct TemplateRow {
    std::string dataset_id;
    std::string template_id;
    double accuracy = 0.0;
    double baseline = 0.0;  // mean over examples of 1/#choices
    int n_examples = 0;
};

struct ArgReport {
    std::vector<TemplateRow> rows;
    double arg = 0.0;
    int n_templates = 0;
};

inline ArgReport finalize_report(std::vector<TemplateRow> rows) {
    ArgReport report;
    report.rows = std::move(rows);
    report.n_templates = static_cast<int>(report.rows.size());
    std::vector<double> accs, bases;
    for (const auto& r : report.rows) {
        accs.push_back(r.accuracy);
        bases.push_back(r.baseline);
    }
    report.arg = compute_arg(accs, bases);
    return report;
}

// Per-example outcome kept for bootstrap resampling.
struct ExamplePrediction {
    int gold = 0;
    int predicted = 0;
    int n_choices = 2;
};

struct TemplatePredictions {
    std::string dataset_id;
    std::string template_id;
    std::vector<ExamplePrediction> examples;
};

using PredictionSet = std::vector<TemplatePredictions>;

inline TemplateRow summarize(const TemplatePredictions& preds) {
    PLAB_CHECK(!preds.examples.empty(), "template '", preds.template_id, "' has no examples");
    TemplateRow row;
    row.dataset_id = preds.dataset_id;
    row.template_id = preds.template_id;
    row.n_examples = static_cast<int>(preds.examples.size());
    double correct = 0.0, baseline = 0.0;
    for (const auto& e : preds.examples) {
        if (e.predicted == e.gold) correct += 1.0;
        baseline += 1.0 / static_cast<double>(e.n_choices);
    }
    row.accuracy = correct / static_cast<double>(preds.examples.size());
    row.baseline = baseline / static_cast<double>(preds.examples.size());
    return row;
}

inline ArgReport report_from_predictions(const PredictionSet& preds) {
    std::vector<TemplateRow> rows;
    rows.reserve(preds.size());
    for (const auto& p : preds) rows.push_back(summarize(p));
    return finalize_report(std::move(rows));
}

// Runs predict() over every template of every held-out dataset. Templates
// are independent, so they evaluate in parallel.
template <class T>
PredictionSet predict_heldout(const model::ModelConfig& cfg, const ParamSet<T>& params,
                              std::span<const tasks::Dataset> heldout,
                              const tasks::MixtureSpec& mix) {
    struct Job {
        const tasks::Dataset* dataset;
        const tasks::Template* tpl;
    };
    std::vector<Job> jobs;
    for (const auto& d : heldout) {
        PLAB_CHECK(!d.eval_raw.empty(), "held-out dataset '", d.dataset_id, "' has no eval split");
        for (const auto& tpl : d.templates) jobs.push_back({&d, &tpl});
    }
    PredictionSet out(jobs.size());
    parallel_for(static_cast<int>(jobs.size()), [&](int j) {
        const auto& job = jobs[static_cast<std::size_t>(j)];
        TemplatePredictions preds;
        preds.dataset_id = job.dataset->dataset_id;
        preds.template_id = job.tpl->template_id;
        for (const auto& ex : tasks::templatize_all(job.dataset->eval_raw, *job.tpl, mix)) {
            ExamplePrediction p;
            p.gold = ex.gold;
            p.n_choices = static_cast<int>(ex.choices.size());
            p.predicted = model::predict(cfg, params, ex);
            preds.examples.push_back(p);
        }
        out[static_cast<std::size_t>(j)] = std::move(preds);
    });
    return out;
}

template <class T>
ArgReport zero_shot_eval(const model::ModelConfig& cfg, const ParamSet<T>& params,
                         std::span<const tasks::Dataset> heldout, const tasks::MixtureSpec& mix) {
    return report_from_predictions(predict_heldout(cfg, params, heldout, mix));
}

struct FewShotOptions {
    int shots = 16;
    int epochs = 100;
    optim::AdafactorOptions optimizer;
    bool clip_updates = true;
};

// Prompt-only finetuning on one fixed batch of `shots` examples drawn
// uniformly from the dataset's few-shot pool (no label balancing); the same
// batch is reused for every epoch. Transformer weights never move.
template <class T>
ParamSet<T> few_shot_prompt_tune(const model::ModelConfig& cfg, const ParamSet<T>& params,
                                 const tasks::Dataset& dataset, const tasks::MixtureSpec& mix,
                                 const FewShotOptions& opts, std::uint64_t seed) {
    PLAB_CHECK(model::has_prompt(params),
               "few-shot prompt tuning needs prompt parameters, none present");
    PLAB_CHECK(opts.shots >= 1, "shots must be >= 1");

    std::vector<TemplatizedExample> pool;
    for (const auto& tpl : dataset.templates) {
        const auto rendered = tasks::templatize_all(dataset.fewshot_raw, tpl, mix);
        pool.insert(pool.end(), rendered.begin(), rendered.end());
    }
    PLAB_CHECK(static_cast<int>(pool.size()) >= opts.shots, "dataset '", dataset.dataset_id,
               "' few-shot pool has ", pool.size(), " examples, needs ", opts.shots);

    Rng rng(derive_seed(seed, "fewshot:" + dataset.dataset_id));
    rng.shuffle(pool);
    const std::vector<TemplatizedExample> batch(pool.begin(), pool.begin() + opts.shots);

    ParamSet<T> tuned = params;
    const auto mask = model::prompt_mask(tuned);
    optim::Adafactor<T> opt(tuned, opts.optimizer);
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        auto lg = model::batch_loss_and_grads<T>(cfg, tuned, batch);
        if (opts.clip_updates) optim::clip_to_unit_norm(lg.grads);
        opt.step({tuned, mask, optim::UpdateScope::prompt_only}, lg.grads);
    }
    return tuned;
}

struct BootstrapResult {
    int iterations = 0;
    std::vector<std::pair<double, double>> arg_pairs;  // (model_a, model_b) per iteration
    double p_value = 1.0;  // one-sided, claim: a better than b; ties count against a
    std::string winner;    // by full-sample ARG
    std::string resampling = "within_template";
};

// Paired bootstrap: each iteration resamples example indices with
// replacement inside every template (sample sizes preserved), recomputes
// both models' ARG on the common resample, and compares.
inline BootstrapResult bootstrap_compare(const PredictionSet& model_a, const PredictionSet& model_b,
                                         int iterations = 1000, std::uint64_t seed = 0) {
    PLAB_CHECK(iterations >= 1, "need at least one bootstrap iteration");
    PLAB_CHECK(model_a.size() == model_b.size(), "prediction sets cover different template counts");
    for (std::size_t t = 0; t < model_a.size(); ++t) {
        const auto& a = model_a[t];
        const auto& b = model_b[t];
        PLAB_CHECK(a.template_id == b.template_id, "prediction sets disagree on template order: '",
                   a.template_id, "' vs '", b.template_id, "'");
        PLAB_CHECK(a.examples.size() == b.examples.size(), "template '", a.template_id,
                   "' has mismatched example counts");
        for (std::size_t i = 0; i < a.examples.size(); ++i)
            PLAB_CHECK(a.examples[i].gold == b.examples[i].gold &&
                           a.examples[i].n_choices == b.examples[i].n_choices,
                       "template '", a.template_id, "' example ", i,
                       " differs between prediction sets");
    }

    BootstrapResult result;
    result.iterations = iterations;
    result.arg_pairs.resize(static_cast<std::size_t>(iterations));
    parallel_for(iterations, [&](int it) {
        Rng rng(derive_seed(seed, "bootstrap:" + std::to_string(it)));
        std::vector<double> accs_a, accs_b, bases;
        for (std::size_t t = 0; t < model_a.size(); ++t) {
            const auto& a = model_a[t];
            const auto& b = model_b[t];
            const int n = static_cast<int>(a.examples.size());
            double correct_a = 0.0, correct_b = 0.0, base = 0.0;
            for (int i = 0; i < n; ++i) {
                const int pick = rng.next_int(n);
                const auto& ea = a.examples[static_cast<std::size_t>(pick)];
                const auto& eb = b.examples[static_cast<std::size_t>(pick)];
                if (ea.predicted == ea.gold) correct_a += 1.0;
                if (eb.predicted == eb.gold) correct_b += 1.0;
                base += 1.0 / static_cast<double>(ea.n_choices);
            }
            accs_a.push_back(correct_a / n);
            accs_b.push_back(correct_b / n);
            bases.push_back(base / n);
        }
        result.arg_pairs[static_cast<std::size_t>(it)] = {compute_arg(accs_a, bases),
                                                          compute_arg(accs_b, bases)};
    });

    int a_not_better = 0;
    for (const auto& [arg_a, arg_b] : result.arg_pairs)
        if (arg_a <= arg_b) ++a_not_better;
    result.p_value = static_cast<double>(a_not_better) / static_cast<double>(iterations);

    const double full_a = report_from_predictions(model_a).arg;
    const double full_b = report_from_predictions(model_b).arg;
    result.winner = full_a > full_b ? "model_a" : (full_b > full_a ? "model_b" : "tie");
    return result;
}

// CSV layout: one row per template plus a summary row; the trailing column
// holds the per-template relative gain and the overall ARG on the summary.
inline void write_arg_report_csv(std::ostream& out, const ArgReport& report, int shots) {
    out << "dataset,template,shots,accuracy,baseline,arg\n";
    char buffer[240];
    for (const auto& r : report.rows) {
        const double gain = 100.0 * (r.accuracy - r.baseline) / r.baseline;
        std::snprintf(buffer, sizeof(buffer), "%s,%s,%d,%.10g,%.10g,%.10g\n", r.dataset_id.c_str(),
                      r.template_id.c_str(), shots, r.accuracy, r.baseline, gain);
        out << buffer;
    }
    std::snprintf(buffer, sizeof(buffer), "ALL,mean_over_%d_templates,%d,,,%.10g\n",
                  report.n_templates, shots, report.arg);
    out << buffer;
}

}  // namespace plab::eval
