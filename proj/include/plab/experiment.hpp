// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plab/checkpoint.hpp"
#include "plab/eval.hpp"
#include "plab/model.hpp"
#include "plab/regimes.hpp"
#include "plab/tasks.hpp"

namespace plab::exp {

using nlohmann::json;

struct EvalSpec {
    int shots = 16;
    int epochs = 100;
    int bootstrap_iterations = 1000;
    bool run_zeroshot = true;
    bool run_fewshot = true;
};

// Everything a run needs; a run is reproducible from this plus nothing else.
struct ExperimentConfig {
    model::ModelConfig model;
    bool pretrain = true;  // false evaluates the freshly initialized model
    regimes::RegimeSpec regime;
    tasks::SuiteSpec suite;
    EvalSpec eval;
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";
    std::string precision = "f32";

    ExperimentConfig() {
        model.prompt_depth = model::PromptDepth::shallow;
        regime.kind = regimes::RegimeKind::mtl_tp;
    }
};

// ---------------------------------------------------------------------------
// Config (de)serialization. Missing keys fall back to defaults so configs
// stay terse; unknown keys are ignored.
// ---------------------------------------------------------------------------

inline std::string prompt_depth_str(model::PromptDepth d) { return model::prompt_depth_name(d); }

inline model::PromptDepth prompt_depth_from(const std::string& s) {
    if (s == "none") return model::PromptDepth::none;
    if (s == "shallow") return model::PromptDepth::shallow;
    if (s == "deep") return model::PromptDepth::deep;
    PLAB_CHECK(false, "unknown prompt depth '", s, "' (expected none|shallow|deep)");
    return model::PromptDepth::none;
}

inline regimes::RegimeKind regime_from(const std::string& s) {
    for (const auto k : {regimes::RegimeKind::mtl_t_only, regimes::RegimeKind::mtl_p_only,
                         regimes::RegimeKind::mtl_tp, regimes::RegimeKind::fomaml,
                         regimes::RegimeKind::reptile})
        if (s == regimes::regime_name(k)) return k;
    PLAB_CHECK(false, "unknown regime '", s, "'");
    return regimes::RegimeKind::mtl_tp;
}

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["model"] = {{"vocab_size", c.model.vocab_size},
                  {"embed_dim", c.model.embed_dim},
                  {"num_layers", c.model.num_layers},
                  {"num_heads", c.model.num_heads},
                  {"max_source_len", c.model.max_source_len},
                  {"max_target_len", c.model.max_target_len},
                  {"prompt_len", c.model.prompt_len},
                  {"ff_mult", c.model.ff_mult},
                  {"prompt_depth", prompt_depth_str(c.model.prompt_depth)},
                  {"score_norm", c.model.score_norm == model::ScoreNorm::mean_per_token ? "mean" : "sum"}};
    j["pretrain"] = c.pretrain;
    j["regime"] = {{"kind", regimes::regime_name(c.regime.kind)},
                   {"batch_size", c.regime.batch_size},
                   {"optimizer", optim::optimizer_name(c.regime.optimizer)},
                   {"outer_lr", c.regime.outer_lr},
                   {"clip_updates", c.regime.clip_updates},
                   {"inner_lr", c.regime.meta.inner_lr},
                   {"inner_steps", c.regime.meta.inner_steps},
                   {"meta_batch", c.regime.meta.meta_batch}};
    j["suite"] = {{"train_groups", c.suite.train_groups},
                  {"heldout_groups", c.suite.heldout_groups},
                  {"datasets_per_group", c.suite.datasets_per_group},
                  {"train_examples", c.suite.train_examples},
                  {"fewshot_pool", c.suite.fewshot_pool},
                  {"eval_examples", c.suite.eval_examples},
                  {"per_dataset_cap", c.suite.mixture.per_dataset_cap},
                  {"source_limit", c.suite.mixture.source_limit},
                  {"target_limit", c.suite.mixture.target_limit}};
    j["eval"] = {{"shots", c.eval.shots},
                 {"epochs", c.eval.epochs},
                 {"bootstrap_iterations", c.eval.bootstrap_iterations},
                 {"run_zeroshot", c.eval.run_zeroshot},
                 {"run_fewshot", c.eval.run_fewshot}};
    j["seed"] = c.seed;
    j["out"] = c.out_dir;
    j["precision"] = c.precision;
    return j;
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model.vocab_size = m.value("vocab_size", c.model.vocab_size);
        c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
        c.model.num_layers = m.value("num_layers", c.model.num_layers);
        c.model.num_heads = m.value("num_heads", c.model.num_heads);
        c.model.max_source_len = m.value("max_source_len", c.model.max_source_len);
        c.model.max_target_len = m.value("max_target_len", c.model.max_target_len);
        c.model.prompt_len = m.value("prompt_len", c.model.prompt_len);
        c.model.ff_mult = m.value("ff_mult", c.model.ff_mult);
        c.model.prompt_depth = prompt_depth_from(m.value("prompt_depth", std::string("shallow")));
        c.model.score_norm = m.value("score_norm", std::string("mean")) == "sum"
                                 ? model::ScoreNorm::sum
                                 : model::ScoreNorm::mean_per_token;
    }
    c.pretrain = j.value("pretrain", true);
    if (j.contains("regime")) {
        const auto& r = j["regime"];
        c.regime.kind = regime_from(r.value("kind", std::string("mtl_tp")));
        c.regime.batch_size = r.value("batch_size", c.regime.batch_size);
        c.regime.optimizer = r.value("optimizer", std::string("adafactor")) == "sgd"
                                 ? optim::OptimizerKind::sgd
                                 : optim::OptimizerKind::adafactor;
        c.regime.outer_lr = r.value("outer_lr", c.regime.outer_lr);
        c.regime.clip_updates = r.value("clip_updates", true);
        c.regime.meta.inner_lr = r.value("inner_lr", c.regime.meta.inner_lr);
        c.regime.meta.inner_steps = r.value("inner_steps", c.regime.meta.inner_steps);
        c.regime.meta.meta_batch = r.value("meta_batch", c.regime.meta.meta_batch);
    }
    if (j.contains("suite")) {
        const auto& s = j["suite"];
        c.suite.train_groups = s.value("train_groups", c.suite.train_groups);
        c.suite.heldout_groups = s.value("heldout_groups", c.suite.heldout_groups);
        c.suite.datasets_per_group = s.value("datasets_per_group", c.suite.datasets_per_group);
        c.suite.train_examples = s.value("train_examples", c.suite.train_examples);
        c.suite.fewshot_pool = s.value("fewshot_pool", c.suite.fewshot_pool);
        c.suite.eval_examples = s.value("eval_examples", c.suite.eval_examples);
        c.suite.mixture.per_dataset_cap = s.value("per_dataset_cap", c.suite.mixture.per_dataset_cap);
        c.suite.mixture.source_limit = s.value("source_limit", c.suite.mixture.source_limit);
        c.suite.mixture.target_limit = s.value("target_limit", c.suite.mixture.target_limit);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        c.eval.shots = e.value("shots", c.eval.shots);
        c.eval.epochs = e.value("epochs", c.eval.epochs);
        c.eval.bootstrap_iterations = e.value("bootstrap_iterations", c.eval.bootstrap_iterations);
        c.eval.run_zeroshot = e.value("run_zeroshot", c.eval.run_zeroshot);
        c.eval.run_fewshot = e.value("run_fewshot", c.eval.run_fewshot);
    }
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out", c.out_dir);
    c.precision = j.value("precision", c.precision);
    PLAB_CHECK(c.precision == "f32" || c.precision == "f64", "precision must be f32 or f64, got '",
               c.precision, "'");
    return c;
}

// Dotted-key override, e.g. "model.embed_dim=16" or "regime.kind=fomaml".
inline void apply_override(json& j, const std::string& dotted, const std::string& value) {
    json* node = &j;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
        PLAB_CHECK(!key.empty(), "bad override key '", dotted, "'");
        if (dot == std::string::npos) {
            try {
                (*node)[key] = json::parse(value);
            } catch (const json::exception&) {
                (*node)[key] = value;  // bare strings
            }
            return;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

inline std::string model_digest(const model::ModelConfig& m) {
    ExperimentConfig c;
    c.model = m;
    return ckpt::digest_hex(ckpt::digest_string(to_json(c)["model"].dump()));
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct ExperimentResult {
    eval::ArgReport zero_shot;
    std::optional<eval::ArgReport> few_shot;
    std::string checkpoint_path;
    regimes::TrainLog train_log;
};

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    PLAB_CHECK(out.good(), "cannot open '", path.string(), "' for writing");
    out << text;
}

struct StageTimer {
    std::vector<std::pair<std::string, double>> stages;
    std::chrono::steady_clock::time_point mark = std::chrono::steady_clock::now();

    void done(const std::string& name) {
        const auto now = std::chrono::steady_clock::now();
        stages.emplace_back(name, std::chrono::duration<double>(now - mark).count());
        mark = now;
    }
};

template <class Fn>
auto run_stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        PLAB_CHECK(false, "stage ", name, ": ", e.what());
        throw;  // unreachable
    }
}

inline void write_suite_files(const std::filesystem::path& dir, const tasks::Suite& suite,
                              const tasks::MixtureSpec& mix) {
    std::filesystem::create_directories(dir);
    for (const auto& d : suite.train)
        tasks::write_examples_jsonl((dir / ("train_" + d.dataset_id + ".jsonl")).string(), d.train);
    for (const auto& d : suite.heldout) {
        std::vector<TemplatizedExample> fewshot, evals;
        for (const auto& tpl : d.templates) {
            const auto f = tasks::templatize_all(d.fewshot_raw, tpl, mix);
            fewshot.insert(fewshot.end(), f.begin(), f.end());
            const auto e = tasks::templatize_all(d.eval_raw, tpl, mix);
            evals.insert(evals.end(), e.begin(), e.end());
        }
        tasks::write_examples_jsonl((dir / ("heldout_" + d.dataset_id + "_fewshot.jsonl")).string(),
                                    fewshot);
        tasks::write_examples_jsonl((dir / ("heldout_" + d.dataset_id + "_eval.jsonl")).string(),
                                    evals);
    }
}

}  // namespace detail

inline tasks::Suite make_suite(const ExperimentConfig& c) {
    tasks::SuiteSpec spec = c.suite;
    spec.mixture.epoch_seed = derive_seed(c.seed, "epoch_order");
    return tasks::generate_synthetic_suite(derive_seed(c.seed, "suite"), spec);
}

// Few-shot protocol: tune the prompt per held-out dataset from the same
// starting parameters, evaluate that dataset's templates with the tuned
// prompt, and aggregate one report over all held-out templates.
template <class T>
eval::ArgReport few_shot_eval(const ExperimentConfig& c, const ParamSet<T>& params,
                              const tasks::Suite& suite) {
    eval::FewShotOptions opts;
    opts.shots = c.eval.shots;
    opts.epochs = c.eval.epochs;
    eval::PredictionSet all;
    for (const auto& d : suite.heldout) {
        const auto tuned = eval::few_shot_prompt_tune<T>(c.model, params, d, c.suite.mixture, opts,
                                                         derive_seed(c.seed, "fewshot"));
        const std::vector<tasks::Dataset> just_this{d};
        auto preds = eval::predict_heldout<T>(c.model, tuned, just_this, c.suite.mixture);
        for (auto& p : preds) all.push_back(std::move(p));
    }
    return eval::report_from_predictions(all);
}

template <class T>
ExperimentResult run_experiment_typed(const ExperimentConfig& c) {
    namespace fs = std::filesystem;
    c.model.validate();
    const fs::path out(c.out_dir);
    fs::create_directories(out);
    detail::write_text_file(out / "config.json", to_json(c).dump(2) + "\n");

    detail::StageTimer timer;

    // Suite generation.
    const auto suite = detail::run_stage("generate", [&] { return make_suite(c); });
    detail::write_suite_files(out / "suite", suite, c.suite.mixture);
    timer.done("generate");

    // Continued pretraining (or the untrained baseline).
    auto params = model::init_params<T>(c.model, derive_seed(c.seed, "init"));
    const auto mask = model::prompt_mask(params);
    ExperimentResult result;
    if (c.pretrain) {
        tasks::MixtureSpec mix = c.suite.mixture;
        mix.epoch_seed = derive_seed(c.seed, "epoch_order");
        result.train_log = detail::run_stage("pretrain", [&] {
            const auto stream = tasks::build_mixture(mix, suite);
            return regimes::continued_pretrain<T>(params, mask, stream, c.regime,
                                                  regimes::model_loss_fn<T>(c.model));
        });
    }
    {
        std::ofstream log_out(out / "training_log.csv", std::ios::binary);
        regimes::write_train_log_csv(log_out, result.train_log);
    }
    timer.done("pretrain");

    // Checkpoint.
    result.checkpoint_path = (out / "checkpoint.plab").string();
    detail::run_stage("checkpoint", [&] {
        ckpt::save_params(result.checkpoint_path, params);
        ckpt::Sidecar side;
        side.precision = c.precision;
        side.model_digest = model_digest(c.model);
        side.root_seed = c.seed;
        side.created_unix =
            std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count();
        ckpt::write_sidecar((out / "checkpoint.json").string(), side);
        return 0;
    });
    timer.done("checkpoint");

    // Zero-shot evaluation.
    if (c.eval.run_zeroshot) {
        result.zero_shot = detail::run_stage("eval_zero", [&] {
            return eval::zero_shot_eval<T>(c.model, params, suite.heldout, c.suite.mixture);
        });
        std::ofstream csv(out / "zero_shot.csv", std::ios::binary);
        eval::write_arg_report_csv(csv, result.zero_shot, 0);
        timer.done("eval_zero");
    }

    // Few-shot evaluation (prompted models only).
    if (c.eval.run_fewshot && c.eval.shots > 0 && model::has_prompt(params)) {
        result.few_shot = detail::run_stage("eval_fewshot",
                                            [&] { return few_shot_eval<T>(c, params, suite); });
        std::ofstream csv(out / "few_shot.csv", std::ios::binary);
        eval::write_arg_report_csv(csv, *result.few_shot, c.eval.shots);
        timer.done("eval_fewshot");
    }

    // Wall-clock per stage; the only timestamped artifact.
    nlohmann::ordered_json run_meta;
    run_meta["created_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                                   std::chrono::system_clock::now().time_since_epoch())
                                   .count();
    for (const auto& [name, seconds] : timer.stages) run_meta["stage_seconds"][name] = seconds;
    detail::write_text_file(out / "run.json", run_meta.dump(2) + "\n");

    return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& c) {
    if (c.precision == "f64") return run_experiment_typed<double>(c);
    return run_experiment_typed<float>(c);
}

}  // namespace plab::exp
