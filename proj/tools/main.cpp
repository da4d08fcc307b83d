// SPDX-License-Identifier: Apache-2.0
//
// plab: prompt-tuning laboratory driver.
//
// Subcommands: generate, pretrain, eval-zero, eval-fewshot, verify, compare,
// run. Configuration comes from one JSON file; named flags and --set
// key=value pairs override dotted keys. Exit code 0 on success, nonzero with
// the failing stage named on stderr. PLAB_THREADS caps internal parallelism.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "plab/experiment.hpp"
#include "plab/metaver.hpp"

namespace fs = std::filesystem;
using namespace plab;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string regime;
    std::string prompt;
    std::optional<int> shots;
    std::string precision;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON experiment config");
    cmd->add_option("--seed", args.seed, "root RNG seed");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--regime", args.regime,
                    "mtl_t_only|mtl_p_only|mtl_tp|fomaml|reptile");
    cmd->add_option("--prompt", args.prompt, "none|shallow|deep");
    cmd->add_option("--shots", args.shots, "few-shot batch size");
    cmd->add_option("--precision", args.precision, "f32|f64");
    cmd->add_option("--set", args.overrides, "dotted-key override, e.g. model.embed_dim=16");
}

exp::ExperimentConfig resolve_config(const CommonArgs& args) {
    nlohmann::json j = exp::to_json(exp::ExperimentConfig{});
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        PLAB_CHECK(in.good(), "cannot open config '", args.config_path, "'");
        nlohmann::json file_json;
        in >> file_json;
        for (const auto& [key, value] : file_json.items()) j[key] = value;
    }
    if (args.seed) j["seed"] = *args.seed;
    if (!args.out_dir.empty()) j["out"] = args.out_dir;
    if (!args.regime.empty()) j["regime"]["kind"] = args.regime;
    if (!args.prompt.empty()) j["model"]["prompt_depth"] = args.prompt;
    if (args.shots) j["eval"]["shots"] = *args.shots;
    if (!args.precision.empty()) j["precision"] = args.precision;
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        PLAB_CHECK(eq != std::string::npos, "--set expects key=value, got '", kv, "'");
        exp::apply_override(j, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return exp::config_from_json(j);
}

template <class T>
ParamSet<T> load_checkpoint_for(const exp::ExperimentConfig& c, const std::string& path) {
    const fs::path bin = path.empty() ? fs::path(c.out_dir) / "checkpoint.plab" : fs::path(path);
    const fs::path side_path = fs::path(bin).replace_extension(".json");
    if (fs::exists(side_path)) {
        const auto side = ckpt::read_sidecar(side_path.string());
        ckpt::check_model_digest(side, exp::model_digest(c.model));
    }
    return ckpt::load_params<T>(bin.string());
}

void print_report(const eval::ArgReport& report, const std::string& label) {
    std::cout << label << ": ARG " << report.arg << " over " << report.n_templates
              << " templates\n";
}

template <class T>
int run_eval_zero(const exp::ExperimentConfig& c, const std::string& checkpoint) {
    const auto params = load_checkpoint_for<T>(c, checkpoint);
    const auto suite = exp::make_suite(c);
    const auto report = eval::zero_shot_eval<T>(c.model, params, suite.heldout, c.suite.mixture);
    fs::create_directories(c.out_dir);
    std::ofstream csv(fs::path(c.out_dir) / "zero_shot.csv", std::ios::binary);
    eval::write_arg_report_csv(csv, report, 0);
    print_report(report, "zero-shot");
    return 0;
}

template <class T>
int run_eval_fewshot(const exp::ExperimentConfig& c, const std::string& checkpoint) {
    const auto params = load_checkpoint_for<T>(c, checkpoint);
    const auto suite = exp::make_suite(c);
    const auto report = exp::few_shot_eval<T>(c, params, suite);
    fs::create_directories(c.out_dir);
    std::ofstream csv(fs::path(c.out_dir) / "few_shot.csv", std::ios::binary);
    eval::write_arg_report_csv(csv, report, c.eval.shots);
    print_report(report, std::to_string(c.eval.shots) + "-shot");
    return 0;
}

template <class T>
int run_compare(const exp::ExperimentConfig& c, const std::string& path_a,
                const std::string& path_b) {
    const auto params_a = load_checkpoint_for<T>(c, path_a);
    const auto params_b = load_checkpoint_for<T>(c, path_b);
    const auto suite = exp::make_suite(c);
    const auto preds_a = eval::predict_heldout<T>(c.model, params_a, suite.heldout, c.suite.mixture);
    const auto preds_b = eval::predict_heldout<T>(c.model, params_b, suite.heldout, c.suite.mixture);
    const auto result = eval::bootstrap_compare(preds_a, preds_b, c.eval.bootstrap_iterations,
                                                derive_seed(c.seed, "bootstrap"));
    const double arg_a = eval::report_from_predictions(preds_a).arg;
    const double arg_b = eval::report_from_predictions(preds_b).arg;

    fs::create_directories(c.out_dir);
    std::ofstream csv(fs::path(c.out_dir) / "compare.csv", std::ios::binary);
    csv << "metric,value\n";
    csv << "iterations," << result.iterations << "\n";
    csv << "arg_a," << arg_a << "\n";
    csv << "arg_b," << arg_b << "\n";
    csv << "p_value_a_better," << result.p_value << "\n";
    csv << "winner," << result.winner << "\n";
    csv << "resampling," << result.resampling << "\n";
    csv << "ties_count_against,model_a\n";

    std::cout << "model_a ARG " << arg_a << ", model_b ARG " << arg_b << ", winner "
              << result.winner << ", one-sided p (a better) " << result.p_value << " over "
              << result.iterations << " iterations\n";
    return 0;
}

int run_verify(const exp::ExperimentConfig& c) {
    const auto rows = metaver::run_verification_suite();
    fs::create_directories(c.out_dir);
    std::ofstream csv(fs::path(c.out_dir) / "verification_report.csv", std::ios::binary);
    metaver::write_verification_csv(csv, rows);

    int failures = 0;
    for (const auto& r : rows) {
        if (!r.pass) {
            ++failures;
            std::cout << "[FAIL] " << r.check << " alpha=" << r.alpha << " T=" << r.steps
                      << " seed=" << r.seed << " value=" << r.value << "\n";
        }
    }
    std::cout << (failures == 0 ? "[PASS]" : "[FAIL]") << " verification: " << rows.size()
              << " checks, " << failures << " failures\n";
    return failures == 0 ? 0 : 1;
}

int run_generate(const exp::ExperimentConfig& c) {
    const auto suite = exp::make_suite(c);
    exp::detail::write_suite_files(fs::path(c.out_dir) / "suite", suite, c.suite.mixture);
    std::size_t train_total = 0;
    for (const auto& d : suite.train) train_total += d.train.size();
    std::cout << "suite: " << suite.train.size() << " training datasets (" << train_total
              << " examples), " << suite.heldout.size() << " held-out datasets -> "
              << (fs::path(c.out_dir) / "suite").string() << "\n";
    return 0;
}

template <class T>
int dispatch(const std::string& command, const exp::ExperimentConfig& c,
             const std::string& ckpt_a, const std::string& ckpt_b) {
    if (command == "eval-zero") return run_eval_zero<T>(c, ckpt_a);
    if (command == "eval-fewshot") return run_eval_fewshot<T>(c, ckpt_a);
    if (command == "compare") return run_compare<T>(c, ckpt_a, ckpt_b);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-tuning laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string checkpoint_a, checkpoint_b;

    auto* cmd_generate = app.add_subcommand("generate", "write the synthetic task suite");
    auto* cmd_pretrain = app.add_subcommand("pretrain", "continued pretraining only");
    auto* cmd_run = app.add_subcommand("run", "full pipeline: generate, pretrain, evaluate");
    auto* cmd_eval_zero = app.add_subcommand("eval-zero", "zero-shot evaluation of a checkpoint");
    auto* cmd_eval_few = app.add_subcommand("eval-fewshot", "few-shot prompt tuning evaluation");
    auto* cmd_verify = app.add_subcommand("verify", "meta-gradient verification suite");
    auto* cmd_compare = app.add_subcommand("compare", "bootstrap comparison of two checkpoints");

    for (auto* cmd : {cmd_generate, cmd_pretrain, cmd_run, cmd_eval_zero, cmd_eval_few, cmd_verify,
                      cmd_compare})
        add_common(cmd, args);
    for (auto* cmd : {cmd_eval_zero, cmd_eval_few})
        cmd->add_option("--checkpoint", checkpoint_a, "checkpoint path (default <out>/checkpoint.plab)");
    cmd_compare->add_option("--checkpoint-a", checkpoint_a, "first checkpoint")->required();
    cmd_compare->add_option("--checkpoint-b", checkpoint_b, "second checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const auto config = resolve_config(args);
        const bool f64 = config.precision == "f64";

        if (cmd_generate->parsed()) return run_generate(config);
        if (cmd_verify->parsed()) return run_verify(config);
        if (cmd_pretrain->parsed()) {
            auto c = config;
            c.eval.run_zeroshot = false;
            c.eval.run_fewshot = false;
            exp::run_experiment(c);
            std::cout << "checkpoint -> " << (fs::path(c.out_dir) / "checkpoint.plab").string()
                      << "\n";
            return 0;
        }
        if (cmd_run->parsed()) {
            const auto result = exp::run_experiment(config);
            print_report(result.zero_shot, "zero-shot");
            if (result.few_shot) print_report(*result.few_shot, std::to_string(config.eval.shots) + "-shot");
            return 0;
        }
        const std::string command = cmd_eval_zero->parsed()   ? "eval-zero"
                                    : cmd_eval_few->parsed()  ? "eval-fewshot"
                                                              : "compare";
        return f64 ? dispatch<double>(command, config, checkpoint_a, checkpoint_b)
                   : dispatch<float>(command, config, checkpoint_a, checkpoint_b);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
