#include "cfp/pipeline.hpp"

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfp/config.hpp"

namespace cfp {

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"counterfactual diffusion + prompt-learning workbench"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    double scale = 0.0;
    double lambda = 0.0;
    int shots = 0;
    int prompt_length = 0;
    std::string strategy;

    app.add_option("--config", config_path, "configuration file (key = value lines)")->option_text("PATH");
    auto* seed_opt = app.add_option("--seed", seed, "master seed override")->option_text("N");
    auto* out_opt = app.add_option("--out", out_dir, "artifact directory override")->option_text("DIR");
    auto* scale_opt = app.add_option("--scale", scale, "guidance scale override")->option_text("S");
    auto* lambda_opt = app.add_option("--lambda", lambda, "counterfactual loss weight override")->option_text("L");
    auto* shots_opt = app.add_option("--shots", shots, "train images per seen class override")->option_text("N");
    auto* length_opt = app.add_option("--prompt-length", prompt_length, "context length override")->option_text("L");
    auto* strategy_opt =
        app.add_option("--strategy", strategy, "target-label strategy override (similarity|random)")->option_text("S");

    app.add_subcommand("gen-data", "sample the pool and the few-shot train/test splits");
    app.add_subcommand("pretrain-diffusion", "train the noise predictor on the pool");
    app.add_subcommand("train-classifier", "train the timestep-conditioned classifier on the pool");
    app.add_subcommand("gen-cf", "generate guided counterfactuals for the train split");
    app.add_subcommand("train-prompts", "train the prompt learner on factual/counterfactual pairs");

    auto* eval_cmd = app.add_subcommand("eval", "multi-seed evaluation of all prompt-training arms");
    bool allow_mismatch = false;
    eval_cmd->add_flag("--allow-lineage-mismatch", allow_mismatch,
                       "proceed even if artifacts were produced under a different configuration");

    auto* sweep_cmd = app.add_subcommand("sweep", "vary one axis against fixed artifacts, one CSV row per value");
    std::string axis;
    std::vector<std::string> values;
    sweep_cmd->add_option("axis", axis, "s | lambda | shots | length | strategy")->required();
    sweep_cmd->add_option("values", values, "axis values, one per row")->required()->expected(-1);

    app.add_subcommand("verify-theory", "run the analytic-family recovery checks and write the report");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (out_opt->count() > 0) cfg.out_dir = out_dir;
        if (scale_opt->count() > 0) cfg.guidance_scale = scale;
        if (lambda_opt->count() > 0) cfg.lambda = lambda;
        if (shots_opt->count() > 0) cfg.shots = shots;
        if (length_opt->count() > 0) cfg.prompt_length = prompt_length;
        if (strategy_opt->count() > 0) cfg.cf_strategy = strategy;

        if (app.got_subcommand("gen-data")) return run_gen_data(cfg);
        if (app.got_subcommand("pretrain-diffusion")) return run_pretrain_diffusion(cfg);
        if (app.got_subcommand("train-classifier")) return run_train_classifier(cfg);
        if (app.got_subcommand("gen-cf")) return run_gen_cf(cfg);
        if (app.got_subcommand("train-prompts")) return run_train_prompts(cfg);
        if (app.got_subcommand("eval")) return run_eval(cfg, allow_mismatch);
        if (app.got_subcommand("sweep")) return run_sweep(cfg, axis, values);
        if (app.got_subcommand("verify-theory")) return run_verify_theory(cfg);
        std::fprintf(stderr, "error: no subcommand given\n");
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace cfp
