#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfp/config.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Artifact layout under the configured output directory. Every subcommand
// reads and writes only these files; consumers check the embedded lineage
// hash before trusting anything.
struct ArtifactPaths {
    std::filesystem::path root;

    explicit ArtifactPaths(const std::string& out_dir) : root(out_dir) {}

    std::filesystem::path config_used() const { return root / "config_used.txt"; }
    std::filesystem::path pool() const { return root / "pool.bin"; }
    std::filesystem::path pool_manifest() const { return root / "pool_manifest.txt"; }
    std::filesystem::path train() const { return root / "train.bin"; }
    std::filesystem::path train_manifest() const { return root / "train_manifest.txt"; }
    std::filesystem::path test() const { return root / "test.bin"; }
    std::filesystem::path test_manifest() const { return root / "test_manifest.txt"; }
    std::filesystem::path denoiser() const { return root / "denoiser.ckpt"; }
    std::filesystem::path diffusion_log() const { return root / "diffusion_train.csv"; }
    std::filesystem::path classifier() const { return root / "classifier.ckpt"; }
    std::filesystem::path classifier_log() const { return root / "classifier_train.csv"; }
    std::filesystem::path cf_pairs() const { return root / "cf_pairs.bin"; }
    std::filesystem::path cf_metrics() const { return root / "cf_metrics.csv"; }
    std::filesystem::path dumps_dir() const { return root / "dumps"; }
    std::filesystem::path encoder() const { return root / "encoder.ckpt"; }
    std::filesystem::path prompts() const { return root / "prompts.ckpt"; }
    std::filesystem::path prompt_metrics() const { return root / "prompt_metrics.csv"; }
    std::filesystem::path eval_metrics() const { return root / "eval_metrics.csv"; }
    std::filesystem::path eval_cf_metrics() const { return root / "eval_cf_metrics.csv"; }
    std::filesystem::path sweep_csv(const std::string& axis) const { return root / ("sweep_" + axis + ".csv"); }
    std::filesystem::path theory_report() const { return root / "theory_report.csv"; }
};

// One stored counterfactual pair (pixel space).
struct CfRecord {
    int y = 0;
    int y_cf = 0;
    Tensor x;
    Tensor x_cf;
};

void save_cf_pairs(const std::filesystem::path& path, const std::vector<CfRecord>& records, int image_dim,
                   double guidance_scale, const std::string& strategy, std::uint64_t lineage);
std::vector<CfRecord> load_cf_pairs(const std::filesystem::path& path, std::uint64_t* lineage_out = nullptr,
                                    double* scale_out = nullptr, std::string* strategy_out = nullptr);

// Subcommand drivers; each returns a process exit status (0 = success) and
// throws std::runtime_error / std::invalid_argument on contract violations.
int run_gen_data(const ExperimentConfig& cfg);
int run_pretrain_diffusion(const ExperimentConfig& cfg);
int run_train_classifier(const ExperimentConfig& cfg);
int run_gen_cf(const ExperimentConfig& cfg);
int run_train_prompts(const ExperimentConfig& cfg);
int run_eval(const ExperimentConfig& cfg, bool allow_lineage_mismatch);
int run_sweep(const ExperimentConfig& cfg, const std::string& axis, const std::vector<std::string>& values);
int run_verify_theory(const ExperimentConfig& cfg);

// Flag parsing + dispatch; `args` excludes the program name. Errors print to
// stderr and return a non-zero status instead of throwing.
int run_cli(const std::vector<std::string>& args);

}  // namespace cfp
