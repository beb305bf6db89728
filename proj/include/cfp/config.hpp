#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cfp {

// Flat key = value experiment configuration. Every field has a default; a
// persisted config plus the binary reproduces a run bit-for-bit. The config
// hash (FNV-1a over the canonical serialization) is embedded in every
// artifact so downstream stages can refuse mismatched lineage.
struct ExperimentConfig {
    // dataset
    int classes = 6;
    int image_side = 16;
    double sigma_x = 0.05;
    std::uint64_t seed = 1;
    int shots = 16;           // train images per seen class
    int test_per_class = 40;
    int pool_per_class = 64;  // generative-pretraining pool, per class
    std::vector<int> seen_classes = {0, 1, 2, 3};
    std::vector<int> unseen_classes = {4, 5};

    // noise schedule
    int timesteps = 50;
    double beta_min = 0.001;
    double beta_max = 0.30;

    // denoiser pretraining
    std::vector<int> denoiser_hidden = {128, 128};
    int time_embed_dim = 16;
    int diffusion_steps = 1500;
    int diffusion_batch = 64;
    double diffusion_lr = 1e-3;

    // noised classifier
    std::vector<int> classifier_hidden = {128};
    int classifier_steps = 1500;
    int classifier_batch = 64;
    double classifier_lr = 1e-3;
    double label_smoothing = 0.01;

    // counterfactual generation
    double guidance_scale = 0.3;  // measured working point: flip transition sits near s = 0.1
    std::string cf_strategy = "similarity";  // similarity | random
    int dump_triplets = 8;

    // frozen image encoder
    std::vector<int> encoder_hidden = {128};
    int embed_dim = 32;
    int encoder_steps = 800;
    int encoder_batch = 64;
    double encoder_lr = 1e-3;

    // prompt learner
    int prompt_length = 4;
    double tau = 0.07;
    double lambda = 1.0;
    int prompt_epochs = 400;
    double prompt_lr = 0.003;  // keeps the lambda/tau-scaled repulsion slope in Adam's stable range

    // evaluation
    int eval_seeds = 5;
    double delta_recon = 0.05;          // pinned round-trip L-inf bound
    double runtime_budget_seconds = 1800.0;

    std::string out_dir = "out";
};

// Parse `text` as key = value lines ('#' comments, blank lines allowed).
// Unknown keys, malformed lines and bad values throw std::runtime_error
// with "<source>:<line>: ..." diagnostics. Starts from defaults.
ExperimentConfig parse_config(const std::string& text, const std::string& source);

ExperimentConfig load_config(const std::string& path);

// Canonical text form: fixed key order, %.12g numbers. parse(serialize(c))
// reproduces c exactly.
std::string serialize_config(const ExperimentConfig& cfg);

std::uint64_t config_hash(const ExperimentConfig& cfg);

// Hash of only the fields that shape the shared artifacts (dataset, noise
// schedule, pretrained denoiser/classifier). Per-run knobs that downstream
// stages vary in place — guidance scale, lambda, prompt shape, sweep and
// output settings — are excluded, so sweeping them does not invalidate the
// expensive upstream artifacts. Binary artifacts embed this hash; consumers
// compare it against their own config before trusting a file.
std::uint64_t lineage_hash(const ExperimentConfig& cfg);

// Cross-field checks (class ranges, split disjointness, positive budgets...).
// Throws std::runtime_error on the first violation.
void validate_config(const ExperimentConfig& cfg);

}  // namespace cfp
