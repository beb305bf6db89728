#include "cfp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cfp/anticausal.hpp"
#include "cfp/cf_engine.hpp"
#include "cfp/diffusion.hpp"
#include "cfp/io.hpp"
#include "cfp/prompt.hpp"
#include "cfp/rng.hpp"
#include "cfp/scm.hpp"

namespace cfp {

namespace {

constexpr std::uint32_t kCfPairsMagic = 0x50434643u;  // "CFCP"
constexpr std::uint32_t kCfPairsVersion = 1;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

ScmSpec spec_of(const ExperimentConfig& cfg) {
    ScmSpec spec;
    spec.num_classes = cfg.classes;
    spec.side = cfg.image_side;
    spec.sigma_x = cfg.sigma_x;
    return spec;
}

AdamConfig adam_of(double lr) {
    AdamConfig a;
    a.lr = lr;
    return a;
}

Tensor images_matrix(const std::vector<ScmSample>& samples) {
    if (samples.empty()) throw std::runtime_error("dataset holds no samples");
    const int m = samples.front().x.numel();
    Tensor out = Tensor::zeros({static_cast<int>(samples.size()), m});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (int j = 0; j < m; ++j) out(static_cast<int>(i), j) = samples[i].x[j];
    }
    return out;
}

std::vector<int> labels_of(const std::vector<ScmSample>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.y);
    return out;
}

Tensor take_rows(const Tensor& all, const std::vector<int>& rows) {
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), all.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < all.cols(); ++j) out(static_cast<int>(i), j) = all(rows[i], j);
    }
    return out;
}

void check_lineage(std::uint64_t stored, const ExperimentConfig& cfg, const std::filesystem::path& file,
                   bool allow_mismatch) {
    if (stored == lineage_hash(cfg)) return;
    const std::string msg = "artifact " + file.string() +
                            " was produced under a different configuration (lineage mismatch)";
    if (allow_mismatch) {
        std::fprintf(stderr, "warning: %s; proceeding because --allow-lineage-mismatch is set\n", msg.c_str());
        return;
    }
    throw std::runtime_error(msg + "; regenerate it or pass --allow-lineage-mismatch to eval");
}

std::vector<ScmSample> load_samples_checked(const std::filesystem::path& path, const ExperimentConfig& cfg,
                                            const std::string& producer, bool allow_mismatch,
                                            ScmSpec* spec_out = nullptr) {
    require_artifact(path, producer);
    ScmSpec spec;
    std::uint64_t stored = 0;
    std::vector<ScmSample> samples = load_dataset(path, &spec, &stored);
    check_lineage(stored, cfg, path, allow_mismatch);
    if (spec.num_classes != cfg.classes || spec.side != cfg.image_side) {
        throw std::runtime_error("dataset " + path.string() + " disagrees with the configured world; re-run `" +
                                 producer + "`");
    }
    if (spec_out) *spec_out = spec;
    return samples;
}

// Rebuild a model skeleton from the config and drop checkpoint weights in,
// verifying the architecture actually matches.
void adopt_params(ParamSet& into, const ParamSet& loaded, const std::string& what) {
    if (into.size() != loaded.size()) {
        throw std::runtime_error(what + ": checkpoint holds " + std::to_string(loaded.size()) +
                                 " tensors, the configured architecture needs " + std::to_string(into.size()));
    }
    for (const auto& [name, value] : loaded.tensors()) {
        if (!into.has(name)) throw std::runtime_error(what + ": unexpected tensor `" + name + "` in checkpoint");
        into.set(name, value);  // set() enforces the shape
    }
}

DenoiserModel load_denoiser_checked(const ExperimentConfig& cfg, const ArtifactPaths& paths, int image_dim,
                                    bool allow_mismatch) {
    require_artifact(paths.denoiser(), "pretrain-diffusion");
    Rng dummy(0);
    DenoiserModel model = make_denoiser(image_dim, cfg.denoiser_hidden, cfg.time_embed_dim, dummy);
    std::uint64_t stored = 0;
    const ParamSet loaded = load_checkpoint(paths.denoiser(), "denoiser", &stored);
    check_lineage(stored, cfg, paths.denoiser(), allow_mismatch);
    adopt_params(model.params, loaded, "denoiser checkpoint");
    return model;
}

AntiCausalClassifier load_classifier_checked(const ExperimentConfig& cfg, const ArtifactPaths& paths, int image_dim,
                                             bool allow_mismatch) {
    require_artifact(paths.classifier(), "train-classifier");
    Rng dummy(0);
    AntiCausalClassifier clf = make_classifier(image_dim, cfg.classifier_hidden, cfg.time_embed_dim, cfg.classes, dummy);
    std::uint64_t stored = 0;
    const ParamSet loaded = load_checkpoint(paths.classifier(), "classifier", &stored);
    check_lineage(stored, cfg, paths.classifier(), allow_mismatch);
    adopt_params(clf.params, loaded, "classifier checkpoint");
    return clf;
}

std::vector<ScmSample> draw_pool(const ScmSpec& spec, const ExperimentConfig& cfg) {
    std::vector<int> remaining(static_cast<std::size_t>(cfg.classes), cfg.pool_per_class);
    const long long total = static_cast<long long>(cfg.classes) * cfg.pool_per_class;
    const long long limit = 10000 * total + 100000;
    std::vector<ScmSample> out;
    out.reserve(static_cast<std::size_t>(total));
    for (long long i = 0; static_cast<long long>(out.size()) < total; ++i) {
        if (i > limit) throw std::runtime_error("pool sampling failed to meet per-class quotas");
        ScmSample s = sample_scm(spec, seed_for(cfg.seed, "pool-sample", static_cast<std::uint64_t>(i)));
        if (remaining[static_cast<std::size_t>(s.y)] > 0) {
            --remaining[static_cast<std::size_t>(s.y)];
            out.push_back(std::move(s));
        }
    }
    return out;
}

EncoderState pretrain_encoder_for(const ExperimentConfig& cfg, const std::vector<ScmSample>& pool,
                                  std::uint64_t stream_seed) {
    std::vector<ScmSample> seen_pool;
    for (const auto& s : pool) {
        if (std::find(cfg.seen_classes.begin(), cfg.seen_classes.end(), s.y) != cfg.seen_classes.end()) {
            seen_pool.push_back(s);
        }
    }
    if (seen_pool.empty()) throw std::runtime_error("pool holds no seen-class samples");
    Rng rng(stream_seed);
    return pretrain_image_encoder(images_matrix(seen_pool), labels_of(seen_pool), cfg.classes, cfg.encoder_hidden,
                                  cfg.embed_dim, cfg.encoder_steps, cfg.encoder_batch, rng, adam_of(cfg.encoder_lr));
}

// Canonical class renders (neutral style, flat texture) through the frozen
// encoder; used to calibrate the prompt projection's token block.
Tensor class_prototypes(const ExperimentConfig& cfg, const EncoderState& enc) {
    const ScmSpec spec = spec_of(cfg);
    const std::vector<double> n = style_from_exogenous({0.5, 0.5, 0.5});
    const std::vector<double> u_x(static_cast<std::size_t>(spec.image_dim()), 0.5);
    Tensor raws = Tensor::zeros({cfg.classes, spec.image_dim()});
    for (int c = 0; c < cfg.classes; ++c) {
        const Tensor img = render_image(spec, c, n, u_x);
        for (int j = 0; j < spec.image_dim(); ++j) raws(c, j) = img[j];
    }
    return encode(enc, raws);
}

PromptEvalData eval_data_for(const EncoderState& enc, const std::vector<ScmSample>& test,
                             const std::vector<int>& class_set) {
    std::vector<ScmSample> subset;
    for (const auto& s : test) {
        if (std::find(class_set.begin(), class_set.end(), s.y) != class_set.end()) subset.push_back(s);
    }
    if (subset.empty()) throw std::runtime_error("test split holds no samples for the requested class set");
    PromptEvalData data;
    data.v = encode(enc, images_matrix(subset));
    data.labels = labels_of(subset);
    data.class_set = class_set;
    return data;
}

PromptTrainData train_data_for(const EncoderState& enc, const std::vector<CfRecord>& records,
                               const std::vector<int>& class_set) {
    if (records.empty()) throw std::runtime_error("no counterfactual pairs to train on");
    const int m = records.front().x.numel();
    Tensor x = Tensor::zeros({static_cast<int>(records.size()), m});
    Tensor x_cf = x;
    PromptTrainData data;
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (int j = 0; j < m; ++j) {
            x(static_cast<int>(i), j) = records[i].x[j];
            x_cf(static_cast<int>(i), j) = records[i].x_cf[j];
        }
        data.labels.push_back(records[i].y);
    }
    data.v = encode(enc, x);
    data.v_cf = encode(enc, x_cf);
    data.class_set = class_set;
    return data;
}

std::vector<CfRecord> records_from_pairs(const std::vector<CounterfactualPair>& pairs) {
    std::vector<CfRecord> records;
    records.reserve(pairs.size());
    for (const auto& p : pairs) records.push_back(CfRecord{p.y, p.y_cf, p.x, p.x_cf});
    return records;
}

struct CfStats {
    double flip_rate = 0.0;
    double mean_quality = 0.0;
    double mean_d_l2 = 0.0;
    double mean_inside = 0.0;      // L2 within the glyph mask union
    double mean_outside = 0.0;     // L2 outside it
    double mean_inside_px = 0.0;   // per-pixel mean |dx| within the union
    double mean_outside_px = 0.0;  // per-pixel mean |dx| outside it
};

CfStats cf_stats(const std::vector<CounterfactualPair>& pairs, const AntiCausalClassifier& clf, int side) {
    CfStats st;
    if (pairs.empty()) return st;
    for (const auto& p : pairs) {
        const CfQualityReport r = evaluate_quality(p, clf, side);
        st.flip_rate += r.label_flipped ? 1.0 : 0.0;
        st.mean_quality += r.quality_score;
        st.mean_d_l2 += r.d_l2;
        st.mean_inside += r.causal_distance;
        st.mean_outside += r.non_causal_leakage;
        const std::vector<std::uint8_t> mask = mask_union(side, p.y, p.y_cf);
        double in_sum = 0.0, out_sum = 0.0;
        int in_n = 0, out_n = 0;
        for (int j = 0; j < p.x.numel(); ++j) {
            const double d = std::fabs(p.x[j] - p.x_cf[j]);
            if (mask[static_cast<std::size_t>(j)]) {
                in_sum += d;
                ++in_n;
            } else {
                out_sum += d;
                ++out_n;
            }
        }
        st.mean_inside_px += in_n ? in_sum / in_n : 0.0;
        st.mean_outside_px += out_n ? out_sum / out_n : 0.0;
    }
    const double n = static_cast<double>(pairs.size());
    st.flip_rate /= n;
    st.mean_quality /= n;
    st.mean_d_l2 /= n;
    st.mean_inside /= n;
    st.mean_outside /= n;
    st.mean_inside_px /= n;
    st.mean_outside_px /= n;
    return st;
}

struct ArmResult {
    double seen_acc = 0.0;
    double unseen_acc = 0.0;
    double margin = 0.0;
    double final_basic = 0.0;
    double final_cf = 0.0;
};

ArmResult train_arm(PromptState state, const PromptTrainData& data, double lambda, const ExperimentConfig& cfg,
                    const PromptEvalData& seen_eval, const PromptEvalData& unseen_eval,
                    std::vector<PromptEpochRow>* rows_out = nullptr, PromptState* state_out = nullptr) {
    const std::vector<PromptEpochRow> rows =
        train_prompts(state, data, lambda, cfg.prompt_epochs, adam_of(cfg.prompt_lr), &seen_eval, &unseen_eval);
    ArmResult res;
    res.seen_acc = rows.back().seen_acc;
    res.unseen_acc = rows.back().unseen_acc;
    res.final_basic = rows.back().basic;
    res.final_cf = rows.back().cf;
    res.margin = repulsion_margin(state, data);
    if (rows_out) *rows_out = rows;
    if (state_out) *state_out = std::move(state);
    return res;
}

void write_config_used(const ExperimentConfig& cfg, const ArtifactPaths& paths) {
    std::ofstream out(paths.config_used());
    if (!out) throw std::runtime_error("cannot write " + paths.config_used().string());
    out << serialize_config(cfg);
    if (!out.good()) throw std::runtime_error("failed writing " + paths.config_used().string());
}

}  // namespace

void save_cf_pairs(const std::filesystem::path& path, const std::vector<CfRecord>& records, int image_dim,
                   double guidance_scale, const std::string& strategy, std::uint64_t lineage) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_u32(os, kCfPairsMagic);
    write_u32(os, kCfPairsVersion);
    write_u64(os, lineage);
    write_f64(os, guidance_scale);
    write_string(os, strategy);
    write_u64(os, records.size());
    write_u64(os, static_cast<std::uint64_t>(image_dim));
    for (const auto& r : records) {
        if (r.x.numel() != image_dim || r.x_cf.numel() != image_dim) {
            throw std::runtime_error("counterfactual record has inconsistent image size");
        }
        write_i32(os, r.y);
        write_i32(os, r.y_cf);
        write_f64_array(os, r.x.ptr(), static_cast<std::size_t>(image_dim));
        write_f64_array(os, r.x_cf.ptr(), static_cast<std::size_t>(image_dim));
    }
    if (!os.good()) throw std::runtime_error("failed writing " + path.string());
}

std::vector<CfRecord> load_cf_pairs(const std::filesystem::path& path, std::uint64_t* lineage_out, double* scale_out,
                                    std::string* strategy_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    if (read_u32(is, "magic") != kCfPairsMagic) {
        throw std::runtime_error(path.string() + " is not a counterfactual-pairs file");
    }
    const std::uint32_t version = read_u32(is, "version");
    if (version != kCfPairsVersion) {
        throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
    }
    const std::uint64_t lineage = read_u64(is, "lineage hash");
    const double scale = read_f64(is, "guidance scale");
    const std::string strategy = read_string(is, "strategy");
    const std::uint64_t count = read_u64(is, "record count");
    const std::uint64_t m = read_u64(is, "image dim");
    if (m == 0 || m > (1u << 24)) throw std::runtime_error(path.string() + ": implausible image dim");
    std::vector<CfRecord> records(count);
    for (auto& r : records) {
        r.y = read_i32(is, "factual label");
        r.y_cf = read_i32(is, "target label");
        r.x = Tensor::zeros({static_cast<int>(m)});
        r.x_cf = Tensor::zeros({static_cast<int>(m)});
        read_f64_array(is, r.x.ptr(), m, "factual image");
        read_f64_array(is, r.x_cf.ptr(), m, "counterfactual image");
    }
    if (lineage_out) *lineage_out = lineage;
    if (scale_out) *scale_out = scale;
    if (strategy_out) *strategy_out = strategy;
    return records;
}

int run_gen_data(const ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    const ArtifactPaths paths(cfg.out_dir);
    std::filesystem::create_directories(paths.root);
    write_config_used(cfg, paths);

    const ScmSpec spec = spec_of(cfg);
    const std::uint64_t lineage = lineage_hash(cfg);

    const std::vector<ScmSample> pool = draw_pool(spec, cfg);
    save_dataset(paths.pool(), spec, pool, cfg.seed, lineage);
    write_manifest(paths.pool_manifest(), spec, pool.size(), cfg.seed, lineage);

    const DatasetSplit split = make_splits(spec, cfg.seen_classes, cfg.unseen_classes, cfg.shots, cfg.test_per_class,
                                           seed_for(cfg.seed, "split"));
    save_dataset(paths.train(), spec, split.train, cfg.seed, lineage);
    write_manifest(paths.train_manifest(), spec, split.train.size(), cfg.seed, lineage);
    save_dataset(paths.test(), spec, split.test, cfg.seed, lineage);
    write_manifest(paths.test_manifest(), spec, split.test.size(), cfg.seed, lineage);

    std::printf("gen-data: %zu pool / %zu train / %zu test samples -> %s (%.1fs)\n", pool.size(), split.train.size(),
                split.test.size(), paths.root.string().c_str(), seconds_since(t0));
    return 0;
}

int run_pretrain_diffusion(const ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    const ArtifactPaths paths(cfg.out_dir);
    ScmSpec spec;
    const std::vector<ScmSample> pool = load_samples_checked(paths.pool(), cfg, "gen-data", false, &spec);
    const Tensor clean = images_matrix(pool);

    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max);
    Rng init_rng(seed_for(cfg.seed, "denoiser-init"));
    DenoiserModel model = make_denoiser(spec.image_dim(), cfg.denoiser_hidden, cfg.time_embed_dim, init_rng);

    Rng train_rng(seed_for(cfg.seed, "denoiser-train"));
    CsvWriter log(paths.diffusion_log(), {"step", "loss"}, config_hash(cfg));
    const AdamConfig adam = adam_of(cfg.diffusion_lr);
    double last_loss = 0.0;
    for (int step = 1; step <= cfg.diffusion_steps; ++step) {
        std::vector<int> rows(static_cast<std::size_t>(cfg.diffusion_batch));
        for (auto& r : rows) r = static_cast<int>(train_rng.uniform_int(static_cast<std::uint64_t>(clean.rows())));
        last_loss = ddpm_train_step(model, sched, take_rows(clean, rows), train_rng, adam);
        log.row({std::to_string(step), format_double(last_loss)});
    }
    log.close();
    save_checkpoint(paths.denoiser(), model.params, lineage_hash(cfg), "denoiser");
    std::printf("pretrain-diffusion: %d steps, final batch loss %.6f -> %s (%.1fs)\n", cfg.diffusion_steps, last_loss,
                paths.denoiser().string().c_str(), seconds_since(t0));
    return 0;
}

int run_train_classifier(const ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    const ArtifactPaths paths(cfg.out_dir);
    ScmSpec spec;
    const std::vector<ScmSample> pool = load_samples_checked(paths.pool(), cfg, "gen-data", false, &spec);

    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max);
    Rng init_rng(seed_for(cfg.seed, "classifier-init"));
    AntiCausalClassifier clf = make_classifier(spec.image_dim(), cfg.classifier_hidden, cfg.time_embed_dim,
                                               cfg.classes, init_rng);
    Rng train_rng(seed_for(cfg.seed, "classifier-train"));
    std::vector<double> losses;
    const ClassifierTrainReport report =
        train_classifier(clf, sched, images_matrix(pool), labels_of(pool), cfg.classifier_steps, cfg.classifier_batch,
                         cfg.label_smoothing, train_rng, adam_of(cfg.classifier_lr), &losses);

    CsvWriter log(paths.classifier_log(), {"step", "loss"}, config_hash(cfg));
    for (std::size_t i = 0; i < losses.size(); ++i) {
        log.row({std::to_string(i + 1), format_double(losses[i])});
    }
    log.close();
    save_checkpoint(paths.classifier(), clf.params, lineage_hash(cfg), "classifier");
    std::printf("train-classifier: final loss %.6f, clean train accuracy %.4f -> %s (%.1fs)\n", report.final_loss,
                report.clean_train_accuracy, paths.classifier().string().c_str(), seconds_since(t0));
    return 0;
}

int run_gen_cf(const ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    const ArtifactPaths paths(cfg.out_dir);
    ScmSpec spec;
    const std::vector<ScmSample> train = load_samples_checked(paths.train(), cfg, "gen-data", false, &spec);
    const DenoiserModel model = load_denoiser_checked(cfg, paths, spec.image_dim(), false);
    const AntiCausalClassifier clf = load_classifier_checked(cfg, paths, spec.image_dim(), false);
    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max);

    Rng rng(seed_for(cfg.seed, "gen-cf"));
    std::vector<CounterfactualPair> pairs = generate_counterfactuals(
        images_matrix(train), labels_of(train), model, clf, sched, cfg.guidance_scale, cfg.cf_strategy, rng);

    CsvWriter csv(paths.cf_metrics(),
                  {"pair", "y", "y_cf", "d_l2", "d_linf", "flipped", "flip_confidence", "leak_outside",
                   "causal_inside", "quality_score"},
                  config_hash(cfg));
    double flips = 0.0, quality = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CounterfactualPair& p = pairs[i];
        p.has_oracle = true;
        p.x_cf_true = true_counterfactual(spec, train[i], p.y_cf);
        const CfQualityReport r = evaluate_quality(p, clf, spec.side);
        flips += r.label_flipped ? 1.0 : 0.0;
        quality += r.quality_score;
        csv.row({std::to_string(i), std::to_string(p.y), std::to_string(p.y_cf), format_double(r.d_l2),
                 format_double(r.d_linf), r.label_flipped ? "1" : "0", format_double(r.flip_confidence),
                 format_double(r.non_causal_leakage), format_double(r.causal_distance),
                 format_double(r.quality_score)});
    }
    csv.close();
    save_cf_pairs(paths.cf_pairs(), records_from_pairs(pairs), spec.image_dim(), cfg.guidance_scale, cfg.cf_strategy,
                  lineage_hash(cfg));

    std::filesystem::create_directories(paths.dumps_dir());
    const int dumps = std::min<int>(cfg.dump_triplets, static_cast<int>(pairs.size()));
    for (int i = 0; i < dumps; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "pair_%03d_factual.pgm", i);
        write_pgm(paths.dumps_dir() / name, pairs[static_cast<std::size_t>(i)].x, spec.side);
        std::snprintf(name, sizeof(name), "pair_%03d_counterfactual.pgm", i);
        write_pgm(paths.dumps_dir() / name, pairs[static_cast<std::size_t>(i)].x_cf, spec.side);
        std::snprintf(name, sizeof(name), "pair_%03d_diff.pgm", i);
        Tensor diff = pairs[static_cast<std::size_t>(i)].x;
        for (int j = 0; j < diff.numel(); ++j) {
            diff[j] = std::fabs(diff[j] - pairs[static_cast<std::size_t>(i)].x_cf[j]);
        }
        write_pgm(paths.dumps_dir() / name, diff, spec.side);
    }

    const double n = pairs.empty() ? 1.0 : static_cast<double>(pairs.size());
    std::printf("gen-cf: %zu pairs at s=%.3g (%s), flip rate %.3f, mean quality %.4f (%.1fs)\n", pairs.size(),
                cfg.guidance_scale, cfg.cf_strategy.c_str(), flips / n, quality / n, seconds_since(t0));
    return 0;
}

int run_train_prompts(const ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    const ArtifactPaths paths(cfg.out_dir);
    ScmSpec spec;
    const std::vector<ScmSample> pool = load_samples_checked(paths.pool(), cfg, "gen-data", false, &spec);
    const std::vector<ScmSample> train = load_samples_checked(paths.train(), cfg, "gen-data", false);
    const std::vector<ScmSample> test = load_samples_checked(paths.test(), cfg, "gen-data", false);

    require_artifact(paths.cf_pairs(), "gen-cf");
    std::uint64_t cf_lineage = 0;
    const std::vector<CfRecord> records = load_cf_pairs(paths.cf_pairs(), &cf_lineage);
    check_lineage(cf_lineage, cfg, paths.cf_pairs(), false);
    if (records.size() != train.size()) {
        throw std::runtime_error("counterfactual pairs do not cover the train split; re-run `gen-cf`");
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].y != train[i].y || linf_distance(records[i].x, train[i].x) != 0.0) {
            throw std::runtime_error("counterfactual pair " + std::to_string(i) +
                                     " does not match the train split (stale artifact); re-run `gen-cf`");
        }
    }

    const EncoderState enc = pretrain_encoder_for(cfg, pool, seed_for(cfg.seed, "encoder"));
    const Tensor protos = class_prototypes(cfg, enc);
    PromptState state = make_prompt_state(cfg.classes, cfg.embed_dim, cfg.prompt_length, cfg.tau,
                                          seed_for(cfg.seed, "prompt-init"), &protos);

    const PromptTrainData data = train_data_for(enc, records, cfg.seen_classes);
    const PromptEvalData seen_eval = eval_data_for(enc, test, cfg.seen_classes);
    const PromptEvalData unseen_eval = eval_data_for(enc, test, cfg.unseen_classes);

    const std::vector<PromptEpochRow> rows =
        train_prompts(state, data, cfg.lambda, cfg.prompt_epochs, adam_of(cfg.prompt_lr), &seen_eval, &unseen_eval);

    CsvWriter csv(paths.prompt_metrics(), {"epoch", "L_basic", "L_cf", "L_total", "seen_acc", "unseen_acc"},
                  config_hash(cfg));
    for (const auto& r : rows) {
        csv.row({std::to_string(r.epoch), format_double(r.basic), format_double(r.cf), format_double(r.total),
                 format_double(r.seen_acc), format_double(r.unseen_acc)});
    }
    csv.close();

    save_checkpoint(paths.encoder(), enc.params, lineage_hash(cfg), "encoder");
    save_checkpoint(paths.prompts(), pack_prompt_state(state), lineage_hash(cfg), "prompts");
    std::printf("train-prompts: %d epochs, final seen acc %.4f, unseen acc %.4f -> %s (%.1fs)\n", cfg.prompt_epochs,
                rows.back().seen_acc, rows.back().unseen_acc, paths.prompts().string().c_str(), seconds_since(t0));
    return 0;
}

int run_eval(const ExperimentConfig& cfg, bool allow_lineage_mismatch) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    const ArtifactPaths paths(cfg.out_dir);
    ScmSpec spec;
    const std::vector<ScmSample> pool =
        load_samples_checked(paths.pool(), cfg, "gen-data", allow_lineage_mismatch, &spec);
    const DenoiserModel model = load_denoiser_checked(cfg, paths, spec.image_dim(), allow_lineage_mismatch);
    const AntiCausalClassifier clf = load_classifier_checked(cfg, paths, spec.image_dim(), allow_lineage_mismatch);
    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max);

    CsvWriter metrics(paths.eval_metrics(), {"seed", "arm", "lambda", "seen_acc", "unseen_acc", "margin"},
                      config_hash(cfg));
    CsvWriter cf_csv(paths.eval_cf_metrics(),
                     {"seed", "strategy", "flip_rate", "mean_d_l2", "mean_quality", "mean_inside", "mean_outside",
                      "mean_inside_px", "mean_outside_px"},
                     config_hash(cfg));

    double sum_unseen_default = 0.0, sum_unseen_baseline = 0.0, sum_seen_default = 0.0, sum_seen_untrained = 0.0;
    for (int i = 0; i < cfg.eval_seeds; ++i) {
        const DatasetSplit split = make_splits(spec, cfg.seen_classes, cfg.unseen_classes, cfg.shots,
                                               cfg.test_per_class, seed_for(cfg.seed, "eval-split", static_cast<std::uint64_t>(i)));
        const Tensor train_images = images_matrix(split.train);
        const std::vector<int> train_labels = labels_of(split.train);

        std::vector<CfRecord> train_records;
        for (const std::string strategy : {"similarity", "random"}) {
            Rng rng(seed_for(cfg.seed, "eval-cf-" + strategy, static_cast<std::uint64_t>(i)));
            const std::vector<CounterfactualPair> pairs = generate_counterfactuals(
                train_images, train_labels, model, clf, sched, cfg.guidance_scale, strategy, rng);
            const CfStats st = cf_stats(pairs, clf, spec.side);
            cf_csv.row({std::to_string(i), strategy, format_double(st.flip_rate), format_double(st.mean_d_l2),
                        format_double(st.mean_quality), format_double(st.mean_inside),
                        format_double(st.mean_outside), format_double(st.mean_inside_px),
                        format_double(st.mean_outside_px)});
            if (strategy == cfg.cf_strategy) train_records = records_from_pairs(pairs);
        }

        const EncoderState enc = pretrain_encoder_for(cfg, pool, seed_for(cfg.seed, "eval-encoder", static_cast<std::uint64_t>(i)));
        const Tensor protos = class_prototypes(cfg, enc);
        const PromptState initial = make_prompt_state(cfg.classes, cfg.embed_dim, cfg.prompt_length, cfg.tau,
                                                      seed_for(cfg.seed, "eval-prompt", static_cast<std::uint64_t>(i)), &protos);
        const PromptTrainData data = train_data_for(enc, train_records, cfg.seen_classes);
        const PromptEvalData seen_eval = eval_data_for(enc, split.test, cfg.seen_classes);
        const PromptEvalData unseen_eval = eval_data_for(enc, split.test, cfg.unseen_classes);

        const double untrained_seen = accuracy_from_embeddings(initial, seen_eval.v, seen_eval.labels, cfg.seen_classes);
        const double untrained_unseen =
            accuracy_from_embeddings(initial, unseen_eval.v, unseen_eval.labels, cfg.unseen_classes);
        metrics.row({std::to_string(i), "untrained", format_double(0.0), format_double(untrained_seen),
                     format_double(untrained_unseen), format_double(repulsion_margin(initial, data))});

        const ArmResult baseline = train_arm(initial, data, 0.0, cfg, seen_eval, unseen_eval);
        metrics.row({std::to_string(i), "baseline", format_double(0.0), format_double(baseline.seen_acc),
                     format_double(baseline.unseen_acc), format_double(baseline.margin)});

        const ArmResult full = train_arm(initial, data, cfg.lambda, cfg, seen_eval, unseen_eval);
        metrics.row({std::to_string(i), "counterfactual", format_double(cfg.lambda), format_double(full.seen_acc),
                     format_double(full.unseen_acc), format_double(full.margin)});

        sum_unseen_default += full.unseen_acc;
        sum_unseen_baseline += baseline.unseen_acc;
        sum_seen_default += full.seen_acc;
        sum_seen_untrained += untrained_seen;
    }
    metrics.close();
    cf_csv.close();

    const double n = static_cast<double>(cfg.eval_seeds);
    std::printf("eval: %d seeds; unseen acc %.4f (lambda=%.3g) vs %.4f (lambda=0); seen acc %.4f vs untrained %.4f "
                "(%.1fs)\n",
                cfg.eval_seeds, sum_unseen_default / n, cfg.lambda, sum_unseen_baseline / n, sum_seen_default / n,
                sum_seen_untrained / n, seconds_since(t0));
    return 0;
}

int run_sweep(const ExperimentConfig& cfg, const std::string& axis, const std::vector<std::string>& values) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    if (values.empty()) throw std::runtime_error("sweep: at least one value is required");
    const ArtifactPaths paths(cfg.out_dir);
    const ScmSpec spec = spec_of(cfg);
    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max);

    auto parse_doubles = [&](const char* what) {
        std::vector<double> out;
        for (const auto& v : values) {
            try {
                std::size_t pos = 0;
                out.push_back(std::stod(v, &pos));
                if (pos != v.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw std::runtime_error("sweep: invalid " + std::string(what) + " value `" + v + "`");
            }
        }
        return out;
    };
    auto parse_ints = [&](const char* what) {
        std::vector<int> out;
        for (const auto& v : values) {
            try {
                std::size_t pos = 0;
                out.push_back(std::stoi(v, &pos));
                if (pos != v.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw std::runtime_error("sweep: invalid " + std::string(what) + " value `" + v + "`");
            }
        }
        return out;
    };

    if (axis == "s") {
        const std::vector<double> scales = parse_doubles("guidance-scale");
        const std::vector<ScmSample> test = load_samples_checked(paths.test(), cfg, "gen-data", false);
        const DenoiserModel model = load_denoiser_checked(cfg, paths, spec.image_dim(), false);
        const AntiCausalClassifier clf = load_classifier_checked(cfg, paths, spec.image_dim(), false);
        const Tensor images = images_matrix(test);
        const std::vector<int> labels = labels_of(test);
        CsvWriter csv(paths.sweep_csv(axis),
                      {"s", "flip_rate", "mean_quality", "mean_d_l2", "mean_outside", "mean_inside",
                       "mean_outside_px", "mean_inside_px"},
                      config_hash(cfg));
        for (std::size_t i = 0; i < scales.size(); ++i) {
            if (scales[i] < 0.0) throw std::runtime_error("sweep: guidance scale must be >= 0");
            Rng rng(seed_for(cfg.seed, "sweep-s", static_cast<std::uint64_t>(i)));
            const auto pairs =
                generate_counterfactuals(images, labels, model, clf, sched, scales[i], cfg.cf_strategy, rng);
            const CfStats st = cf_stats(pairs, clf, spec.side);
            csv.row({format_double(scales[i]), format_double(st.flip_rate), format_double(st.mean_quality),
                     format_double(st.mean_d_l2), format_double(st.mean_outside), format_double(st.mean_inside),
                     format_double(st.mean_outside_px), format_double(st.mean_inside_px)});
            std::printf("sweep s=%.3g: flip rate %.3f, mean quality %.4f\n", scales[i], st.flip_rate, st.mean_quality);
        }
        csv.close();
        std::printf("sweep s: wrote %s (%.1fs)\n", paths.sweep_csv(axis).string().c_str(), seconds_since(t0));
        return 0;
    }

    if (axis == "strategy") {
        for (const auto& v : values) {
            if (v != "similarity" && v != "random") {
                throw std::runtime_error("sweep: unknown strategy `" + v + "` (similarity|random)");
            }
        }
        const std::vector<ScmSample> pool = load_samples_checked(paths.pool(), cfg, "gen-data", false);
        const std::vector<ScmSample> train = load_samples_checked(paths.train(), cfg, "gen-data", false);
        const std::vector<ScmSample> test = load_samples_checked(paths.test(), cfg, "gen-data", false);
        const DenoiserModel model = load_denoiser_checked(cfg, paths, spec.image_dim(), false);
        const AntiCausalClassifier clf = load_classifier_checked(cfg, paths, spec.image_dim(), false);
        const EncoderState enc = pretrain_encoder_for(cfg, pool, seed_for(cfg.seed, "sweep-encoder"));
        const Tensor protos = class_prototypes(cfg, enc);
        const PromptEvalData seen_eval = eval_data_for(enc, test, cfg.seen_classes);
        const PromptEvalData unseen_eval = eval_data_for(enc, test, cfg.unseen_classes);
        const Tensor images = images_matrix(train);
        const std::vector<int> labels = labels_of(train);

        CsvWriter csv(paths.sweep_csv(axis),
                      {"strategy", "mean_d_l2", "flip_rate", "mean_quality", "seen_acc", "unseen_acc"},
                      config_hash(cfg));
        for (std::size_t i = 0; i < values.size(); ++i) {
            Rng rng(seed_for(cfg.seed, "sweep-strategy", static_cast<std::uint64_t>(i)));
            const auto pairs =
                generate_counterfactuals(images, labels, model, clf, sched, cfg.guidance_scale, values[i], rng);
            const CfStats st = cf_stats(pairs, clf, spec.side);
            const PromptState initial = make_prompt_state(cfg.classes, cfg.embed_dim, cfg.prompt_length, cfg.tau,
                                                          seed_for(cfg.seed, "sweep-prompt"), &protos);
            const PromptTrainData data = train_data_for(enc, records_from_pairs(pairs), cfg.seen_classes);
            const ArmResult arm = train_arm(initial, data, cfg.lambda, cfg, seen_eval, unseen_eval);
            csv.row({values[i], format_double(st.mean_d_l2), format_double(st.flip_rate),
                     format_double(st.mean_quality), format_double(arm.seen_acc), format_double(arm.unseen_acc)});
            std::printf("sweep strategy=%s: mean d %.4f, unseen acc %.4f\n", values[i].c_str(), st.mean_d_l2,
                        arm.unseen_acc);
        }
        csv.close();
        std::printf("sweep strategy: wrote %s (%.1fs)\n", paths.sweep_csv(axis).string().c_str(), seconds_since(t0));
        return 0;
    }

    if (axis != "lambda" && axis != "shots" && axis != "length") {
        throw std::runtime_error("sweep: unknown axis `" + axis + "` (s|lambda|shots|length|strategy)");
    }

    // The remaining axes retrain prompts against the stored counterfactual set.
    const std::vector<ScmSample> pool = load_samples_checked(paths.pool(), cfg, "gen-data", false);
    const std::vector<ScmSample> train = load_samples_checked(paths.train(), cfg, "gen-data", false);
    const std::vector<ScmSample> test = load_samples_checked(paths.test(), cfg, "gen-data", false);
    require_artifact(paths.cf_pairs(), "gen-cf");
    std::uint64_t cf_lineage = 0;
    const std::vector<CfRecord> records = load_cf_pairs(paths.cf_pairs(), &cf_lineage);
    check_lineage(cf_lineage, cfg, paths.cf_pairs(), false);
    if (records.size() != train.size()) {
        throw std::runtime_error("counterfactual pairs do not cover the train split; re-run `gen-cf`");
    }
    const EncoderState enc = pretrain_encoder_for(cfg, pool, seed_for(cfg.seed, "sweep-encoder"));
    const Tensor protos = class_prototypes(cfg, enc);
    const PromptEvalData seen_eval = eval_data_for(enc, test, cfg.seen_classes);
    const PromptEvalData unseen_eval = eval_data_for(enc, test, cfg.unseen_classes);

    if (axis == "lambda") {
        const std::vector<double> lambdas = parse_doubles("lambda");
        const PromptTrainData data = train_data_for(enc, records, cfg.seen_classes);
        CsvWriter csv(paths.sweep_csv(axis), {"lambda", "seen_acc", "unseen_acc", "L_basic", "L_cf"}, config_hash(cfg));
        for (double lambda : lambdas) {
            if (lambda < 0.0) throw std::runtime_error("sweep: lambda must be >= 0");
            const PromptState initial = make_prompt_state(cfg.classes, cfg.embed_dim, cfg.prompt_length, cfg.tau,
                                                          seed_for(cfg.seed, "sweep-prompt"), &protos);
            const ArmResult arm = train_arm(initial, data, lambda, cfg, seen_eval, unseen_eval);
            csv.row({format_double(lambda), format_double(arm.seen_acc), format_double(arm.unseen_acc),
                     format_double(arm.final_basic), format_double(arm.final_cf)});
            std::printf("sweep lambda=%.3g: seen acc %.4f, unseen acc %.4f\n", lambda, arm.seen_acc, arm.unseen_acc);
        }
        csv.close();
    } else if (axis == "shots") {
        const std::vector<int> shot_counts = parse_ints("shots");
        CsvWriter csv(paths.sweep_csv(axis), {"shots", "seen_acc", "unseen_acc", "L_basic", "L_cf"}, config_hash(cfg));
        for (int k : shot_counts) {
            if (k < 1 || k > cfg.shots) {
                throw std::runtime_error("sweep: shots value " + std::to_string(k) +
                                         " must lie in [1," + std::to_string(cfg.shots) +
                                         "] (the dataset was generated with " + std::to_string(cfg.shots) + ")");
            }
            std::vector<int> quota(static_cast<std::size_t>(cfg.classes), k);
            std::vector<CfRecord> subset;
            for (const auto& r : records) {
                if (quota[static_cast<std::size_t>(r.y)] > 0) {
                    --quota[static_cast<std::size_t>(r.y)];
                    subset.push_back(r);
                }
            }
            const PromptTrainData data = train_data_for(enc, subset, cfg.seen_classes);
            const PromptState initial = make_prompt_state(cfg.classes, cfg.embed_dim, cfg.prompt_length, cfg.tau,
                                                          seed_for(cfg.seed, "sweep-prompt"), &protos);
            const ArmResult arm = train_arm(initial, data, cfg.lambda, cfg, seen_eval, unseen_eval);
            csv.row({std::to_string(k), format_double(arm.seen_acc), format_double(arm.unseen_acc),
                     format_double(arm.final_basic), format_double(arm.final_cf)});
            std::printf("sweep shots=%d: seen acc %.4f, unseen acc %.4f\n", k, arm.seen_acc, arm.unseen_acc);
        }
        csv.close();
    } else {
        const std::vector<int> lengths = parse_ints("prompt-length");
        const PromptTrainData data = train_data_for(enc, records, cfg.seen_classes);
        CsvWriter csv(paths.sweep_csv(axis), {"length", "seen_acc", "unseen_acc", "L_basic", "L_cf"}, config_hash(cfg));
        for (int len : lengths) {
            if (len < 1) throw std::runtime_error("sweep: prompt length must be >= 1");
            const PromptState initial = make_prompt_state(cfg.classes, cfg.embed_dim, len, cfg.tau,
                                                          seed_for(cfg.seed, "sweep-prompt"), &protos);
            const ArmResult arm = train_arm(initial, data, cfg.lambda, cfg, seen_eval, unseen_eval);
            csv.row({std::to_string(len), format_double(arm.seen_acc), format_double(arm.unseen_acc),
                     format_double(arm.final_basic), format_double(arm.final_cf)});
            std::printf("sweep length=%d: seen acc %.4f, unseen acc %.4f\n", len, arm.seen_acc, arm.unseen_acc);
        }
        csv.close();
    }
    std::printf("sweep %s: wrote %s (%.1fs)\n", axis.c_str(), paths.sweep_csv(axis).string().c_str(),
                seconds_since(t0));
    return 0;
}

int run_verify_theory(const ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    validate_config(cfg);
    const ArtifactPaths paths(cfg.out_dir);
    std::filesystem::create_directories(paths.root);

    const std::uint64_t base = seed_for(cfg.seed, "theory");
    const int m = 6;
    const AnalyticScm additive = make_analytic_scm(m, ScmFamily::AdditiveOrthogonal, seed_for(base, "family-additive"));
    const AnalyticScm pnl = make_analytic_scm(m, ScmFamily::PostNonlinear, seed_for(base, "family-pnl"));
    const AnalyticScm ortho = make_analytic_scm(m, ScmFamily::AdditiveOrthogonal, seed_for(base, "family-ortho"), true);

    struct Row {
        std::string check;
        double value;
        double bound;
        std::string direction;  // how value must relate to bound
        bool pass;
    };
    std::vector<Row> rows;
    auto le = [&](const std::string& check, double value, double bound) {
        rows.push_back({check, value, bound, "<=", value <= bound});
    };
    auto gt = [&](const std::string& check, double value, double bound) {
        rows.push_back({check, value, bound, ">", value > bound});
    };
    auto lt = [&](const std::string& check, double value, double bound) {
        rows.push_back({check, value, bound, "<", value < bound});
    };
    auto ge = [&](const std::string& check, double value, double bound) {
        rows.push_back({check, value, bound, ">=", value >= bound});
    };

    const CorollaryReport exact_add = corollary_harness(additive, 0.0, 1000, seed_for(base, "exact-additive"));
    le("exact_inverse_additive_max_cf_error", exact_add.max_cf_error, 1e-10);
    const CorollaryReport exact_pnl = corollary_harness(pnl, 0.0, 1000, seed_for(base, "exact-pnl"));
    le("exact_inverse_postnonlinear_max_cf_error", exact_pnl.max_cf_error, 1e-10);

    const double delta = 0.01;
    const CorollaryReport bound = corollary_harness(ortho, delta, 1000, seed_for(base, "bound"));
    le("distorted_isometry_max_recon_error", bound.max_recon_error, delta + 1e-10);
    le("distorted_isometry_max_cf_error", bound.max_cf_error, delta + 1e-10);

    const ViolationReport violation = condition_violation_probe(additive, 0.05, 1000, seed_for(base, "violation"));
    ge("label_leak_probe_cf_exceeds_recon_trials", static_cast<double>(violation.cf_exceeds_recon), 1.0);

    const TheoremReport th_add = verify_theorem_conditions(additive, 100, 10000, seed_for(base, "theorem-additive"));
    gt("jacobian_min_eigenvalue_additive", th_add.min_jacobian_eig, 0.0);
    lt("latent_parent_max_correlation_additive", th_add.max_latent_corr, 0.05);
    le("q_scalar_orthogonal_defect_additive", th_add.max_q_defect, 1e-8);

    const TheoremReport th_pnl = verify_theorem_conditions(pnl, 100, 10000, seed_for(base, "theorem-pnl"));
    gt("jacobian_min_eigenvalue_postnonlinear", th_pnl.min_jacobian_eig, 0.0);
    lt("latent_parent_max_correlation_postnonlinear", th_pnl.max_latent_corr, 0.05);
    le("q_scalar_orthogonal_defect_postnonlinear", th_pnl.max_q_defect, 1e-8);

    CsvWriter csv(paths.theory_report(), {"check", "value", "bound", "direction", "pass"}, config_hash(cfg));
    bool all_pass = true;
    for (const auto& r : rows) {
        csv.row({r.check, format_double(r.value), format_double(r.bound), r.direction, r.pass ? "1" : "0"});
        std::printf("%-46s %14.6g %s %-8.3g %s\n", r.check.c_str(), r.value, r.direction.c_str(), r.bound,
                    r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    csv.close();
    std::printf("verify-theory: %s (%.1fs)\n", all_pass ? "all checks passed" : "CHECKS FAILED", seconds_since(t0));
    return all_pass ? 0 : 1;
}

}  // namespace cfp
