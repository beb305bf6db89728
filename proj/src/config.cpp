#include "cfp/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cfp/rng.hpp"

namespace cfp {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail_at(const std::string& source, int line, const std::string& msg) {
    throw std::runtime_error(source + ":" + std::to_string(line) + ": " + msg);
}

// One entry per key: how to set it from text and how to print it. Keeping
// parse and serialize in a single table means they cannot drift apart.
struct KeySpec {
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

long long parse_ll(const std::string& raw) {
    std::size_t pos = 0;
    const long long v = std::stoll(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument("trailing characters");
    return v;
}

double parse_d(const std::string& raw) {
    std::size_t pos = 0;
    const double v = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument("trailing characters");
    return v;
}

std::vector<int> parse_int_list(const std::string& raw) {
    std::vector<int> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw std::invalid_argument("empty list element");
        out.push_back(static_cast<int>(parse_ll(item)));
    }
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

using C = ExperimentConfig;

KeySpec int_key(int C::* field) {
    return {[field](C& c, const std::string& raw) { c.*field = static_cast<int>(parse_ll(raw)); },
            [field](const C& c) { return std::to_string(c.*field); }};
}

KeySpec double_key(double C::* field) {
    return {[field](C& c, const std::string& raw) { c.*field = parse_d(raw); },
            [field](const C& c) { return fmt_double(c.*field); }};
}

KeySpec list_key(std::vector<int> C::* field) {
    return {[field](C& c, const std::string& raw) { c.*field = parse_int_list(raw); },
            [field](const C& c) { return fmt_int_list(c.*field); }};
}

KeySpec string_key(std::string C::* field) {
    return {[field](C& c, const std::string& raw) { c.*field = raw; },
            [field](const C& c) { return c.*field; }};
}

KeySpec seed_key() {
    return {[](C& c, const std::string& raw) {
                std::size_t pos = 0;
                c.seed = std::stoull(raw, &pos);
                if (pos != raw.size()) throw std::invalid_argument("trailing characters");
            },
            [](const C& c) { return std::to_string(c.seed); }};
}

// Declaration order here is the canonical serialization order.
const std::vector<std::pair<std::string, KeySpec>>& key_table() {
    static const std::vector<std::pair<std::string, KeySpec>> table = {
        {"classes", int_key(&C::classes)},
        {"image_side", int_key(&C::image_side)},
        {"sigma_x", double_key(&C::sigma_x)},
        {"seed", seed_key()},
        {"shots", int_key(&C::shots)},
        {"test_per_class", int_key(&C::test_per_class)},
        {"pool_per_class", int_key(&C::pool_per_class)},
        {"seen_classes", list_key(&C::seen_classes)},
        {"unseen_classes", list_key(&C::unseen_classes)},
        {"timesteps", int_key(&C::timesteps)},
        {"beta_min", double_key(&C::beta_min)},
        {"beta_max", double_key(&C::beta_max)},
        {"denoiser_hidden", list_key(&C::denoiser_hidden)},
        {"time_embed_dim", int_key(&C::time_embed_dim)},
        {"diffusion_steps", int_key(&C::diffusion_steps)},
        {"diffusion_batch", int_key(&C::diffusion_batch)},
        {"diffusion_lr", double_key(&C::diffusion_lr)},
        {"classifier_hidden", list_key(&C::classifier_hidden)},
        {"classifier_steps", int_key(&C::classifier_steps)},
        {"classifier_batch", int_key(&C::classifier_batch)},
        {"classifier_lr", double_key(&C::classifier_lr)},
        {"label_smoothing", double_key(&C::label_smoothing)},
        {"guidance_scale", double_key(&C::guidance_scale)},
        {"cf_strategy", string_key(&C::cf_strategy)},
        {"dump_triplets", int_key(&C::dump_triplets)},
        {"encoder_hidden", list_key(&C::encoder_hidden)},
        {"embed_dim", int_key(&C::embed_dim)},
        {"encoder_steps", int_key(&C::encoder_steps)},
        {"encoder_batch", int_key(&C::encoder_batch)},
        {"encoder_lr", double_key(&C::encoder_lr)},
        {"prompt_length", int_key(&C::prompt_length)},
        {"tau", double_key(&C::tau)},
        {"lambda", double_key(&C::lambda)},
        {"prompt_epochs", int_key(&C::prompt_epochs)},
        {"prompt_lr", double_key(&C::prompt_lr)},
        {"eval_seeds", int_key(&C::eval_seeds)},
        {"delta_recon", double_key(&C::delta_recon)},
        {"runtime_budget_seconds", double_key(&C::runtime_budget_seconds)},
        {"out_dir", string_key(&C::out_dir)},
    };
    return table;
}

const KeySpec* find_key(const std::string& name) {
    for (const auto& [key, spec] : key_table()) {
        if (key == name) return &spec;
    }
    return nullptr;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string raw_line;
    int line_no = 0;
    while (std::getline(ss, raw_line)) {
        ++line_no;
        const std::string line = trim(raw_line);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail_at(source, line_no, "expected `key = value`, got `" + line + "`");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail_at(source, line_no, "missing key before `=`");
        const KeySpec* spec = find_key(key);
        if (!spec) fail_at(source, line_no, "unknown key `" + key + "`");
        try {
            spec->set(cfg, value);
        } catch (const std::exception&) {
            fail_at(source, line_no, "invalid value `" + value + "` for key `" + key + "`");
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, spec] : key_table()) {
        out += key;
        out += " = ";
        out += spec.get(cfg);
        out += "\n";
    }
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string canon = serialize_config(cfg);
    return fnv1a64(canon.data(), canon.size());
}

std::uint64_t lineage_hash(const ExperimentConfig& cfg) {
    static const std::vector<std::string> lineage_keys = {
        "classes",         "image_side",      "sigma_x",          "seed",
        "shots",           "test_per_class",  "pool_per_class",   "seen_classes",
        "unseen_classes",  "timesteps",       "beta_min",         "beta_max",
        "denoiser_hidden", "time_embed_dim",  "diffusion_steps",  "diffusion_batch",
        "diffusion_lr",    "classifier_hidden", "classifier_steps", "classifier_batch",
        "classifier_lr",   "label_smoothing",
    };
    std::string canon;
    for (const auto& key : lineage_keys) {
        const KeySpec* spec = find_key(key);
        canon += key;
        canon += " = ";
        canon += spec->get(cfg);
        canon += "\n";
    }
    return fnv1a64(canon.data(), canon.size());
}

void validate_config(const ExperimentConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::runtime_error("config: " + msg); };
    if (cfg.classes < 3 || cfg.classes > 12) fail("classes must lie in [3,12]");
    if (cfg.image_side < 8) fail("image_side must be >= 8");
    if (cfg.sigma_x < 0.0 || cfg.sigma_x > 0.2) fail("sigma_x must lie in [0,0.2]");
    if (cfg.shots < 1) fail("shots must be >= 1");
    if (cfg.test_per_class < 1) fail("test_per_class must be >= 1");
    if (cfg.pool_per_class < 1) fail("pool_per_class must be >= 1");
    if (cfg.seen_classes.empty() || cfg.unseen_classes.empty()) fail("seen and unseen class lists must be non-empty");
    std::vector<int> all = cfg.seen_classes;
    all.insert(all.end(), cfg.unseen_classes.begin(), cfg.unseen_classes.end());
    std::vector<int> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        fail("seen and unseen class lists must be disjoint and duplicate-free");
    }
    for (int c : all) {
        if (c < 0 || c >= cfg.classes) fail("class id " + std::to_string(c) + " outside [0," + std::to_string(cfg.classes) + ")");
    }
    if (cfg.timesteps < 2) fail("timesteps must be >= 2");
    if (!(cfg.beta_min > 0.0) || !(cfg.beta_max < 1.0) || cfg.beta_min > cfg.beta_max) {
        fail("beta range must satisfy 0 < beta_min <= beta_max < 1");
    }
    if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0) fail("time_embed_dim must be even and >= 2");
    for (int h : cfg.denoiser_hidden) {
        if (h < 1) fail("denoiser_hidden widths must be positive");
    }
    for (int h : cfg.classifier_hidden) {
        if (h < 1) fail("classifier_hidden widths must be positive");
    }
    for (int h : cfg.encoder_hidden) {
        if (h < 1) fail("encoder_hidden widths must be positive");
    }
    if (cfg.diffusion_steps < 1 || cfg.classifier_steps < 1 || cfg.encoder_steps < 1) fail("training steps must be >= 1");
    if (cfg.diffusion_batch < 1 || cfg.classifier_batch < 1 || cfg.encoder_batch < 1) fail("batch sizes must be >= 1");
    if (!(cfg.diffusion_lr > 0.0) || !(cfg.classifier_lr > 0.0) || !(cfg.encoder_lr > 0.0) || !(cfg.prompt_lr > 0.0)) {
        fail("learning rates must be positive");
    }
    if (cfg.label_smoothing < 0.0 || cfg.label_smoothing >= 1.0) fail("label_smoothing must lie in [0,1)");
    if (cfg.guidance_scale < 0.0) fail("guidance_scale must be non-negative");
    if (cfg.cf_strategy != "similarity" && cfg.cf_strategy != "random") {
        fail("cf_strategy must be `similarity` or `random`, got `" + cfg.cf_strategy + "`");
    }
    if (cfg.dump_triplets < 0) fail("dump_triplets must be non-negative");
    if (cfg.embed_dim < 2) fail("embed_dim must be >= 2");
    if (cfg.prompt_length < 1) fail("prompt_length must be >= 1");
    if (!(cfg.tau > 0.0)) fail("tau must be positive");
    if (cfg.lambda < 0.0) fail("lambda must be non-negative");
    if (cfg.prompt_epochs < 1) fail("prompt_epochs must be >= 1");
    if (cfg.eval_seeds < 1) fail("eval_seeds must be >= 1");
    if (!(cfg.delta_recon > 0.0)) fail("delta_recon must be positive");
    if (!(cfg.runtime_budget_seconds > 0.0)) fail("runtime_budget_seconds must be positive");
    if (cfg.out_dir.empty()) fail("out_dir must be non-empty");
}

}  // namespace cfp
