#include "cfp/scm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "cfp/io.hpp"

namespace cfp {

namespace {

constexpr double kGlyphIntensity = 0.85;
constexpr double kBackgroundBase = 0.15;
constexpr double kBackgroundSwing = 0.70;  // stripe peaks reach 0.85 = glyph intensity, so the
                                           // glyph/background boundary is genuinely ambiguous
                                           // where a bright stripe phase crosses it
constexpr double kPi = 3.14159265358979323846;

constexpr std::uint32_t kDatasetMagic = 0x53444643u;  // "CFDS"
constexpr std::uint32_t kDatasetVersion = 1;

// Shape predicates in centered coordinates fr, fc in (-0.5, 0.5).
bool glyph_hit(int cls, double fr, double fc) {
    const double r = std::sqrt(fr * fr + fc * fc);
    switch (cls) {
        case 0: return std::abs(fr) <= 0.10;                                   // horizontal bar
        case 1: return std::abs(fc) <= 0.10;                                   // vertical bar
        case 2: return std::abs(fr) <= 0.10 || std::abs(fc) <= 0.10;           // cross
        case 3: return r >= 0.22 && r <= 0.38;                                 // ring
        case 4: return r <= 0.30;                                              // disc
        case 5: return r >= 0.12 && r <= 0.30;                                 // cored disc
        case 6: return std::abs(std::abs(fr) - std::abs(fc)) <= 0.08;          // X
        case 7: return std::abs(fr) >= 0.28 && std::abs(fc) >= 0.28;           // four corners
        case 8: return std::max(std::abs(fr), std::abs(fc)) >= 0.36;           // frame
        case 9: return std::abs(std::abs(fr) - 0.22) <= 0.07;                  // double bars
        case 10: return (fr > 0.0) != (fc > 0.0) && r <= 0.42;                 // opposing quadrants
        case 11: return fr >= -0.25 && fr <= 0.35 && std::abs(fc) <= 0.55 * (fr + 0.25);  // triangle
        default: return false;
    }
}

}  // namespace

int max_glyph_classes() { return 12; }

void ScmSpec::validate() const {
    if (num_classes < 3) throw std::invalid_argument("ScmSpec: need at least 3 classes");
    if (num_classes > max_glyph_classes()) {
        throw std::invalid_argument("ScmSpec: only " + std::to_string(max_glyph_classes()) +
                                    " glyph classes are defined");
    }
    if (side < 8) throw std::invalid_argument("ScmSpec: side must be at least 8 to resolve glyphs");
    if (sigma_x < 0.0 || sigma_x > 0.2) throw std::invalid_argument("ScmSpec: sigma_x must lie in [0, 0.2]");
}

std::vector<std::uint8_t> glyph_mask(int side, int cls) {
    if (cls < 0 || cls >= max_glyph_classes()) {
        throw std::invalid_argument("glyph_mask: unknown class " + std::to_string(cls));
    }
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(side) * side, 0);
    for (int r = 0; r < side; ++r) {
        const double fr = (r + 0.5) / side - 0.5;
        for (int c = 0; c < side; ++c) {
            const double fc = (c + 0.5) / side - 0.5;
            mask[static_cast<std::size_t>(r) * side + c] = glyph_hit(cls, fr, fc) ? 1 : 0;
        }
    }
    return mask;
}

std::vector<std::uint8_t> mask_union(int side, int cls_a, int cls_b) {
    std::vector<std::uint8_t> a = glyph_mask(side, cls_a);
    const std::vector<std::uint8_t> b = glyph_mask(side, cls_b);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] | b[i];
    return a;
}

std::vector<double> style_from_exogenous(const std::vector<double>& u_n) {
    if (u_n.size() != ScmSpec::style_dim) {
        throw std::invalid_argument("style_from_exogenous: expected " + std::to_string(ScmSpec::style_dim) +
                                    " exogenous style values");
    }
    return {kPi * u_n[0], 1.0 + 3.0 * u_n[1], u_n[2]};
}

Tensor render_image(const ScmSpec& spec, int y, const std::vector<double>& n, const std::vector<double>& u_x) {
    spec.validate();
    if (y < 0 || y >= spec.num_classes) {
        throw std::invalid_argument("render_image: class " + std::to_string(y) + " outside [0," +
                                    std::to_string(spec.num_classes) + ")");
    }
    if (static_cast<int>(n.size()) != ScmSpec::style_dim) {
        throw std::invalid_argument("render_image: style vector must have " + std::to_string(ScmSpec::style_dim) +
                                    " entries");
    }
    if (static_cast<int>(u_x.size()) != spec.image_dim()) {
        throw std::invalid_argument("render_image: u_x must have " + std::to_string(spec.image_dim()) + " entries");
    }
    const double theta = n[0], freq = n[1], amp = n[2];
    const double ct = std::cos(theta), st = std::sin(theta);
    const std::vector<std::uint8_t> mask = glyph_mask(spec.side, y);
    Tensor img = Tensor::zeros({spec.image_dim()});
    for (int r = 0; r < spec.side; ++r) {
        const double fr = (r + 0.5) / spec.side - 0.5;
        for (int c = 0; c < spec.side; ++c) {
            const double fc = (c + 0.5) / spec.side - 0.5;
            const int idx = r * spec.side + c;
            double v;
            if (mask[static_cast<std::size_t>(idx)]) {
                v = kGlyphIntensity;
            } else {
                const double phase = std::sin(2.0 * kPi * freq * (fc * ct + fr * st));
                v = kBackgroundBase + kBackgroundSwing * amp * 0.5 * (1.0 + phase);
            }
            // Centered texture: the sigma_x = 0 render is also the mean render.
            v += spec.sigma_x * (u_x[static_cast<std::size_t>(idx)] - 0.5);
            img[idx] = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

ScmSample sample_scm(const ScmSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ScmSample s;
    s.u_y = rng.uniform();
    s.y = std::min(spec.num_classes - 1, static_cast<int>(s.u_y * spec.num_classes));
    s.u_n = rng.uniform_vector(ScmSpec::style_dim);
    s.n = style_from_exogenous(s.u_n);
    s.u_x = rng.uniform_vector(static_cast<std::size_t>(spec.image_dim()));
    s.x = render_image(spec, s.y, s.n, s.u_x);
    return s;
}

Tensor true_counterfactual(const ScmSpec& spec, const ScmSample& sample, int y_cf) {
    if (y_cf == sample.y) {
        throw std::invalid_argument("true_counterfactual: counterfactual class equals the factual class");
    }
    return render_image(spec, y_cf, sample.n, sample.u_x);
}

DatasetSplit make_splits(const ScmSpec& spec, const std::vector<int>& seen, const std::vector<int>& unseen,
                         int shots, int test_per_class, std::uint64_t seed) {
    spec.validate();
    if (shots < 1) throw std::invalid_argument("make_splits: shots must be >= 1");
    if (test_per_class < 0) throw std::invalid_argument("make_splits: test_per_class must be >= 0");
    if (seen.empty()) throw std::invalid_argument("make_splits: no seen classes");
    std::map<int, int> role;  // class -> 0 seen, 1 unseen
    for (int c : seen) {
        if (c < 0 || c >= spec.num_classes) throw std::invalid_argument("make_splits: bad seen class id");
        if (!role.emplace(c, 0).second) throw std::invalid_argument("make_splits: duplicate class id");
    }
    for (int c : unseen) {
        if (c < 0 || c >= spec.num_classes) throw std::invalid_argument("make_splits: bad unseen class id");
        if (!role.emplace(c, 1).second) {
            throw std::invalid_argument("make_splits: seen and unseen lists overlap (class " + std::to_string(c) +
                                        ")");
        }
    }

    DatasetSplit split;
    split.seen = seen;
    split.unseen = unseen;
    split.shots = shots;

    std::map<int, int> train_need, test_need;
    for (int c : seen) train_need[c] = shots;
    for (const auto& [c, r] : role) test_need[c] = test_per_class;

    long long remaining = 0;
    for (const auto& [c, k] : train_need) remaining += k;
    for (const auto& [c, k] : test_need) remaining += k;

    // Rejection-fill from one deterministic sample stream: train quota first,
    // then test, so train/test never share a sample.
    for (std::uint64_t i = 0; remaining > 0; ++i) {
        if (i > 10000ull * static_cast<std::uint64_t>(remaining + 1) + 100000ull) {
            throw std::runtime_error("make_splits: sample stream failed to fill quotas (class probabilities broken?)");
        }
        ScmSample s = sample_scm(spec, seed_for(seed, "split-sample", i));
        auto it = role.find(s.y);
        if (it == role.end()) continue;
        if (it->second == 0 && train_need[s.y] > 0) {
            --train_need[s.y];
            --remaining;
            split.train.push_back(std::move(s));
        } else if (test_need[s.y] > 0) {
            --test_need[s.y];
            --remaining;
            split.test.push_back(std::move(s));
        }
    }
    return split;
}

void save_dataset(const std::filesystem::path& path, const ScmSpec& spec, const std::vector<ScmSample>& samples,
                  std::uint64_t seed, std::uint64_t config_hash) {
    spec.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_u32(os, kDatasetMagic);
    write_u32(os, kDatasetVersion);
    write_u64(os, config_hash);
    write_u64(os, seed);
    write_i32(os, spec.num_classes);
    write_i32(os, spec.side);
    write_i32(os, ScmSpec::style_dim);
    write_f64(os, spec.sigma_x);
    write_u64(os, samples.size());
    for (const ScmSample& s : samples) {
        if (static_cast<int>(s.u_x.size()) != spec.image_dim() || s.x.numel() != spec.image_dim()) {
            throw std::invalid_argument("save_dataset: sample shape does not match spec");
        }
        write_i32(os, s.y);
        write_f64_array(os, s.n.data(), s.n.size());
        write_f64_array(os, s.u_x.data(), s.u_x.size());
        write_f64_array(os, s.x.ptr(), static_cast<std::size_t>(s.x.numel()));
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ScmSample> load_dataset(const std::filesystem::path& path, ScmSpec* spec_out,
                                    std::uint64_t* config_hash_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset " + path.string());
    const std::string ctx = path.string();
    if (read_u32(is, ctx + " magic") != kDatasetMagic) {
        throw std::runtime_error(ctx + " is not a dataset file (bad magic)");
    }
    if (read_u32(is, ctx + " version") != kDatasetVersion) {
        throw std::runtime_error(ctx + ": unsupported dataset version");
    }
    const std::uint64_t config_hash = read_u64(is, ctx + " config hash");
    (void)read_u64(is, ctx + " seed");
    ScmSpec spec;
    spec.num_classes = read_i32(is, ctx + " class count");
    spec.side = read_i32(is, ctx + " side");
    const int style_dim = read_i32(is, ctx + " style dim");
    if (style_dim != ScmSpec::style_dim) {
        throw std::runtime_error(ctx + ": style dimension " + std::to_string(style_dim) + " unsupported");
    }
    spec.sigma_x = read_f64(is, ctx + " sigma_x");
    spec.validate();
    const std::uint64_t count = read_u64(is, ctx + " sample count");
    if (count > (1ull << 24)) throw std::runtime_error(ctx + ": implausible sample count");
    std::vector<ScmSample> samples;
    samples.reserve(count);
    const int m = spec.image_dim();
    for (std::uint64_t i = 0; i < count; ++i) {
        ScmSample s;
        s.y = read_i32(is, ctx + " sample label");
        if (s.y < 0 || s.y >= spec.num_classes) throw std::runtime_error(ctx + ": label out of range");
        s.n.resize(ScmSpec::style_dim);
        read_f64_array(is, s.n.data(), s.n.size(), ctx + " style");
        s.u_x.resize(static_cast<std::size_t>(m));
        read_f64_array(is, s.u_x.data(), s.u_x.size(), ctx + " u_x");
        s.x = Tensor::zeros({m});
        read_f64_array(is, s.x.ptr(), static_cast<std::size_t>(m), ctx + " image");
        // The file stores mapped style and texture noise (all the oracle
        // needs); reconstruct exogenous draws consistent with them.
        s.u_y = (s.y + 0.5) / spec.num_classes;
        s.u_n = {s.n[0] / kPi, (s.n[1] - 1.0) / 3.0, s.n[2]};
        samples.push_back(std::move(s));
    }
    if (spec_out) *spec_out = spec;
    if (config_hash_out) *config_hash_out = config_hash;
    return samples;
}

void write_manifest(const std::filesystem::path& path, const ScmSpec& spec, std::size_t count, std::uint64_t seed,
                    std::uint64_t config_hash) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(config_hash));
    os << "dataset_version=" << kDatasetVersion << "\n";
    os << "config_hash=" << hash << "\n";
    os << "seed=" << seed << "\n";
    os << "num_classes=" << spec.num_classes << "\n";
    os << "side=" << spec.side << "\n";
    os << "style_dim=" << ScmSpec::style_dim << "\n";
    os << "sigma_x=" << format_double(spec.sigma_x) << "\n";
    os << "samples=" << count << "\n";
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cfp
