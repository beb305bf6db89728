#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Synthetic image world: the label y places a glyph, the style vector n
// paints a striped background, and uniform per-pixel noise u_x adds texture.
// Because the generating process is explicit, exact counterfactuals are
// available by re-rendering with stored (n, u_x) and a substituted label.

struct ScmSpec {
    int num_classes = 6;
    int side = 16;  // image is side x side, flattened row-major
    double sigma_x = 0.05;

    static constexpr int style_dim = 3;  // orientation, frequency, amplitude

    int image_dim() const { return side * side; }
    void validate() const;
};

struct ScmSample {
    std::vector<double> u_x;  // Unif[0,1]^m, independent of (y, n)
    double u_y = 0.0;
    std::vector<double> u_n;
    int y = 0;
    std::vector<double> n;  // mapped style parameters
    Tensor x;               // rendered image in [0,1]
};

// Class-c glyph as a binary mask over side*side pixels. Classes 0..11 have
// distinct shapes; some pairs (bar/cross, ring/disc, disc/cored-disc)
// overlap heavily on purpose so "nearest wrong class" is a meaningful
// notion and the default unseen pair {4, 5} is genuinely fine-grained.
std::vector<std::uint8_t> glyph_mask(int side, int cls);
int max_glyph_classes();

// Pixels where either glyph could draw; its complement is provably
// label-independent.
std::vector<std::uint8_t> mask_union(int side, int cls_a, int cls_b);

// (u_n in [0,1]^3) -> style parameters (theta in [0,pi), freq in [1,4], amp in [0,1]).
std::vector<double> style_from_exogenous(const std::vector<double>& u_n);

// Deterministic render x = f(y, n, u_x).
Tensor render_image(const ScmSpec& spec, int y, const std::vector<double>& n, const std::vector<double>& u_x);

// Ancestral draw: u_y -> y, u_n -> n, u_x, then render.
ScmSample sample_scm(const ScmSpec& spec, std::uint64_t seed);

// Ground-truth counterfactual oracle: re-render with (y_cf, n, u_x).
Tensor true_counterfactual(const ScmSpec& spec, const ScmSample& sample, int y_cf);

struct DatasetSplit {
    std::vector<int> seen;
    std::vector<int> unseen;
    int shots = 0;
    std::vector<ScmSample> train;  // exactly `shots` per seen class
    std::vector<ScmSample> test;   // `test_per_class` per class, seen and unseen
};

DatasetSplit make_splits(const ScmSpec& spec, const std::vector<int>& seen, const std::vector<int>& unseen,
                         int shots, int test_per_class, std::uint64_t seed);

// Flat binary dataset + text manifest. Per sample: y (int32), n, u_x, x
// (doubles); header records the generating spec, seed and config hash.
void save_dataset(const std::filesystem::path& path, const ScmSpec& spec, const std::vector<ScmSample>& samples,
                  std::uint64_t seed, std::uint64_t config_hash);
std::vector<ScmSample> load_dataset(const std::filesystem::path& path, ScmSpec* spec_out = nullptr,
                                    std::uint64_t* config_hash_out = nullptr);
void write_manifest(const std::filesystem::path& path, const ScmSpec& spec, std::size_t count, std::uint64_t seed,
                    std::uint64_t config_hash);

}  // namespace cfp
