#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfp/analytic_scm.hpp"
#include "cfp/anticausal.hpp"
#include "cfp/diffusion.hpp"
#include "cfp/rng.hpp"
#include "cfp/scm.hpp"

namespace cfp {

// Abduction -> action -> estimation over the trained image pipeline, plus
// the exact-harness checks that make the error-bound claims executable.

struct CounterfactualPair {
    Tensor x;       // factual image [m], pixels in [0,1]
    int y = 0;
    int y_cf = 0;
    Tensor x_cf;    // generated counterfactual, clamped to [0,1]
    double s = 0.0; // guidance scale used
    Tensor latent;  // abducted signal-space latent
    bool has_oracle = false;
    Tensor x_cf_true;  // exact re-render when exogenous values are known
};

// similarity: runner-up class by predicted probability (ties -> lowest
// index); random: uniform over classes != y.
int select_cf_label(const std::vector<double>& probs, int y, const std::string& strategy, Rng& rng);

// Batch generation: one abduction pass, then T-1 guided reverse steps with
// fresh classifier gradients at each timestep. Deterministic given inputs
// and checkpoints (the rng only serves the random label strategy).
std::vector<CounterfactualPair> generate_counterfactuals(const Tensor& images01, const std::vector<int>& labels,
                                                         const DenoiserModel& model,
                                                         const AntiCausalClassifier& clf, const NoiseSchedule& sched,
                                                         double s, const std::string& strategy, Rng& rng);

struct CfQualityReport {
    double d_l2 = 0.0;
    double d_linf = 0.0;
    bool label_flipped = false;
    double flip_confidence = 0.0;    // p(y_cf | x_cf, t=0)
    double non_causal_leakage = 0.0; // L2 distance outside both glyph masks
    double causal_distance = 0.0;    // L2 distance inside the mask union
    double quality_score = 0.0;      // d_l2/sqrt(m) + (1 - flip_confidence); lower is better
};

CfQualityReport evaluate_quality(const CounterfactualPair& pair, const AntiCausalClassifier& clf, int side);

// Corollary harness: run the exact inverse pair with a fixed latent offset of
// magnitude delta_inject and measure worst-case reconstruction and
// counterfactual errors (L2). With the unit-scale orthogonal family the
// latent-to-output map is an isometry, so both maxima are exactly
// delta_inject.
struct CorollaryReport {
    double max_recon_error = 0.0;
    double max_cf_error = 0.0;
    int trials = 0;
};

CorollaryReport corollary_harness(const AnalyticScm& scm, double delta_inject, int trials, std::uint64_t seed);

// Deliberately breaks the latent-independence condition: the abduction is
// offset by an amount that grows with the decoded class. With a class-
// dependent scale c the counterfactual error then exceeds the reconstruction
// error whenever c(y_cf) > c(y) — evidence the conditions are load-bearing.
struct ViolationReport {
    int trials = 0;
    int cf_exceeds_recon = 0;
    double max_excess = 0.0;
};

ViolationReport condition_violation_probe(const AnalyticScm& scm, double rho, int trials, std::uint64_t seed);

// Numeric checks of the recovery conditions on the analytic family.
struct TheoremReport {
    int jacobian_points = 0;
    double min_jacobian_eig = 0.0;   // min over points, symmetric part of J_f
    int corr_draws = 0;
    double max_latent_corr = 0.0;    // |corr(g*(x)_i, parent)| worst case
    double max_q_defect = 0.0;       // worst ||J_q J_q^T - kappa I||_inf
};

TheoremReport verify_theorem_conditions(const AnalyticScm& scm, int jacobian_points, int corr_draws,
                                        std::uint64_t seed);

}  // namespace cfp
