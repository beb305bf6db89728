#include "cfp/cf_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfp/kernels.hpp"
#include "cfp/linalg.hpp"

namespace cfp {

namespace {

double l2_vec(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<double> unit_direction(int m, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(m));
    double norm = 0.0;
    for (auto& v : w) {
        v = rng.gaussian();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : w) v /= norm;
    return w;
}

int pick_other_class(int y, int num_classes, Rng& rng) {
    const int offset = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(num_classes - 1)));
    return (y + offset) % num_classes;
}

}  // namespace

int select_cf_label(const std::vector<double>& probs, int y, const std::string& strategy, Rng& rng) {
    const int k = static_cast<int>(probs.size());
    if (k < 2) throw std::invalid_argument("select_cf_label: need at least 2 classes");
    if (y < 0 || y >= k) throw std::invalid_argument("select_cf_label: factual class out of range");
    if (strategy == "similarity") {
        int best = -1;
        for (int c = 0; c < k; ++c) {
            if (c == y) continue;
            if (best < 0 || probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)]) best = c;
        }
        return best;  // strict > keeps the lowest index on ties
    }
    if (strategy == "random") {
        return pick_other_class(y, k, rng);
    }
    throw std::invalid_argument("select_cf_label: unknown strategy '" + strategy + "' (similarity|random)");
}

std::vector<CounterfactualPair> generate_counterfactuals(const Tensor& images01, const std::vector<int>& labels,
                                                         const DenoiserModel& model,
                                                         const AntiCausalClassifier& clf, const NoiseSchedule& sched,
                                                         double s, const std::string& strategy, Rng& rng) {
    if (images01.rank() != 2 || images01.rows() != static_cast<int>(labels.size())) {
        throw std::invalid_argument("generate_counterfactuals: one label per image row required");
    }
    if (s < 0.0) throw std::invalid_argument("generate_counterfactuals: guidance scale must be >= 0");
    const int b = images01.rows();

    // Action: pick target classes from clean-image probabilities.
    const Tensor probs0 = class_probs(clf, to_signal(images01), 0);
    std::vector<int> y_cf(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        std::vector<double> row(probs0.ptr() + static_cast<std::size_t>(i) * probs0.cols(),
                                probs0.ptr() + static_cast<std::size_t>(i + 1) * probs0.cols());
        y_cf[static_cast<std::size_t>(i)] = select_cf_label(row, labels[static_cast<std::size_t>(i)], strategy, rng);
    }

    // Abduction.
    const Tensor latent = abduct(images01, model, sched);

    // Estimation: guided reverse from the shared latent.
    Tensor x = latent;
    for (int t = sched.T - 1; t >= 1; --t) {
        const Tensor guidance = log_prob_grad_batch(clf, x, t, y_cf);
        x = guided_reverse_step(x, t, model, sched, guidance, s);
    }
    const Tensor x_cf01 = clamp01(from_signal(x));

    std::vector<CounterfactualPair> pairs(static_cast<std::size_t>(b));
    const int m = images01.cols();
    for (int i = 0; i < b; ++i) {
        CounterfactualPair& p = pairs[static_cast<std::size_t>(i)];
        p.y = labels[static_cast<std::size_t>(i)];
        p.y_cf = y_cf[static_cast<std::size_t>(i)];
        p.s = s;
        p.x = Tensor::zeros({m});
        p.x_cf = Tensor::zeros({m});
        p.latent = Tensor::zeros({m});
        for (int j = 0; j < m; ++j) {
            p.x[j] = images01(i, j);
            p.x_cf[j] = x_cf01(i, j);
            p.latent[j] = latent(i, j);
        }
    }
    return pairs;
}

CfQualityReport evaluate_quality(const CounterfactualPair& pair, const AntiCausalClassifier& clf, int side) {
    if (pair.x.numel() != side * side || !pair.x.same_shape(pair.x_cf)) {
        throw std::invalid_argument("evaluate_quality: image shapes do not match side*side");
    }
    CfQualityReport r;
    r.d_l2 = l2_distance(pair.x, pair.x_cf);
    r.d_linf = linf_distance(pair.x, pair.x_cf);

    Tensor row({1, pair.x_cf.numel()}, pair.x_cf.data);
    const Tensor probs = class_probs(clf, to_signal(row), 0);
    int arg = 0;
    for (int j = 1; j < probs.cols(); ++j) {
        if (probs(0, j) > probs(0, arg)) arg = j;
    }
    r.label_flipped = (arg == pair.y_cf);
    r.flip_confidence = probs(0, pair.y_cf);

    const std::vector<std::uint8_t> inside = mask_union(side, pair.y, pair.y_cf);
    double out_sq = 0.0, in_sq = 0.0;
    for (int i = 0; i < pair.x.numel(); ++i) {
        const double d = pair.x[i] - pair.x_cf[i];
        if (inside[static_cast<std::size_t>(i)]) {
            in_sq += d * d;
        } else {
            out_sq += d * d;
        }
    }
    r.non_causal_leakage = std::sqrt(out_sq);
    r.causal_distance = std::sqrt(in_sq);
    r.quality_score = r.d_l2 / std::sqrt(static_cast<double>(pair.x.numel())) + (1.0 - r.flip_confidence);
    return r;
}

CorollaryReport corollary_harness(const AnalyticScm& scm, double delta_inject, int trials, std::uint64_t seed) {
    if (delta_inject < 0.0) throw std::invalid_argument("corollary_harness: distortion must be >= 0");
    if (trials < 1) throw std::invalid_argument("corollary_harness: need at least one trial");
    Rng dir_rng(seed_for(seed, "harness-direction"));
    const std::vector<double> w = unit_direction(scm.m, dir_rng);

    CorollaryReport report;
    report.trials = trials;
    for (int trial = 0; trial < trials; ++trial) {
        const AnalyticDraw d = analytic_scm_draw(scm, seed_for(seed, "harness-trial", static_cast<std::uint64_t>(trial)));
        Rng trial_rng(seed_for(seed, "harness-cf", static_cast<std::uint64_t>(trial)));
        const int y_cf = pick_other_class(d.y, scm.num_classes, trial_rng);

        std::vector<double> l = scm.abduct_exact(d.x);
        for (int i = 0; i < scm.m; ++i) l[static_cast<std::size_t>(i)] += delta_inject * w[static_cast<std::size_t>(i)];

        const std::vector<double> recon = scm.reconstruct(l, d.y, d.n);
        const std::vector<double> cf_est = scm.reconstruct(l, y_cf, d.n);
        const std::vector<double> cf_true = scm.forward(y_cf, d.n, d.u);

        report.max_recon_error = std::max(report.max_recon_error, l2_vec(recon, d.x));
        report.max_cf_error = std::max(report.max_cf_error, l2_vec(cf_est, cf_true));
    }
    return report;
}

ViolationReport condition_violation_probe(const AnalyticScm& scm, double rho, int trials, std::uint64_t seed) {
    if (rho <= 0.0) throw std::invalid_argument("condition_violation_probe: rho must be positive");
    Rng dir_rng(seed_for(seed, "probe-direction"));
    const std::vector<double> w = unit_direction(scm.m, dir_rng);

    ViolationReport report;
    report.trials = trials;
    for (int trial = 0; trial < trials; ++trial) {
        const AnalyticDraw d = analytic_scm_draw(scm, seed_for(seed, "probe-trial", static_cast<std::uint64_t>(trial)));
        Rng trial_rng(seed_for(seed, "probe-cf", static_cast<std::uint64_t>(trial)));
        const int y_cf = pick_other_class(d.y, scm.num_classes, trial_rng);

        // Abduction that leaks the class: offset scales with decoded y.
        const std::vector<int> cell = scm.decode_cell(d.x);
        std::vector<double> l = scm.abduct_exact(d.x);
        const double magnitude = rho * (1.0 + cell[0]);
        for (int i = 0; i < scm.m; ++i) l[static_cast<std::size_t>(i)] += magnitude * w[static_cast<std::size_t>(i)];

        const double recon_err = l2_vec(scm.reconstruct(l, d.y, d.n), d.x);
        const double cf_err = l2_vec(scm.reconstruct(l, y_cf, d.n), scm.forward(y_cf, d.n, d.u));
        if (cf_err > recon_err + 1e-12) {
            ++report.cf_exceeds_recon;
            report.max_excess = std::max(report.max_excess, cf_err - recon_err);
        }
    }
    return report;
}

TheoremReport verify_theorem_conditions(const AnalyticScm& scm, int jacobian_points, int corr_draws,
                                        std::uint64_t seed) {
    TheoremReport report;
    report.jacobian_points = jacobian_points;
    report.corr_draws = corr_draws;
    report.min_jacobian_eig = std::numeric_limits<double>::infinity();

    for (int p = 0; p < jacobian_points; ++p) {
        const AnalyticDraw d = analytic_scm_draw(scm, seed_for(seed, "jac-point", static_cast<std::uint64_t>(p)));

        auto f_of_u = [&](const std::vector<double>& u) { return scm.forward(d.y, d.n, u); };
        const Tensor jf = numeric_jacobian(f_of_u, d.u, 1e-5);
        report.min_jacobian_eig = std::min(report.min_jacobian_eig, min_symmetric_eigenvalue(jf));

        auto q_of_u = [&](const std::vector<double>& u) { return scm.abduct_exact(scm.forward(d.y, d.n, u)); };
        const Tensor jq = numeric_jacobian(q_of_u, d.u, 1e-5);
        // J = c A with A orthogonal  <=>  J J^T = c^2 I.
        const Tensor gram = matmul_nt_serial(jq, jq);
        double kappa = 0.0;
        for (int i = 0; i < scm.m; ++i) kappa += gram(i, i);
        kappa /= scm.m;
        double defect = 0.0;
        for (int i = 0; i < scm.m; ++i) {
            for (int j = 0; j < scm.m; ++j) {
                defect = std::max(defect, std::abs(gram(i, j) - (i == j ? kappa : 0.0)));
            }
        }
        report.max_q_defect = std::max(report.max_q_defect, defect);
    }

    // Independence: correlate every recovered-latent coordinate with y, n1, n2.
    std::vector<std::vector<double>> latent(static_cast<std::size_t>(scm.m));
    std::vector<double> ys, n1s, n2s;
    ys.reserve(static_cast<std::size_t>(corr_draws));
    for (int i = 0; i < corr_draws; ++i) {
        const AnalyticDraw d = analytic_scm_draw(scm, seed_for(seed, "corr-draw", static_cast<std::uint64_t>(i)));
        const std::vector<double> l = scm.abduct_exact(d.x);
        for (int k = 0; k < scm.m; ++k) latent[static_cast<std::size_t>(k)].push_back(l[static_cast<std::size_t>(k)]);
        ys.push_back(d.y);
        n1s.push_back(d.n[0]);
        n2s.push_back(d.n[1]);
    }
    for (int k = 0; k < scm.m; ++k) {
        const auto& series = latent[static_cast<std::size_t>(k)];
        for (const auto* parent : {&ys, &n1s, &n2s}) {
            report.max_latent_corr = std::max(report.max_latent_corr, std::abs(pearson_correlation(series, *parent)));
        }
    }
    return report;
}

}  // namespace cfp
