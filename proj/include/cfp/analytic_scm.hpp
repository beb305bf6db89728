#pragma once

#include <cstdint>
#include <vector>

#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Vector-valued structural model with a closed-form inverse pair. The mixing
// is x = psi( c(y,n) * A * (u - 1/2) + offset(y,n) ) with A orthogonal,
// c > 0 scalar, psi identity (additive-orthogonal family) or an elementwise
// strictly increasing map (post-nonlinear family). Offsets place each (y,n)
// cell on a lattice coarse enough that the cell — and therefore the exact
// latent — can be decoded from x alone. That yields:
//   * a positive-definite Jacobian w.r.t. u everywhere,
//   * an exact abduction g*(x) = u that never sees (y, n),
//   * an exact reconstruction h*(l, y, n) = f(y, n, l),
// i.e. a family on which the recovery conditions hold non-vacuously and the
// error bounds can be asserted to machine precision.

enum class ScmFamily { AdditiveOrthogonal, PostNonlinear };

struct AnalyticScm {
    int m = 0;
    ScmFamily family = ScmFamily::AdditiveOrthogonal;
    bool unit_scale = false;  // c == 1 everywhere (Lipschitz-1 mode for bound checks)
    int num_classes = 4;
    int style_levels = 3;  // n = (n1, n2), each in {0..style_levels-1}
    Tensor mix;            // orthogonal [m, m]
    double delta = 0.0;    // lattice pitch; exceeds twice the max cell radius

    double scale_of(int y, const std::vector<int>& n) const;           // c(y, n)
    std::vector<double> offset_of(int y, const std::vector<int>& n) const;

    // x = f(y, n, u)
    std::vector<double> forward(int y, const std::vector<int>& n, const std::vector<double>& u) const;

    // g*: exact latent from x alone (decodes the lattice cell internally).
    std::vector<double> abduct_exact(const std::vector<double>& x) const;

    // h*: rebuild x from latent and (possibly substituted) parents.
    std::vector<double> reconstruct(const std::vector<double>& l, int y, const std::vector<int>& n) const;

    // (y, n1, n2) recovered from x; exposed for the violation probes.
    std::vector<int> decode_cell(const std::vector<double>& x) const;

    void validate_parents(int y, const std::vector<int>& n) const;
};

AnalyticScm make_analytic_scm(int m, ScmFamily family, std::uint64_t seed, bool unit_scale = false);

struct AnalyticDraw {
    int y = 0;
    std::vector<int> n;
    std::vector<double> u;
    std::vector<double> x;
};

AnalyticDraw analytic_scm_draw(const AnalyticScm& scm, std::uint64_t seed);

// Convenience: build a family from the seed and take one draw from it.
struct AnalyticSampleResult {
    AnalyticScm scm;
    AnalyticDraw draw;
};
AnalyticSampleResult analytic_scm_sample(int m, ScmFamily family, std::uint64_t seed);

// Elementwise post-nonlinearity and its exact (Newton) inverse.
double pnl_warp(double z);
double pnl_unwarp(double x);

}  // namespace cfp
