#include "cfp/analytic_scm.hpp"

#include <cmath>

#include "cfp/linalg.hpp"

namespace cfp {

namespace {

constexpr double kMixSpectralNorm = 0.8;  // < pi/2 keeps exp(S) positive definite
constexpr double kPnlGain = 0.25;         // psi'(z) in [1, 1.25]

}  // namespace

double pnl_warp(double z) { return z + kPnlGain * std::tanh(z); }

double pnl_unwarp(double x) {
    // Newton on psi(z) = x; psi' >= 1 so this converges fast and globally here.
    double z = x;
    for (int it = 0; it < 80; ++it) {
        const double t = std::tanh(z);
        const double f = z + kPnlGain * t - x;
        const double fp = 1.0 + kPnlGain * (1.0 - t * t);
        const double step = f / fp;
        z -= step;
        if (std::abs(step) < 1e-16 * (1.0 + std::abs(z))) break;
    }
    return z;
}

void AnalyticScm::validate_parents(int y, const std::vector<int>& n) const {
    if (y < 0 || y >= num_classes) {
        throw std::invalid_argument("analytic SCM: class " + std::to_string(y) + " outside [0," +
                                    std::to_string(num_classes) + ")");
    }
    if (n.size() != 2 || n[0] < 0 || n[0] >= style_levels || n[1] < 0 || n[1] >= style_levels) {
        throw std::invalid_argument("analytic SCM: style must be two indices in [0," +
                                    std::to_string(style_levels) + ")");
    }
}

double AnalyticScm::scale_of(int y, const std::vector<int>& n) const {
    validate_parents(y, n);
    if (unit_scale) return 1.0;
    return 0.8 + 0.1 * y + 0.05 * (n[0] + n[1]);
}

std::vector<double> AnalyticScm::offset_of(int y, const std::vector<int>& n) const {
    validate_parents(y, n);
    std::vector<double> off(static_cast<std::size_t>(m), 0.0);
    off[0] = delta * y;
    off[1] = delta * n[0];
    off[2] = delta * n[1];
    return off;
}

std::vector<double> AnalyticScm::forward(int y, const std::vector<int>& n, const std::vector<double>& u) const {
    validate_parents(y, n);
    if (static_cast<int>(u.size()) != m) {
        throw std::invalid_argument("analytic SCM forward: latent dimension mismatch");
    }
    const double c = scale_of(y, n);
    const std::vector<double> off = offset_of(y, n);
    std::vector<double> x(static_cast<std::size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += mix(i, j) * (u[static_cast<std::size_t>(j)] - 0.5);
        double z = c * acc + off[static_cast<std::size_t>(i)];
        if (family == ScmFamily::PostNonlinear) z = pnl_warp(z);
        x[static_cast<std::size_t>(i)] = z;
    }
    return x;
}

std::vector<int> AnalyticScm::decode_cell(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != m) {
        throw std::invalid_argument("analytic SCM decode: dimension mismatch");
    }
    auto coord = [&](int i) {
        const double v = x[static_cast<std::size_t>(i)];
        return family == ScmFamily::PostNonlinear ? pnl_unwarp(v) : v;
    };
    const int y = static_cast<int>(std::lround(coord(0) / delta));
    const int n1 = static_cast<int>(std::lround(coord(1) / delta));
    const int n2 = static_cast<int>(std::lround(coord(2) / delta));
    if (y < 0 || y >= num_classes || n1 < 0 || n1 >= style_levels || n2 < 0 || n2 >= style_levels) {
        throw std::invalid_argument("analytic SCM decode: point lies outside every lattice cell");
    }
    return {y, n1, n2};
}

std::vector<double> AnalyticScm::abduct_exact(const std::vector<double>& x) const {
    const std::vector<int> cell = decode_cell(x);
    const int y = cell[0];
    const std::vector<int> n = {cell[1], cell[2]};
    const double c = scale_of(y, n);
    const std::vector<double> off = offset_of(y, n);
    std::vector<double> z(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double v = x[static_cast<std::size_t>(i)];
        if (family == ScmFamily::PostNonlinear) v = pnl_unwarp(v);
        z[static_cast<std::size_t>(i)] = (v - off[static_cast<std::size_t>(i)]) / c;
    }
    // u = A^T z + 1/2 (A orthogonal).
    std::vector<double> u(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += mix(j, i) * z[static_cast<std::size_t>(j)];
        u[static_cast<std::size_t>(i)] = acc + 0.5;
    }
    return u;
}

std::vector<double> AnalyticScm::reconstruct(const std::vector<double>& l, int y, const std::vector<int>& n) const {
    return forward(y, n, l);
}

AnalyticScm make_analytic_scm(int m, ScmFamily family, std::uint64_t seed, bool unit_scale) {
    if (m < 3) throw std::invalid_argument("analytic SCM: dimension must be at least 3");
    AnalyticScm scm;
    scm.m = m;
    scm.family = family;
    scm.unit_scale = unit_scale;
    Rng rng(seed_for(seed, "analytic-mix"));
    scm.mix = random_rotation(m, kMixSpectralNorm, rng);
    const double c_max =
        unit_scale ? 1.0 : 0.8 + 0.1 * (scm.num_classes - 1) + 0.05 * 2 * (scm.style_levels - 1);
    const double cell_radius = c_max * std::sqrt(static_cast<double>(m)) / 2.0;
    scm.delta = 4.0 * cell_radius;
    return scm;
}

AnalyticDraw analytic_scm_draw(const AnalyticScm& scm, std::uint64_t seed) {
    Rng rng(seed);
    AnalyticDraw d;
    d.y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(scm.num_classes)));
    d.n = {static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(scm.style_levels))),
           static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(scm.style_levels)))};
    d.u = rng.uniform_vector(static_cast<std::size_t>(scm.m));
    d.x = scm.forward(d.y, d.n, d.u);
    return d;
}

AnalyticSampleResult analytic_scm_sample(int m, ScmFamily family, std::uint64_t seed) {
    AnalyticSampleResult r;
    r.scm = make_analytic_scm(m, family, seed);
    r.draw = analytic_scm_draw(r.scm, seed_for(seed, "analytic-draw"));
    return r;
}

}  // namespace cfp
