#include "cfp/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "cfp/kernels.hpp"

namespace cfp {

namespace {

void require_square(const Tensor& a, const char* who) {
    if (a.rank() != 2 || a.rows() != a.cols()) {
        throw std::invalid_argument(std::string(who) + ": square matrix required, got " + shape_str(a.shape));
    }
}

double max_abs_entry(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

Tensor identity(int n) {
    Tensor i = Tensor::zeros({n, n});
    for (int k = 0; k < n; ++k) i(k, k) = 1.0;
    return i;
}

}  // namespace

Tensor expm(const Tensor& a) {
    require_square(a, "expm");
    const int n = a.rows();
    // Scale so the Taylor series converges fast, then square back.
    int squarings = 0;
    double norm = max_abs_entry(a) * n;
    while (norm > 0.5) {
        norm *= 0.5;
        ++squarings;
    }
    Tensor b = a;
    const double inv = std::ldexp(1.0, -squarings);
    for (double& v : b.data) v *= inv;

    Tensor result = identity(n);
    Tensor term = identity(n);
    for (int k = 1; k <= 30; ++k) {
        term = matmul_serial(term, b);
        for (double& v : term.data) v /= k;
        for (int i = 0; i < result.numel(); ++i) result[i] += term[i];
        if (max_abs_entry(term) < 1e-18) break;
    }
    for (int s = 0; s < squarings; ++s) result = matmul_serial(result, result);
    return result;
}

Tensor random_rotation(int m, double scale, Rng& rng) {
    if (m < 2) throw std::invalid_argument("random_rotation: need dimension >= 2");
    Tensor s = Tensor::zeros({m, m});
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            const double v = rng.gaussian();
            s(i, j) = v;
            s(j, i) = -v;
        }
    }
    // Spectral norm of skew S from the top eigenvalue of S^T S.
    Tensor sts = matmul_tn_serial(s, s);
    const auto eig = symmetric_eigenvalues(sts);
    const double spectral = std::sqrt(std::max(0.0, eig.back()));
    if (spectral > 0.0) {
        const double factor = scale / spectral;
        for (double& v : s.data) v *= factor;
    }
    return expm(s);
}

std::vector<double> symmetric_eigenvalues(Tensor a) {
    require_square(a, "symmetric_eigenvalues");
    const int n = a.rows();
    const double scale = std::max(1e-300, max_abs_entry(a));
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        if (off < 1e-14 * scale) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (int i = 0; i < n; ++i) eig[i] = a(i, i);
    std::sort(eig.begin(), eig.end());
    return eig;
}

double min_symmetric_eigenvalue(const Tensor& m) {
    require_square(m, "min_symmetric_eigenvalue");
    const int n = m.rows();
    Tensor sym = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sym(i, j) = 0.5 * (m(i, j) + m(j, i));
    return symmetric_eigenvalues(sym).front();
}

bool positive_definite(const Tensor& m, double tol) { return min_symmetric_eigenvalue(m) > tol; }

double orthogonality_defect(const Tensor& a) {
    require_square(a, "orthogonality_defect");
    const int n = a.rows();
    Tensor g = matmul_tn_serial(a, a);
    for (int i = 0; i < n; ++i) g(i, i) -= 1.0;
    return max_abs_entry(g);
}

Tensor numeric_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                        const std::vector<double>& x, double h) {
    std::vector<double> probe = x;
    const std::vector<double> base = f(x);
    const int out_dim = static_cast<int>(base.size());
    const int in_dim = static_cast<int>(x.size());
    Tensor j = Tensor::zeros({out_dim, in_dim});
    for (int c = 0; c < in_dim; ++c) {
        const double keep = probe[c];
        probe[c] = keep + h;
        const std::vector<double> up = f(probe);
        probe[c] = keep - h;
        const std::vector<double> down = f(probe);
        probe[c] = keep;
        for (int r = 0; r < out_dim; ++r) j(r, c) = (up[r] - down[r]) / (2.0 * h);
    }
    return j;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("pearson_correlation: need equal non-empty series");
    }
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace cfp
