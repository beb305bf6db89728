#include "cfp/kernels.hpp"

#include <cstddef>

#ifdef CFP_USE_OPENMP
#include <omp.h>
#endif

namespace cfp {

namespace {

void require_2d(const Tensor& t, const char* who, const char* arg) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(who) + ": " + arg + " must be rank-2, got shape " + shape_str(t.shape));
    }
}

// Row i of C = A * B. Accumulation over k is strictly ascending; every
// variant funnels through one of these row routines.
inline void row_nn(const double* a, const double* b, double* c, int i, int k_dim, int n) {
    const double* ai = a + static_cast<std::size_t>(i) * k_dim;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int k = 0; k < k_dim; ++k) {
        const double av = ai[k];
        const double* bk = b + static_cast<std::size_t>(k) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
}

// Row i of C = A * B^T (B stored [N,K]).
inline void row_nt(const double* a, const double* b, double* c, int i, int k_dim, int n) {
    const double* ai = a + static_cast<std::size_t>(i) * k_dim;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
        const double* bj = b + static_cast<std::size_t>(j) * k_dim;
        double acc = 0.0;
        for (int k = 0; k < k_dim; ++k) acc += ai[k] * bj[k];
        ci[j] = acc;
    }
}

// Row i of C = A^T * B (A stored [M,K], C is [K,N], row index i < K).
inline void row_tn(const double* a, const double* b, double* c, int i, int m, int k_dim, int n) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int r = 0; r < m; ++r) {
        const double av = a[static_cast<std::size_t>(r) * k_dim + i];
        const double* br = b + static_cast<std::size_t>(r) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * br[j];
    }
}

}  // namespace

bool openmp_enabled() {
#ifdef CFP_USE_OPENMP
    return true;
#else
    return false;
#endif
}

int kernel_threads() {
#ifdef CFP_USE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Tensor matmul_serial(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul", "A");
    require_2d(b, "matmul", "B");
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dims disagree, " + shape_str(a.shape) + " * " + shape_str(b.shape));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) row_nn(a.ptr(), b.ptr(), c.ptr(), i, k, n);
    return c;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
#ifdef CFP_USE_OPENMP
    require_2d(a, "matmul", "A");
    require_2d(b, "matmul", "B");
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dims disagree, " + shape_str(a.shape) + " * " + shape_str(b.shape));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n});
    const double* ap = a.ptr();
    const double* bp = b.ptr();
    double* cp = c.ptr();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) row_nn(ap, bp, cp, i, k, n);
    return c;
#else
    return matmul_serial(a, b);
#endif
}

Tensor matmul_nt_serial(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt", "A");
    require_2d(b, "matmul_nt", "B");
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_nt: inner dims disagree, " + shape_str(a.shape) + " * " +
                                    shape_str(b.shape) + "^T");
    }
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) row_nt(a.ptr(), b.ptr(), c.ptr(), i, k, n);
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
#ifdef CFP_USE_OPENMP
    require_2d(a, "matmul_nt", "A");
    require_2d(b, "matmul_nt", "B");
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_nt: inner dims disagree, " + shape_str(a.shape) + " * " +
                                    shape_str(b.shape) + "^T");
    }
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c = Tensor::zeros({m, n});
    const double* ap = a.ptr();
    const double* bp = b.ptr();
    double* cp = c.ptr();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) row_nt(ap, bp, cp, i, k, n);
    return c;
#else
    return matmul_nt_serial(a, b);
#endif
}

Tensor matmul_tn_serial(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_tn", "A");
    require_2d(b, "matmul_tn", "B");
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_tn: inner dims disagree, " + shape_str(a.shape) + "^T * " +
                                    shape_str(b.shape));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({k, n});
    for (int i = 0; i < k; ++i) row_tn(a.ptr(), b.ptr(), c.ptr(), i, m, k, n);
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
#ifdef CFP_USE_OPENMP
    require_2d(a, "matmul_tn", "A");
    require_2d(b, "matmul_tn", "B");
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_tn: inner dims disagree, " + shape_str(a.shape) + "^T * " +
                                    shape_str(b.shape));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({k, n});
    const double* ap = a.ptr();
    const double* bp = b.ptr();
    double* cp = c.ptr();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < k; ++i) row_tn(ap, bp, cp, i, m, k, n);
    return c;
#else
    return matmul_tn_serial(a, b);
#endif
}

}  // namespace cfp
