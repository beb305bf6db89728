#pragma once

#include <functional>
#include <vector>

#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Matrix exponential via scaling-and-squaring with a Taylor series; intended
// for the small square matrices the vector SCM uses.
Tensor expm(const Tensor& a);

// exp(S) for a random skew-symmetric S rescaled to spectral norm `scale`.
// Always a rotation; for scale < pi/2 its symmetric part is positive
// definite.
Tensor random_rotation(int m, double scale, Rng& rng);

// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
std::vector<double> symmetric_eigenvalues(Tensor a);

// Positive definiteness of a (not necessarily symmetric) matrix, judged by
// the eigenvalues of its symmetric part.
bool positive_definite(const Tensor& m, double tol = 0.0);
double min_symmetric_eigenvalue(const Tensor& m);

// max |(A^T A - I)_{ij}|: zero for orthogonal A.
double orthogonality_defect(const Tensor& a);

// Central-difference Jacobian [out_dim, in_dim] of f at x.
Tensor numeric_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                        const std::vector<double>& x, double h = 1e-6);

// Pearson correlation of two equal-length series (0 if either is constant).
double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cfp
