#pragma once

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

#include <cstddef>
#include <vector>

namespace fedsim {

// Thin SVD m = U * diag(s) * Vt with U (d x r), Vt (r x k), r = number of
// retained triplets. Singular values are sorted nonincreasing; U columns and
// Vt rows are orthonormal (zero singular directions are completed to an
// orthonormal basis).
struct SvdResult {
    Matrix u;
    std::vector<double> singular_values;
    Matrix vt;

    Matrix reconstruct() const;
};

// Full thin SVD (r = min(rows, cols)) via one-sided Jacobi on the smaller
// side. Throws NumericalError if the sweep cap (10 * min(d,k)) is exhausted.
SvdResult svd(const Matrix& m);

// The r dominant singular triplets, 1 <= r <= min(rows, cols).
SvdResult svd_truncated(const Matrix& m, std::size_t r);

// Deterministic sign convention: the largest-magnitude entry of each U column
// is made positive (Vt row flipped to compensate).
void svd_fix_signs(SvdResult& result);

// Count of singular values above tol. Negative tol selects the default
// max(rows, cols) * eps * sigma_max rule.
std::size_t numerical_rank(const Matrix& m, double tol = -1.0);

// i.i.d. N(0, stddev^2) entries, deterministic per seed.
Matrix gaussian_init(std::size_t rows, std::size_t cols, double stddev, RngSeed seed);

// H(m) = -sum over rows of sum_l p log p with p the row softmax (natural log,
// max-subtracted for stability).
double row_softmax_entropy(const Matrix& m);

double frobenius_norm(const Matrix& m);
double spectral_norm(const Matrix& m);

} // namespace fedsim
