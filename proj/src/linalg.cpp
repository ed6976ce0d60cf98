#include "fedsim/linalg.hpp"

#include "fedsim/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace fedsim {

Matrix SvdResult::reconstruct() const {
    Matrix us = u;
    for (std::size_t i = 0; i < us.rows(); ++i) {
        for (std::size_t j = 0; j < us.cols(); ++j) {
            us(i, j) *= singular_values[j];
        }
    }
    return matmul(us, vt);
}

namespace {

constexpr double kJacobiPairTol = 1e-13;

// One-sided Jacobi on a tall matrix (rows >= cols): rotate column pairs of a
// working copy until mutually orthogonal, accumulate rotations into V.
// Returns thin U (m x n), singular values (n) and Vt (n x n), sorted.
// Columns are presorted by norm (de Rijk) so dominant pairs settle first;
// when a badly scaled matrix stalls near the sweep cap the pair threshold is
// relaxed gradually instead of failing outright.
SvdResult svd_tall(const Matrix& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    // prescale so squared column norms can neither underflow nor overflow
    const double amax = max_abs(a);
    const double scale = amax > 0.0 ? 1.0 / amax : 1.0;
    Matrix w(m, n);
    Matrix v(n, n);
    {
        std::vector<double> norms(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < m; ++k) {
                const double x = a(k, j) * scale;
                norms[j] += x * x;
            }
        }
        std::vector<std::size_t> by_norm(n);
        std::iota(by_norm.begin(), by_norm.end(), 0);
        std::stable_sort(by_norm.begin(), by_norm.end(),
                         [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < m; ++k) {
                w(k, j) = a(k, by_norm[j]) * scale;
            }
            v(by_norm[j], j) = 1.0;
        }
    }

    const std::size_t max_sweeps = 10 * n;
    bool converged = n <= 1;
    for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        // relax the threshold once 60% of the budget is spent; rounding from
        // dominant-pair rotations can floor small pairs above the strict tol
        double pair_tol = kJacobiPairTol;
        for (std::size_t extra = 6 * n; extra < sweep && pair_tol < 1.0; ++extra) {
            pair_tol *= 4.0;
        }
        converged = true;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double dot_ij = 0.0, dot_ii = 0.0, dot_jj = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    dot_ij += w(k, i) * w(k, j);
                    dot_ii += w(k, i) * w(k, i);
                    dot_jj += w(k, j) * w(k, j);
                }
                if (std::abs(dot_ij) <= pair_tol * (std::sqrt(dot_ii) * std::sqrt(dot_jj))) {
                    continue;
                }
                converged = false;

                const double zeta = (dot_jj - dot_ii) / (2.0 * dot_ij);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t k = 0; k < m; ++k) {
                    const double wi = w(k, i);
                    const double wj = w(k, j);
                    w(k, i) = c * wi - s * wj;
                    w(k, j) = s * wi + c * wj;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vi = v(k, i);
                    const double vj = v(k, j);
                    v(k, i) = c * vi - s * vj;
                    v(k, j) = s * vi + c * vj;
                }
            }
        }
    }
    if (!converged) {
        throw NumericalError("svd: Jacobi sweep cap (" + std::to_string(max_sweeps) +
                             ") exhausted without convergence");
    }

    std::vector<double> sigma(n); // in the prescaled frame
    for (std::size_t j = 0; j < n; ++j) {
        double norm2 = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            norm2 += w(k, j) * w(k, j);
        }
        sigma[j] = std::sqrt(norm2);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdResult out;
    out.u = Matrix(m, n);
    out.vt = Matrix(n, n);
    out.singular_values.resize(n);
    double sigma_max = n > 0 ? sigma[order[0]] : 0.0;
    const double zero_cutoff =
        sigma_max * std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(m, n));
    std::size_t first_zero = n;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.singular_values[j] = sigma[src] * amax;
        for (std::size_t k = 0; k < n; ++k) {
            out.vt(j, k) = v(k, src);
        }
        if (sigma[src] > zero_cutoff) {
            for (std::size_t k = 0; k < m; ++k) {
                out.u(k, j) = w(k, src) / sigma[src];
            }
        } else {
            first_zero = std::min(first_zero, j);
        }
    }

    // Complete zero-singular-value columns of U to an orthonormal basis so
    // the orthonormality invariant survives rank deficiency. Picks the
    // standard basis vector with the largest residual against the columns
    // already placed, with one re-orthogonalization pass.
    if (first_zero < n) {
        auto project_out = [&](std::vector<double>& e, std::size_t upto) {
            for (std::size_t prev = 0; prev < upto; ++prev) {
                double proj = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    proj += e[k] * out.u(k, prev);
                }
                for (std::size_t k = 0; k < m; ++k) {
                    e[k] -= proj * out.u(k, prev);
                }
            }
        };
        for (std::size_t j = first_zero; j < n; ++j) {
            if (out.singular_values[j] > zero_cutoff) {
                continue;
            }
            std::vector<double> best;
            double best_norm = -1.0;
            for (std::size_t cand = 0; cand < m; ++cand) {
                std::vector<double> e(m, 0.0);
                e[cand] = 1.0;
                project_out(e, j);
                double norm = std::sqrt(std::inner_product(e.begin(), e.end(), e.begin(), 0.0));
                if (norm > best_norm) {
                    best_norm = norm;
                    best = std::move(e);
                }
                if (best_norm > 0.9) {
                    break;
                }
            }
            project_out(best, j);
            double norm =
                std::sqrt(std::inner_product(best.begin(), best.end(), best.begin(), 0.0));
            for (std::size_t k = 0; k < m; ++k) {
                out.u(k, j) = best[k] / norm;
            }
        }
    }
    return out;
}

} // namespace

SvdResult svd(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) {
        throw ContractError("svd: empty matrix");
    }
    if (!m.all_finite()) {
        throw NumericalError("svd: non-finite input");
    }
    if (m.rows() >= m.cols()) {
        return svd_tall(m);
    }
    // wide: decompose the transpose and swap factors
    SvdResult t = svd_tall(transpose(m));
    SvdResult out;
    out.singular_values = std::move(t.singular_values);
    out.u = transpose(t.vt);
    out.vt = transpose(t.u);
    return out;
}

SvdResult svd_truncated(const Matrix& m, std::size_t r) {
    const std::size_t full = std::min(m.rows(), m.cols());
    if (r < 1 || r > full) {
        throw ContractError("svd_truncated: rank " + std::to_string(r) + " out of range [1, " +
                            std::to_string(full) + "]");
    }
    SvdResult all = svd(m);
    if (r == full) {
        return all;
    }
    SvdResult out;
    out.singular_values.assign(all.singular_values.begin(), all.singular_values.begin() + r);
    out.u = Matrix(m.rows(), r);
    out.vt = Matrix(r, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < r; ++j) {
            out.u(i, j) = all.u(i, j);
        }
    }
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out.vt(i, j) = all.vt(i, j);
        }
    }
    return out;
}

void svd_fix_signs(SvdResult& result) {
    const std::size_t r = result.singular_values.size();
    for (std::size_t j = 0; j < r; ++j) {
        double best = 0.0;
        for (std::size_t i = 0; i < result.u.rows(); ++i) {
            if (std::abs(result.u(i, j)) > std::abs(best)) {
                best = result.u(i, j);
            }
        }
        if (best < 0.0) {
            for (std::size_t i = 0; i < result.u.rows(); ++i) {
                result.u(i, j) = -result.u(i, j);
            }
            for (std::size_t k = 0; k < result.vt.cols(); ++k) {
                result.vt(j, k) = -result.vt(j, k);
            }
        }
    }
}

std::size_t numerical_rank(const Matrix& m, double tol) {
    if (!m.all_finite()) {
        throw NumericalError("numerical_rank: non-finite input");
    }
    SvdResult d = svd(m);
    const double sigma_max = d.singular_values.empty() ? 0.0 : d.singular_values.front();
    if (tol < 0.0) {
        tol = static_cast<double>(std::max(m.rows(), m.cols())) *
              std::numeric_limits<double>::epsilon() * sigma_max;
    }
    std::size_t rank = 0;
    for (double s : d.singular_values) {
        if (s > tol) {
            ++rank;
        }
    }
    return rank;
}

Matrix gaussian_init(std::size_t rows, std::size_t cols, double stddev, RngSeed seed) {
    if (stddev <= 0.0) {
        throw ContractError("gaussian_init: stddev must be positive");
    }
    Rng rng(seed);
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = rng.next_gaussian(stddev);
    }
    return m;
}

double row_softmax_entropy(const Matrix& m) {
    if (!m.all_finite()) {
        throw NumericalError("row_softmax_entropy: non-finite input");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cols(); ++j) {
            row_max = std::max(row_max, m(i, j));
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            denom += std::exp(m(i, j) - row_max);
        }
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double p = std::exp(m(i, j) - row_max) / denom;
            if (p > 0.0) {
                total -= p * std::log(p);
            }
        }
    }
    return total;
}

double frobenius_norm(const Matrix& m) {
    double sum = 0.0;
    for (double v : m.data()) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

double spectral_norm(const Matrix& m) {
    if (m.empty()) {
        return 0.0;
    }
    SvdResult d = svd(m);
    return d.singular_values.empty() ? 0.0 : d.singular_values.front();
}

} // namespace fedsim
