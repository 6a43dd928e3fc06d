#pragma once

#include <cmath>
#include <vector>

#include "clem/error.hpp"

namespace clem {

/// Solves A x = b in place for a symmetric positive-definite A
/// (row-major n x n) by Cholesky decomposition.
inline std::vector<double> solve_spd(std::vector<double> A, std::vector<double> b,
                                     std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = A[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= A[j * n + k] * A[j * n + k];
        if (d <= 0.0) throw Error("solve_spd: matrix not positive definite");
        const double L = std::sqrt(d);
        A[j * n + j] = L;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = A[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= A[i * n + k] * A[j * n + k];
            A[i * n + j] = s / L;
        }
    }
    // forward: L y = b
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= A[i * n + k] * b[k];
        b[i] = s / A[i * n + i];
    }
    // back: L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= A[k * n + ii] * b[k];
        b[ii] = s / A[ii * n + ii];
    }
    return b;
}

} // namespace clem
