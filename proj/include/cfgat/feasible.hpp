#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "cfgat/matrix.hpp"

namespace cfgat {

/// Euclidean projection of one row onto {x >= 0, ||x||^2 <= 1/N}:
/// clamp negatives, then pull back radially onto the ball.
template <class T>
void project_row(std::span<T> row, int N) {
    T norm2 = 0;
    for (auto& v : row) {
        if (!(v > T(0))) v = T(0);
        norm2 += v * v;
    }
    const T bound = T(1) / static_cast<T>(N);
    if (norm2 > bound) {
        const T scale = std::sqrt(bound / norm2);
        for (auto& v : row) v *= scale;
        // Rounding can leave the norm a hair above the bound; shrink by ulps until exact.
        for (int guard = 0; guard < 8; ++guard) {
            T n2 = 0;
            for (auto v : row) n2 += v * v;
            if (n2 <= bound) break;
            for (auto& v : row) v = std::nextafter(v, T(0));
        }
    }
}

/// Row-wise projection onto the per-AP feasible set S.
Mat project(const Mat& X, int N);

struct FeasibilityReport {
    bool feasible = true;
    double worst_violation = 0.0;
    std::size_t row = 0;
    std::size_t col = 0;  // meaningful for negativity violations
    std::string kind;     // "", "negative" or "row_norm"
};

/// True iff all entries >= -tol and each row norm^2 <= 1/N + tol.
FeasibilityReport is_feasible(const Mat& X, int N, double tol);

}  // namespace cfgat
