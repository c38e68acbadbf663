#include "cfgat/feasible.hpp"

#include <cmath>

namespace cfgat {

Mat project(const Mat& X, int N) {
    Mat out = X;
    for (std::size_t r = 0; r < out.rows(); ++r) project_row(out.row(r), N);
    return out;
}

FeasibilityReport is_feasible(const Mat& X, int N, double tol) {
    FeasibilityReport rep;
    const double bound = 1.0 / static_cast<double>(N);
    auto record = [&](double violation, std::size_t r, std::size_t c, const char* kind) {
        if (violation > rep.worst_violation) {
            rep.worst_violation = violation;
            rep.row = r;
            rep.col = c;
            rep.kind = kind;
        }
    };
    for (std::size_t r = 0; r < X.rows(); ++r) {
        double norm2 = 0.0;
        for (std::size_t c = 0; c < X.cols(); ++c) {
            const double v = X(r, c);
            if (!std::isfinite(v)) {
                rep.feasible = false;
                record(INFINITY, r, c, "non_finite");
                continue;
            }
            if (v < -tol) {
                rep.feasible = false;
                record(-v, r, c, "negative");
            }
            norm2 += v * v;
        }
        if (norm2 > bound + tol) {
            rep.feasible = false;
            record(norm2 - bound, r, 0, "row_norm");
        }
    }
    return rep;
}

}  // namespace cfgat
