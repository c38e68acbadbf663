#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "cfgat/metrics.hpp"
#include "cfgat/scenario.hpp"

namespace cfgat {

struct ApgOptions {
    double lambda = 3.0;
    int max_iters = 300;
    double rel_tol = 1e-7;  // stop when |u_{t+1} - u_t| < rel_tol holds on `patience` consecutive iterates
    int patience = 5;
    double initial_step = 1e-2;
    double shrink = 0.5;
    double grow = 2.0;
    bool restart = true;

    void validate() const;
};

struct SolveTrace {
    std::vector<double> utility;  // accepted iterates, index 0 is the start point
    std::vector<double> min_se;
    std::vector<double> step;
    std::vector<bool> restart;
    double wall_time_s = 0.0;
    int iterations = 0;
    bool converged = false;

    void write_csv(std::ostream& os, long sample = -1, bool header = true) const;
};

struct ApgResult {
    PowerMatrix power;  // M x K_max, padded columns zero
    SolveTrace trace;
};

/// Accelerated projected gradient ascent on the smoothed utility with
/// Armijo backtracking and function-value restart. Gradients come from the
/// autodiff tape.
ApgResult apg_solve(const ScenarioSample& sample, const SystemStats& stats, const RadioConfig& cfg,
                    const ApgOptions& opts = {});

enum class PgdInit { Uniform, NearZero };

/// Plain projected gradient ascent with backtracking, used as a slow oracle.
/// NearZero starts from a small random feasible point (the origin itself is a
/// stationary point of the utility).
PowerMatrix reference_pgd(const ScenarioSample& sample, const SystemStats& stats, const RadioConfig& cfg,
                          double lambda, int iters, PgdInit init = PgdInit::Uniform, SolveTrace* trace = nullptr);

/// Smoothed utility and its gradient (M x K_act) at mu_act via autodiff.
struct UtilityEval {
    double utility = 0.0;
    double min_se = 0.0;
    Mat grad;
};

}  // namespace cfgat
