#include "cfgat/apg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include "cfgat/errors.hpp"
#include "cfgat/feasible.hpp"
#include "cfgat/utility_graph.hpp"

namespace cfgat {

void ApgOptions::validate() const {
    if (!(lambda > 0.0)) throw ConfigError("apg: lambda must be > 0");
    if (max_iters < 1) throw ConfigError("apg: max_iters must be >= 1");
    if (!(shrink > 0.0 && shrink < 1.0)) throw ConfigError("apg: shrink must be in (0, 1)");
    if (!(initial_step > 0.0)) throw ConfigError("apg: initial_step must be > 0");
    if (patience < 1) throw ConfigError("apg: patience must be >= 1");
}

void SolveTrace::write_csv(std::ostream& os, long sample, bool header) const {
    if (header) os << (sample >= 0 ? "sample," : "") << "iteration,utility,min_se,step,restart\n";
    for (std::size_t i = 0; i < utility.size(); ++i) {
        if (sample >= 0) os << sample << ',';
        os << i << ',' << utility[i] << ',' << min_se[i] << ',' << step[i] << ',' << (restart[i] ? 1 : 0) << '\n';
    }
}

namespace {

class Objective {
public:
    Objective(const ScenarioSample& s, const SystemStats& stats, const RadioConfig& cfg, double lambda)
        : data_(make_utility_data(s, stats, cfg)), lambda_(lambda) {}

    UtilityEval eval(const Mat& mu, bool with_grad) const {
        ad::Tape<double> tape;
        auto x = with_grad ? tape.input("mu", mu) : tape.constant(mu);
        auto g = build_utility_graph(tape, x, data_, lambda_);
        UtilityEval out;
        out.utility = g.utility.value()[0];
        const auto& se = g.se.value();
        out.min_se = *std::min_element(se.data(), se.data() + se.size());
        if (!std::isfinite(out.utility)) {
            require_finite(g.gamma.value(), "SINR");
            require_finite(se, "spectral efficiency");
            require_finite(g.utility.value(), "smoothed utility");
        }
        if (with_grad) {
            tape.backward(g.utility);
            out.grad = tape.gradient(x);
            require_finite(out.grad, "utility gradient");
        }
        return out;
    }

    int rows() const { return data_.M; }
    int cols() const { return data_.K; }
    int antennas() const { return data_.N; }

private:
    UtilityData data_;
    double lambda_;
};

Mat uniform_start(int M, int K, int N) {
    return Mat(static_cast<std::size_t>(M), static_cast<std::size_t>(K),
               1.0 / std::sqrt(static_cast<double>(N) * static_cast<double>(K)));
}

double inner(const Mat& a, const Mat& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct Step {
    Mat point;
    UtilityEval value;
    double step;
};

// Backtracking from y along grad until the projected step achieves
// u(z) >= u(y) + <g, z - y> - ||z - y||^2 / (2 s).
Step backtrack(const Objective& f, const Mat& y, const UtilityEval& at_y, double step, double shrink) {
    constexpr double kMinStep = 1e-30;
    while (true) {
        Mat z = y;
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += step * at_y.grad[i];
        z = project(z, f.antennas());
        Mat diff = z;
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= y[i];
        UtilityEval uz = f.eval(z, false);
        const double model = at_y.utility + inner(at_y.grad, diff) - inner(diff, diff) / (2.0 * step);
        if (uz.utility >= model) return {std::move(z), uz, step};
        step *= shrink;
        if (step < kMinStep) return {y, at_y, step};
    }
}

Mat pad_columns(const Mat& act, int K_max) {
    Mat out(act.rows(), static_cast<std::size_t>(K_max));
    for (std::size_t m = 0; m < act.rows(); ++m)
        for (std::size_t k = 0; k < act.cols(); ++k) out(m, k) = act(m, k);
    return out;
}

}  // namespace

ApgResult apg_solve(const ScenarioSample& sample, const SystemStats& stats, const RadioConfig& cfg,
                    const ApgOptions& opts) {
    opts.validate();
    const auto t0 = std::chrono::steady_clock::now();
    Objective f(sample, stats, cfg, opts.lambda);
    ApgResult res;
    SolveTrace& tr = res.trace;

    Mat x = uniform_start(f.rows(), f.cols(), f.antennas());
    Mat x_prev = x;
    UtilityEval ux = f.eval(x, true);
    tr.utility.push_back(ux.utility);
    tr.min_se.push_back(ux.min_se);
    tr.step.push_back(0.0);
    tr.restart.push_back(false);

    double step = opts.initial_step;
    double t = 1.0;
    int stalled = 0;
    for (int it = 1; it <= opts.max_iters; ++it) {
        const double momentum = (t - 1.0) / (t + 2.0);
        Mat y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += momentum * (x[i] - x_prev[i]);
        UtilityEval uy = momentum > 0.0 ? f.eval(y, true) : ux;
        Step s = backtrack(f, y, uy, step, opts.shrink);
        bool restarted = false;
        if (opts.restart && s.value.utility < ux.utility) {
            // Drop the momentum and take a plain projected step from x.
            restarted = true;
            t = 1.0;
            s = backtrack(f, x, ux, step, opts.shrink);
            if (s.value.utility < ux.utility) s = {x, ux, s.step};
        }
        x_prev = std::move(x);
        x = std::move(s.point);
        const double u_prev = ux.utility;
        ux = f.eval(x, true);
        step = s.step * opts.grow;
        t += 1.0;
        tr.utility.push_back(ux.utility);
        tr.min_se.push_back(ux.min_se);
        tr.step.push_back(s.step);
        tr.restart.push_back(restarted);
        tr.iterations = it;
        // a restart iteration restarts the momentum sequence and never ends the run
        stalled = !restarted && std::abs(ux.utility - u_prev) < opts.rel_tol ? stalled + 1 : 0;
        if (stalled >= opts.patience) {
            tr.converged = true;
            break;
        }
    }
    res.power.mu = pad_columns(x, sample.K_max);
    tr.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

PowerMatrix reference_pgd(const ScenarioSample& sample, const SystemStats& stats, const RadioConfig& cfg,
                          double lambda, int iters, PgdInit init, SolveTrace* trace) {
    if (iters < 1) throw ConfigError("reference_pgd: iters must be >= 1");
    if (!(lambda > 0.0)) throw ConfigError("reference_pgd: lambda must be > 0");
    const auto t0 = std::chrono::steady_clock::now();
    Objective f(sample, stats, cfg, lambda);
    Mat x = uniform_start(f.rows(), f.cols(), f.antennas());
    if (init == PgdInit::NearZero) {
        Rng rng = sample_stream(0x5eedULL, static_cast<std::uint64_t>(sample.K_act));
        std::uniform_real_distribution<double> u(0.0, 1e-3);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] *= u(rng);
    }
    UtilityEval ux = f.eval(x, true);
    SolveTrace local;
    SolveTrace& tr = trace ? *trace : local;
    tr = SolveTrace{};
    tr.utility.push_back(ux.utility);
    tr.min_se.push_back(ux.min_se);
    tr.step.push_back(0.0);
    tr.restart.push_back(false);
    double step = 1e-2;
    for (int it = 1; it <= iters; ++it) {
        Step s = backtrack(f, x, ux, step, 0.5);
        x = std::move(s.point);
        ux = f.eval(x, true);
        step = s.step * 2.0;
        tr.utility.push_back(ux.utility);
        tr.min_se.push_back(ux.min_se);
        tr.step.push_back(s.step);
        tr.restart.push_back(false);
        tr.iterations = it;
    }
    tr.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {pad_columns(x, sample.K_max)};
}

}  // namespace cfgat
