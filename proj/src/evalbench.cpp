#include "cfgat/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "cfgat/dataset.hpp"
#include "cfgat/errors.hpp"
#include "cfgat/feasible.hpp"
#include "cfgat/simd/kernels.hpp"
#include "cfgat/training.hpp"

namespace cfgat {

Method apg_method(const RadioConfig& cfg, const ApgOptions& opts) {
    return {"apg", [cfg, opts](const Mat& B, const Mat& Phi, int K_act) {
                ScenarioSample s;
                s.M = static_cast<int>(B.rows());
                s.K_max = static_cast<int>(B.cols());
                s.K_act = K_act;
                s.B = B;
                s.Phi = Phi;
                return apg_solve(s, compute_stats(s, cfg), cfg, opts).power.mu;
            }};
}

Method gat_method(const GatParams& params, const RadioConfig& cfg, int K_max, bool ablation, Precision precision,
                  std::string name) {
    if (name.empty()) name = ablation ? "gat_ablation" : "gat";
    auto topo = std::make_shared<const GraphTopology>(build_topology(params.M, K_max));
    const GatOptions opts{ablation, cfg.N};
    return {std::move(name), [params, topo, opts, precision](const Mat& B, const Mat& Phi, int) {
                return gat_forward(params, *topo, B, Phi, opts, precision);
            }};
}

const MethodResult& EvalReport::at(const std::string& name) const {
    for (const auto& m : methods)
        if (m.name == name) return m;
    throw ConfigError("no method named '" + name + "' in report");
}

void EvalReport::write_se_csv(std::ostream& os) const {
    os << "method,sample,ue,se\n";
    for (const auto& m : methods)
        for (const auto& r : m.se) os << m.name << ',' << r.sample << ',' << r.ue << ',' << r.se << '\n';
}

void EvalReport::write_summary_csv(std::ostream& os) const {
    os << "method,q05,q50,q95,mean_min_se\n";
    for (const auto& m : methods) {
        std::vector<double> v;
        v.reserve(m.se.size());
        for (const auto& r : m.se) v.push_back(r.se);
        const auto cdf = empirical_cdf(std::move(v));
        os << m.name << ',' << cdf_quantile(cdf, 0.05) << ',' << cdf_quantile(cdf, 0.5) << ','
           << cdf_quantile(cdf, 0.95) << ',' << m.mean_min_se << '\n';
    }
}

EvalReport evaluate_methods(const std::vector<ScenarioSample>& testset, const std::vector<Method>& methods,
                            const RadioConfig& cfg, const EvalOptions& opts) {
    if (testset.empty()) throw ConfigError("evaluate: empty test set");
    const std::size_t n = testset.size();
    std::vector<Mat> observed(n);
    std::vector<SystemStats> stats(n);
    parallel_for(n, opts.threads, [&](std::size_t i) {
        Rng rng = sample_stream(opts.seed, i);
        observed[i] = perturb_large_scale(testset[i].B, opts.sigma_db, rng);
        stats[i] = compute_stats(testset[i], cfg);
    });

    EvalReport rep;
    for (const auto& method : methods) {
        std::vector<std::vector<double>> per(n);
        parallel_for(n, opts.threads, [&](std::size_t i) {
            const auto& s = testset[i];
            Mat mu = method.solve(observed[i], s.Phi, s.K_act);
            const auto fr = is_feasible(mu, cfg.N, 0.0);
            if (!fr.feasible)
                throw NumericError(method.name + " returned an infeasible power matrix on sample " + std::to_string(i) +
                                   " (violation " + std::to_string(fr.worst_violation) + ")");
            per[i] = evaluate_se(mu, stats[i], cfg, s.K_act);
        });
        MethodResult mr;
        mr.name = method.name;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < per[i].size(); ++k) mr.se.push_back({i, static_cast<int>(k), per[i][k]});
            mr.min_se.push_back(min_se(per[i], testset[i].K_act));
            acc += mr.min_se.back();
        }
        mr.mean_min_se = acc / static_cast<double>(n);
        rep.methods.push_back(std::move(mr));
    }
    return rep;
}

EmpiricalCdf empirical_cdf(std::vector<double> values) {
    if (values.empty()) throw ConfigError("empirical_cdf: empty input");
    std::sort(values.begin(), values.end());
    EmpiricalCdf c;
    c.p.resize(values.size());
    const auto n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) c.p[i] = static_cast<double>(i + 1) / n;
    c.x = std::move(values);
    return c;
}

double cdf_quantile(const EmpiricalCdf& cdf, double q) {
    if (cdf.x.empty()) throw ConfigError("cdf_quantile: empty CDF");
    const auto n = static_cast<double>(cdf.x.size());
    const auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil(q * n - 1e-12))) - 1;
    return cdf.x[std::min(idx, cdf.x.size() - 1)];
}

void MonteCarloReport::write_csv(std::ostream& os) const {
    os << "kind,m,i,k,empirical,theory,rel_dev\n";
    for (std::size_t m = 0; m < ms_theory.rows(); ++m)
        for (std::size_t k = 0; k < ms_theory.cols(); ++k)
            os << "mean_square," << m << ',' << k << ',' << k << ',' << ms_empirical(m, k) << ',' << ms_theory(m, k)
               << ',' << std::abs(ms_empirical(m, k) - ms_theory(m, k)) / ms_theory(m, k) << '\n';
    for (const auto& c : cross)
        os << "cross," << c.m << ',' << c.i << ',' << c.k << ',' << c.empirical << ',' << c.theory << ',' << c.rel_dev
           << '\n';
}

MonteCarloReport monte_carlo_channel_stats(const ScenarioSample& s, const RadioConfig& cfg, long trials, Rng& rng,
                                           bool noiseless) {
    if (trials < 1) throw ConfigError("monte_carlo: trials must be >= 1");
    using cd = std::complex<double>;
    const int M = s.M, K = s.K_act, N = cfg.N, Tp = cfg.T_p;
    if (static_cast<int>(s.pilot_index.size()) < K) throw ShapeError("monte_carlo: sample lacks pilot indices");
    const SystemStats st = compute_stats(s, cfg);
    const double amp = std::sqrt(cfg.zeta_p * cfg.T_p);

    // c_{m,k} = sqrt(zeta_p T_p) beta / (1 + zeta_p T_p sum_i beta_{m,i} |phi_i^H phi_k|^2)
    Mat coef(M, K);
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) coef(m, k) = st.gbar(m, k) / (amp * s.B(m, k));

    std::normal_distribution<double> unit(0.0, std::sqrt(0.5));  // real part of CN(0, 1)
    const std::size_t G = static_cast<std::size_t>(M) * K * N;
    std::vector<cd> g(G), ghat(G), w(static_cast<std::size_t>(M) * Tp * N);
    std::vector<double> ms(static_cast<std::size_t>(M) * K, 0.0);
    std::vector<cd> mean_hat(G, 0.0);
    std::vector<cd> cross(static_cast<std::size_t>(M) * K * K, 0.0);  // [m][i][k] sum of g_k^H ghat_i
    std::vector<double> ratio_lo(static_cast<std::size_t>(M) * K, INFINITY), ratio_hi(ratio_lo.size(), -INFINITY);
    auto gi = [&](int m, int k, int n) { return (static_cast<std::size_t>(m) * K + k) * N + n; };

    for (long t = 0; t < trials; ++t) {
        for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k) {
                const double sb = std::sqrt(s.B(m, k));
                for (int n = 0; n < N; ++n) g[gi(m, k, n)] = sb * cd(unit(rng), unit(rng));
            }
        for (auto& v : w) v = noiseless ? cd(0.0) : cd(unit(rng), unit(rng));
        for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k) {
                const int p = s.pilot_index[k];
                for (int n = 0; n < N; ++n) {
                    // Y_m phi_k: UEs on pilot p plus column p of W_m
                    cd y = w[(static_cast<std::size_t>(m) * Tp + p) * N + n];
                    for (int i = 0; i < K; ++i)
                        if (s.pilot_index[i] == p) y += amp * g[gi(m, i, n)];
                    const cd e = coef(m, k) * y;
                    ghat[gi(m, k, n)] = e;
                    ms[static_cast<std::size_t>(m) * K + k] += std::norm(e);
                    mean_hat[gi(m, k, n)] += e;
                }
                if (noiseless) {
                    const double r = (ghat[gi(m, k, 0)] / g[gi(m, k, 0)]).real();
                    auto& lo = ratio_lo[static_cast<std::size_t>(m) * K + k];
                    auto& hi = ratio_hi[static_cast<std::size_t>(m) * K + k];
                    lo = std::min(lo, r);
                    hi = std::max(hi, r);
                }
            }
        for (int m = 0; m < M; ++m)
            for (int i = 0; i < K; ++i)
                for (int k = 0; k < K; ++k) {
                    if (s.Phi(i, k) == 0.0) continue;
                    cd acc = 0.0;
                    for (int n = 0; n < N; ++n) acc += std::conj(g[gi(m, k, n)]) * ghat[gi(m, i, n)];
                    cross[(static_cast<std::size_t>(m) * K + i) * K + k] += acc;
                }
    }

    MonteCarloReport rep;
    rep.trials = trials;
    rep.ms_empirical = Mat(M, K);
    rep.ms_theory = Mat(M, K);
    const double tn = static_cast<double>(trials);
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            rep.ms_empirical(m, k) = ms[static_cast<std::size_t>(m) * K + k] / (tn * N);
            rep.ms_theory(m, k) = st.gbar(m, k);
            rep.max_ms_rel_dev = std::max(rep.max_ms_rel_dev,
                                          std::abs(rep.ms_empirical(m, k) - rep.ms_theory(m, k)) / rep.ms_theory(m, k));
            for (int n = 0; n < N; ++n)
                rep.max_mean_estimate =
                    std::max(rep.max_mean_estimate, std::abs(mean_hat[gi(m, k, n)]) / tn / std::sqrt(st.gbar(m, k)));
            bool alone = true;
            for (int i = 0; i < K; ++i)
                if (i != k && s.pilot_index[i] == s.pilot_index[k]) alone = false;
            if (noiseless && alone)
                rep.max_ratio_spread = std::max(rep.max_ratio_spread, ratio_hi[static_cast<std::size_t>(m) * K + k] -
                                                                          ratio_lo[static_cast<std::size_t>(m) * K + k]);
        }
    for (int m = 0; m < M; ++m)
        for (int i = 0; i < K; ++i)
            for (int k = 0; k < K; ++k) {
                if (s.Phi(i, k) == 0.0) continue;
                CrossStatistic c;
                c.m = m;
                c.i = i;
                c.k = k;
                c.empirical = std::abs(cross[(static_cast<std::size_t>(m) * K + i) * K + k]) / (tn * N);
                c.theory = st.nu(i, k, m) * std::sqrt(st.gbar(m, i));
                c.rel_dev = std::abs(c.empirical - c.theory) / c.theory;
                rep.max_cross_rel_dev = std::max(rep.max_cross_rel_dev, c.rel_dev);
                rep.cross.push_back(c);
            }
    return rep;
}

const BenchRow& BenchReport::at(const std::string& method) const {
    for (const auto& r : rows)
        if (r.method == method) return r;
    throw ConfigError("no benchmark row for '" + method + "'");
}

void BenchReport::write_csv(std::ostream& os) const {
    os << "method,mean_s,median_s,samples,repeats,environment\n";
    for (const auto& r : rows)
        os << r.method << ',' << r.mean_s << ',' << r.median_s << ',' << r.samples << ',' << r.repeats << ",\""
           << environment << "\"\n";
}

std::string environment_descriptor() {
    std::ostringstream os;
    os << "isa=" << simd::isa_name(simd::active_isa()) << ";hw_threads=" << std::thread::hardware_concurrency()
       << ";workers=1";
#if defined(__clang__)
    os << ";compiler=clang-" << __clang_major__ << '.' << __clang_minor__;
#elif defined(__GNUC__)
    os << ";compiler=gcc-" << __GNUC__ << '.' << __GNUC_MINOR__;
#endif
    return os.str();
}

BenchReport runtime_bench(const std::vector<Method>& methods, const std::vector<ScenarioSample>& testset, int repeats) {
    if (repeats < 3) throw ConfigError("runtime_bench: repeats must be >= 3");
    if (testset.empty()) throw ConfigError("runtime_bench: empty test set");
    BenchReport rep;
    rep.environment = environment_descriptor();
    using clock = std::chrono::steady_clock;
    for (const auto& method : methods) {
        (void)method.solve(testset.front().B, testset.front().Phi, testset.front().K_act);
        std::vector<double> per_repeat;
        for (int r = 0; r < repeats; ++r) {
            const auto t0 = clock::now();
            for (const auto& s : testset) (void)method.solve(s.B, s.Phi, s.K_act);
            per_repeat.push_back(std::chrono::duration<double>(clock::now() - t0).count() /
                                 static_cast<double>(testset.size()));
        }
        BenchRow row;
        row.method = method.name;
        row.samples = testset.size();
        row.repeats = repeats;
        row.mean_s = std::accumulate(per_repeat.begin(), per_repeat.end(), 0.0) / repeats;
        std::sort(per_repeat.begin(), per_repeat.end());
        row.median_s = per_repeat[per_repeat.size() / 2];
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace cfgat
