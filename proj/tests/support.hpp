#pragma once
// Shared fixtures and independent reference evaluators for the test suites.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cfgat/matrix.hpp"
#include "cfgat/metrics.hpp"
#include "cfgat/scenario.hpp"

namespace testing {

using cfgat::Mat;

inline Mat random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
    return m;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

/// Sample with K_act active UEs, generated from the default radio settings
/// with the requested dimensions.
inline cfgat::ScenarioSample make_sample(int M, int K_max, int K_act, int T_p, std::uint64_t seed, int N = 4,
                                         cfgat::RadioConfig* cfg_out = nullptr) {
    cfgat::RadioConfig cfg = cfgat::default_radio_config();
    cfg.M = M;
    cfg.K_max = K_max;
    cfg.K_min = 1;
    cfg.T_p = T_p;
    cfg.N = N;
    cfgat::Rng rng = cfgat::sample_stream(seed, 77);
    auto s = cfgat::generate_scenario(cfg, K_act, rng);
    if (cfg_out) *cfg_out = cfg;
    return s;
}

/// Contaminated sample (M = 4, K = 6, T_p = 4, N = 2) whose large-scale gains
/// all lie within 3 dB of -105 dB, so every pilot-sharing pair carries a
/// sizeable share of the received pilot power.
inline cfgat::ScenarioSample narrow_spread_sample(std::uint64_t seed, cfgat::RadioConfig* cfg_out = nullptr) {
    auto s = make_sample(4, 6, 6, 4, seed, 2, cfg_out);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> db(-108.0, -102.0);
    for (std::size_t i = 0; i < s.B.size(); ++i) s.B[i] = std::pow(10.0, db(rng) / 10.0);
    return s;
}

/// Predicted relative standard error of the Monte-Carlo cross statistic for
/// a pair: sqrt(beta_k gbar_i / n) over the expected magnitude.
inline double cross_standard_error(const cfgat::ScenarioSample& s, const cfgat::SystemStats& st, int m, int i, int k,
                                   double samples) {
    return std::sqrt(s.B(m, k) * st.gbar(m, i) / samples) / (st.nu(i, k, m) * std::sqrt(st.gbar(m, i)));
}

/// Straight-line evaluation of the downlink SINR from B, Phi and mu, with
/// every intermediate formed from its definition.
inline std::vector<double> reference_sinr(const Mat& B, const Mat& Phi, const Mat& mu, double zeta_p, int T_p,
                                          double zeta_d, int N, int K) {
    const std::size_t M = B.rows();
    auto gbar = [&](std::size_t m, std::size_t k) {
        double den = 1.0;
        for (int i = 0; i < K; ++i) den += zeta_p * T_p * B(m, i) * Phi(i, k) * Phi(i, k);
        return zeta_p * T_p * B(m, k) * B(m, k) / den;
    };
    auto nu = [&](int i, int k, std::size_t m) {
        if (B(m, i) == 0.0) return 0.0;
        return Phi(i, k) * std::sqrt(gbar(m, i)) * B(m, k) / B(m, i);
    };
    std::vector<double> gamma(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        double sig = 0.0;
        for (std::size_t m = 0; m < M; ++m) sig += mu(m, k) * nu(k, k, m);
        double interf = 0.0;
        for (int i = 0; i < K; ++i) {
            if (i == k) continue;
            double c = 0.0;
            for (std::size_t m = 0; m < M; ++m) c += mu(m, i) * nu(i, k, m);
            interf += zeta_d * c * c;
        }
        double beam = 0.0;
        for (int i = 0; i < K; ++i)
            for (std::size_t m = 0; m < M; ++m) beam += B(m, k) * mu(m, i) * mu(m, i);
        gamma[static_cast<std::size_t>(k)] =
            zeta_d * sig * sig / (interf + zeta_d / N * beam + 1.0 / (static_cast<double>(N) * N));
    }
    return gamma;
}

inline double reference_utility(const std::vector<double>& se, double lambda) {
    long double acc = 0.0L;
    for (double s : se) acc += std::exp(-static_cast<long double>(lambda) * s);
    return static_cast<double>(-std::log(acc / se.size()) / lambda);
}

}  // namespace testing
