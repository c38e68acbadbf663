#include "cfgat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfgat/errors.hpp"

namespace cfgat {

Mat mean_square_estimate(const Mat& B, const Mat& Phi, double zeta_p, int T_p) {
    const std::size_t M = B.rows();
    const std::size_t K = B.cols();
    if (Phi.rows() != K || Phi.cols() != K) {
        throw ShapeError("mean_square_estimate: B " + shape_str(B) + " vs Phi " + shape_str(Phi));
    }
    const double zt = zeta_p * static_cast<double>(T_p);
    Mat g(M, K);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            double interf = 0.0;
            for (std::size_t i = 0; i < K; ++i) interf += B(m, i) * Phi(i, k) * Phi(i, k);
            g(m, k) = zt * B(m, k) * B(m, k) / (1.0 + zt * interf);
        }
    }
    return g;
}

std::vector<double> nu_tensor(const Mat& B, const Mat& gbar, const Mat& Phi) {
    const std::size_t M = B.rows();
    const std::size_t K = B.cols();
    std::vector<double> nu(K * K * M, 0.0);
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const double phi = Phi(i, k);
            if (phi == 0.0) continue;
            for (std::size_t m = 0; m < M; ++m) {
                const double bi = B(m, i);
                if (bi <= 0.0) continue;
                nu[(i * K + k) * M + m] = phi * std::sqrt(gbar(m, i)) * B(m, k) / bi;
            }
        }
    }
    return nu;
}

SystemStats compute_stats(const Mat& B, const Mat& Phi, double zeta_p, int T_p) {
    SystemStats s;
    s.M = static_cast<int>(B.rows());
    s.K = static_cast<int>(B.cols());
    s.gbar = mean_square_estimate(B, Phi, zeta_p, T_p);
    s.nu_data = nu_tensor(B, s.gbar, Phi);
    s.bsqrt = Mat(B.rows(), B.cols());
    for (std::size_t i = 0; i < B.size(); ++i) s.bsqrt[i] = std::sqrt(B[i]);
    return s;
}

SystemStats compute_stats(const ScenarioSample& s, const RadioConfig& cfg) {
    return compute_stats(s.B, s.Phi, cfg.zeta_p, cfg.T_p);
}

std::vector<double> sinr(const Mat& mu, const SystemStats& stats, double zeta_d, int N, int K_act) {
    const auto M = static_cast<std::size_t>(stats.M);
    const auto K = static_cast<std::size_t>(K_act);
    if (mu.rows() != M || mu.cols() < K) {
        throw ShapeError("sinr: mu " + shape_str(mu) + " incompatible with M=" + std::to_string(M) +
                         ", K_act=" + std::to_string(K_act));
    }
    const double n = static_cast<double>(N);
    // coherent[i][k] = mu_i^T nu_{i,k}
    std::vector<double> coherent(K * K, 0.0);
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            double acc = 0.0;
            for (std::size_t m = 0; m < M; ++m) acc += mu(m, i) * stats.nu(i, k, m);
            coherent[i * K + k] = acc;
        }
    }
    std::vector<double> gamma(K);
    for (std::size_t k = 0; k < K; ++k) {
        double interf = 0.0;
        for (std::size_t i = 0; i < K; ++i) {
            if (i == k) continue;
            interf += zeta_d * coherent[i * K + k] * coherent[i * K + k];
        }
        double beamforming = 0.0;  // sum_i ||B_k mu_i||^2
        for (std::size_t i = 0; i < K; ++i) {
            for (std::size_t m = 0; m < M; ++m) {
                const double v = stats.bsqrt(m, k) * mu(m, i);
                beamforming += v * v;
            }
        }
        const double num = zeta_d * coherent[k * K + k] * coherent[k * K + k];
        gamma[k] = num / (interf + zeta_d / n * beamforming + 1.0 / (n * n));
    }
    return gamma;
}

std::vector<double> spectral_efficiency(const std::vector<double>& gamma, int T_p, int T_c) {
    const double pre = 1.0 - static_cast<double>(T_p) / static_cast<double>(T_c);
    std::vector<double> se(gamma.size());
    std::transform(gamma.begin(), gamma.end(), se.begin(), [pre](double g) { return pre * std::log2(1.0 + g); });
    return se;
}

double min_se(const std::vector<double>& se, int K_act) {
    if (K_act < 1 || static_cast<std::size_t>(K_act) > se.size()) throw ShapeError("min_se: bad K_act");
    return *std::min_element(se.begin(), se.begin() + K_act);
}

double smoothed_utility(const std::vector<double>& se, double lambda, int K_act) {
    if (!(lambda > 0.0)) throw ConfigError("smoothed_utility: lambda must be > 0");
    if (K_act < 1 || static_cast<std::size_t>(K_act) > se.size()) throw ShapeError("smoothed_utility: bad K_act");
    // max of -lambda*SE is -lambda*min(SE)
    const double shift = -lambda * min_se(se, K_act);
    double acc = 0.0;
    for (int k = 0; k < K_act; ++k) acc += std::exp(-lambda * se[k] - shift);
    const double lse = shift + std::log(acc) - std::log(static_cast<double>(K_act));
    return -lse / lambda;
}

std::vector<double> evaluate_se(const Mat& mu, const SystemStats& stats, const RadioConfig& cfg, int K_act) {
    return spectral_efficiency(sinr(mu, stats, cfg.zeta_d, cfg.N, K_act), cfg.T_p, cfg.T_c);
}

}  // namespace cfgat
