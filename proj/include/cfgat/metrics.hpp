#pragma once

#include <cstddef>
#include <vector>

#include "cfgat/matrix.hpp"
#include "cfgat/scenario.hpp"

namespace cfgat {

/// Closed-form statistics of one instance under MMSE estimation.
struct SystemStats {
    int M = 0;
    int K = 0;  // padded width
    Mat gbar;   // M x K, mean square of each estimate entry
    Mat bsqrt;  // M x K, sqrt(beta)
    std::vector<double> nu_data;  // K x K x M

    double nu(std::size_t i, std::size_t k, std::size_t m) const {
        return nu_data[(i * static_cast<std::size_t>(K) + k) * static_cast<std::size_t>(M) + m];
    }
};

/// Power-control coefficients mu_{m,k}, M x K.
struct PowerMatrix {
    Mat mu;
};

/// gbar_{m,k} = zeta_p T_p beta_{m,k}^2 / (1 + zeta_p T_p sum_i beta_{m,i} Phi_{ik}^2).
Mat mean_square_estimate(const Mat& B, const Mat& Phi, double zeta_p, int T_p);

/// nu_{i,k}[m] = Phi_{ik} sqrt(gbar_{m,i}) beta_{m,k} / beta_{m,i}; zero when beta_{m,i} = 0.
std::vector<double> nu_tensor(const Mat& B, const Mat& gbar, const Mat& Phi);

SystemStats compute_stats(const Mat& B, const Mat& Phi, double zeta_p, int T_p);
SystemStats compute_stats(const ScenarioSample& s, const RadioConfig& cfg);

/// Downlink SINR of the active UEs under conjugate beamforming
/// (use-and-then-forget bound). Sums run over active UEs only.
std::vector<double> sinr(const Mat& mu, const SystemStats& stats, double zeta_d, int N, int K_act);

/// (1 - T_p/T_c) log2(1 + gamma).
std::vector<double> spectral_efficiency(const std::vector<double>& gamma, int T_p, int T_c);

double min_se(const std::vector<double>& se, int K_act);

/// -(1/lambda) log( (1/K_act) sum_k exp(-lambda SE_k) ), max-shifted.
double smoothed_utility(const std::vector<double>& se, double lambda, int K_act);

/// Per-UE SE of the active UEs for a power matrix.
std::vector<double> evaluate_se(const Mat& mu, const SystemStats& stats, const RadioConfig& cfg, int K_act);

}  // namespace cfgat
