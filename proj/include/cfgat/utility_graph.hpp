#pragma once
// Differentiable form of the SINR / SE / smoothed max-min utility.
//
// With W = mu (.) R, R_{m,i} = sqrt(gbar_{m,i}) / beta_{m,i}, the coherent
// gains are C = Phi (.) (W^T B), i.e. C_{i,k} = mu_i^T nu_{i,k}. Everything
// is restricted to the K_act active UEs.

#include <string>

#include "cfgat/autodiff.hpp"
#include "cfgat/metrics.hpp"
#include "cfgat/scenario.hpp"

namespace cfgat {

struct UtilityData {
    int M = 0;
    int K = 0;  // active UEs
    int N = 1;
    double zeta_d = 0.0;
    double prefactor = 0.0;  // 1 - T_p / T_c
    Mat R;        // M x K
    Mat B;        // M x K
    Mat Bt;       // K x M
    Mat Phi;      // K x K
    Mat off_diag; // K x K, ones off the diagonal
};

UtilityData make_utility_data(const ScenarioSample& s, const SystemStats& stats, const RadioConfig& cfg);

template <class T>
struct UtilityGraph {
    ad::Var<T> gamma;    // K x 1
    ad::Var<T> se;       // K x 1
    ad::Var<T> utility;  // 1 x 1
};

/// mu is M x K over the active UEs.
template <class T>
UtilityGraph<T> build_utility_graph(ad::Tape<T>& tape, ad::Var<T> mu, const UtilityData& data, double lambda);

/// Throws NumericError naming `stage` when v holds a NaN or infinity.
template <class T>
void require_finite(const Matrix<T>& v, const std::string& stage);

}  // namespace cfgat
