#include "cfgat/utility_graph.hpp"

#include <cmath>
#include <numbers>

#include "cfgat/errors.hpp"

namespace cfgat {

UtilityData make_utility_data(const ScenarioSample& s, const SystemStats& stats, const RadioConfig& cfg) {
    UtilityData d;
    d.M = s.M;
    d.K = s.K_act;
    d.N = cfg.N;
    d.zeta_d = cfg.zeta_d;
    d.prefactor = 1.0 - static_cast<double>(cfg.T_p) / static_cast<double>(cfg.T_c);
    const auto M = static_cast<std::size_t>(d.M);
    const auto K = static_cast<std::size_t>(d.K);
    d.R = Mat(M, K);
    d.B = Mat(M, K);
    d.Bt = Mat(K, M);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            const double b = s.B(m, k);
            d.B(m, k) = b;
            d.Bt(k, m) = b;
            d.R(m, k) = b > 0.0 ? std::sqrt(stats.gbar(m, k)) / b : 0.0;
        }
    }
    d.Phi = Mat(K, K);
    d.off_diag = Mat(K, K, 1.0);
    for (std::size_t i = 0; i < K; ++i) {
        d.off_diag(i, i) = 0.0;
        for (std::size_t k = 0; k < K; ++k) d.Phi(i, k) = s.Phi(i, k);
    }
    return d;
}

template <class T>
UtilityGraph<T> build_utility_graph(ad::Tape<T>& tape, ad::Var<T> mu, const UtilityData& data, double lambda) {
    using namespace ad;
    if (mu.rows() != static_cast<std::size_t>(data.M) || mu.cols() != static_cast<std::size_t>(data.K)) {
        throw ShapeError("utility graph: mu " + shape_str(mu.value()) + " vs M=" + std::to_string(data.M) +
                         ", K_act=" + std::to_string(data.K));
    }
    const T zd = static_cast<T>(data.zeta_d);
    const T n = static_cast<T>(data.N);
    auto R = tape.constant(data.R.cast<T>());
    auto B = tape.constant(data.B.cast<T>());
    auto Bt = tape.constant(data.Bt.cast<T>());
    auto Phi = tape.constant(data.Phi.cast<T>());
    auto off = tape.constant(data.off_diag.cast<T>());

    auto W = mul(mu, R);
    auto C = mul(Phi, matmul(transpose(W), B));                      // K x K
    auto signal = scale(square(diag(C)), zd);                         // K x 1
    auto interf = scale(transpose(sum_cols(square(mul(C, off)))), zd);  // K x 1
    auto beam = scale(matmul(Bt, sum_rows(square(mu))), zd / n);      // K x 1
    auto den = add_scalar(add(interf, beam), T(1) / (n * n));
    UtilityGraph<T> g;
    g.gamma = div(signal, den);
    g.se = scale(log(add_scalar(g.gamma, T(1))), static_cast<T>(data.prefactor / std::numbers::ln2));
    const T lam = static_cast<T>(lambda);
    auto lse = logsumexp(scale(g.se, -lam));
    g.utility = scale(add_scalar(lse, -static_cast<T>(std::log(static_cast<double>(data.K)))), T(-1) / lam);
    return g;
}

template <class T>
void require_finite(const Matrix<T>& v, const std::string& stage) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericError("non-finite value in " + stage + " at entry (" + std::to_string(i / v.cols()) + ", " +
                               std::to_string(i % v.cols()) + ")");
        }
    }
}

template UtilityGraph<float> build_utility_graph(ad::Tape<float>&, ad::Var<float>, const UtilityData&, double);
template UtilityGraph<double> build_utility_graph(ad::Tape<double>&, ad::Var<double>, const UtilityData&, double);
template void require_finite(const Matrix<float>&, const std::string&);
template void require_finite(const Matrix<double>&, const std::string&);

}  // namespace cfgat
