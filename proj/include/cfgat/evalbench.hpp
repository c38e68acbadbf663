#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cfgat/apg.hpp"
#include "cfgat/gat.hpp"
#include "cfgat/metrics.hpp"
#include "cfgat/scenario.hpp"

namespace cfgat {

/// A power-control method maps what it observes (B, Phi, K_act) to an
/// M x K_max power matrix.
struct Method {
    std::string name;
    std::function<Mat(const Mat& B, const Mat& Phi, int K_act)> solve;
};

Method apg_method(const RadioConfig& cfg, const ApgOptions& opts = {});
Method gat_method(const GatParams& params, const RadioConfig& cfg, int K_max, bool ablation,
                  Precision precision = Precision::F64, std::string name = "");

struct SeRecord {
    std::size_t sample = 0;
    int ue = 0;
    double se = 0.0;
};

struct MethodResult {
    std::string name;
    std::vector<SeRecord> se;      // active UEs only
    std::vector<double> min_se;    // per sample
    double mean_min_se = 0.0;
};

struct EvalReport {
    std::vector<MethodResult> methods;

    const MethodResult& at(const std::string& name) const;
    void write_se_csv(std::ostream& os) const;
    /// method, q05, q50, q95 of per-UE SE, mean min-SE.
    void write_summary_csv(std::ostream& os) const;
};

struct EvalOptions {
    double sigma_db = 0.0;  // perturbation of the B the methods observe
    std::uint64_t seed = 1;
    int threads = 1;
};

/// SE is always computed from the true B. Throws NumericError when a method
/// returns an infeasible matrix.
EvalReport evaluate_methods(const std::vector<ScenarioSample>& testset, const std::vector<Method>& methods,
                            const RadioConfig& cfg, const EvalOptions& opts = {});

struct EmpiricalCdf {
    std::vector<double> x;  // sorted
    std::vector<double> p;  // i / n
};

EmpiricalCdf empirical_cdf(std::vector<double> values);

/// Smallest sorted value whose ordinate reaches q.
double cdf_quantile(const EmpiricalCdf& cdf, double q);

struct CrossStatistic {
    int m = 0;
    int i = 0;  // estimate index
    int k = 0;  // channel index
    double empirical = 0.0;
    double theory = 0.0;
    double rel_dev = 0.0;
};

struct MonteCarloReport {
    long trials = 0;
    Mat ms_empirical;  // M x K, mean over trials and antennas of |ghat|^2
    Mat ms_theory;
    double max_ms_rel_dev = 0.0;
    std::vector<CrossStatistic> cross;  // pairs sharing a pilot
    double max_cross_rel_dev = 0.0;
    double max_mean_estimate = 0.0;  // max |E[ghat]| / sqrt(gbar) over entries
    double max_ratio_spread = 0.0;   // spread of ghat / g over uncontaminated UEs

    void write_csv(std::ostream& os) const;
};

/// Simulates h, W and the MMSE estimate with orthonormal pilots
/// phi_k = e_{pilot_index[k]}. `noiseless` sets W = 0.
MonteCarloReport monte_carlo_channel_stats(const ScenarioSample& s, const RadioConfig& cfg, long trials, Rng& rng,
                                           bool noiseless = false);

struct BenchRow {
    std::string method;
    double mean_s = 0.0;    // per sample, averaged over repeats
    double median_s = 0.0;  // median over repeats of the per-sample mean
    std::size_t samples = 0;
    int repeats = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::string environment;

    const BenchRow& at(const std::string& method) const;
    void write_csv(std::ostream& os) const;
};

std::string environment_descriptor();

/// Single worker; one untimed warmup solve per method precedes the timed repeats.
BenchReport runtime_bench(const std::vector<Method>& methods, const std::vector<ScenarioSample>& testset, int repeats);

}  // namespace cfgat
