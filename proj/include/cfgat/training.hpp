#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cfgat/dataset.hpp"
#include "cfgat/gat.hpp"
#include "cfgat/utility_graph.hpp"

namespace cfgat {

enum class KSampling { Fixed, Uniform };

struct TrainConfig {
    double lambda = 3.0;
    int batch = 128;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 30;
    KSampling k_sampling = KSampling::Uniform;  // applies when generating data
    Precision precision = Precision::F32;
    bool ablation = false;
    double sigma_db = 0.0;  // input perturbation during training, 0 disables
    int shard = 16;         // samples per tape; fixes the reduction order
    int threads = 1;
    std::uint64_t seed = 1;
    double holdout_fraction = 0.05;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double holdout_min_se = 0.0;
    double wall_time_s = 0.0;
};

struct TrainResult {
    GatParams best;
    int best_epoch = 0;
    double init_holdout_min_se = 0.0;
    std::vector<EpochLog> log;

    void write_csv(std::ostream& os) const;
};

/// Per-sample quantities the loss needs, computed once from the true B.
struct LossSample {
    const ScenarioSample* sample = nullptr;
    UtilityData data;
};

LossSample make_loss_sample(const ScenarioSample& s, const RadioConfig& cfg);

/// Records -(1/denominator) sum_s u_s on the tape. fed_B, when given,
/// replaces B as the network input (the utility always uses the true B).
template <class T>
ad::Var<T> record_loss(ad::Tape<T>& tape, const ParamVars<T>& params, const GraphTopology& topo,
                       const std::vector<const LossSample*>& batch, const std::vector<const Mat*>& fed_B,
                       const RadioConfig& cfg, const TrainConfig& tc, double denominator);

struct LossGradient {
    double loss = 0.0;
    std::map<std::string, Mat> grad;
};

/// Loss of one minibatch and its gradient, reduced shard by shard in order.
LossGradient batch_loss_gradient(const GatParams& params, const GraphTopology& topo,
                                 const std::vector<const LossSample*>& batch, const std::vector<const Mat*>& fed_B,
                                 const RadioConfig& cfg, const TrainConfig& tc);

struct AdamState {
    std::map<std::string, Mat> m;
    std::map<std::string, Mat> v;
    long step = 0;
};

void adam_update(GatParams& params, AdamState& state, const std::map<std::string, Mat>& grad, const TrainConfig& tc);

/// Mean min-SE of the network on a set of samples, SE from the true B.
double mean_min_se(const GatParams& params, const std::vector<const ScenarioSample*>& samples, const RadioConfig& cfg,
                   const GatOptions& opts, Precision precision, int threads);

/// Trains on the first (1 - holdout) records and returns the parameters
/// with the best held-out mean min-SE. `progress` receives one CSV row per epoch.
TrainResult train(const Dataset& ds, const GatParams& params0, const RadioConfig& cfg, const TrainConfig& tc,
                  std::ostream* progress = nullptr);

/// Active entries: dB, add N(0, sigma^2), back to linear. Padded entries untouched.
Mat perturb_large_scale(const Mat& B, double sigma_db, Rng& rng);

}  // namespace cfgat
