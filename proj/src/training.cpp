#include "cfgat/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "cfgat/errors.hpp"
#include "cfgat/metrics.hpp"

namespace cfgat {

void TrainConfig::validate() const {
    if (!(lambda > 0.0)) throw ConfigError("train: lambda must be > 0");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (!(sigma_db >= 0.0)) throw ConfigError("train: sigma must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (shard < 1) throw ConfigError("train: shard must be >= 1");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("train: holdout fraction must be in (0, 1)");
}

void TrainResult::write_csv(std::ostream& os) const {
    os << "epoch,loss,holdout_mean_min_se,wall_time_s\n";
    for (const auto& e : log) os << e.epoch << ',' << e.loss << ',' << e.holdout_min_se << ',' << e.wall_time_s << '\n';
}

LossSample make_loss_sample(const ScenarioSample& s, const RadioConfig& cfg) {
    return {&s, make_utility_data(s, compute_stats(s, cfg), cfg)};
}

Mat perturb_large_scale(const Mat& B, double sigma_db, Rng& rng) {
    if (!(sigma_db >= 0.0)) throw ConfigError("perturb: sigma must be >= 0");
    Mat out = B;
    if (sigma_db == 0.0) return out;
    std::normal_distribution<double> noise(0.0, sigma_db);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(out[i] > 0.0)) continue;
        out[i] = std::pow(10.0, (10.0 * std::log10(out[i]) + noise(rng)) / 10.0);
    }
    return out;
}

template <class T>
ad::Var<T> record_loss(ad::Tape<T>& tape, const ParamVars<T>& params, const GraphTopology& topo,
                       const std::vector<const LossSample*>& batch, const std::vector<const Mat*>& fed_B,
                       const RadioConfig& cfg, const TrainConfig& tc, double denominator) {
    std::vector<GatSampleRef> refs;
    refs.reserve(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const Mat* b = fed_B.empty() || !fed_B[s] ? &batch[s]->sample->B : fed_B[s];
        refs.push_back({b, &batch[s]->sample->Phi});
    }
    auto powers = record_forward(tape, params, topo, refs, GatOptions{tc.ablation, cfg.N});
    ad::Var<T> total{};
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto k_act = static_cast<std::size_t>(batch[s]->data.K);
        auto mu = k_act == powers[s].cols() ? powers[s] : ad::slice_cols(powers[s], 0, k_act);
        auto u = build_utility_graph(tape, mu, batch[s]->data, tc.lambda).utility;
        total = s == 0 ? u : ad::add(total, u);
    }
    return ad::scale(total, static_cast<T>(-1.0 / denominator));
}

namespace {

template <class T>
LossGradient shard_loss_gradient(const GatParams& params, const GraphTopology& topo,
                                 const std::vector<const LossSample*>& shard, const std::vector<const Mat*>& fed_B,
                                 const RadioConfig& cfg, const TrainConfig& tc, double denominator) {
    ad::Tape<T> tape;
    auto vars = bind_params(tape, params, true);
    auto loss = record_loss(tape, vars, topo, shard, fed_B, cfg, tc, denominator);
    LossGradient out;
    out.loss = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(out.loss)) {
        // locate the offending sample with a per-sample double evaluation
        for (std::size_t s = 0; s < shard.size(); ++s) {
            ad::Tape<double> probe;
            auto pv = bind_params(probe, params, false);
            auto one = record_loss(probe, pv, topo, {shard[s]}, fed_B.empty() ? fed_B : std::vector{fed_B[s]}, cfg, tc, 1.0);
            if (!std::isfinite(one.value()[0]))
                throw NumericError("training: non-finite loss for dataset sample at offset " + std::to_string(s) +
                                   " of the shard (stage: smoothed utility)");
        }
        throw NumericError("training: non-finite loss in reduced precision (stage: smoothed utility)");
    }
    tape.backward(loss);
    for (const auto& [name, v] : vars) {
        Mat g = tape.gradient(v).template cast<double>();
        require_finite(g, "gradient of " + name);
        out.grad.emplace(name, std::move(g));
    }
    return out;
}

}  // namespace

LossGradient batch_loss_gradient(const GatParams& params, const GraphTopology& topo,
                                 const std::vector<const LossSample*>& batch, const std::vector<const Mat*>& fed_B,
                                 const RadioConfig& cfg, const TrainConfig& tc) {
    const std::size_t n = batch.size();
    const auto shard = static_cast<std::size_t>(tc.shard);
    const std::size_t shards = (n + shard - 1) / shard;
    std::vector<LossGradient> parts(shards);
    parallel_for(shards, tc.threads, [&](std::size_t p) {
        const std::size_t lo = p * shard, hi = std::min(n, lo + shard);
        std::vector<const LossSample*> sub(batch.begin() + lo, batch.begin() + hi);
        std::vector<const Mat*> fed;
        if (!fed_B.empty()) fed.assign(fed_B.begin() + lo, fed_B.begin() + hi);
        parts[p] = tc.precision == Precision::F32
                       ? shard_loss_gradient<float>(params, topo, sub, fed, cfg, tc, static_cast<double>(n))
                       : shard_loss_gradient<double>(params, topo, sub, fed, cfg, tc, static_cast<double>(n));
    });
    LossGradient total = std::move(parts.front());
    for (std::size_t p = 1; p < shards; ++p) {
        total.loss += parts[p].loss;
        for (auto& [name, g] : total.grad) {
            const Mat& h = parts[p].grad.at(name);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += h[i];
        }
    }
    return total;
}

void adam_update(GatParams& params, AdamState& st, const std::map<std::string, Mat>& grad, const TrainConfig& tc) {
    ++st.step;
    const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(st.step));
    for (auto& [name, p] : params.tensors) {
        const Mat& g = grad.at(name);
        auto [mit, fresh_m] = st.m.try_emplace(name, p.rows(), p.cols());
        auto [vit, fresh_v] = st.v.try_emplace(name, p.rows(), p.cols());
        Mat& m = mit->second;
        Mat& v = vit->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g[i];
            v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g[i] * g[i];
            p[i] -= tc.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + tc.adam_eps);
        }
    }
}

double mean_min_se(const GatParams& params, const std::vector<const ScenarioSample*>& samples, const RadioConfig& cfg,
                   const GatOptions& opts, Precision precision, int threads) {
    if (samples.empty()) return 0.0;
    const auto topo = build_topology(samples.front()->M, samples.front()->K_max);
    std::vector<double> per(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto& s = *samples[i];
        Mat mu = gat_forward(params, topo, s.B, s.Phi, opts, precision);
        per[i] = min_se(evaluate_se(mu, compute_stats(s, cfg), cfg, s.K_act), s.K_act);
    });
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

TrainResult train(const Dataset& ds, const GatParams& params0, const RadioConfig& cfg, const TrainConfig& tc,
                  std::ostream* progress) {
    tc.validate();
    if (ds.samples.empty()) throw ConfigError("train: empty dataset");
    if (ds.header.M != params0.M)
        throw ShapeError("train: dataset M=" + std::to_string(ds.header.M) + ", parameters M=" +
                         std::to_string(params0.M));
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t split = ds.holdout_begin(tc.holdout_fraction);
    if (split == 0 || split == ds.samples.size()) throw ConfigError("train: dataset too small for a held-out split");
    const auto topo = build_topology(ds.header.M, ds.header.K_max);
    const GatOptions opts{tc.ablation, cfg.N};

    std::vector<LossSample> train_set(split);
    parallel_for(split, tc.threads, [&](std::size_t i) { train_set[i] = make_loss_sample(ds.samples[i], cfg); });
    std::vector<const ScenarioSample*> held;
    for (std::size_t i = split; i < ds.samples.size(); ++i) held.push_back(&ds.samples[i]);

    TrainResult res;
    GatParams params = params0;
    res.best = params;
    res.init_holdout_min_se = mean_min_se(params, held, cfg, opts, tc.precision, tc.threads);
    double best = res.init_holdout_min_se;
    if (progress) *progress << "epoch,loss,holdout_mean_min_se,wall_time_s\n";

    AdamState adam;
    std::vector<std::size_t> order(split);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        Rng shuffle = sample_stream(tc.seed, 0x5f00000000ULL + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < split; lo += static_cast<std::size_t>(tc.batch)) {
            const std::size_t hi = std::min(split, lo + static_cast<std::size_t>(tc.batch));
            std::vector<const LossSample*> batch;
            std::vector<Mat> noisy;
            std::vector<const Mat*> fed;
            for (std::size_t i = lo; i < hi; ++i) batch.push_back(&train_set[order[i]]);
            if (tc.sigma_db > 0.0) {
                noisy.reserve(batch.size());
                for (std::size_t i = lo; i < hi; ++i) {
                    Rng r = sample_stream(tc.seed ^ (static_cast<std::uint64_t>(epoch) << 40), order[i]);
                    noisy.push_back(perturb_large_scale(train_set[order[i]].sample->B, tc.sigma_db, r));
                }
                for (const auto& b : noisy) fed.push_back(&b);
            }
            LossGradient lg = batch_loss_gradient(params, topo, batch, fed, cfg, tc);
            adam_update(params, adam, lg.grad, tc);
            loss_sum += lg.loss;
            ++batches;
        }
        EpochLog e;
        e.epoch = epoch;
        e.loss = loss_sum / static_cast<double>(batches);
        e.holdout_min_se = mean_min_se(params, held, cfg, opts, tc.precision, tc.threads);
        e.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.push_back(e);
        if (progress) *progress << e.epoch << ',' << e.loss << ',' << e.holdout_min_se << ',' << e.wall_time_s << std::endl;
        if (e.holdout_min_se > best) {
            best = e.holdout_min_se;
            res.best = params;
            res.best_epoch = epoch;
        }
    }
    return res;
}

template ad::Var<float> record_loss(ad::Tape<float>&, const ParamVars<float>&, const GraphTopology&,
                                    const std::vector<const LossSample*>&, const std::vector<const Mat*>&,
                                    const RadioConfig&, const TrainConfig&, double);
template ad::Var<double> record_loss(ad::Tape<double>&, const ParamVars<double>&, const GraphTopology&,
                                     const std::vector<const LossSample*>&, const std::vector<const Mat*>&,
                                     const RadioConfig&, const TrainConfig&, double);

}  // namespace cfgat
