#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cfgat/autodiff.hpp"
#include "cfgat/dataset.hpp"
#include "cfgat/errors.hpp"
#include "cfgat/metrics.hpp"
#include "cfgat/training.hpp"
#include "support.hpp"

using namespace cfgat;

namespace {

struct Fixture {
    RadioConfig cfg;
    std::vector<ScenarioSample> samples;
    std::vector<LossSample> loss;
    std::vector<const LossSample*> batch;
    GraphTopology topo;

    Fixture(int M, int K_max, int T_p, std::size_t n, std::uint64_t seed) {
        cfg = default_radio_config();
        cfg.M = M;
        cfg.K_max = K_max;
        cfg.K_min = 1;
        cfg.T_p = T_p;
        for (std::size_t i = 0; i < n; ++i) samples.push_back(generate_indexed_sample(cfg, seed, i));
        for (const auto& s : samples) loss.push_back(make_loss_sample(s, cfg));
        for (const auto& l : loss) batch.push_back(&l);
        topo = build_topology(M, K_max);
    }
};

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig tc;
    CHECK_NOTHROW(tc.validate());
    tc.sigma_db = -1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = {};
    tc.batch = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = {};
    tc.lambda = 0.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("loss equals the negative mean metrics utility") {
    Fixture fx(5, 4, 2, 6, 3);
    const auto P = init_params(5, 2);
    TrainConfig tc;
    ad::Tape<double> tape;
    auto vars = bind_params(tape, P, false);
    const double loss = record_loss(tape, vars, fx.topo, fx.batch, {}, fx.cfg, tc, 6.0).value()(0, 0);
    double acc = 0.0;
    for (const auto& s : fx.samples) {
        const Mat mu = gat_forward(P, fx.topo, s.B, s.Phi);
        acc += smoothed_utility(evaluate_se(mu, compute_stats(s, fx.cfg), fx.cfg, s.K_act), tc.lambda, s.K_act);
    }
    CHECK(std::abs(loss + acc / 6.0) < 1e-9);

    const auto lg = batch_loss_gradient(P, fx.topo, fx.batch, {}, fx.cfg, tc);
    CHECK(std::abs(lg.loss - loss) < 1e-6 * std::abs(loss));
}

TEST_CASE("end-to-end loss gradient matches finite differences") {
    Fixture fx(4, 3, 2, 2, 5);
    const auto P = init_params(4, 7);
    TrainConfig tc;
    for (bool ablation : {false, true}) {
        tc.ablation = ablation;
        const ad::Builder f = [&](ad::Tape<double>& t, const ad::Inputs& in) {
            return record_loss<double>(t, in, fx.topo, fx.batch, {}, fx.cfg, tc, 2.0);
        };
        const auto rep = ad::finite_difference_check(f, P.tensors, 1e-6, 3, 60);
        INFO("worst " << rep.worst_input << "[" << rep.worst_index << "] " << rep.worst_analytic << " vs "
                      << rep.worst_numeric);
        CHECK(rep.coordinates >= 50);
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("sharded reduction matches a single tape") {
    Fixture fx(4, 5, 2, 7, 9);
    const auto P = init_params(4, 1);
    TrainConfig tc;
    tc.precision = Precision::F64;
    tc.shard = 7;
    const auto whole = batch_loss_gradient(P, fx.topo, fx.batch, {}, fx.cfg, tc);
    tc.shard = 3;
    const auto split = batch_loss_gradient(P, fx.topo, fx.batch, {}, fx.cfg, tc);
    CHECK(split.loss == doctest::Approx(whole.loss).epsilon(1e-12));
    for (const auto& [name, g] : whole.grad)
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(std::abs(split.grad.at(name)[i] - g[i]) <= 1e-10 * (1.0 + std::abs(g[i])));
    // thread count does not change the result
    tc.threads = 3;
    const auto threaded = batch_loss_gradient(P, fx.topo, fx.batch, {}, fx.cfg, tc);
    CHECK(threaded.loss == split.loss);
    for (const auto& [name, g] : split.grad) CHECK(threaded.grad.at(name) == g);
}

TEST_CASE("one optimizer step changes parameters and keeps them finite") {
    Fixture fx(4, 4, 18, 4, 11);
    GatParams P = init_params(4, 3);
    const GatParams before = P;
    TrainConfig tc;
    const auto lg = batch_loss_gradient(P, fx.topo, fx.batch, {}, fx.cfg, tc);
    AdamState st;
    adam_update(P, st, lg.grad, tc);
    CHECK(st.step == 1);
    bool changed = false;
    for (const auto& [name, t] : P.tensors)
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(std::isfinite(t[i]));
            changed = changed || t[i] != before.at(name)[i];
        }
    CHECK(changed);
    // first Adam step moves each coordinate with a nonzero gradient by about lr
    const Mat& g = lg.grad.at("post.L3.b");
    if (std::abs(g[0]) > 1e-6)
        CHECK(std::abs(P.at("post.L3.b")[0] - before.at("post.L3.b")[0]) == doctest::Approx(tc.learning_rate).epsilon(1e-3));
}

TEST_CASE("ablated training ignores off-diagonal pilot content") {
    Fixture fx(4, 5, 2, 3, 13);
    const auto P = init_params(4, 5);
    TrainConfig tc;
    tc.precision = Precision::F64;
    tc.ablation = true;
    const auto a = batch_loss_gradient(P, fx.topo, fx.batch, {}, fx.cfg, tc);
    // replace every Phi by its diagonal; the utility still sees the true Phi through the loss data
    std::vector<ScenarioSample> diag = fx.samples;
    for (auto& s : diag)
        for (int i = 0; i < s.K_max; ++i)
            for (int j = 0; j < s.K_max; ++j)
                if (i != j) s.Phi(i, j) = 0.0;
    std::vector<LossSample> loss2 = fx.loss;
    for (std::size_t i = 0; i < loss2.size(); ++i) loss2[i].sample = &diag[i];
    std::vector<const LossSample*> b2;
    for (const auto& l : loss2) b2.push_back(&l);
    const auto b = batch_loss_gradient(P, fx.topo, b2, {}, fx.cfg, tc);
    CHECK(std::abs(a.loss - b.loss) <= 1e-12 * std::abs(a.loss));
    for (const auto& [name, g] : a.grad)
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(b.grad.at(name)[i] - g[i]) <= 1e-12 * (1.0 + std::abs(g[i])));
}

TEST_CASE("perturbation of large-scale coefficients") {
    RadioConfig cfg;
    const auto s = testing::make_sample(8, 10, 6, 18, 1, 4, &cfg);
    Rng rng(3);
    CHECK(perturb_large_scale(s.B, 0.0, rng) == s.B);
    const Mat p = perturb_large_scale(s.B, 1.0, rng);
    for (int k = 6; k < 10; ++k)
        for (int m = 0; m < 8; ++m) CHECK(p(m, k) == 0.0);

    Mat one(1, 1, 1e-10);
    Rng r2(5);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0, ratio = 0.0;
    for (int i = 0; i < n; ++i) {
        const double b = perturb_large_scale(one, 1.0, r2)(0, 0);
        const double e = 10.0 * std::log10(b / 1e-10);
        sum += e;
        sum2 += e * e;
        ratio += b / 1e-10;
    }
    const double mean = sum / n, sd = std::sqrt(sum2 / n - mean * mean);
    CHECK(std::abs(sd - 1.0) < 0.02);
    CHECK(std::abs(mean) < 0.02);
    CHECK(ratio / n > 1.0);
}

TEST_CASE("short training run improves on the initialization") {
    auto cfg = scenario_preset(1);
    const auto ds = generate_dataset(cfg, 200, 21, 1);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch = 16;
    tc.learning_rate = 3e-3;
    std::ostringstream progress;
    const auto res = train(ds, init_params(cfg.M, 1), cfg, tc, &progress);
    REQUIRE(res.log.size() == 3);
    double best = res.init_holdout_min_se;
    for (const auto& e : res.log) {
        CHECK(std::isfinite(e.loss));
        best = std::max(best, e.holdout_min_se);
    }
    CHECK(best > res.init_holdout_min_se);
    CHECK(res.best_epoch >= 1);
    std::ostringstream log;
    res.write_csv(log);
    CHECK(log.str().rfind("epoch,loss,holdout_mean_min_se,wall_time_s", 0) == 0);
    CHECK_FALSE(progress.str().empty());

    // the returned parameters reproduce the logged best held-out score
    std::vector<const ScenarioSample*> held;
    for (std::size_t i = ds.holdout_begin(); i < ds.samples.size(); ++i) held.push_back(&ds.samples[i]);
    const double again = mean_min_se(res.best, held, cfg, {}, tc.precision, 1);
    CHECK(again == doctest::Approx(res.log[res.best_epoch - 1].holdout_min_se).epsilon(1e-12));
}

TEST_CASE("training rejects a mismatched dataset") {
    const auto ds = generate_dataset(scenario_preset(1), 40, 1, 1);
    CHECK_THROWS_AS(train(ds, init_params(32, 1), scenario_preset(1), TrainConfig{}), ShapeError);
}
