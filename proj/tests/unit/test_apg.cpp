#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cfgat/apg.hpp"
#include "cfgat/errors.hpp"
#include "cfgat/feasible.hpp"
#include "cfgat/metrics.hpp"
#include "support.hpp"

using namespace cfgat;

namespace {

double utility_of(const Mat& mu, const ScenarioSample& s, const SystemStats& st, const RadioConfig& cfg, double lambda) {
    return smoothed_utility(evaluate_se(mu, st, cfg, s.K_act), lambda, s.K_act);
}

double min_se_of(const Mat& mu, const ScenarioSample& s, const SystemStats& st, const RadioConfig& cfg) {
    return min_se(evaluate_se(mu, st, cfg, s.K_act), s.K_act);
}

}  // namespace

TEST_CASE("options validation") {
    ApgOptions o;
    CHECK_NOTHROW(o.validate());
    o.lambda = 0.0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    o = {};
    o.max_iters = 0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    o = {};
    o.shrink = 1.0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    o = {};
    o.patience = 0;
    CHECK_THROWS_AS(o.validate(), ConfigError);
    CHECK(ApgOptions{}.lambda == 3.0);
}

TEST_CASE("single UE: the solution is radially optimal") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RadioConfig cfg;
        const auto s = testing::make_sample(6, 1, 1, 18, seed, 4, &cfg);
        const auto st = compute_stats(s, cfg);
        const auto res = apg_solve(s, st, cfg);
        const Mat& mu = res.power.mu;
        const double got = min_se_of(mu, s, st, cfg);
        double best = 0.0;
        for (int i = 1; i <= 4000; ++i) {
            Mat m = mu;
            const double t = 2.0 * i / 4000.0;
            for (std::size_t j = 0; j < m.size(); ++j) m[j] *= t;
            if (!is_feasible(m, cfg.N, 0.0).feasible) break;
            best = std::max(best, min_se_of(m, s, st, cfg));
        }
        CHECK(got >= best - 1e-6);
    }
}

TEST_CASE("apg agrees with the slow oracle") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        RadioConfig cfg;
        const auto s = testing::make_sample(8, 4, 4, 18, 100 + seed, 4, &cfg);
        const auto st = compute_stats(s, cfg);
        ApgOptions o;
        const auto res = apg_solve(s, st, cfg, o);
        const Mat ref = reference_pgd(s, st, cfg, 3.0, 10 * o.max_iters).mu;
        CHECK(std::abs(min_se_of(res.power.mu, s, st, cfg) - min_se_of(ref, s, st, cfg)) < 1e-3);
        CHECK(utility_of(res.power.mu, s, st, cfg, 3.0) >= utility_of(ref, s, st, cfg, 3.0) - 1e-3);
    }
}

TEST_CASE("apg never materially loses to the oracle on contaminated instances") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        RadioConfig cfg;
        const auto s = testing::make_sample(6, 8, 7, 3, 200 + seed, 4, &cfg);
        const auto st = compute_stats(s, cfg);
        const auto res = apg_solve(s, st, cfg);
        const Mat ref = reference_pgd(s, st, cfg, 3.0, 1000).mu;
        CHECK(utility_of(res.power.mu, s, st, cfg, 3.0) >= utility_of(ref, s, st, cfg, 3.0) - 1e-3);
    }
}

TEST_CASE("trace is non-decreasing and every iterate feasible") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        RadioConfig cfg;
        const auto s = testing::make_sample(7, 6, 5, 4, 300 + seed, 4, &cfg);
        const auto st = compute_stats(s, cfg);
        const auto res = apg_solve(s, st, cfg);
        const auto& tr = res.trace;
        REQUIRE(tr.utility.size() >= 2);
        CHECK(tr.utility.size() == tr.min_se.size());
        CHECK(tr.utility.size() == tr.step.size());
        CHECK(tr.utility.size() == tr.restart.size());
        for (std::size_t i = 1; i < tr.utility.size(); ++i) CHECK(tr.utility[i] >= tr.utility[i - 1]);
        CHECK(is_feasible(res.power.mu, cfg.N, 0.0).feasible);
        for (int k = s.K_act; k < s.K_max; ++k)
            for (int m = 0; m < s.M; ++m) CHECK(res.power.mu(m, k) == 0.0);
        // final point obeys the sandwich bound
        const auto se = evaluate_se(res.power.mu, st, cfg, s.K_act);
        const double u = smoothed_utility(se, 3.0, s.K_act), mn = min_se(se, s.K_act);
        CHECK(u >= mn - 1e-12);
        CHECK(u <= mn + std::log(static_cast<double>(s.K_act)) / 3.0 + 1e-12);
        CHECK(tr.utility.back() == doctest::Approx(u).epsilon(1e-12));
        CHECK(tr.iterations <= ApgOptions{}.max_iters);
    }
}

TEST_CASE("oracle initialization robustness and ascent") {
    RadioConfig cfg;
    const auto s = testing::make_sample(6, 4, 4, 18, 400, 4, &cfg);
    const auto st = compute_stats(s, cfg);
    const Mat a = reference_pgd(s, st, cfg, 3.0, 3000, PgdInit::Uniform).mu;
    const Mat b = reference_pgd(s, st, cfg, 3.0, 3000, PgdInit::NearZero).mu;
    CHECK(std::abs(utility_of(a, s, st, cfg, 3.0) - utility_of(b, s, st, cfg, 3.0)) < 1e-3);
    CHECK(is_feasible(a, cfg.N, 0.0).feasible);
    CHECK(is_feasible(b, cfg.N, 0.0).feasible);

    SolveTrace tr;
    reference_pgd(s, st, cfg, 3.0, 1, PgdInit::Uniform, &tr);
    REQUIRE(tr.utility.size() == 2);
    CHECK(tr.utility[1] >= tr.utility[0]);
    SolveTrace tr2;
    reference_pgd(s, st, cfg, 3.0, 50, PgdInit::Uniform, &tr2);
    for (std::size_t i = 1; i < tr2.utility.size(); ++i) CHECK(tr2.utility[i] >= tr2.utility[i - 1]);
}

TEST_CASE("apg terminates on the tolerance rule") {
    RadioConfig cfg;
    const auto s = testing::make_sample(5, 3, 3, 18, 500, 4, &cfg);
    const auto st = compute_stats(s, cfg);
    ApgOptions o;
    o.max_iters = 2000;
    const auto res = apg_solve(s, st, cfg, o);
    CHECK(res.trace.converged);
    CHECK(res.trace.iterations < 2000);
    o.max_iters = 3;
    const auto short_run = apg_solve(s, st, cfg, o);
    CHECK(short_run.trace.iterations <= 3);
}

TEST_CASE("trace csv export") {
    RadioConfig cfg;
    const auto s = testing::make_sample(4, 3, 3, 18, 600, 4, &cfg);
    const auto res = apg_solve(s, compute_stats(s, cfg), cfg);
    std::ostringstream os;
    res.trace.write_csv(os, 7);
    const std::string csv = os.str();
    CHECK(csv.rfind("sample,iteration,utility,min_se,step,restart\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == res.trace.utility.size() + 1);
}
