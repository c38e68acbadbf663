#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cfgat/errors.hpp"
#include "cfgat/feasible.hpp"
#include "cfgat/gat.hpp"
#include "support.hpp"

using namespace cfgat;

namespace {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

// ---- straight-line oracle, written from the layer definitions ------------------

Vec affine(const Vec& x, const Mat& w, const Mat& b) {
    Vec y(w.cols());
    for (std::size_t o = 0; o < w.cols(); ++o) {
        double s = b(0, o);
        for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w(i, o);
        y[o] = s;
    }
    return y;
}

double dotv(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// One aggregation side: self term plus the L5 map of the attended neighbor values.
Vec side_output(const Rows& X, std::size_t i, const std::vector<std::size_t>& nbrs, const GatParams& P,
                const std::string& pre, const std::vector<double>* pilot, const Vec* pilot_w,
                const std::vector<double>* mask) {
    const auto L = [&](int q, const Vec& x) {
        return affine(x, P.at(pre + "L" + std::to_string(q) + ".w"), P.at(pre + "L" + std::to_string(q) + ".b"));
    };
    const Vec self = L(1, X[i]);
    const Vec q = L(3, X[i]);
    const std::size_t D = q.size();
    Vec acc(D, 0.0);
    double den = 0.0;
    std::vector<double> weight(nbrs.size());
    std::vector<Vec> vals(nbrs.size());
    for (std::size_t e = 0; e < nbrs.size(); ++e) {
        const std::size_t j = nbrs[e];
        Vec key = L(4, X[j]);
        Vec val = L(2, X[j]);
        if (pilot)
            for (std::size_t d = 0; d < D; ++d) {
                key[d] += (*pilot)[e] * (*pilot_w)[d];
                val[d] += (*pilot)[e] * (*pilot_w)[d];
            }
        const double m = mask ? (*mask)[j] : 1.0;
        weight[e] = m * std::exp(dotv(q, key) / std::sqrt(static_cast<double>(D)));
        den += weight[e];
        vals[e] = val;
    }
    if (den > 0.0)
        for (std::size_t e = 0; e < nbrs.size(); ++e)
            for (std::size_t d = 0; d < D; ++d) acc[d] += weight[e] / den * vals[e][d];
    const Vec agg = L(5, acc);
    Vec out(D);
    for (std::size_t d = 0; d < D; ++d) out[d] = self[d] + agg[d];
    return out;
}

Mat oracle_forward(const GatParams& P, const Mat& B, const Mat& Phi, int N, bool ablation = false) {
    const std::size_t M = B.rows(), K = B.cols(), n = M * K;
    // standardize log(B) over the active entries
    std::vector<double> active(K);
    for (std::size_t k = 0; k < K; ++k) active[k] = Phi(k, k) != 0.0 ? 1.0 : 0.0;
    double mean = 0.0, cnt = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t m = 0; m < M; ++m)
            if (active[k] != 0.0) mean += std::log(B(m, k)), cnt += 1.0;
    mean /= cnt;
    double var = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t m = 0; m < M; ++m)
            if (active[k] != 0.0) var += (std::log(B(m, k)) - mean) * (std::log(B(m, k)) - mean);
    var /= cnt;
    Rows X(n, Vec(1, 0.0));
    std::vector<double> node_mask(n);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t m = 0; m < M; ++m) {
            const std::size_t v = k * M + m;
            node_mask[v] = active[k];
            if (active[k] == 0.0) continue;
            const double z = var < 1e-12 ? 0.0 : (std::log(B(m, k)) - mean) / std::sqrt(var);
            X[v][0] = P.at("pre.alpha")(m, 0) * z + P.at("pre.beta")(m, 0);
        }
    for (int t = 1; t <= 4; ++t) {
        const std::string lp = "layer" + std::to_string(t) + ".";
        const Mat& pw = P.at(lp + "phi.w");
        const Vec pilot_w(pw.data(), pw.data() + pw.size());
        Rows Y(n);
        for (std::size_t v = 0; v < n; ++v) {
            const std::size_t m = v % M, k = v / M;
            std::vector<std::size_t> apn, uen;
            std::vector<double> attr;
            for (std::size_t j = 0; j < K; ++j)
                if (j != k) {
                    apn.push_back(j * M + m);
                    attr.push_back(ablation ? 0.0 : Phi(k, j));
                }
            for (std::size_t a = 0; a < M; ++a)
                if (a != m) uen.push_back(k * M + a);
            const Vec ya = side_output(X, v, apn, P, lp + "ap.", &attr, &pilot_w, &node_mask);
            const Vec yu = side_output(X, v, uen, P, lp + "ue.", nullptr, nullptr, nullptr);
            Vec h(ya.size());
            for (std::size_t d = 0; d < h.size(); ++d) h[d] = std::max(0.0, ya[d] + yu[d]);
            const double mu = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
            double vv = 0.0;
            for (double x : h) vv += (x - mu) * (x - mu);
            vv /= static_cast<double>(h.size());
            for (std::size_t d = 0; d < h.size(); ++d)
                h[d] = (h[d] - mu) / std::sqrt(vv + 1e-5) * P.at(lp + "norm.gain")(0, d) + P.at(lp + "norm.bias")(0, d);
            Y[v] = h;
        }
        X = Y;
    }
    Mat out(M, K);
    for (std::size_t v = 0; v < n; ++v) {
        Vec y1 = affine(X[v], P.at("post.L1.w"), P.at("post.L1.b"));
        for (double& x : y1) x = std::max(0.0, x);
        const Vec y2 = affine(y1, P.at("post.L2.w"), P.at("post.L2.b"));
        const double z = affine(y2, P.at("post.L3.w"), P.at("post.L3.b"))[0];
        const double sp = std::log1p(std::exp(z + 6.0));
        out(v % M, v / M) = std::exp(-sp) * active[v / M];
    }
    return project(out, N);
}

// init_params with every tensor jittered so that biases and affine terms are exercised.
GatParams jittered_params(int M, std::uint64_t seed, double amount = 0.2) {
    GatParams p = init_params(M, seed);
    std::mt19937_64 rng(seed * 7 + 1);
    std::uniform_real_distribution<double> u(-amount, amount);
    for (auto& [name, t] : p.tensors)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += u(rng);
    return p;
}

Mat permute_cols(const Mat& A, const std::vector<int>& perm) {
    Mat out(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) = A(r, perm[c]);
    return out;
}

Mat permute_rows(const Mat& A, const std::vector<int>& perm) {
    Mat out(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) = A(perm[r], c);
    return out;
}

Mat pad_cols(const Mat& A, std::size_t extra_cols, std::size_t extra_rows = 0) {
    Mat out(A.rows() + extra_rows, A.cols() + extra_cols, 0.0);
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) = A(r, c);
    return out;
}

}  // namespace

TEST_CASE("topology index map and neighbor lists") {
    const auto topo = build_topology(2, 2);
    // 1-based psi(m,k) = M(k-1)+m maps to 0-based k*M+m
    CHECK(topo.node(0, 0) + 1 == 1);
    CHECK(topo.node(1, 0) + 1 == 2);
    CHECK(topo.node(0, 1) + 1 == 3);
    CHECK(topo.node(1, 1) + 1 == 4);
    CHECK(topo.ap->degree == 1);
    CHECK(topo.ue->degree == 1);
    CHECK(topo.ap->row(0)[0] == topo.node(0, 1));
    CHECK(topo.ue->row(0)[0] == topo.node(1, 0));
    CHECK(build_topology(5, 1).ap->degree == 0);
}

TEST_CASE("neighbor relations are symmetric and exclude self") {
    const auto topo = build_topology(4, 6);
    for (const auto* tab : {topo.ap.get(), topo.ue.get()}) {
        std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
        for (std::size_t i = 0; i < tab->nodes; ++i)
            for (std::size_t e = 0; e < tab->degree; ++e) {
                const auto j = tab->row(i)[e];
                CHECK(j != i);
                edges.insert({static_cast<std::uint32_t>(i), j});
            }
        for (const auto& [i, j] : edges) CHECK(edges.count({j, i}) == 1);
    }
    CHECK(topo.ap->degree == 5);
    CHECK(topo.ue->degree == 3);
    for (std::size_t i = 0; i < topo.nodes(); ++i) {
        for (std::size_t e = 0; e < topo.ap->degree; ++e) CHECK(topo.ap_of(topo.ap->row(i)[e]) == topo.ap_of(i));
        for (std::size_t e = 0; e < topo.ue->degree; ++e) CHECK(topo.ue_of(topo.ue->row(i)[e]) == topo.ue_of(i));
    }
}

TEST_CASE("parameter layout and initialization") {
    const auto layout = param_layout(16);
    std::set<std::string> names;
    for (const auto& [n, s] : layout) names.insert(n);
    CHECK(names.size() == layout.size());
    for (int t = 1; t <= 4; ++t) {
        const std::size_t in = kLayerWidths[t - 1], w = kLayerWidths[t];
        for (const char* side : {"ap", "ue"}) {
            const std::string p = "layer" + std::to_string(t) + "." + side + ".";
            const auto P = init_params(16, 1);
            for (int q = 1; q <= 4; ++q) {
                CHECK(P.at(p + "L" + std::to_string(q) + ".w").rows() == in);
                CHECK(P.at(p + "L" + std::to_string(q) + ".w").cols() == w);
            }
            CHECK(P.at(p + "L5.w").rows() == w);
        }
    }
    const auto a = init_params(16, 5), b = init_params(16, 5), c = init_params(16, 6);
    CHECK(a.tensors == b.tensors);
    CHECK_FALSE(a.tensors == c.tensors);
    for (const auto& [name, t] : a.tensors) {
        if (name == "pre.alpha" || name.ends_with("norm.gain")) {
            for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 1.0);
        } else if (name.ends_with(".w")) {
            const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
            for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i]) <= bound);
        } else {
            for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
        }
    }
}

TEST_CASE("preprocess examples") {
    const auto P = init_params(3, 1);
    Mat B(3, 4, 2e-9), Phi(4, 4, 0.0);
    for (int k = 0; k < 3; ++k) Phi(k, k) = 1.0;
    B(0, 3) = B(1, 3) = B(2, 3) = 0.0;
    for (double f : preprocess(B, Phi, P)) CHECK(f == 0.0);

    RadioConfig cfg;
    const auto s = testing::make_sample(5, 7, 4, 18, 3, 4, &cfg);
    const auto f = preprocess(s.B, s.Phi, init_params(5, 2));
    double mean = 0.0, var = 0.0;
    for (int k = 0; k < 4; ++k)
        for (int m = 0; m < 5; ++m) mean += f[k * 5 + m];
    mean /= 20.0;
    for (int k = 0; k < 4; ++k)
        for (int m = 0; m < 5; ++m) var += (f[k * 5 + m] - mean) * (f[k * 5 + m] - mean);
    var /= 20.0;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-10);

    auto Pj = jittered_params(5, 3, 2.0);
    const auto g = preprocess(s.B, s.Phi, Pj);
    for (int k = 4; k < 7; ++k)
        for (int m = 0; m < 5; ++m) CHECK(g[k * 5 + m] == 0.0);

    Mat bad = s.B;
    bad(2, 1) = 0.0;
    CHECK_THROWS_AS(preprocess(bad, s.Phi, Pj), ShapeError);
}

TEST_CASE("forward matches the straight-line oracle") {
    SUBCASE("two APs, two UEs") {
        RadioConfig cfg;
        const auto s = testing::make_sample(2, 2, 2, 1, 4, 4, &cfg);  // shared pilot
        const auto P = jittered_params(2, 9);
        const Mat got = gat_forward(P, s.B, s.Phi);
        const Mat ref = oracle_forward(P, s.B, s.Phi, 4);
        CHECK(testing::max_abs_diff(got, ref) < 1e-12);
    }
    SUBCASE("padded and contaminated") {
        RadioConfig cfg;
        const auto s = testing::make_sample(3, 6, 4, 2, 8, 4, &cfg);
        const auto P = jittered_params(3, 10);
        const Mat got = gat_forward(P, s.B, s.Phi);
        const Mat ref = oracle_forward(P, s.B, s.Phi, 4);
        CHECK(testing::max_abs_diff(got, ref) < 1e-12);
        const Mat abl = gat_forward(P, s.B, s.Phi, GatOptions{true, 4});
        CHECK(testing::max_abs_diff(abl, oracle_forward(P, s.B, s.Phi, 4, true)) < 1e-12);
    }
}

TEST_CASE("single-precision forward stays close to double") {
    RadioConfig cfg;
    const auto s = testing::make_sample(8, 6, 6, 3, 2, 4, &cfg);
    const auto P = init_params(8, 3);
    const Mat a = gat_forward(P, s.B, s.Phi, {}, Precision::F64);
    const Mat b = gat_forward(P, s.B, s.Phi, {}, Precision::F32);
    CHECK(testing::max_abs_diff(a, b) < 1e-4);
    CHECK(is_feasible(b, 4, 0.0).feasible);
}

TEST_CASE("uniform attention under symmetric inputs") {
    const auto topo = build_topology(3, 5);
    ad::Tape<double> tape;
    const auto P = jittered_params(3, 4);
    auto vars = bind_params(tape, P, false);
    auto x = tape.constant(Mat(topo.nodes(), 1, 0.7));
    std::vector<double> attr(topo.nodes() * topo.ap->degree, 0.25);
    auto q = ad::linear(x, vars.at("layer1.ap.L3.w"), vars.at("layer1.ap.L3.b"));
    auto k = ad::linear(x, vars.at("layer1.ap.L4.w"), vars.at("layer1.ap.L4.b"));
    ad::AttentionSpec<double> spec{topo.ap, std::make_shared<const std::vector<double>>(attr), nullptr};
    const Mat pw = P.at("layer1.phi.w");
    const Mat a = ad::attention_weights(q.value(), k.value(), spec, &pw);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("masked attention weights sum to one over active neighbors") {
    const auto topo = build_topology(2, 6);
    std::mt19937_64 rng(3);
    const Mat q = testing::random_matrix(topo.nodes(), 8, rng), k = testing::random_matrix(topo.nodes(), 8, rng);
    auto mask = std::make_shared<std::vector<double>>(topo.nodes(), 1.0);
    for (int m = 0; m < 2; ++m) (*mask)[topo.node(m, 4)] = (*mask)[topo.node(m, 5)] = 0.0;
    ad::AttentionSpec<double> spec{topo.ap, nullptr, mask};
    const Mat a = ad::attention_weights(q, k, spec, static_cast<const Mat*>(nullptr));
    for (std::size_t i = 0; i < topo.nodes(); ++i) {
        double s = 0.0;
        for (std::size_t e = 0; e < topo.ap->degree; ++e) s += a(i, e);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("output head value at zero pre-activation") {
    ad::Tape<double> tape;
    GatParams P = init_params(2, 1);
    P.at("post.L3.w").fill(0.0);
    P.at("post.L3.b").fill(0.0);
    auto vars = bind_params(tape, P, false);
    std::mt19937_64 rng(1);
    auto x4 = tape.constant(testing::random_matrix(5, 64, rng));
    const Mat y = record_output_head(x4, vars).value();
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.0024726231566347743).epsilon(1e-14));
}

TEST_CASE("output head range") {
    ad::Tape<double> tape;
    const auto P = jittered_params(2, 2, 0.5);
    auto vars = bind_params(tape, P, false);
    std::mt19937_64 rng(2);
    auto x4 = tape.constant(testing::random_matrix(50, 64, rng, -3.0, 3.0));
    const Mat y = record_output_head(x4, vars).value();
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] > 0.0);
        CHECK(y[i] < 1.0);
    }
    // pre-activations below about -37 saturate to 1 in double
    ad::Tape<double> t2;
    GatParams Q = init_params(2, 1);
    Q.at("post.L3.w").fill(0.0);
    Q.at("post.L3.b").fill(-60.0);
    auto v2 = bind_params(t2, Q, false);
    const Mat sat = record_output_head(t2.constant(Mat(3, 64, 0.1)), v2).value();
    for (std::size_t i = 0; i < sat.size(); ++i) CHECK(sat[i] <= 1.0);
}

TEST_CASE("forward output is feasible and zero on padded columns") {
    for (int id : {1, 3}) {
        const auto cfg = scenario_preset(id);
        const auto P = init_params(cfg.M, 7);
        const auto topo = build_topology(cfg.M, cfg.K_max);
        for (std::uint64_t i = 0; i < 3; ++i) {
            const auto s = generate_indexed_sample(cfg, 5, i);
            const Mat mu = gat_forward(P, topo, s.B, s.Phi);
            CHECK(is_feasible(mu, cfg.N, 0.0).feasible);
            for (std::size_t j = 0; j < mu.size(); ++j) CHECK(std::isfinite(mu[j]));
            for (int k = s.K_act; k < s.K_max; ++k)
                for (int m = 0; m < s.M; ++m) CHECK(mu(m, k) == 0.0);
        }
    }
}

TEST_CASE("UE permutation equivariance") {
    RadioConfig cfg;
    const auto s = testing::make_sample(4, 7, 7, 3, 11, 4, &cfg);
    const auto P = jittered_params(4, 11);
    const Mat out = gat_forward(P, s.B, s.Phi);
    const std::vector<int> perm = {3, 0, 6, 1, 5, 2, 4};
    const Mat Bp = permute_cols(s.B, perm);
    const Mat Phip = permute_rows(permute_cols(s.Phi, perm), perm);
    const Mat outp = gat_forward(P, Bp, Phip);
    CHECK(testing::max_abs_diff(outp, permute_cols(out, perm)) < 1e-9);
}

TEST_CASE("AP permutation equivariance with permuted per-AP affine") {
    RadioConfig cfg;
    const auto s = testing::make_sample(5, 4, 4, 2, 12, 4, &cfg);
    const auto P = jittered_params(5, 12);
    const std::vector<int> perm = {2, 4, 0, 1, 3};
    GatParams Pp = P;
    Pp.at("pre.alpha") = permute_rows(P.at("pre.alpha"), perm);
    Pp.at("pre.beta") = permute_rows(P.at("pre.beta"), perm);
    const Mat out = gat_forward(P, s.B, s.Phi);
    const Mat outp = gat_forward(Pp, permute_rows(s.B, perm), s.Phi);
    CHECK(testing::max_abs_diff(outp, permute_rows(out, perm)) < 1e-9);
}

TEST_CASE("extra padding leaves active outputs unchanged") {
    RadioConfig cfg;
    const auto s = testing::make_sample(4, 3, 3, 2, 13, 4, &cfg);
    const auto P = jittered_params(4, 13);
    const Mat base = gat_forward(P, s.B, s.Phi);
    const Mat Bp = pad_cols(s.B, 5);
    const Mat Phip = pad_cols(s.Phi, 5, 5);
    const Mat padded = gat_forward(P, Bp, Phip);
    for (int m = 0; m < 4; ++m) {
        for (int k = 0; k < 3; ++k) CHECK(std::abs(padded(m, k) - base(m, k)) < 1e-9);
        for (int k = 3; k < 8; ++k) CHECK(padded(m, k) == 0.0);
    }
}

TEST_CASE("ablation coincides with the pilot-aware model on orthogonal pilots") {
    const auto cfg = scenario_preset(1);
    const auto P = jittered_params(cfg.M, 14);
    const auto topo = build_topology(cfg.M, cfg.K_max);
    for (std::uint64_t i = 0; i < 4; ++i) {
        const auto s = generate_indexed_sample(cfg, 14, i);
        for (auto prec : {Precision::F64, Precision::F32}) {
            const Mat a = gat_forward(P, topo, s.B, s.Phi, GatOptions{false, 4}, prec);
            const Mat b = gat_forward(P, topo, s.B, s.Phi, GatOptions{true, 4}, prec);
            CHECK(a == b);
        }
    }
}

TEST_CASE("ablated model ignores off-diagonal pilot structure") {
    RadioConfig cfg;
    const auto s = testing::make_sample(4, 6, 6, 2, 15, 4, &cfg);
    const auto P = jittered_params(4, 15);
    Mat Phi2(6, 6, 0.0);
    for (int k = 0; k < 6; ++k) Phi2(k, k) = 1.0;
    const Mat a = gat_forward(P, s.B, s.Phi, GatOptions{true, 4});
    const Mat b = gat_forward(P, s.B, Phi2, GatOptions{true, 4});
    CHECK(a == b);
    const Mat c = gat_forward(P, s.B, s.Phi, GatOptions{false, 4});
    CHECK(testing::max_abs_diff(a, c) > 0.0);
}

TEST_CASE("batched forward equals per-sample forward") {
    const auto cfg = scenario_preset(3);
    const auto P = init_params(cfg.M, 16);
    const auto topo = build_topology(cfg.M, cfg.K_max);
    std::vector<ScenarioSample> ss;
    for (std::uint64_t i = 0; i < 3; ++i) ss.push_back(generate_indexed_sample(cfg, 16, i));
    std::vector<GatSampleRef> refs;
    for (const auto& s : ss) refs.push_back({&s.B, &s.Phi});
    const auto batch = gat_forward_batch(P, topo, refs);
    for (std::size_t i = 0; i < ss.size(); ++i) CHECK(batch[i] == gat_forward(P, topo, ss[i].B, ss[i].Phi));
}

TEST_CASE("forward shape errors") {
    const auto P = init_params(4, 1);
    Mat B(5, 3, 1e-9), Phi(3, 3, 0.0);
    for (int k = 0; k < 3; ++k) Phi(k, k) = 1.0;
    CHECK_THROWS_AS(gat_forward(P, B, Phi), ShapeError);
    Mat B4(4, 3, 1e-9), Phi2(2, 2, 1.0);
    CHECK_THROWS_AS(gat_forward(P, B4, Phi2), ShapeError);
}

TEST_CASE("single-UE graphs use the empty-neighborhood convention") {
    RadioConfig cfg;
    const auto s = testing::make_sample(3, 1, 1, 1, 17, 4, &cfg);
    const auto P = jittered_params(3, 17);
    CHECK(testing::max_abs_diff(gat_forward(P, s.B, s.Phi), oracle_forward(P, s.B, s.Phi, 4)) < 1e-12);
}
