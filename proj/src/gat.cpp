#include "cfgat/gat.hpp"

#include <cmath>
#include <random>

#include "cfgat/errors.hpp"
#include "cfgat/feasible.hpp"

namespace cfgat {

GraphTopology build_topology(int M, int K_max) {
    if (M < 1 || K_max < 1) throw ConfigError("build_topology: M and K_max must be >= 1");
    GraphTopology topo;
    topo.M = M;
    topo.K_max = K_max;
    const std::size_t n = topo.nodes();
    auto ap = std::make_shared<ad::NeighborTable>();
    ap->nodes = n;
    ap->degree = static_cast<std::size_t>(K_max - 1);
    ap->index.reserve(n * ap->degree);
    auto ue = std::make_shared<ad::NeighborTable>();
    ue->nodes = n;
    ue->degree = static_cast<std::size_t>(M - 1);
    ue->index.reserve(n * ue->degree);
    for (int k = 0; k < K_max; ++k) {
        for (int m = 0; m < M; ++m) {
            for (int j = 0; j < K_max; ++j)
                if (j != k) ap->index.push_back(topo.node(m, j));
            for (int a = 0; a < M; ++a)
                if (a != m) ue->index.push_back(topo.node(a, k));
        }
    }
    topo.ap = std::move(ap);
    topo.ue = std::move(ue);
    return topo;
}

const Mat& GatParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeError("missing parameter tensor '" + name + "'");
    return it->second;
}

Mat& GatParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeError("missing parameter tensor '" + name + "'");
    return it->second;
}

std::size_t GatParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

namespace {

std::string layer_prefix(int t, const char* side) { return "layer" + std::to_string(t) + "." + side + "."; }

void add_linear(std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>& out, const std::string& name,
                int in, int outw) {
    out.push_back({name + ".w", {std::size_t(in), std::size_t(outw)}});
    out.push_back({name + ".b", {1, std::size_t(outw)}});
}

}  // namespace

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> param_layout(int M) {
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
    out.push_back({"pre.alpha", {std::size_t(M), 1}});
    out.push_back({"pre.beta", {std::size_t(M), 1}});
    for (int t = 1; t <= kNumLayers; ++t) {
        const int in = kLayerWidths[t - 1], w = kLayerWidths[t];
        for (const char* side : {"ap", "ue"}) {
            const std::string p = layer_prefix(t, side);
            for (int q = 1; q <= 4; ++q) add_linear(out, p + "L" + std::to_string(q), in, w);
            add_linear(out, p + "L5", w, w);
        }
        out.push_back({"layer" + std::to_string(t) + ".phi.w", {1, std::size_t(w)}});
        out.push_back({"layer" + std::to_string(t) + ".norm.gain", {1, std::size_t(w)}});
        out.push_back({"layer" + std::to_string(t) + ".norm.bias", {1, std::size_t(w)}});
    }
    const int last = kLayerWidths[kNumLayers];
    add_linear(out, "post.L1", last, last);
    add_linear(out, "post.L2", last, last);
    add_linear(out, "post.L3", last, 1);
    return out;
}

GatParams init_params(int M, std::uint64_t seed) {
    if (M < 1) throw ConfigError("init_params: M must be >= 1");
    GatParams p;
    p.M = M;
    Rng rng = sample_stream(seed, 0x9a7ULL);
    for (const auto& [name, shape] : param_layout(M)) {
        Mat t(shape.first, shape.second);
        const bool weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
        if (name == "pre.alpha" || name.ends_with(".norm.gain")) {
            t.fill(1.0);
        } else if (weight) {
            const double bound = std::sqrt(6.0 / static_cast<double>(shape.first + shape.second));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
        }
        p.tensors.emplace(name, std::move(t));
    }
    return p;
}

NodeInput standardize_input(const Mat& B, const Mat& Phi) {
    const std::size_t M = B.rows(), K = B.cols();
    if (Phi.rows() != K || Phi.cols() != K)
        throw ShapeError("preprocess: Phi " + shape_str(Phi) + " does not match B " + shape_str(B));
    NodeInput in;
    in.feature.assign(M * K, 0.0);
    in.node_mask.assign(M * K, 0.0);
    in.ue_mask.assign(K, 0.0);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < K; ++k) {
        in.ue_mask[k] = Phi(k, k) != 0.0 ? 1.0 : 0.0;
        if (in.ue_mask[k] == 0.0) continue;
        for (std::size_t m = 0; m < M; ++m) {
            const double b = B(m, k);
            if (!(b > 0.0) || !std::isfinite(b))
                throw ShapeError("preprocess: active large-scale coefficient at (" + std::to_string(m) + ", " +
                                 std::to_string(k) + ") is not strictly positive");
            const std::size_t v = k * M + m;
            in.feature[v] = std::log(b);
            in.node_mask[v] = 1.0;
            sum += in.feature[v];
            ++count;
        }
    }
    if (count == 0) return in;
    const double mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (std::size_t v = 0; v < in.feature.size(); ++v)
        if (in.node_mask[v] != 0.0) var += (in.feature[v] - mean) * (in.feature[v] - mean);
    var /= static_cast<double>(count);
    const double inv_std = var < kMinFeatureVariance ? 0.0 : 1.0 / std::sqrt(var);
    for (std::size_t v = 0; v < in.feature.size(); ++v)
        in.feature[v] = in.node_mask[v] != 0.0 ? (in.feature[v] - mean) * inv_std : 0.0;
    return in;
}

std::vector<double> preprocess(const Mat& B, const Mat& Phi, const GatParams& params) {
    if (B.rows() != static_cast<std::size_t>(params.M))
        throw ShapeError("preprocess: B has " + std::to_string(B.rows()) + " APs, parameters expect " +
                         std::to_string(params.M));
    NodeInput in = standardize_input(B, Phi);
    const Mat& alpha = params.at("pre.alpha");
    const Mat& beta = params.at("pre.beta");
    const std::size_t M = B.rows();
    std::vector<double> out(in.feature.size(), 0.0);
    for (std::size_t v = 0; v < out.size(); ++v)
        if (in.node_mask[v] != 0.0) out[v] = alpha[v % M] * in.feature[v] + beta[v % M];
    return out;
}

std::vector<double> ap_edge_attributes(const GraphTopology& topo, const Mat& Phi) {
    const auto& tab = *topo.ap;
    std::vector<double> attr(tab.nodes * tab.degree);
    for (std::size_t i = 0; i < tab.nodes; ++i) {
        const auto* nb = tab.row(i);
        const int ki = topo.ue_of(i);
        for (std::size_t e = 0; e < tab.degree; ++e) attr[i * tab.degree + e] = Phi(ki, topo.ue_of(nb[e]));
    }
    return attr;
}

template <class T>
ParamVars<T> bind_params(ad::Tape<T>& tape, const GatParams& params, bool differentiable) {
    ParamVars<T> vars;
    for (const auto& [name, t] : params.tensors)
        vars.emplace(name, differentiable ? tape.input(name, t.template cast<T>()) : tape.constant(t.template cast<T>()));
    return vars;
}

namespace {

template <class T>
ad::Var<T> param(const ParamVars<T>& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw ShapeError("missing parameter tensor '" + name + "'");
    return it->second;
}

template <class T>
ad::Var<T> lin(ad::Var<T> x, const ParamVars<T>& p, const std::string& name) {
    return ad::linear(x, param(p, name + ".w"), param(p, name + ".b"));
}

// Neighbor table of `batch` stacked copies of one sample's graph.
std::shared_ptr<const ad::NeighborTable> replicate(const std::shared_ptr<const ad::NeighborTable>& tab,
                                                   std::size_t batch) {
    if (batch == 1) return tab;
    auto out = std::make_shared<ad::NeighborTable>();
    out->nodes = tab->nodes * batch;
    out->degree = tab->degree;
    out->index.resize(out->nodes * out->degree);
    const std::size_t per = tab->index.size();
    for (std::size_t s = 0; s < batch; ++s) {
        const auto offset = static_cast<std::uint32_t>(s * tab->nodes);
        for (std::size_t e = 0; e < per; ++e) out->index[s * per + e] = tab->index[e] + offset;
    }
    return out;
}

template <class T>
ad::Var<T> attention_side(ad::Var<T> x, const ParamVars<T>& p, const std::string& prefix,
                          const ad::AttentionSpec<T>& spec, const ad::Var<T>* pilot_w) {
    auto self = lin(x, p, prefix + "L1");
    auto value = lin(x, p, prefix + "L2");
    auto query = lin(x, p, prefix + "L3");
    auto key = lin(x, p, prefix + "L4");
    auto attended = ad::neighbor_attention(query, key, value, spec, pilot_w);
    return ad::add(self, lin(attended, p, prefix + "L5"));
}

}  // namespace

template <class T>
ad::Var<T> record_attention_layer([[maybe_unused]] ad::Tape<T>& tape, ad::Var<T> x, const ParamVars<T>& params, int t,
                                  const GraphTopology& topo, std::size_t batch, const std::vector<T>& edge_attr,
                                  const std::vector<T>& node_mask) {
    if (t < 1 || t > kNumLayers) throw ConfigError("attention layer index out of range: " + std::to_string(t));
    if (x.cols() != static_cast<std::size_t>(kLayerWidths[t - 1]))
        throw ShapeError("attention layer " + std::to_string(t) + ": input width " + std::to_string(x.cols()) +
                         ", expected " + std::to_string(kLayerWidths[t - 1]));
    const std::string lp = "layer" + std::to_string(t) + ".";
    ad::AttentionSpec<T> ap_spec{replicate(topo.ap, batch), std::make_shared<const std::vector<T>>(edge_attr),
                                 std::make_shared<const std::vector<T>>(node_mask)};
    ad::AttentionSpec<T> ue_spec{replicate(topo.ue, batch), nullptr, nullptr};
    auto w = param(params, lp + "phi.w");
    auto y = ad::add(attention_side(x, params, lp + "ap.", ap_spec, &w),
                     attention_side(x, params, lp + "ue.", ue_spec, static_cast<const ad::Var<T>*>(nullptr)));
    auto h = ad::row_normalize(ad::relu(y), static_cast<T>(kNormEps));
    return ad::add_row_broadcast(ad::mul_row_broadcast(h, param(params, lp + "norm.gain")),
                                 param(params, lp + "norm.bias"));
}

template <class T>
ad::Var<T> record_output_head(ad::Var<T> x4, const ParamVars<T>& params) {
    auto y1 = lin(ad::relu(lin(x4, params, "post.L1")), params, "post.L2");
    auto z = lin(y1, params, "post.L3");
    return ad::exp(ad::scale(ad::softplus(ad::add_scalar(z, static_cast<T>(kOutputShift))), T(-1)));
}

template <class T>
std::vector<ad::Var<T>> record_forward(ad::Tape<T>& tape, const ParamVars<T>& params, const GraphTopology& topo,
                                       const std::vector<GatSampleRef>& batch, const GatOptions& opts) {
    if (batch.empty()) throw ShapeError("forward: empty batch");
    const std::size_t n = topo.nodes();
    const std::size_t S = batch.size();
    const auto M = static_cast<std::size_t>(topo.M);
    const auto K = static_cast<std::size_t>(topo.K_max);
    const std::size_t deg = topo.ap->degree;

    Matrix<T> feature(n * S, 1);
    auto node_ap = std::make_shared<std::vector<std::uint32_t>>(n * S);
    std::vector<T> node_mask(n * S);
    std::vector<T> edge_attr(n * S * deg, T(0));
    std::vector<Matrix<T>> ue_masks;
    ue_masks.reserve(S);
    for (std::size_t s = 0; s < S; ++s) {
        const Mat& B = *batch[s].B;
        const Mat& Phi = *batch[s].Phi;
        if (B.rows() != M || B.cols() != K)
            throw ShapeError("forward: B " + shape_str(B) + " does not match topology " + shape_str(M, K));
        NodeInput in = standardize_input(B, Phi);
        for (std::size_t v = 0; v < n; ++v) {
            feature[s * n + v] = static_cast<T>(in.feature[v]);
            node_mask[s * n + v] = static_cast<T>(in.node_mask[v]);
            (*node_ap)[s * n + v] = static_cast<std::uint32_t>(v % M);
        }
        if (!opts.ablation) {
            auto attr = ap_edge_attributes(topo, Phi);
            for (std::size_t e = 0; e < attr.size(); ++e) edge_attr[s * n * deg + e] = static_cast<T>(attr[e]);
        }
        Matrix<T> um(1, K);
        for (std::size_t k = 0; k < K; ++k) um[k] = static_cast<T>(in.ue_mask[k]);
        ue_masks.push_back(std::move(um));
    }

    // per-AP affine, then padded nodes forced back to 0
    auto z = tape.constant(std::move(feature));
    auto alpha = ad::gather_rows(param(params, "pre.alpha"), node_ap);
    auto beta = ad::gather_rows(param(params, "pre.beta"), node_ap);
    auto mask_col = tape.constant(Matrix<T>(n * S, 1, node_mask));
    auto x = ad::mul(ad::add(ad::mul(z, alpha), beta), mask_col);

    for (int t = 1; t <= kNumLayers; ++t) x = record_attention_layer(tape, x, params, t, topo, S, edge_attr, node_mask);

    auto y2 = record_output_head(x, params);
    std::vector<ad::Var<T>> out;
    out.reserve(S);
    for (std::size_t s = 0; s < S; ++s) {
        auto mu_t = ad::reshape(ad::slice_rows(y2, s * n, n), K, M);  // row k holds UE k over all APs
        auto mu = ad::mul_row_broadcast(ad::transpose(mu_t), tape.constant(ue_masks[s]));
        out.push_back(ad::project_feasible(mu, opts.N));
    }
    return out;
}

namespace {

template <class T>
std::vector<Mat> forward_impl(const GatParams& params, const GraphTopology& topo, const std::vector<GatSampleRef>& batch,
                              const GatOptions& opts) {
    ad::Tape<T> tape;
    auto vars = bind_params(tape, params, false);
    auto outs = record_forward(tape, vars, topo, batch, opts);
    std::vector<Mat> res;
    res.reserve(outs.size());
    for (auto& o : outs) res.push_back(project(o.value().template cast<double>(), opts.N));
    return res;
}

}  // namespace

std::vector<Mat> gat_forward_batch(const GatParams& params, const GraphTopology& topo,
                                   const std::vector<GatSampleRef>& batch, const GatOptions& opts,
                                   Precision precision) {
    if (params.M != topo.M)
        throw ShapeError("forward: parameters built for M=" + std::to_string(params.M) + ", input has M=" +
                         std::to_string(topo.M));
    return precision == Precision::F32 ? forward_impl<float>(params, topo, batch, opts)
                                       : forward_impl<double>(params, topo, batch, opts);
}

Mat gat_forward(const GatParams& params, const GraphTopology& topo, const Mat& B, const Mat& Phi,
                const GatOptions& opts, Precision precision) {
    return gat_forward_batch(params, topo, {GatSampleRef{&B, &Phi}}, opts, precision).front();
}

Mat gat_forward(const GatParams& params, const Mat& B, const Mat& Phi, const GatOptions& opts, Precision precision) {
    if (B.rows() != static_cast<std::size_t>(params.M))
        throw ShapeError("forward: parameters built for M=" + std::to_string(params.M) + ", input has M=" +
                         std::to_string(B.rows()));
    return gat_forward(params, build_topology(static_cast<int>(B.rows()), static_cast<int>(B.cols())), B, Phi, opts,
                       precision);
}

#define CFGAT_GAT_INSTANTIATE(T)                                                                                      \
    template ParamVars<T> bind_params(ad::Tape<T>&, const GatParams&, bool);                                          \
    template std::vector<ad::Var<T>> record_forward(ad::Tape<T>&, const ParamVars<T>&, const GraphTopology&,          \
                                                    const std::vector<GatSampleRef>&, const GatOptions&);             \
    template ad::Var<T> record_attention_layer(ad::Tape<T>&, ad::Var<T>, const ParamVars<T>&, int,                    \
                                               const GraphTopology&, std::size_t, const std::vector<T>&,              \
                                               const std::vector<T>&);                                                \
    template ad::Var<T> record_output_head(ad::Var<T>, const ParamVars<T>&);

CFGAT_GAT_INSTANTIATE(float)
CFGAT_GAT_INSTANTIATE(double)

}  // namespace cfgat
