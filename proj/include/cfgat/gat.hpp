#pragma once
// Graph attention network over (AP, UE) pair nodes.
//
// Node v = k * M + m (0-based) for AP m and UE k. AP-type neighbors of v
// share its AP, UE-type neighbors share its UE. AP-type edges carry the pilot
// attribute Phi[k_i, k_j].

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cfgat/autodiff.hpp"
#include "cfgat/matrix.hpp"
#include "cfgat/scenario.hpp"

namespace cfgat {

inline constexpr std::array<int, 5> kLayerWidths = {1, 32, 64, 64, 64};
inline constexpr int kNumLayers = 4;
inline constexpr double kNormEps = 1e-5;
inline constexpr double kOutputShift = 6.0;
inline constexpr double kMinFeatureVariance = 1e-12;

struct GraphTopology {
    int M = 0;
    int K_max = 0;
    std::shared_ptr<const ad::NeighborTable> ap;  // degree K_max - 1
    std::shared_ptr<const ad::NeighborTable> ue;  // degree M - 1

    std::size_t nodes() const { return static_cast<std::size_t>(M) * static_cast<std::size_t>(K_max); }
    std::uint32_t node(int m, int k) const { return static_cast<std::uint32_t>(k * M + m); }
    int ap_of(std::size_t v) const { return static_cast<int>(v % static_cast<std::size_t>(M)); }
    int ue_of(std::size_t v) const { return static_cast<int>(v / static_cast<std::size_t>(M)); }
};

GraphTopology build_topology(int M, int K_max);

/// Named parameter tensors. Linear weights are (in x out), biases (1 x out).
struct GatParams {
    int M = 0;
    std::map<std::string, Mat> tensors;

    const Mat& at(const std::string& name) const;
    Mat& at(const std::string& name);
    std::size_t scalar_count() const;
};

/// Tensor names, in a fixed order. Shapes depend only on M.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> param_layout(int M);

GatParams init_params(int M, std::uint64_t seed);

struct GatOptions {
    bool ablation = false;  // zero every pilot-transform output
    int N = 4;
};

/// log(B) standardized over the active entries, zero on padded entries,
/// vectorized by node index. Throws ShapeError on a non-positive active entry.
struct NodeInput {
    std::vector<double> feature;  // nodes
    std::vector<double> node_mask;
    std::vector<double> ue_mask;  // K_max
};

NodeInput standardize_input(const Mat& B, const Mat& Phi);

/// Standardized features with the per-AP affine applied (padded entries 0).
std::vector<double> preprocess(const Mat& B, const Mat& Phi, const GatParams& params);

/// Parameter leaves of one tape.
template <class T>
using ParamVars = std::map<std::string, ad::Var<T>>;

template <class T>
ParamVars<T> bind_params(ad::Tape<T>& tape, const GatParams& params, bool differentiable);

struct GatSampleRef {
    const Mat* B = nullptr;    // M x K_max fed to the network
    const Mat* Phi = nullptr;  // K_max x K_max
};

/// Records a batched forward on the tape. Returns one projected M x K_max
/// power matrix per sample.
template <class T>
std::vector<ad::Var<T>> record_forward(ad::Tape<T>& tape, const ParamVars<T>& params, const GraphTopology& topo,
                                       const std::vector<GatSampleRef>& batch, const GatOptions& opts);

/// Single attention layer on the tape (t = 1..4).
template <class T>
ad::Var<T> record_attention_layer(ad::Tape<T>& tape, ad::Var<T> x, const ParamVars<T>& params, int t,
                                  const GraphTopology& topo, std::size_t batch, const std::vector<T>& edge_attr,
                                  const std::vector<T>& node_mask);

/// Postprocess head: sigmoid-like output in (0, 1) per node, nodes x 1.
template <class T>
ad::Var<T> record_output_head(ad::Var<T> x4, const ParamVars<T>& params);

enum class Precision { F32, F64 };

/// Inference. The result is re-projected in double so it lies in the
/// feasible set at tol 0 in 64-bit.
Mat gat_forward(const GatParams& params, const GraphTopology& topo, const Mat& B, const Mat& Phi,
                const GatOptions& opts = {}, Precision precision = Precision::F64);
Mat gat_forward(const GatParams& params, const Mat& B, const Mat& Phi, const GatOptions& opts = {},
                Precision precision = Precision::F64);

std::vector<Mat> gat_forward_batch(const GatParams& params, const GraphTopology& topo,
                                   const std::vector<GatSampleRef>& batch, const GatOptions& opts = {},
                                   Precision precision = Precision::F64);

/// Pilot attribute per AP-type edge of a single sample (nodes x degree).
std::vector<double> ap_edge_attributes(const GraphTopology& topo, const Mat& Phi);

}  // namespace cfgat
