#pragma once
// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records nodes eagerly in creation order, which is a topological
// order. backward() seeds the scalar root with 1 and walks the tape once in
// reverse, invoking each reachable node's adjoint rule exactly once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cfgat/matrix.hpp"

namespace cfgat::ad {

enum class Op {
    Input,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    MatMul,
    Transpose,
    Exp,
    Log,
    Square,
    Sqrt,
    Relu,
    Softplus,
    Sum,
    SumRows,
    SumCols,
    LogSumExp,
    RowNormalize,
    GatherRows,
    ScatterAddRows,
    Reshape,
    AddRowBroadcast,
    MulRowBroadcast,
    MulColBroadcast,
    Linear,
    SliceRows,
    SliceCols,
    Diag,
    NeighborSum,
    NeighborAttention,
    ProjectFeasible,
};

const char* op_name(Op op);

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Matrix<T>& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Fixed-degree neighbor lists: row i holds `degree` node ids.
struct NeighborTable {
    std::size_t nodes = 0;
    std::size_t degree = 0;
    std::vector<std::uint32_t> index;  // nodes * degree

    const std::uint32_t* row(std::size_t i) const { return index.data() + i * degree; }
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    struct Node {
        Op op;
        std::vector<std::size_t> args;
        Matrix<T> value;
        Matrix<T> grad;  // allocated lazily during backward
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
        std::string name;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable leaf.
    Var<T> input(std::string name, Matrix<T> value);
    /// Non-differentiable leaf.
    Var<T> constant(Matrix<T> value);
    Var<T> scalar_constant(T v) { return constant(Matrix<T>(1, 1, v)); }

    /// Records an op node; `fn` is only kept when some argument needs a gradient.
    Var<T> push(Op op, std::vector<std::size_t> args, Matrix<T> value, Backward fn);

    const Node& node(std::size_t id) const { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Adjoint accumulator of `id`, zero-initialised on first touch.
    Matrix<T>& accum(std::size_t id);
    const Matrix<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }

    /// Requires a 1x1 root; throws ShapeError otherwise.
    void backward(Var<T> root);

    /// Adjoint of an input after backward(); zeros when unreachable.
    Matrix<T> gradient(Var<T> v) const;

    /// Number of adjoint rules invoked by the last backward().
    std::size_t backward_visits() const { return visits_; }

    const std::map<std::string, std::size_t>& inputs() const { return inputs_; }

private:
    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> inputs_;
    std::size_t visits_ = 0;
};

template <class T>
const Matrix<T>& Var<T>::value() const {
    return tape->node(id).value;
}

// ---- primitives -----------------------------------------------------------

template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> div(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T s);
template <class T> Var<T> add_scalar(Var<T> a, T s);
template <class T> Var<T> matmul(Var<T> a, Var<T> b);
template <class T> Var<T> transpose(Var<T> a);
template <class T> Var<T> exp(Var<T> a);
template <class T> Var<T> log(Var<T> a);
template <class T> Var<T> square(Var<T> a);
template <class T> Var<T> sqrt(Var<T> a);
/// Subgradient 0 at exactly 0.
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> softplus(Var<T> a);
/// Sum of all entries -> 1x1.
template <class T> Var<T> sum(Var<T> a);
/// Row sums -> rows x 1.
template <class T> Var<T> sum_rows(Var<T> a);
/// Column sums -> 1 x cols.
template <class T> Var<T> sum_cols(Var<T> a);
/// log(sum(exp(a))) over all entries, shifted by the max -> 1x1.
template <class T> Var<T> logsumexp(Var<T> a);
/// Per row: (x - mean) / sqrt(var + eps), population variance.
template <class T> Var<T> row_normalize(Var<T> a, T eps);
template <class T> Var<T> gather_rows(Var<T> a, std::shared_ptr<const std::vector<std::uint32_t>> idx);
template <class T> Var<T> scatter_add_rows(Var<T> a, std::shared_ptr<const std::vector<std::uint32_t>> idx, std::size_t rows);
template <class T> Var<T> reshape(Var<T> a, std::size_t rows, std::size_t cols);
/// a (n x c) + row (1 x c) on every row.
template <class T> Var<T> add_row_broadcast(Var<T> a, Var<T> row);
/// a (n x c) * row (1 x c) on every row.
template <class T> Var<T> mul_row_broadcast(Var<T> a, Var<T> row);
/// a (n x c) * col (n x 1) on every column.
template <class T> Var<T> mul_col_broadcast(Var<T> a, Var<T> col);
/// x W + 1 b^T with W (in x out), b (1 x out).
template <class T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <class T> Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count);
template <class T> Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t count);
/// Diagonal of a square matrix -> n x 1.
template <class T> Var<T> diag(Var<T> a);

/// out_i = sum_{j in N(i)} mask_j x_j. mask may be null (all ones).
template <class T>
Var<T> neighbor_sum(Var<T> x, std::shared_ptr<const NeighborTable> table,
                    std::shared_ptr<const std::vector<T>> mask);

/// Exponential-kernel attention over fixed neighbor lists.
///
/// With an optional edge scalar phi_e and pilot weight w (1 x D), keys and
/// values of edge e = (i, j) are k_j + phi_e w and v_j + phi_e w. Weights
///   a_e = mask_j exp(q_i . key_e / sqrt(D)) / sum_{e'} mask_j' exp(...)
/// and out_i = sum_e a_e value_e. A node whose neighborhood is empty or
/// fully masked gets 0. Scores are max-shifted over unmasked neighbors.
template <class T>
struct AttentionSpec {
    std::shared_ptr<const NeighborTable> table;
    std::shared_ptr<const std::vector<T>> edge_attr;  // nodes * degree, or null
    std::shared_ptr<const std::vector<T>> node_mask;  // nodes, or null
};

template <class T>
Var<T> neighbor_attention(Var<T> q, Var<T> k, Var<T> v, const AttentionSpec<T>& spec, const Var<T>* pilot_w);

/// Attention weights only (nodes x degree) for inspection; not differentiable.
template <class T>
Matrix<T> attention_weights(const Matrix<T>& q, const Matrix<T>& k, const AttentionSpec<T>& spec,
                            const Matrix<T>* pilot_w);

/// Row-wise Euclidean projection onto {x >= 0, ||row||^2 <= 1/N}.
template <class T> Var<T> project_feasible(Var<T> a, int N);

template <class T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <class T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }

// ---- whole-graph helpers (64-bit) ------------------------------------------

using Bindings = std::map<std::string, Mat>;
using Inputs = std::map<std::string, Var<double>>;
/// Builds a graph over the bound inputs and returns its root.
using Builder = std::function<Var<double>(Tape<double>&, const Inputs&)>;

Mat evaluate(const Builder& build, const Bindings& bindings);

/// Adjoints of the scalar root w.r.t. the named inputs.
std::map<std::string, Mat> gradient(const Builder& build, const Bindings& bindings,
                                    const std::vector<std::string>& wrt);

struct FdReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst_input;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central differences on a random subsample of at least `min_coords`
/// coordinates (all of them if fewer exist). Perturbation is
/// step * max(|x|, 1). Relative error uses |a| + |n| + 1e-12.
FdReport finite_difference_check(const Builder& build, const Bindings& bindings, double step,
                                 std::uint64_t seed = 1, std::size_t min_coords = 50);

}  // namespace cfgat::ad
