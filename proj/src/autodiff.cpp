#include "cfgat/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cfgat/errors.hpp"
#include "cfgat/feasible.hpp"
#include "cfgat/simd/kernels.hpp"

namespace cfgat::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Constant: return "constant";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Scale: return "scale";
        case Op::AddScalar: return "add_scalar";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Sqrt: return "sqrt";
        case Op::Relu: return "relu";
        case Op::Softplus: return "softplus";
        case Op::Sum: return "sum";
        case Op::SumRows: return "sum_rows";
        case Op::SumCols: return "sum_cols";
        case Op::LogSumExp: return "logsumexp";
        case Op::RowNormalize: return "row_normalize";
        case Op::GatherRows: return "gather_rows";
        case Op::ScatterAddRows: return "scatter_add_rows";
        case Op::Reshape: return "reshape";
        case Op::AddRowBroadcast: return "add_row_broadcast";
        case Op::MulRowBroadcast: return "mul_row_broadcast";
        case Op::MulColBroadcast: return "mul_col_broadcast";
        case Op::Linear: return "linear";
        case Op::SliceRows: return "slice_rows";
        case Op::SliceCols: return "slice_cols";
        case Op::Diag: return "diag";
        case Op::NeighborSum: return "neighbor_sum";
        case Op::NeighborAttention: return "neighbor_attention";
        case Op::ProjectFeasible: return "project_feasible";
    }
    return "?";
}

// ---- Tape -------------------------------------------------------------------

template <class T>
Var<T> Tape<T>::input(std::string name, Matrix<T> value) {
    Node n{Op::Input, {}, std::move(value), {}, true, false, {}, name};
    nodes_.push_back(std::move(n));
    inputs_[name] = nodes_.size() - 1;
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::constant(Matrix<T> value) {
    nodes_.push_back(Node{Op::Constant, {}, std::move(value), {}, false, false, {}, {}});
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::push(Op op, std::vector<std::size_t> args, Matrix<T> value, Backward fn) {
    bool rg = false;
    for (auto a : args) rg = rg || nodes_[a].requires_grad;
    Node n{op, std::move(args), std::move(value), {}, rg, false, rg ? std::move(fn) : Backward{}, {}};
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
Matrix<T>& Tape<T>::accum(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Matrix<T>(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> root) {
    const Node& r = nodes_.at(root.id);
    if (r.value.rows() != 1 || r.value.cols() != 1) {
        throw ShapeError(std::string("backward: root must be scalar, got ") + op_name(r.op) + " " +
                         shape_str(r.value));
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Matrix<T>();
    }
    visits_ = 0;
    if (!r.requires_grad) return;
    accum(root.id)(0, 0) = T(1);
    for (std::size_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.has_grad || !n.requires_grad || !n.backward) continue;
        n.backward(*this, id);
        ++visits_;
    }
}

template <class T>
Matrix<T> Tape<T>::gradient(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Matrix<T>(n.value.rows(), n.value.cols());
}

template class Tape<float>;
template class Tape<double>;

// ---- helpers ----------------------------------------------------------------

namespace {

template <class T>
[[noreturn]] void shape_fail(Op op, const Matrix<T>& a, const Matrix<T>& b) {
    throw ShapeError(std::string("ad::") + op_name(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

template <class T>
void require_same(Op op, Var<T> a, Var<T> b) {
    if (!a.value().same_shape(b.value())) shape_fail(op, a.value(), b.value());
}

// y = f(x) elementwise with dy/dx = df(x, y)
template <class T, class F, class DF>
Var<T> elementwise(Op op, Var<T> a, F f, DF df) {
    Tape<T>& t = *a.tape;
    const Matrix<T>& x = a.value();
    Matrix<T> y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const std::size_t ia = a.id;
    return t.push(op, {ia}, std::move(y), [ia, df](Tape<T>& tp, std::size_t self) {
        const auto& n = tp.node(self);
        const Matrix<T>& xv = tp.node(ia).value;
        Matrix<T>& g = tp.accum(ia);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(xv[i], n.value[i]);
    });
}

template <class T>
void transpose_into(const Matrix<T>& a, Matrix<T>& out) {
    out = Matrix<T>(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
}

}  // namespace

// ---- elementwise binary -------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same(Op::Add, a, b);
    Matrix<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(Op::Add, {ia, ib}, std::move(y), [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        for (auto id : {ia, ib}) {
            if (!t.requires_grad(id)) continue;
            auto& d = t.accum(id);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same(Op::Sub, a, b);
    Matrix<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(Op::Sub, {ia, ib}, std::move(y), [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        if (t.requires_grad(ia)) {
            auto& d = t.accum(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            auto& d = t.accum(ib);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same(Op::Mul, a, b);
    Matrix<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(Op::Mul, {ia, ib}, std::move(y), [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        if (t.requires_grad(ia)) {
            const auto& bv = t.node(ib).value;
            auto& d = t.accum(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            const auto& av = t.node(ia).value;
            auto& d = t.accum(ib);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
        }
    });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
    require_same(Op::Div, a, b);
    Matrix<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(Op::Div, {ia, ib}, std::move(y), [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& n = t.node(self);
        const auto& bv = t.node(ib).value;
        if (t.requires_grad(ia)) {
            auto& d = t.accum(ia);
            for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += n.grad[i] / bv[i];
        }
        if (t.requires_grad(ib)) {
            auto& d = t.accum(ib);
            for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] -= n.grad[i] * n.value[i] / bv[i];
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
    return elementwise(Op::Scale, a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
    return elementwise(Op::AddScalar, a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

// ---- linear algebra -------------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.rows()) shape_fail(Op::MatMul, av, bv);
    const auto& k = simd::kernels<T>();
    Matrix<T> y(av.rows(), bv.cols());
    if (!y.empty() && av.cols() > 0)
        k.gemm_nn(av.rows(), av.cols(), bv.cols(), av.data(), av.cols(), bv.data(), bv.cols(), y.data(), y.cols(), false);
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->push(Op::MatMul, {ia, ib}, std::move(y), [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& A = t.node(ia).value;
        const auto& B = t.node(ib).value;
        const auto& k = simd::kernels<T>();
        if (g.empty() || A.cols() == 0) return;
        if (t.requires_grad(ia)) {
            Matrix<T> bt;
            transpose_into(B, bt);
            auto& d = t.accum(ia);
            k.gemm_nn(g.rows(), g.cols(), bt.cols(), g.data(), g.cols(), bt.data(), bt.cols(), d.data(), d.cols(), true);
        }
        if (t.requires_grad(ib)) {
            auto& d = t.accum(ib);
            k.gemm_tn(A.rows(), A.cols(), g.cols(), A.data(), A.cols(), g.data(), g.cols(), d.data(), d.cols());
        }
    });
}

template <class T>
Var<T> transpose(Var<T> a) {
    Matrix<T> y;
    transpose_into(a.value(), y);
    const std::size_t ia = a.id;
    return a.tape->push(Op::Transpose, {ia}, std::move(y), [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) d(c, r) += g(r, c);
    });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    const auto& X = x.value();
    const auto& W = w.value();
    const auto& Bv = b.value();
    if (X.cols() != W.rows()) shape_fail(Op::Linear, X, W);
    if (Bv.rows() != 1 || Bv.cols() != W.cols()) shape_fail(Op::Linear, W, Bv);
    const auto& k = simd::kernels<T>();
    const std::size_t n = X.rows(), in = W.rows(), out = W.cols();
    Matrix<T> y(n, out);
    for (std::size_t r = 0; r < n; ++r) std::copy(Bv.data(), Bv.data() + out, y.data() + r * out);
    if (n > 0 && in > 0) k.gemm_nn(n, in, out, X.data(), in, W.data(), out, y.data(), out, true);
    const std::size_t ix = x.id, iw = w.id, ib = b.id;
    return x.tape->push(Op::Linear, {ix, iw, ib}, std::move(y), [ix, iw, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& X = t.node(ix).value;
        const auto& W = t.node(iw).value;
        const auto& k = simd::kernels<T>();
        const std::size_t n = X.rows(), in = W.rows(), out = W.cols();
        if (n == 0) return;
        if (t.requires_grad(ix)) {
            Matrix<T> wt;
            transpose_into(W, wt);
            auto& d = t.accum(ix);
            k.gemm_nn(n, out, in, g.data(), out, wt.data(), in, d.data(), in, true);
        }
        if (t.requires_grad(iw)) {
            auto& d = t.accum(iw);
            k.gemm_tn(n, in, out, X.data(), in, g.data(), out, d.data(), out);
        }
        if (t.requires_grad(ib)) {
            auto& d = t.accum(ib);
            for (std::size_t r = 0; r < n; ++r) k.axpy(out, T(1), g.data() + r * out, d.data());
        }
    });
}

// ---- elementwise unary ------------------------------------------------------------

template <class T>
Var<T> exp(Var<T> a) {
    return elementwise(Op::Exp, a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(Var<T> a) {
    return elementwise(Op::Log, a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> square(Var<T> a) {
    return elementwise(Op::Square, a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Var<T> sqrt(Var<T> a) {
    return elementwise(Op::Sqrt, a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Var<T> relu(Var<T> a) {
    return elementwise(
        Op::Relu, a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> softplus(Var<T> a) {
    return elementwise(
        Op::Softplus, a,
        [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](T x, T) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        });
}

// ---- reductions --------------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> a) {
    const auto& x = a.value();
    T s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    const std::size_t ia = a.id;
    return a.tape->push(Op::Sum, {ia}, Matrix<T>(1, 1, s), [ia](Tape<T>& t, std::size_t self) {
        const T g = t.node(self).grad[0];
        auto& d = t.accum(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
    });
}

template <class T>
Var<T> sum_rows(Var<T> a) {
    const auto& x = a.value();
    Matrix<T> y(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        T s = 0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c);
        y[r] = s;
    }
    const std::size_t ia = a.id;
    return a.tape->push(Op::SumRows, {ia}, std::move(y), [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g[r];
    });
}

template <class T>
Var<T> sum_cols(Var<T> a) {
    const auto& x = a.value();
    Matrix<T> y(1, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) y[c] += x(r, c);
    const std::size_t ia = a.id;
    return a.tape->push(Op::SumCols, {ia}, std::move(y), [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g[c];
    });
}

template <class T>
Var<T> logsumexp(Var<T> a) {
    const auto& x = a.value();
    if (x.empty()) throw ShapeError("ad::logsumexp: empty input");
    const T mx = *std::max_element(x.data(), x.data() + x.size());
    T s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::exp(x[i] - mx);
    const T lse = mx + std::log(s);
    const std::size_t ia = a.id;
    return a.tape->push(Op::LogSumExp, {ia}, Matrix<T>(1, 1, lse), [ia](Tape<T>& t, std::size_t self) {
        const auto& n = t.node(self);
        const auto& x = t.node(ia).value;
        auto& d = t.accum(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += n.grad[0] * std::exp(x[i] - n.value[0]);
    });
}

template <class T>
Var<T> row_normalize(Var<T> a, T eps) {
    const auto& x = a.value();
    const std::size_t n = x.rows(), c = x.cols();
    Matrix<T> y(n, c);
    auto inv_std = std::make_shared<std::vector<T>>(n);
    for (std::size_t r = 0; r < n; ++r) {
        T mean = 0;
        for (std::size_t j = 0; j < c; ++j) mean += x(r, j);
        mean /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
        var /= static_cast<T>(c);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < c; ++j) y(r, j) = (x(r, j) - mean) * is;
    }
    const std::size_t ia = a.id;
    return a.tape->push(Op::RowNormalize, {ia}, std::move(y), [ia, inv_std](Tape<T>& t, std::size_t self) {
        const auto& nd = t.node(self);
        auto& d = t.accum(ia);
        const std::size_t c = d.cols();
        const T inv_c = T(1) / static_cast<T>(c);
        for (std::size_t r = 0; r < d.rows(); ++r) {
            T gsum = 0, gy = 0;
            for (std::size_t j = 0; j < c; ++j) {
                gsum += nd.grad(r, j);
                gy += nd.grad(r, j) * nd.value(r, j);
            }
            const T is = (*inv_std)[r];
            for (std::size_t j = 0; j < c; ++j)
                d(r, j) += is * (nd.grad(r, j) - inv_c * gsum - nd.value(r, j) * inv_c * gy);
        }
    });
}

// ---- indexing / reshaping -------------------------------------------------------------

template <class T>
Var<T> gather_rows(Var<T> a, std::shared_ptr<const std::vector<std::uint32_t>> idx) {
    const auto& x = a.value();
    const std::size_t c = x.cols();
    Matrix<T> y(idx->size(), c);
    for (std::size_t r = 0; r < idx->size(); ++r) {
        const std::size_t src = (*idx)[r];
        if (src >= x.rows()) throw ShapeError("ad::gather_rows: index " + std::to_string(src) + " out of range for " + shape_str(x));
        std::copy(x.data() + src * c, x.data() + (src + 1) * c, y.data() + r * c);
    }
    const std::size_t ia = a.id;
    return a.tape->push(Op::GatherRows, {ia}, std::move(y), [ia, idx](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        const std::size_t c = d.cols();
        for (std::size_t r = 0; r < idx->size(); ++r) {
            const std::size_t dst = (*idx)[r];
            for (std::size_t j = 0; j < c; ++j) d(dst, j) += g(r, j);
        }
    });
}

template <class T>
Var<T> scatter_add_rows(Var<T> a, std::shared_ptr<const std::vector<std::uint32_t>> idx, std::size_t rows) {
    const auto& x = a.value();
    if (idx->size() != x.rows()) throw ShapeError("ad::scatter_add_rows: index count " + std::to_string(idx->size()) + " vs input " + shape_str(x));
    const std::size_t c = x.cols();
    Matrix<T> y(rows, c);
    for (std::size_t r = 0; r < idx->size(); ++r) {
        const std::size_t dst = (*idx)[r];
        if (dst >= rows) throw ShapeError("ad::scatter_add_rows: index out of range");
        for (std::size_t j = 0; j < c; ++j) y(dst, j) += x(r, j);
    }
    const std::size_t ia = a.id;
    return a.tape->push(Op::ScatterAddRows, {ia}, std::move(y), [ia, idx](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        const std::size_t c = d.cols();
        for (std::size_t r = 0; r < idx->size(); ++r) {
            const std::size_t src = (*idx)[r];
            for (std::size_t j = 0; j < c; ++j) d(r, j) += g(src, j);
        }
    });
}

template <class T>
Var<T> reshape(Var<T> a, std::size_t rows, std::size_t cols) {
    const auto& x = a.value();
    if (rows * cols != x.size()) throw ShapeError("ad::reshape: " + shape_str(x) + " -> " + shape_str(rows, cols));
    Matrix<T> y(rows, cols, std::vector<T>(x.data(), x.data() + x.size()));
    const std::size_t ia = a.id;
    return a.tape->push(Op::Reshape, {ia}, std::move(y), [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
}

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count) {
    const auto& x = a.value();
    if (start + count > x.rows()) throw ShapeError("ad::slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " + shape_str(x));
    const std::size_t c = x.cols();
    Matrix<T> y(count, c, std::vector<T>(x.data() + start * c, x.data() + (start + count) * c));
    const std::size_t ia = a.id;
    return a.tape->push(Op::SliceRows, {ia}, std::move(y), [ia, start](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        const std::size_t off = start * d.cols();
        for (std::size_t i = 0; i < g.size(); ++i) d[off + i] += g[i];
    });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t count) {
    const auto& x = a.value();
    if (start + count > x.cols()) throw ShapeError("ad::slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " + shape_str(x));
    Matrix<T> y(x.rows(), count);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t j = 0; j < count; ++j) y(r, j) = x(r, start + j);
    const std::size_t ia = a.id;
    return a.tape->push(Op::SliceCols, {ia}, std::move(y), [ia, start](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < g.cols(); ++j) d(r, start + j) += g(r, j);
    });
}

template <class T>
Var<T> diag(Var<T> a) {
    const auto& x = a.value();
    if (x.rows() != x.cols()) throw ShapeError("ad::diag: non-square " + shape_str(x));
    Matrix<T> y(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) y[i] = x(i, i);
    const std::size_t ia = a.id;
    return a.tape->push(Op::Diag, {ia}, std::move(y), [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d(i, i) += g[i];
    });
}

// ---- broadcasts ------------------------------------------------------------------------

template <class T>
Var<T> add_row_broadcast(Var<T> a, Var<T> row) {
    const auto& x = a.value();
    const auto& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != x.cols()) shape_fail(Op::AddRowBroadcast, x, rv);
    Matrix<T> y = x;
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += rv[c];
    const std::size_t ia = a.id, ir = row.id;
    return a.tape->push(Op::AddRowBroadcast, {ia, ir}, std::move(y), [ia, ir](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        if (t.requires_grad(ia)) {
            auto& d = t.accum(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.requires_grad(ir)) {
            auto& d = t.accum(ir);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d[c] += g(r, c);
        }
    });
}

template <class T>
Var<T> mul_row_broadcast(Var<T> a, Var<T> row) {
    const auto& x = a.value();
    const auto& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != x.cols()) shape_fail(Op::MulRowBroadcast, x, rv);
    Matrix<T> y = x;
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) *= rv[c];
    const std::size_t ia = a.id, ir = row.id;
    return a.tape->push(Op::MulRowBroadcast, {ia, ir}, std::move(y), [ia, ir](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& x = t.node(ia).value;
        const auto& rv = t.node(ir).value;
        if (t.requires_grad(ia)) {
            auto& d = t.accum(ia);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) += g(r, c) * rv[c];
        }
        if (t.requires_grad(ir)) {
            auto& d = t.accum(ir);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d[c] += g(r, c) * x(r, c);
        }
    });
}

template <class T>
Var<T> mul_col_broadcast(Var<T> a, Var<T> col) {
    const auto& x = a.value();
    const auto& cv = col.value();
    if (cv.cols() != 1 || cv.rows() != x.rows()) shape_fail(Op::MulColBroadcast, x, cv);
    Matrix<T> y = x;
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) *= cv[r];
    const std::size_t ia = a.id, ic = col.id;
    return a.tape->push(Op::MulColBroadcast, {ia, ic}, std::move(y), [ia, ic](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& x = t.node(ia).value;
        const auto& cv = t.node(ic).value;
        if (t.requires_grad(ia)) {
            auto& d = t.accum(ia);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) += g(r, c) * cv[r];
        }
        if (t.requires_grad(ic)) {
            auto& d = t.accum(ic);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d[r] += g(r, c) * x(r, c);
        }
    });
}

// ---- graph aggregation --------------------------------------------------------------------

template <class T>
Var<T> neighbor_sum(Var<T> x, std::shared_ptr<const NeighborTable> table, std::shared_ptr<const std::vector<T>> mask) {
    const auto& X = x.value();
    if (table->nodes != X.rows()) throw ShapeError("ad::neighbor_sum: table for " + std::to_string(table->nodes) + " nodes vs " + shape_str(X));
    const std::size_t c = X.cols();
    const auto& k = simd::kernels<T>();
    Matrix<T> y(X.rows(), c);
    for (std::size_t i = 0; i < table->nodes; ++i) {
        const auto* nb = table->row(i);
        for (std::size_t e = 0; e < table->degree; ++e) {
            const T w = mask ? (*mask)[nb[e]] : T(1);
            if (w != T(0)) k.axpy(c, w, X.data() + nb[e] * c, y.data() + i * c);
        }
    }
    const std::size_t ix = x.id;
    return x.tape->push(Op::NeighborSum, {ix}, std::move(y), [ix, table, mask](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto& d = t.accum(ix);
        const std::size_t c = d.cols();
        const auto& k = simd::kernels<T>();
        for (std::size_t i = 0; i < table->nodes; ++i) {
            const auto* nb = table->row(i);
            for (std::size_t e = 0; e < table->degree; ++e) {
                const T w = mask ? (*mask)[nb[e]] : T(1);
                if (w != T(0)) k.axpy(c, w, g.data() + i * c, d.data() + nb[e] * c);
            }
        }
    });
}

namespace {

// Softmax weights per node; returns false when the neighborhood is empty.
template <class T>
bool attention_row(std::size_t i, const Matrix<T>& Q, const Matrix<T>& K, const AttentionSpec<T>& spec,
                   const T* w, T inv_sqrt_d, T* alpha, T& qw) {
    const auto& tab = *spec.table;
    const std::size_t D = Q.cols();
    const auto& kern = simd::kernels<T>();
    const T* qi = Q.data() + i * D;
    qw = w ? kern.dot(D, qi, w) : T(0);
    const auto* nb = tab.row(i);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t e = 0; e < tab.degree; ++e) {
        const std::size_t j = nb[e];
        if (spec.node_mask && (*spec.node_mask)[j] == T(0)) {
            alpha[e] = -std::numeric_limits<T>::infinity();
            continue;
        }
        T s = kern.dot(D, qi, K.data() + j * D);
        if (w) s += (*spec.edge_attr)[i * tab.degree + e] * qw;
        s *= inv_sqrt_d;
        alpha[e] = s;
        mx = std::max(mx, s);
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
        for (std::size_t e = 0; e < tab.degree; ++e) alpha[e] = T(0);
        return false;
    }
    T z = 0;
    for (std::size_t e = 0; e < tab.degree; ++e) {
        const std::size_t j = nb[e];
        const T m = spec.node_mask ? (*spec.node_mask)[j] : T(1);
        const T a = m == T(0) ? T(0) : m * std::exp(alpha[e] - mx);
        alpha[e] = a;
        z += a;
    }
    for (std::size_t e = 0; e < tab.degree; ++e) alpha[e] /= z;
    return true;
}

}  // namespace

template <class T>
Matrix<T> attention_weights(const Matrix<T>& q, const Matrix<T>& k, const AttentionSpec<T>& spec, const Matrix<T>* pilot_w) {
    const auto& tab = *spec.table;
    Matrix<T> alpha(tab.nodes, tab.degree);
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(q.cols()));
    for (std::size_t i = 0; i < tab.nodes; ++i) {
        T qw;
        attention_row(i, q, k, spec, pilot_w ? pilot_w->data() : nullptr, inv_sqrt_d, alpha.data() + i * tab.degree, qw);
    }
    return alpha;
}

template <class T>
Var<T> neighbor_attention(Var<T> q, Var<T> k, Var<T> v, const AttentionSpec<T>& spec, const Var<T>* pilot_w) {
    const auto& Q = q.value();
    const auto& K = k.value();
    const auto& V = v.value();
    const auto& tab = *spec.table;
    const std::size_t n = Q.rows(), D = Q.cols();
    if (!Q.same_shape(K)) shape_fail(Op::NeighborAttention, Q, K);
    if (!Q.same_shape(V)) shape_fail(Op::NeighborAttention, Q, V);
    if (tab.nodes != n) throw ShapeError("ad::neighbor_attention: table for " + std::to_string(tab.nodes) + " nodes vs " + shape_str(Q));
    if (pilot_w) {
        const auto& W = pilot_w->value();
        if (W.rows() != 1 || W.cols() != D) shape_fail(Op::NeighborAttention, Q, W);
        if (!spec.edge_attr || spec.edge_attr->size() != n * tab.degree)
            throw ShapeError("ad::neighbor_attention: pilot weight given without per-edge attributes");
    }
    if (spec.node_mask && spec.node_mask->size() != n) throw ShapeError("ad::neighbor_attention: node mask size mismatch");

    const T* w = pilot_w ? pilot_w->value().data() : nullptr;
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(D));
    const auto& kern = simd::kernels<T>();
    auto alpha = std::make_shared<std::vector<T>>(n * tab.degree);
    auto qw_cache = std::make_shared<std::vector<T>>(n);
    Matrix<T> y(n, D);
    for (std::size_t i = 0; i < n; ++i) {
        T* ai = alpha->data() + i * tab.degree;
        if (!attention_row(i, Q, K, spec, w, inv_sqrt_d, ai, (*qw_cache)[i])) continue;
        const auto* nb = tab.row(i);
        T* yi = y.data() + i * D;
        T phi_mass = 0;
        for (std::size_t e = 0; e < tab.degree; ++e) {
            if (ai[e] == T(0)) continue;
            kern.axpy(D, ai[e], V.data() + std::size_t(nb[e]) * D, yi);
            if (w) phi_mass += ai[e] * (*spec.edge_attr)[i * tab.degree + e];
        }
        if (w && phi_mass != T(0)) kern.axpy(D, phi_mass, w, yi);
    }

    std::vector<std::size_t> args{q.id, k.id, v.id};
    if (pilot_w) args.push_back(pilot_w->id);
    const std::size_t iq = q.id, ik = k.id, iv = v.id;
    const std::size_t iw = pilot_w ? pilot_w->id : std::size_t(-1);
    return q.tape->push(Op::NeighborAttention, std::move(args), std::move(y),
                        [iq, ik, iv, iw, spec, alpha, inv_sqrt_d](Tape<T>& t, std::size_t self) {
        const auto& G = t.node(self).grad;
        const auto& Q = t.node(iq).value;
        const auto& K = t.node(ik).value;
        const auto& V = t.node(iv).value;
        const bool has_w = iw != std::size_t(-1);
        const T* w = has_w ? t.node(iw).value.data() : nullptr;
        const auto& tab = *spec.table;
        const std::size_t n = Q.rows(), D = Q.cols(), deg = tab.degree;
        const auto& kern = simd::kernels<T>();
        Matrix<T>* dQ = t.requires_grad(iq) ? &t.accum(iq) : nullptr;
        Matrix<T>* dK = t.requires_grad(ik) ? &t.accum(ik) : nullptr;
        Matrix<T>* dV = t.requires_grad(iv) ? &t.accum(iv) : nullptr;
        Matrix<T>* dW = has_w && t.requires_grad(iw) ? &t.accum(iw) : nullptr;
        std::vector<T> dalpha(deg);
        for (std::size_t i = 0; i < n; ++i) {
            const T* ai = alpha->data() + i * deg;
            const auto* nb = tab.row(i);
            const T* gi = G.data() + i * D;
            const T gw = w ? kern.dot(D, gi, w) : T(0);
            T weighted = 0;
            T phi_mass = 0;
            for (std::size_t e = 0; e < deg; ++e) {
                if (ai[e] == T(0)) {
                    dalpha[e] = 0;
                    continue;
                }
                const std::size_t j = nb[e];
                const T phi = w ? (*spec.edge_attr)[i * deg + e] : T(0);
                dalpha[e] = kern.dot(D, gi, V.data() + j * D) + phi * gw;
                weighted += ai[e] * dalpha[e];
                phi_mass += ai[e] * phi;
                if (dV) kern.axpy(D, ai[e], gi, dV->data() + j * D);
            }
            if (dW && phi_mass != T(0)) kern.axpy(D, phi_mass, gi, dW->data());
            // softmax adjoint, then the score = q.(k + phi w) / sqrt(D) adjoint
            T ds_phi = 0;
            const T* qi = Q.data() + i * D;
            for (std::size_t e = 0; e < deg; ++e) {
                if (ai[e] == T(0)) continue;
                const std::size_t j = nb[e];
                const T ds = ai[e] * (dalpha[e] - weighted) * inv_sqrt_d;
                if (dQ) kern.axpy(D, ds, K.data() + j * D, dQ->data() + i * D);
                if (dK) kern.axpy(D, ds, qi, dK->data() + j * D);
                if (w) ds_phi += ds * (*spec.edge_attr)[i * deg + e];
            }
            if (w && ds_phi != T(0)) {
                if (dQ) kern.axpy(D, ds_phi, w, dQ->data() + i * D);
                if (dW) kern.axpy(D, ds_phi, qi, dW->data());
            }
        }
    });
}

// ---- projection -----------------------------------------------------------------------

template <class T>
Var<T> project_feasible(Var<T> a, int N) {
    Matrix<T> y = a.value();
    for (std::size_t r = 0; r < y.rows(); ++r) project_row(y.row(r), N);
    const std::size_t ia = a.id;
    return a.tape->push(Op::ProjectFeasible, {ia}, std::move(y), [ia, N](Tape<T>& t, std::size_t self) {
        const auto& nd = t.node(self);
        const auto& x = t.node(ia).value;
        auto& d = t.accum(ia);
        const T bound = T(1) / static_cast<T>(N);
        const std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
            T norm2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
                const T v = x(r, j) > T(0) ? x(r, j) : T(0);
                norm2 += v * v;
            }
            if (!(norm2 > bound)) {
                for (std::size_t j = 0; j < c; ++j)
                    if (x(r, j) > T(0)) d(r, j) += nd.grad(r, j);
                continue;
            }
            // y = rho * p / ||p||, p = max(x, 0): dy = rho/||p|| (I - u u^T) dp
            const T norm = std::sqrt(norm2);
            const T rho = std::sqrt(bound);
            T gu = 0;
            for (std::size_t j = 0; j < c; ++j)
                if (x(r, j) > T(0)) gu += nd.grad(r, j) * x(r, j) / norm;
            for (std::size_t j = 0; j < c; ++j) {
                if (!(x(r, j) > T(0))) continue;
                d(r, j) += rho / norm * (nd.grad(r, j) - gu * x(r, j) / norm);
            }
        }
    });
}

// ---- explicit instantiation ---------------------------------------------------------------

#define CFGAT_AD_INSTANTIATE(T)                                                                          \
    template Var<T> add(Var<T>, Var<T>);                                                                 \
    template Var<T> sub(Var<T>, Var<T>);                                                                 \
    template Var<T> mul(Var<T>, Var<T>);                                                                 \
    template Var<T> div(Var<T>, Var<T>);                                                                 \
    template Var<T> scale(Var<T>, T);                                                                    \
    template Var<T> add_scalar(Var<T>, T);                                                               \
    template Var<T> matmul(Var<T>, Var<T>);                                                              \
    template Var<T> transpose(Var<T>);                                                                   \
    template Var<T> exp(Var<T>);                                                                         \
    template Var<T> log(Var<T>);                                                                         \
    template Var<T> square(Var<T>);                                                                      \
    template Var<T> sqrt(Var<T>);                                                                        \
    template Var<T> relu(Var<T>);                                                                        \
    template Var<T> softplus(Var<T>);                                                                    \
    template Var<T> sum(Var<T>);                                                                         \
    template Var<T> sum_rows(Var<T>);                                                                    \
    template Var<T> sum_cols(Var<T>);                                                                    \
    template Var<T> logsumexp(Var<T>);                                                                   \
    template Var<T> row_normalize(Var<T>, T);                                                            \
    template Var<T> gather_rows(Var<T>, std::shared_ptr<const std::vector<std::uint32_t>>);             \
    template Var<T> scatter_add_rows(Var<T>, std::shared_ptr<const std::vector<std::uint32_t>>, std::size_t); \
    template Var<T> reshape(Var<T>, std::size_t, std::size_t);                                           \
    template Var<T> add_row_broadcast(Var<T>, Var<T>);                                                   \
    template Var<T> mul_row_broadcast(Var<T>, Var<T>);                                                   \
    template Var<T> mul_col_broadcast(Var<T>, Var<T>);                                                   \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                      \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                        \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                        \
    template Var<T> diag(Var<T>);                                                                        \
    template Var<T> neighbor_sum(Var<T>, std::shared_ptr<const NeighborTable>, std::shared_ptr<const std::vector<T>>); \
    template Var<T> neighbor_attention(Var<T>, Var<T>, Var<T>, const AttentionSpec<T>&, const Var<T>*); \
    template Matrix<T> attention_weights(const Matrix<T>&, const Matrix<T>&, const AttentionSpec<T>&, const Matrix<T>*); \
    template Var<T> project_feasible(Var<T>, int);

CFGAT_AD_INSTANTIATE(float)
CFGAT_AD_INSTANTIATE(double)

#undef CFGAT_AD_INSTANTIATE

// ---- whole-graph helpers ----------------------------------------------------------------

namespace {

Var<double> build_on(Tape<double>& tape, const Builder& build, const Bindings& bindings, Inputs& inputs) {
    for (const auto& [name, value] : bindings) inputs[name] = tape.input(name, value);
    return build(tape, inputs);
}

}  // namespace

Mat evaluate(const Builder& build, const Bindings& bindings) {
    Tape<double> tape;
    Inputs inputs;
    return build_on(tape, build, bindings, inputs).value();
}

std::map<std::string, Mat> gradient(const Builder& build, const Bindings& bindings, const std::vector<std::string>& wrt) {
    Tape<double> tape;
    Inputs inputs;
    Var<double> root = build_on(tape, build, bindings, inputs);
    tape.backward(root);
    std::map<std::string, Mat> out;
    for (const auto& name : wrt) {
        auto it = inputs.find(name);
        if (it == inputs.end()) throw ShapeError("gradient: no bound input named '" + name + "'");
        out[name] = tape.gradient(it->second);
    }
    return out;
}

FdReport finite_difference_check(const Builder& build, const Bindings& bindings, double step, std::uint64_t seed,
                                 std::size_t min_coords) {
    if (!(step > 0.0)) throw ConfigError("finite_difference_check: step must be > 0");
    std::vector<std::string> names;
    std::vector<std::pair<std::size_t, std::size_t>> coords;  // (input, flat index)
    for (const auto& [name, value] : bindings) {
        for (std::size_t i = 0; i < value.size(); ++i) coords.emplace_back(names.size(), i);
        names.push_back(name);
    }
    const auto analytic = gradient(build, bindings, names);
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    if (coords.size() > min_coords) coords.resize(min_coords);

    auto scalar_at = [&](const Bindings& b) {
        const Mat v = evaluate(build, b);
        if (v.size() != 1) throw ShapeError("finite_difference_check: root must be scalar");
        return v[0];
    };
    FdReport rep;
    Bindings work = bindings;
    for (const auto& [which, idx] : coords) {
        const std::string& name = names[which];
        double& x = work[name][idx];
        const double x0 = x;
        const double h = step * std::max(std::abs(x0), 1.0);
        x = x0 + h;
        const double fp = scalar_at(work);
        x = x0 - h;
        const double fm = scalar_at(work);
        x = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic.at(name)[idx];
        const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
        ++rep.coordinates;
        if (err >= rep.max_rel_error) {
            rep.max_rel_error = err;
            rep.worst_input = name;
            rep.worst_index = idx;
            rep.worst_analytic = a;
            rep.worst_numeric = numeric;
        }
    }
    return rep;
}

}  // namespace cfgat::ad
