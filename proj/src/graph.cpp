#include "bigen/graph.hpp"

#include <cmath>
#include <limits>

namespace bigen {

namespace {

template <class T>
void check_finite(const std::string& op, const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i])) {
            throw NumericalFault("op '" + op + "' produced a non-finite value at flat index " +
                                 std::to_string(i) + " (shape " + shape_str(t.shape()) + ")");
        }
    }
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw DataError("op '" + op + "': incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class T>
void require_same_graph(const std::string& op, Var<T> a, Var<T> b) {
    if (a.graph != b.graph || a.graph == nullptr) {
        throw DataError("op '" + op + "': operands belong to different graphs");
    }
}

// c[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace

template <class T>
void softmax_inplace(std::span<T> row) {
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) mx = std::max(mx, v);
    T total = 0;
    for (T& v : row) {
        v = std::exp(v - mx);
        total += v;
    }
    for (T& v : row) v /= total;
}

// ---------------------------------------------------------------------------
// Graph

template <class T>
typename Graph<T>::Node& Graph<T>::add_node(std::string op, Tensor<T> value) {
    if (backward_done_) throw DataError("graph already consumed by backward(); build a new graph");
    nodes_.push_back(Node{std::move(op), std::move(value), {}, {}, nullptr, false});
    return nodes_.back();
}

template <class T>
Var<T> Graph<T>::constant(Tensor<T> value) {
    check_finite("constant", value);
    add_node("constant", std::move(value));
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Graph<T>::param(const ParamPtr<T>& p) {
    if (!p) throw DataError("null parameter bound to graph");
    if (auto it = param_nodes_.find(p.get()); it != param_nodes_.end()) return {this, it->second};
    Node& n = add_node("param:" + p->name, p->value);
    n.param = p.get();
    n.requires_grad = record_;
    param_nodes_.emplace(p.get(), nodes_.size() - 1);
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Graph<T>::push(std::string op, Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    return push(std::move(op), std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                std::move(fn));
}

template <class T>
Var<T> Graph<T>::push(std::string op, Tensor<T> value, std::span<const Var<T>> parents, BackwardFn fn) {
    check_finite(op, value);
    bool rg = false;
    if (record_) {
        for (const auto& p : parents) rg = rg || nodes_.at(p.id).requires_grad;
    }
    Node& n = add_node(std::move(op), std::move(value));
    n.requires_grad = rg;
    if (rg) n.backward = std::move(fn);
    return {this, nodes_.size() - 1};
}

template <class T>
Tensor<T>& Graph<T>::grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape(), T(0));
    return n.grad;
}

template <class T>
void Graph<T>::backward(Var<T> loss) {
    if (loss.graph != this) throw DataError("backward: loss belongs to another graph");
    if (backward_done_) throw DataError("backward called twice on the same graph");
    if (!record_) throw DataError("backward on a graph built without recording");
    const Node& ln = nodes_.at(loss.id);
    if (ln.value.numel() != 1) {
        throw DataError("backward requires a scalar loss, got shape " + shape_str(ln.value.shape()));
    }
    backward_done_ = true;
    if (!ln.requires_grad) return;
    grad_of(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.requires_grad) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param != nullptr) {
            auto& pg = n.param->grad;
            for (std::size_t j = 0; j < pg.numel(); ++j) pg[j] += n.grad[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_same_graph("matmul", a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.cols() != B.rows()) shape_error("matmul", A.shape(), B.shape());
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<T> out = Tensor<T>::matrix(m, n);
    gemm_nn(A.data(), B.data(), out.data(), m, k, n);
    return a.graph->push("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        if (g.needs_grad(a.id)) gemm_nt(G.data(), g.node_value(b.id).data(), g.grad_of(a.id).data(), m, n, k);
        if (g.needs_grad(b.id)) gemm_tn(g.node_value(a.id).data(), G.data(), g.grad_of(b.id).data(), m, k, n);
    });
}

template <class T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
    require_same_graph("matmul_bt", a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.cols() != B.cols()) shape_error("matmul_bt", A.shape(), B.shape());
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor<T> out = Tensor<T>::matrix(m, n);
    gemm_nt(A.data(), B.data(), out.data(), m, k, n);
    return a.graph->push("matmul_bt", std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        // dA = G * B, dB = G^T * A
        if (g.needs_grad(a.id)) gemm_nn(G.data(), g.node_value(b.id).data(), g.grad_of(a.id).data(), m, n, k);
        if (g.needs_grad(b.id)) gemm_tn(G.data(), g.node_value(a.id).data(), g.grad_of(b.id).data(), m, n, k);
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_graph("add", a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A.shape(), B.shape());
    Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = A[i] + B[i];
    return a.graph->push("add", std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        for (auto id : {a.id, b.id}) {
            if (!g.needs_grad(id)) continue;
            auto& D = g.grad_of(id);
            for (std::size_t i = 0; i < G.numel(); ++i) D[i] += G[i];
        }
    });
}

template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
    require_same_graph("add_bias", a, bias);
    const auto& A = a.value();
    const auto& B = bias.value();
    if (B.numel() != A.cols()) shape_error("add_bias", A.shape(), B.shape());
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out = Tensor<T>::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = A(i, j) + B[j];
    return a.graph->push("add_bias", std::move(out), {a, bias}, [a, bias, m, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        if (g.needs_grad(a.id)) {
            auto& D = g.grad_of(a.id);
            for (std::size_t i = 0; i < G.numel(); ++i) D[i] += G[i];
        }
        if (g.needs_grad(bias.id)) {
            auto& D = g.grad_of(bias.id);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) D[j] += G[i * n + j];
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_graph("mul", a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A.shape(), B.shape());
    Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = A[i] * B[i];
    return a.graph->push("mul", std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        const auto& Av = g.node_value(a.id);
        const auto& Bv = g.node_value(b.id);
        if (g.needs_grad(a.id)) {
            auto& D = g.grad_of(a.id);
            for (std::size_t i = 0; i < G.numel(); ++i) D[i] += G[i] * Bv[i];
        }
        if (g.needs_grad(b.id)) {
            auto& D = g.grad_of(b.id);
            for (std::size_t i = 0; i < G.numel(); ++i) D[i] += G[i] * Av[i];
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
    const auto& A = a.value();
    Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = A[i] * s;
    return a.graph->push("scale", std::move(out), {a}, [a, s](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < G.numel(); ++i) D[i] += G[i] * s;
    });
}

template <class T>
Var<T> relu(Var<T> a) {
    const auto& A = a.value();
    Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = A[i] > T(0) ? A[i] : T(0);
    return a.graph->push("relu", std::move(out), {a}, [a](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        const auto& Av = g.node_value(a.id);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < G.numel(); ++i)
            if (Av[i] > T(0)) D[i] += G[i];
    });
}

template <class T>
Var<T> log(Var<T> a) {
    const auto& A = a.value();
    Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(A[i]);
    return a.graph->push("log", std::move(out), {a}, [a](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        const auto& Av = g.node_value(a.id);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < G.numel(); ++i) D[i] += G[i] / Av[i];
    });
}

template <class T>
Var<T> softmax(Var<T> a) {
    const auto& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out = Tensor<T>::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(A.row(i).begin(), A.row(i).end(), out.row(i).begin());
        softmax_inplace(out.row(i));
    }
    return a.graph->push("softmax", std::move(out), {a}, [a, m, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        const auto& Y = g.node_value(self);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < m; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += G[i * n + j] * Y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) D[i * n + j] += Y[i * n + j] * (G[i * n + j] - dot);
        }
    });
}

template <class T>
Var<T> mean(Var<T> a, int axis) {
    const auto& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    if (axis != 0 && axis != 1) throw DataError("mean: axis must be 0 or 1, got " + std::to_string(axis));
    Tensor<T> out = axis == 0 ? Tensor<T>::matrix(1, n) : Tensor<T>::matrix(m, 1);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += A(i, j);
    const T div = axis == 0 ? T(m) : T(n);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= div;
    return a.graph->push("mean", std::move(out), {a}, [a, axis, m, n, div](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) D[i * n + j] += G[axis == 0 ? j : i] / div;
    });
}

template <class T>
Var<T> sum(Var<T> a) {
    const auto& A = a.value();
    T total = 0;
    for (std::size_t i = 0; i < A.numel(); ++i) total += A[i];
    return a.graph->push("sum", Tensor<T>({1}, total), {a}, [a](Graph<T>& g, std::size_t self) {
        const T G = (*g.incoming_grad(self))[0];
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < D.numel(); ++i) D[i] += G;
    });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) throw DataError("concat_rows: no operands");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        require_same_graph("concat_rows", parts[0], p);
        if (p.cols() != n) shape_error("concat_rows", parts[0].value().shape(), p.value().shape());
        m += p.rows();
    }
    Tensor<T> out = Tensor<T>::matrix(m, n);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& V = p.value();
        std::copy(V.values().begin(), V.values().end(), out.data() + off);
        off += V.numel();
    }
    std::vector<Var<T>> saved(parts.begin(), parts.end());
    return parts[0].graph->push("concat_rows", std::move(out), parts, [saved](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        std::size_t off = 0;
        for (const auto& p : saved) {
            const std::size_t len = g.node_value(p.id).numel();
            if (g.needs_grad(p.id)) {
                auto& D = g.grad_of(p.id);
                for (std::size_t i = 0; i < len; ++i) D[i] += G[off + i];
            }
            off += len;
        }
    });
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
    if (parts.empty()) throw DataError("concat_cols: no operands");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        require_same_graph("concat_cols", parts[0], p);
        if (p.rows() != m) shape_error("concat_cols", parts[0].value().shape(), p.value().shape());
        n += p.cols();
    }
    Tensor<T> out = Tensor<T>::matrix(m, n);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& V = p.value();
        const std::size_t w = V.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out(i, off + j) = V(i, j);
        off += w;
    }
    std::vector<Var<T>> saved(parts.begin(), parts.end());
    return parts[0].graph->push("concat_cols", std::move(out), parts, [saved, m, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        std::size_t off = 0;
        for (const auto& p : saved) {
            const std::size_t w = g.node_value(p.id).cols();
            if (g.needs_grad(p.id)) {
                auto& D = g.grad_of(p.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) D[i * w + j] += G[i * n + off + j];
            }
            off += w;
        }
    });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t len) {
    const auto& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    if (len == 0 || start + len > n) {
        throw DataError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                        ") out of bounds for shape " + shape_str(A.shape()));
    }
    Tensor<T> out = Tensor<T>::matrix(m, len);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) out(i, j) = A(i, start + j);
    return a.graph->push("slice_cols", std::move(out), {a}, [a, start, len, m, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < len; ++j) D[i * n + start + j] += G[i * len + j];
    });
}

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t len) {
    const auto& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    if (len == 0 || start + len > m) {
        throw DataError("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                        ") out of bounds for shape " + shape_str(A.shape()));
    }
    Tensor<T> out(Shape{len, n}, std::vector<T>(A.data() + start * n, A.data() + (start + len) * n));
    return a.graph->push("slice_rows", std::move(out), {a}, [a, start, len, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < len * n; ++i) D[start * n + i] += G[i];
    });
}

template <class T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
    const auto& W = table.value();
    const std::size_t rows = W.rows(), n = W.cols();
    if (ids.empty()) throw DataError("embedding: empty id list");
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= rows) {
            throw DataError("embedding: id " + std::to_string(id) + " out of range for table " +
                            shape_str(W.shape()));
        }
    }
    Tensor<T> out = Tensor<T>::matrix(ids.size(), n);
    for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(W.row(ids[i]).begin(), n, out.row(i).begin());
    std::vector<int> saved(ids.begin(), ids.end());
    return table.graph->push("embedding", std::move(out), {table}, [table, saved, n](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        auto& D = g.grad_of(table.id);
        for (std::size_t i = 0; i < saved.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) D[saved[i] * n + j] += G[i * n + j];
    });
}

template <class T>
Var<T> masked_fill(Var<T> a, std::span<const std::uint8_t> mask, T fill) {
    const auto& A = a.value();
    if (mask.size() != A.numel()) {
        throw DataError("masked_fill: mask length " + std::to_string(mask.size()) + " vs shape " +
                        shape_str(A.shape()));
    }
    Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = mask[i] ? fill : A[i];
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    return a.graph->push("masked_fill", std::move(out), {a}, [a, saved](Graph<T>& g, std::size_t self) {
        const auto& G = *g.incoming_grad(self);
        auto& D = g.grad_of(a.id);
        for (std::size_t i = 0; i < G.numel(); ++i)
            if (!saved[i]) D[i] += G[i];
    });
}

template <class T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, T eps) {
    require_same_graph("layer_norm", a, gain);
    require_same_graph("layer_norm", a, bias);
    const auto& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    if (gain.value().numel() != n || bias.value().numel() != n) {
        shape_error("layer_norm", A.shape(), gain.value().shape());
    }
    const auto& Gm = gain.value();
    const auto& Bt = bias.value();
    Tensor<T> out = Tensor<T>::matrix(m, n);
    // normalized activations and inverse std per row, kept for backward
    std::vector<T> xhat(m * n), inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        T mu = 0;
        for (std::size_t j = 0; j < n; ++j) mu += A(i, j);
        mu /= T(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) var += (A(i, j) - mu) * (A(i, j) - mu);
        var /= T(n);
        inv_std[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (A(i, j) - mu) * inv_std[i];
            out(i, j) = xhat[i * n + j] * Gm[j] + Bt[j];
        }
    }
    return a.graph->push(
        "layer_norm", std::move(out), {a, gain, bias},
        [a, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g, std::size_t self) {
            const auto& G = *g.incoming_grad(self);
            const auto& Gm = g.node_value(gain.id);
            if (g.needs_grad(gain.id)) {
                auto& D = g.grad_of(gain.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) D[j] += G[i * n + j] * xhat[i * n + j];
            }
            if (g.needs_grad(bias.id)) {
                auto& D = g.grad_of(bias.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) D[j] += G[i * n + j];
            }
            if (g.needs_grad(a.id)) {
                auto& D = g.grad_of(a.id);
                for (std::size_t i = 0; i < m; ++i) {
                    T sum_dy = 0, sum_dy_xhat = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dy = G[i * n + j] * Gm[j];
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dy = G[i * n + j] * Gm[j];
                        D[i * n + j] +=
                            inv_std[i] * (dy - sum_dy / T(n) - xhat[i * n + j] * sum_dy_xhat / T(n));
                    }
                }
            }
        });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, int ignore_id) {
    const auto& Z = logits.value();
    const std::size_t m = Z.rows(), n = Z.cols();
    if (targets.size() != m) {
        throw DataError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                        shape_str(Z.shape()));
    }
    std::vector<T> probs(m * n);
    T loss = 0;
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(Z.row(i).begin(), Z.row(i).end(), probs.begin() + i * n);
        if (targets[i] == ignore_id) continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n) {
            throw DataError("cross_entropy: target id " + std::to_string(targets[i]) + " outside vocab of " +
                            std::to_string(n));
        }
        std::span<T> row(probs.data() + i * n, n);
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : row) mx = std::max(mx, v);
        T total = 0;
        for (T v : row) total += std::exp(v - mx);
        loss -= row[targets[i]] - mx - std::log(total);
        softmax_inplace(row);
    }
    std::vector<int> saved(targets.begin(), targets.end());
    return logits.graph->push(
        "cross_entropy", Tensor<T>({1}, loss), {logits},
        [logits, saved, ignore_id, m, n, probs = std::move(probs)](Graph<T>& g, std::size_t self) {
            const T G = (*g.incoming_grad(self))[0];
            auto& D = g.grad_of(logits.id);
            for (std::size_t i = 0; i < m; ++i) {
                if (saved[i] == ignore_id) continue;
                for (std::size_t j = 0; j < n; ++j) D[i * n + j] += G * probs[i * n + j];
                D[i * n + saved[i]] -= G;
            }
        });
}

}  // namespace ops

#define BIGEN_INSTANTIATE(T)                                                                   \
    template class Graph<T>;                                                                   \
    template void softmax_inplace<T>(std::span<T>);                                            \
    template Var<T> ops::matmul<T>(Var<T>, Var<T>);                                            \
    template Var<T> ops::matmul_bt<T>(Var<T>, Var<T>);                                         \
    template Var<T> ops::add<T>(Var<T>, Var<T>);                                               \
    template Var<T> ops::add_bias<T>(Var<T>, Var<T>);                                          \
    template Var<T> ops::mul<T>(Var<T>, Var<T>);                                               \
    template Var<T> ops::scale<T>(Var<T>, T);                                                  \
    template Var<T> ops::relu<T>(Var<T>);                                                      \
    template Var<T> ops::log<T>(Var<T>);                                                       \
    template Var<T> ops::softmax<T>(Var<T>);                                                   \
    template Var<T> ops::mean<T>(Var<T>, int);                                                 \
    template Var<T> ops::sum<T>(Var<T>);                                                       \
    template Var<T> ops::concat_rows<T>(std::span<const Var<T>>);                              \
    template Var<T> ops::concat_cols<T>(std::span<const Var<T>>);                              \
    template Var<T> ops::slice_cols<T>(Var<T>, std::size_t, std::size_t);                      \
    template Var<T> ops::slice_rows<T>(Var<T>, std::size_t, std::size_t);                      \
    template Var<T> ops::embedding<T>(Var<T>, std::span<const int>);                           \
    template Var<T> ops::masked_fill<T>(Var<T>, std::span<const std::uint8_t>, T);             \
    template Var<T> ops::layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                             \
    template Var<T> ops::cross_entropy<T>(Var<T>, std::span<const int>, int);

BIGEN_INSTANTIATE(float)
BIGEN_INSTANTIATE(double)

#undef BIGEN_INSTANTIATE

}  // namespace bigen
