#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Graph records every op in execution order. backward() walks the tape in
// exact reverse order, so each node's gradient is complete before it is
// propagated to its parents. A Graph supports a single backward pass; a second
// call throws. Graphs built with record=false keep values only and are used
// for inference.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bigen/tensor.hpp"

namespace bigen {

template <class T>
struct Parameter {
    Parameter(std::string name_, Tensor<T> value_)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), T(0)) {}

    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    std::size_t numel() const noexcept { return value.numel(); }
    void zero_grad() { grad.fill(T(0)); }
};

template <class T>
using ParamPtr = std::shared_ptr<Parameter<T>>;

template <class T>
class Graph;

template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    bool valid() const noexcept { return graph != nullptr; }
    const Tensor<T>& value() const { return graph->value(*this); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

template <class T>
class Graph {
   public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const noexcept { return record_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Leaf holding a value that never receives gradient.
    Var<T> constant(Tensor<T> value);
    // Leaf bound to a parameter. Repeated calls with the same parameter return
    // the same node, so shared parameters accumulate through one leaf.
    Var<T> param(const ParamPtr<T>& p);

    const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    const std::string& op_name(Var<T> v) const { return nodes_.at(v.id).op; }

    // Seeds d(loss)/d(loss) = 1 and accumulates into every bound parameter's
    // grad. Throws on non-scalar loss or when called twice.
    void backward(Var<T> loss);

    // Used by op implementations.
    Var<T> push(std::string op, Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn);
    Var<T> push(std::string op, Tensor<T> value, std::span<const Var<T>> parents, BackwardFn fn);
    bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    Tensor<T>& grad_of(std::size_t id);
    const Tensor<T>& node_value(std::size_t id) const { return nodes_[id].value; }
    // Gradient flowing into `id` during backward; null when nothing reached it.
    const Tensor<T>* incoming_grad(std::size_t id) const {
        return nodes_[id].grad.empty() ? nullptr : &nodes_[id].grad;
    }

   private:
    struct Node {
        std::string op;
        Tensor<T> value;
        Tensor<T> grad;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
        bool requires_grad = false;
    };

    Node& add_node(std::string op, Tensor<T> value);

    bool record_;
    bool backward_done_ = false;
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

namespace ops {

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// a * b^T
template <class T> Var<T> matmul_bt(Var<T> a, Var<T> b);
template <class T> Var<T> add(Var<T> a, Var<T> b);
// Adds a length-cols vector to every row of a.
template <class T> Var<T> add_bias(Var<T> a, Var<T> bias);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T s);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> log(Var<T> a);
// Row-wise softmax with max subtraction.
template <class T> Var<T> softmax(Var<T> a);
// axis 0 -> 1 x cols, axis 1 -> rows x 1.
template <class T> Var<T> mean(Var<T> a, int axis);
template <class T> Var<T> sum(Var<T> a);
template <class T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <class T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <class T> Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t len);
template <class T> Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t len);
template <class T> Var<T> embedding(Var<T> table, std::span<const int> ids);
// Entries where mask != 0 are replaced by `fill`; those entries get no gradient.
template <class T> Var<T> masked_fill(Var<T> a, std::span<const std::uint8_t> mask, T fill);
template <class T> Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, T eps = T(1e-5));
// Sum over rows of -log softmax(logits)[row, target]; rows whose target equals
// ignore_id contribute nothing.
template <class T> Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, int ignore_id = -1);

}  // namespace ops

// Plain (graph-free) numerics shared by oracles and inference helpers.
template <class T>
void softmax_inplace(std::span<T> row);

}  // namespace bigen
