#include "bigen/layers.hpp"

#include <cmath>

#include "bigen/rng.hpp"

namespace bigen {

template <class T>
ParamFactory<T>::ParamFactory(std::uint64_t seed) : rng_(make_rng({seed, std::uint64_t{0x1A17}})) {}

template <class T>
ParamPtr<T> ParamFactory<T>::add(std::string name, Tensor<T> value) {
    for (const auto& p : created_)
        if (p->name == name) throw DataError("duplicate parameter name '" + name + "'");
    auto p = std::make_shared<Parameter<T>>(std::move(name), std::move(value));
    created_.push_back(p);
    return p;
}

template <class T>
ParamPtr<T> ParamFactory<T>::matrix(const std::string& name, std::size_t rows, std::size_t cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> t = Tensor<T>::matrix(rows, cols);
    for (auto& v : t.values()) v = static_cast<T>(u(rng_));
    return add(name, std::move(t));
}

template <class T>
ParamPtr<T> ParamFactory<T>::vector(const std::string& name, std::size_t n, T fill) {
    return add(name, Tensor<T>({n}, fill));
}

template <class T>
ParamPtr<T> ParamFactory<T>::token(const std::string& name, std::size_t n) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(n));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> t = Tensor<T>::matrix(1, n);
    for (auto& v : t.values()) v = static_cast<T>(u(rng_));
    return add(name, std::move(t));
}

template <class T>
std::size_t CrossAttnParams<T>::numel() const {
    std::size_t n = 0;
    auto ln = [&](const LayerNormParams<T>& p) { n += p.gain->numel() + p.bias->numel(); };
    ln(attn.norm_query);
    if (attn.norm_memory) ln(*attn.norm_memory);
    for (const auto* p : {&attn.wq, &attn.bq, &attn.wk, &attn.bk, &attn.wv, &attn.bv, &attn.wo, &attn.bo})
        n += (*p)->numel();
    ln(ffn.norm);
    for (const auto* p : {&ffn.w1, &ffn.b1, &ffn.w2, &ffn.b2}) n += (*p)->numel();
    return n;
}

template <class T>
LayerNormParams<T> make_layer_norm(ParamFactory<T>& f, const std::string& name, std::size_t dim) {
    return {f.vector(name + ".gain", dim, T(1)), f.vector(name + ".bias", dim, T(0))};
}

template <class T>
AttentionParams<T> make_attention(ParamFactory<T>& f, const std::string& name, std::size_t dim, bool cross) {
    AttentionParams<T> p;
    p.norm_query = make_layer_norm(f, name + ".norm_q", dim);
    if (cross) p.norm_memory = make_layer_norm(f, name + ".norm_kv", dim);
    p.wq = f.matrix(name + ".wq", dim, dim);
    p.bq = f.vector(name + ".bq", dim, T(0));
    p.wk = f.matrix(name + ".wk", dim, dim);
    p.bk = f.vector(name + ".bk", dim, T(0));
    p.wv = f.matrix(name + ".wv", dim, dim);
    p.bv = f.vector(name + ".bv", dim, T(0));
    p.wo = f.matrix(name + ".wo", dim, dim);
    p.bo = f.vector(name + ".bo", dim, T(0));
    return p;
}

template <class T>
FeedForwardParams<T> make_feed_forward(ParamFactory<T>& f, const std::string& name, std::size_t dim,
                                       std::size_t hidden) {
    FeedForwardParams<T> p;
    p.norm = make_layer_norm(f, name + ".norm", dim);
    p.w1 = f.matrix(name + ".w1", dim, hidden);
    p.b1 = f.vector(name + ".b1", hidden, T(0));
    p.w2 = f.matrix(name + ".w2", hidden, dim);
    p.b2 = f.vector(name + ".b2", dim, T(0));
    return p;
}

template <class T>
std::shared_ptr<CrossAttnParams<T>> make_cross_attn(ParamFactory<T>& f, const std::string& name, std::size_t dim,
                                                    std::size_t hidden, bool cross) {
    auto p = std::make_shared<CrossAttnParams<T>>();
    p->attn = make_attention(f, name + ".attn", dim, cross);
    p->ffn = make_feed_forward(f, name + ".ffn", dim, hidden);
    return p;
}

template <class T>
Var<T> apply_norm(Graph<T>& g, const LayerNormParams<T>& p, Var<T> x) {
    return ops::layer_norm(x, g.param(p.gain), g.param(p.bias));
}

template <class T>
Var<T> linear(Graph<T>& g, const ParamPtr<T>& w, const ParamPtr<T>& b, Var<T> x) {
    return ops::add_bias(ops::matmul(x, g.param(w)), g.param(b));
}

template <class T>
Var<T> multihead(Var<T> q, Var<T> k, Var<T> v, int heads, const std::vector<std::uint8_t>* mask,
                 std::type_identity_t<Tensor<T>>* weights_out) {
    const std::size_t d = q.cols();
    if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) {
        throw UsageError("width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
        throw DataError("multihead: q " + shape_str(q.value().shape()) + ", k " + shape_str(k.value().shape()) +
                        ", v " + shape_str(v.value().shape()));
    }
    if (k.rows() == 0) throw DataError("multihead: no keys");
    const std::size_t dh = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    if (weights_out) *weights_out = Tensor<T>::matrix(q.rows(), k.rows());
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        auto qh = ops::slice_cols(q, h * dh, dh);
        auto kh = ops::slice_cols(k, h * dh, dh);
        auto vh = ops::slice_cols(v, h * dh, dh);
        auto scores = ops::scale(ops::matmul_bt(qh, kh), inv_sqrt);
        if (mask) scores = ops::masked_fill(scores, std::span<const std::uint8_t>(*mask), T(-1e9));
        auto w = ops::softmax(scores);
        if (weights_out) {
            const auto& wv = w.value();
            for (std::size_t i = 0; i < wv.numel(); ++i) (*weights_out)[i] += wv[i] / T(heads);
        }
        outs.push_back(ops::matmul(w, vh));
    }
    return heads == 1 ? outs[0] : ops::concat_cols<T>(outs);
}

template <class T>
Var<T> attention_sublayer(Graph<T>& g, const AttentionParams<T>& p, Var<T> x, Var<T> memory, int heads,
                          const std::vector<std::uint8_t>* mask, std::type_identity_t<Tensor<T>>* weights_out) {
    auto xn = apply_norm(g, p.norm_query, x);
    Var<T> mem = xn;
    if (memory.valid()) {
        if (!p.norm_memory) throw DataError("attention_sublayer: cross-attention without a memory norm");
        mem = apply_norm(g, *p.norm_memory, memory);
    }
    auto q = linear(g, p.wq, p.bq, xn);
    auto k = linear(g, p.wk, p.bk, mem);
    auto v = linear(g, p.wv, p.bv, mem);
    auto o = multihead(q, k, v, heads, mask, weights_out);
    return ops::add(x, linear(g, p.wo, p.bo, o));
}

template <class T>
Var<T> feed_forward_sublayer(Graph<T>& g, const FeedForwardParams<T>& p, Var<T> x) {
    auto h = ops::relu(linear(g, p.w1, p.b1, apply_norm(g, p.norm, x)));
    return ops::add(x, linear(g, p.w2, p.b2, h));
}

template <class T>
CrossAttnResult<T> cross_attn_layer(Graph<T>& g, const CrossAttnParams<T>& p, Var<T> query, Var<T> memory,
                                    int heads) {
    CrossAttnResult<T> r;
    auto x = attention_sublayer(g, p.attn, query, memory, heads, nullptr, &r.weights);
    r.out = feed_forward_sublayer(g, p.ffn, x);
    return r;
}

template <class T>
Tensor<T> positional_encoding(std::size_t start, std::size_t count, std::size_t dim) {
    Tensor<T> pe = Tensor<T>::matrix(count, dim);
    for (std::size_t i = 0; i < count; ++i) {
        const double pos = static_cast<double>(start + i);
        for (std::size_t j = 0; j < dim; ++j) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
            pe(i, j) = static_cast<T>(j % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
        }
    }
    return pe;
}

#define BIGEN_INSTANTIATE(T)                                                                                     \
    template class ParamFactory<T>;                                                                              \
    template struct CrossAttnParams<T>;                                                                          \
    template LayerNormParams<T> make_layer_norm<T>(ParamFactory<T>&, const std::string&, std::size_t);           \
    template AttentionParams<T> make_attention<T>(ParamFactory<T>&, const std::string&, std::size_t, bool);      \
    template FeedForwardParams<T> make_feed_forward<T>(ParamFactory<T>&, const std::string&, std::size_t,        \
                                                       std::size_t);                                             \
    template std::shared_ptr<CrossAttnParams<T>> make_cross_attn<T>(ParamFactory<T>&, const std::string&,        \
                                                                    std::size_t, std::size_t, bool);             \
    template Var<T> apply_norm<T>(Graph<T>&, const LayerNormParams<T>&, Var<T>);                                 \
    template Var<T> linear<T>(Graph<T>&, const ParamPtr<T>&, const ParamPtr<T>&, Var<T>);                        \
    template Var<T> multihead<T>(Var<T>, Var<T>, Var<T>, int, const std::vector<std::uint8_t>*, Tensor<T>*);     \
    template Var<T> attention_sublayer<T>(Graph<T>&, const AttentionParams<T>&, Var<T>, Var<T>, int,             \
                                          const std::vector<std::uint8_t>*, Tensor<T>*);                         \
    template Var<T> feed_forward_sublayer<T>(Graph<T>&, const FeedForwardParams<T>&, Var<T>);                    \
    template CrossAttnResult<T> cross_attn_layer<T>(Graph<T>&, const CrossAttnParams<T>&, Var<T>, Var<T>, int);  \
    template Tensor<T> positional_encoding<T>(std::size_t, std::size_t, std::size_t);

BIGEN_INSTANTIATE(float)
BIGEN_INSTANTIATE(double)

#undef BIGEN_INSTANTIATE

}  // namespace bigen
