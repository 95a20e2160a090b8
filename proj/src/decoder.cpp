#include "bigen/decoder.hpp"

#include <cmath>

namespace bigen {

template <class T>
ReportDecoder<T>::ReportDecoder(ParamFactory<T>& f, int dim, int layers, int heads, int vocab_size)
    : dim_(dim), heads_(heads), vocab_(vocab_size) {
    if (dim < 1 || heads < 1 || dim % heads != 0) {
        throw UsageError("decoder width " + std::to_string(dim) + " must be a positive multiple of heads = " +
                         std::to_string(heads));
    }
    if (layers < 1) throw UsageError("decoder needs at least one layer");
    if (vocab_size < 5) throw UsageError("vocabulary must hold the special tokens and at least one word");
    const std::size_t d = dim;
    embedding_ = f.matrix("dec.embed", vocab_size, d);
    for (int l = 0; l < layers; ++l) {
        const std::string p = "dec" + std::to_string(l);
        layers_.push_back({make_attention(f, p + ".self", d, false), make_attention(f, p + ".cross", d, true),
                           make_feed_forward(f, p + ".ffn", d, 4 * d)});
    }
    final_norm_ = make_layer_norm(f, "dec.norm", d);
    out_w_ = f.matrix("dec.out.w", d, vocab_size);
    out_b_ = f.vector("dec.out.b", vocab_size, T(0));
}

template <class T>
Var<T> ReportDecoder<T>::forward(Graph<T>& g, Var<T> memory, std::span<const int> input_ids,
                                 std::vector<Tensor<T>>* cross_weights) const {
    const std::size_t n = input_ids.size();
    if (n == 0) throw DataError("decoder: empty target sequence");
    if (memory.cols() != static_cast<std::size_t>(dim_)) {
        throw DataError("decoder: memory width " + std::to_string(memory.cols()) + " vs model d " +
                        std::to_string(dim_));
    }
    const T emb_scale = std::sqrt(static_cast<T>(dim_));
    auto x = ops::add(ops::scale(ops::embedding(g.param(embedding_), input_ids), emb_scale),
                      g.constant(positional_encoding<T>(0, n, dim_)));
    std::vector<std::uint8_t> causal(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) causal[i * n + j] = 1;
    if (cross_weights) cross_weights->clear();
    for (const auto& layer : layers_) {
        x = attention_sublayer(g, layer.self_attn, x, Var<T>{}, heads_, &causal, nullptr);
        Tensor<T> w;
        x = attention_sublayer(g, layer.cross_attn, x, memory, heads_, nullptr, cross_weights ? &w : nullptr);
        if (cross_weights) cross_weights->push_back(std::move(w));
        x = feed_forward_sublayer(g, layer.ffn, x);
    }
    return linear(g, out_w_, out_b_, apply_norm(g, final_norm_, x));
}

template <class T>
DecoderState<T> ReportDecoder<T>::start(const Tensor<T>& memory) const {
    if (memory.cols() != static_cast<std::size_t>(dim_)) {
        throw DataError("decoder: memory width " + std::to_string(memory.cols()) + " vs model d " +
                        std::to_string(dim_));
    }
    Graph<T> g(false);
    auto mem = g.constant(memory);
    DecoderState<T> s;
    for (const auto& layer : layers_) {
        const auto& a = layer.cross_attn;
        auto mn = apply_norm(g, *a.norm_memory, mem);
        s.mem_k.push_back(linear(g, a.wk, a.bk, mn).value());
        s.mem_v.push_back(linear(g, a.wv, a.bv, mn).value());
    }
    s.self_k.resize(layers_.size());
    s.self_v.resize(layers_.size());
    return s;
}

namespace {

template <class T>
Tensor<T> append_row(const Tensor<T>& cache, const Tensor<T>& row) {
    if (cache.empty()) return Tensor<T>({1, row.cols()}, std::vector<T>(row.values().begin(), row.values().end()));
    std::vector<T> data(cache.values().begin(), cache.values().end());
    data.insert(data.end(), row.values().begin(), row.values().end());
    return Tensor<T>({cache.rows() + 1, cache.cols()}, std::move(data));
}

}  // namespace

template <class T>
std::vector<double> ReportDecoder<T>::step(DecoderState<T>& s, int token) const {
    if (token < 0 || token >= vocab_) throw DataError("decoder step: token id " + std::to_string(token) + " out of range");
    Graph<T> g(false);
    const T emb_scale = std::sqrt(static_cast<T>(dim_));
    const int ids[1] = {token};
    auto x = ops::add(ops::scale(ops::embedding(g.param(embedding_), std::span<const int>(ids)), emb_scale),
                      g.constant(positional_encoding<T>(s.position, 1, dim_)));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        {
            const auto& a = layer.self_attn;
            auto xn = apply_norm(g, a.norm_query, x);
            s.self_k[l] = append_row(s.self_k[l], linear(g, a.wk, a.bk, xn).value());
            s.self_v[l] = append_row(s.self_v[l], linear(g, a.wv, a.bv, xn).value());
            auto q = linear(g, a.wq, a.bq, xn);
            auto o = multihead(q, g.constant(s.self_k[l]), g.constant(s.self_v[l]), heads_, nullptr, nullptr);
            x = ops::add(x, linear(g, a.wo, a.bo, o));
        }
        {
            const auto& a = layer.cross_attn;
            auto q = linear(g, a.wq, a.bq, apply_norm(g, a.norm_query, x));
            auto o = multihead(q, g.constant(s.mem_k[l]), g.constant(s.mem_v[l]), heads_, nullptr, nullptr);
            x = ops::add(x, linear(g, a.wo, a.bo, o));
        }
        x = feed_forward_sublayer(g, layer.ffn, x);
    }
    const auto& logits = linear(g, out_w_, out_b_, apply_norm(g, final_norm_, x)).value();
    ++s.position;
    std::vector<double> lp(logits.values().begin(), logits.values().end());
    double mx = lp[0];
    for (double v : lp) mx = std::max(mx, v);
    double z = 0;
    for (double v : lp) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    for (double& v : lp) v -= lz;
    return lp;
}

template <class T>
Hypothesis ReportDecoder<T>::greedy(const Tensor<T>& memory, const DecodeLimits& limits) const {
    return greedy_search(start(memory), limits, [this](DecoderState<T>& s, int t) { return step(s, t); });
}

template <class T>
Hypothesis ReportDecoder<T>::beam(const Tensor<T>& memory, int beam_width, const DecodeLimits& limits) const {
    return beam_search(start(memory), beam_width, limits, [this](DecoderState<T>& s, int t) { return step(s, t); });
}

template class ReportDecoder<float>;
template class ReportDecoder<double>;

}  // namespace bigen
