#pragma once

// Transformer building blocks shared by the encoder branches and the decoder.
// Every attention sublayer is pre-norm: x + Wo * MHA(LN(x), LN(memory)).

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "bigen/graph.hpp"

namespace bigen {

// Creates parameters and records them in creation order. Matrices are drawn
// uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases start at zero and
// layer-norm gains at one.
template <class T>
class ParamFactory {
   public:
    explicit ParamFactory(std::uint64_t seed);

    ParamPtr<T> matrix(const std::string& name, std::size_t rows, std::size_t cols);
    ParamPtr<T> vector(const std::string& name, std::size_t n, T fill);
    // Uniform [-1/sqrt(n), 1/sqrt(n)] row vector, used for learnable tokens.
    ParamPtr<T> token(const std::string& name, std::size_t n);

    const std::vector<ParamPtr<T>>& created() const noexcept { return created_; }

   private:
    ParamPtr<T> add(std::string name, Tensor<T> value);

    std::mt19937_64 rng_;
    std::vector<ParamPtr<T>> created_;
};

template <class T>
struct LayerNormParams {
    ParamPtr<T> gain, bias;
};

template <class T>
struct AttentionParams {
    LayerNormParams<T> norm_query;
    std::optional<LayerNormParams<T>> norm_memory;  // absent for self-attention
    ParamPtr<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class T>
struct FeedForwardParams {
    LayerNormParams<T> norm;
    ParamPtr<T> w1, b1, w2, b2;
};

// One cross-attention layer: attention sublayer followed by feed-forward.
template <class T>
struct CrossAttnParams {
    AttentionParams<T> attn;
    FeedForwardParams<T> ffn;

    std::size_t numel() const;
};

template <class T>
LayerNormParams<T> make_layer_norm(ParamFactory<T>& f, const std::string& name, std::size_t dim);
template <class T>
AttentionParams<T> make_attention(ParamFactory<T>& f, const std::string& name, std::size_t dim, bool cross);
template <class T>
FeedForwardParams<T> make_feed_forward(ParamFactory<T>& f, const std::string& name, std::size_t dim,
                                       std::size_t hidden);
template <class T>
std::shared_ptr<CrossAttnParams<T>> make_cross_attn(ParamFactory<T>& f, const std::string& name, std::size_t dim,
                                                    std::size_t hidden, bool cross);

template <class T>
Var<T> apply_norm(Graph<T>& g, const LayerNormParams<T>& p, Var<T> x);
template <class T>
Var<T> linear(Graph<T>& g, const ParamPtr<T>& w, const ParamPtr<T>& b, Var<T> x);

// Scaled dot-product attention over `heads` column blocks of already projected
// q (nq x d), k and v (nk x d). mask (nq x nk, nonzero = blocked) may be null.
// When weights_out is given it receives the head-averaged nq x nk weights.
template <class T>
Var<T> multihead(Var<T> q, Var<T> k, Var<T> v, int heads, const std::vector<std::uint8_t>* mask,
                 std::type_identity_t<Tensor<T>>* weights_out);

// x + attention(LN(x), LN(memory)). An invalid memory Var means self-attention
// over LN(x).
template <class T>
Var<T> attention_sublayer(Graph<T>& g, const AttentionParams<T>& p, Var<T> x, Var<T> memory, int heads,
                          const std::vector<std::uint8_t>* mask, std::type_identity_t<Tensor<T>>* weights_out);

// x + W2 relu(W1 LN(x) + b1) + b2
template <class T>
Var<T> feed_forward_sublayer(Graph<T>& g, const FeedForwardParams<T>& p, Var<T> x);

template <class T>
struct CrossAttnResult {
    Var<T> out;
    Tensor<T> weights;  // head-averaged, nq x nk
};

template <class T>
CrossAttnResult<T> cross_attn_layer(Graph<T>& g, const CrossAttnParams<T>& p, Var<T> query, Var<T> memory,
                                    int heads);

// Sinusoidal position table, positions [start, start + count).
template <class T>
Tensor<T> positional_encoding(std::size_t start, std::size_t count, std::size_t dim);

}  // namespace bigen
