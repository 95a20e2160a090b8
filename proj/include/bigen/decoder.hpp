#pragma once

// Report decoder: token embedding plus sinusoidal positions, then per layer
// masked self-attention, cross-attention to the encoder memory and a
// feed-forward block, all pre-norm. Two execution paths share the weights:
// a parallel teacher-forced pass on a recording graph, and an incremental
// one-token step with cached keys and values used for generation.

#include <optional>
#include <span>
#include <vector>

#include "bigen/beam_search.hpp"
#include "bigen/layers.hpp"

namespace bigen {

template <class T>
struct DecoderLayerParams {
    AttentionParams<T> self_attn;
    AttentionParams<T> cross_attn;
    FeedForwardParams<T> ffn;
};

// Cached per-layer projections for incremental decoding.
template <class T>
struct DecoderState {
    std::vector<Tensor<T>> self_k, self_v;  // rows = tokens fed so far
    std::vector<Tensor<T>> mem_k, mem_v;    // projected memory
    std::size_t position = 0;
};

template <class T>
class ReportDecoder {
   public:
    ReportDecoder(ParamFactory<T>& factory, int dim, int layers, int heads, int vocab_size);

    // logits (N x vocab) for input ids (BOS first). Position n attends to
    // positions <= n only. cross_weights, when given, receives per layer the
    // head-averaged N x memory_rows cross-attention weights.
    Var<T> forward(Graph<T>& g, Var<T> memory, std::span<const int> input_ids,
                   std::vector<Tensor<T>>* cross_weights = nullptr) const;

    DecoderState<T> start(const Tensor<T>& memory) const;
    // Feeds one token and returns log-probabilities of the next one.
    std::vector<double> step(DecoderState<T>& state, int token) const;

    Hypothesis greedy(const Tensor<T>& memory, const DecodeLimits& limits) const;
    Hypothesis beam(const Tensor<T>& memory, int beam_width, const DecodeLimits& limits) const;

    int vocab_size() const noexcept { return vocab_; }
    int layers() const noexcept { return static_cast<int>(layers_.size()); }

   private:
    int dim_, heads_, vocab_;
    ParamPtr<T> embedding_;
    std::vector<DecoderLayerParams<T>> layers_;
    LayerNormParams<T> final_norm_;
    ParamPtr<T> out_w_, out_b_;
};

}  // namespace bigen
