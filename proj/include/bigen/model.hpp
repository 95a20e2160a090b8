#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bigen/checkpoint.hpp"
#include "bigen/decoder.hpp"
#include "bigen/encoder.hpp"

namespace bigen {

struct ModelConfig {
    int dim = 512;
    int input_dim = 512;  // patch feature width
    int bank_dim = 512;   // retrieval embedding / bank width
    int vocab_size = 0;
    int decoder_layers = 3;
    int max_len = 80;
    std::uint64_t seed = 1;
    EncoderConfig encoder;
    RetrievalConfig retrieval;

    void validate() const;

    // Flat "key = value" lines, one per field.
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static ModelConfig load(const std::filesystem::path& path);

    bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct ModelForward {
    EncoderOutput<T> encoded;
    Var<T> logits;  // (N-1) x vocab
    Var<T> loss;    // summed NLL over target tokens
};

template <class T>
class BiGenModel {
   public:
    explicit BiGenModel(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    const BiModalEncoder<T>& encoder() const noexcept { return *encoder_; }
    const ReportDecoder<T>& decoder() const noexcept { return *decoder_; }

    // Every trainable parameter, each listed once.
    const std::vector<ParamPtr<T>>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const;

    // ids = BOS ... EOS. Teacher-forced logits for ids[0..N-2] scored against ids[1..N-1].
    ModelForward<T> forward(Graph<T>& g, const CaseInput& in, const KnowledgeBank* bank,
                            std::span<const int> ids) const;

    // beam == 1 runs greedy decoding.
    Hypothesis generate(const CaseInput& in, const KnowledgeBank* bank, int beam) const;
    DecodeLimits limits() const;

    std::vector<NamedTensor> state() const;
    void load_state(const std::vector<NamedTensor>& entries);

   private:
    ModelConfig config_;
    std::unique_ptr<ParamFactory<T>> factory_;
    std::unique_ptr<BiModalEncoder<T>> encoder_;
    std::unique_ptr<ReportDecoder<T>> decoder_;
    std::vector<ParamPtr<T>> params_;
};

}  // namespace bigen
