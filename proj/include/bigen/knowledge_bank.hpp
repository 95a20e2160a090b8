#pragma once

// Sentence-level knowledge bank built from training reports.
//
// Bank file layout (little-endian):
//   "BGKB"  u16 version  u32 d  u32 T
//   T records of: d x f32 embedding, u32 text length, UTF-8 text
// Provenance (corpus fingerprint, split) lives in a JSON sidecar next to the
// bank file, "<bank>.provenance.json".

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bigen/corpus.hpp"

namespace bigen {

inline constexpr std::uint16_t kBankVersion = 1;

// Splits on '.', ';' and newlines. A '.' or ';' only terminates when followed by
// whitespace or the end of text, so decimals and codes such as "m-8500/3" or
// "1.5" never split. Sentences are trimmed; empty ones are dropped.
std::vector<std::string> split_sentences(std::string_view report);

// Stand-in for a pretrained text encoder, living in the corpus latent space.
// Template sentences map to a noisy view of their tissue prototype, the Her-2
// status sentences to their own directions, anything else to a hash-seeded
// random direction. Outputs are unit norm and deterministic.
class SentenceEmbedder {
   public:
    SentenceEmbedder(TissueAtlas atlas, double text_noise);
    explicit SentenceEmbedder(const Corpus& corpus) : SentenceEmbedder(corpus.atlas, corpus.config.text_noise) {}

    int dim() const noexcept { return atlas_.dim; }
    std::vector<float> embed(std::string_view sentence) const;
    // Tissue id behind a template sentence; nullopt for anything else.
    std::optional<int> source_tissue(std::string_view sentence) const;
    const TissueAtlas& atlas() const noexcept { return atlas_; }

   private:
    TissueAtlas atlas_;
    double text_noise_;
    std::unordered_map<std::string, int> template_tissue_;
};

struct BankProvenance {
    std::string corpus_fingerprint;
    std::string split;

    bool operator==(const BankProvenance&) const = default;
};

class KnowledgeBank {
   public:
    KnowledgeBank() = default;
    KnowledgeBank(int dim, std::vector<float> embeddings, std::vector<std::string> sentences,
                  BankProvenance provenance);

    int dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return sentences_.size(); }
    bool empty() const noexcept { return sentences_.empty(); }
    std::span<const float> row(std::size_t i) const { return {embeddings_.data() + i * dim_, std::size_t(dim_)}; }
    const std::vector<float>& embeddings() const noexcept { return embeddings_; }
    const std::vector<std::string>& sentences() const noexcept { return sentences_; }
    const BankProvenance& provenance() const noexcept { return provenance_; }

    bool operator==(const KnowledgeBank&) const = default;

   private:
    int dim_ = 0;
    std::vector<float> embeddings_;
    std::vector<std::string> sentences_;
    BankProvenance provenance_;
};

// Stable fingerprint over case ids, reports and features.
std::string corpus_fingerprint(const Corpus& corpus);

// Builds from the named split; only "train" is accepted.
KnowledgeBank build_bank(const Corpus& corpus, const Splits& splits, const std::string& split,
                         const SentenceEmbedder& embedder);
// Lower-level entry used by the above; throws on an empty case list.
KnowledgeBank build_bank(const std::vector<const Case*>& train_cases, const SentenceEmbedder& embedder,
                         BankProvenance provenance);

// Throws unless the bank was built from the training split of this corpus.
void require_training_provenance(const KnowledgeBank& bank, const Corpus& corpus);

std::vector<char> encode_bank(const KnowledgeBank& bank);
KnowledgeBank decode_bank(const std::vector<char>& bytes, std::optional<int> expected_dim = std::nullopt);

void save_bank(const std::filesystem::path& path, const KnowledgeBank& bank);
KnowledgeBank load_bank(const std::filesystem::path& path, std::optional<int> expected_dim = std::nullopt);

}  // namespace bigen
