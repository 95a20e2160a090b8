#pragma once

// Bi-modal encoder. A learnable visual token V attends over projected patch
// features for L layers; after the first layer its attention selects patches
// for knowledge retrieval, and a learnable textual token T attends over the
// projected retrieved knowledge for L-1 layers, running alongside VTCA layers
// 2..L. With every token branch disabled the encoder falls back to plain
// self-attention over all patches.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bigen/knowledge_bank.hpp"
#include "bigen/layers.hpp"
#include "bigen/retrieval.hpp"

namespace bigen {

struct EncoderConfig {
    int layers = 3;
    int heads = 4;
    bool ws = true;   // TTCA layer l reuses VTCA layer l
    bool wsl = true;  // one parameter set for all layers of a branch
    bool vtca = true;
    bool kr = true;
    bool ttca = true;

    void validate(int dim) const;

    // Flag rows of the component ablation, 1 = vanilla self-attention, 6 = full.
    static EncoderConfig ablation_row(int row);
    std::string flags_string() const;

    bool operator==(const EncoderConfig&) const = default;
};

inline constexpr int kAblationRows = 6;

// Borrowed view of one case's inputs.
struct CaseInput {
    std::span<const float> visual;     // M x input_dim
    std::span<const float> retrieval;  // M x bank_dim
    std::size_t patches = 0;
};

CaseInput case_input(const Case& c);

template <class T>
struct EncoderOutput {
    Var<T> memory;                   // decoder memory F
    Var<T> visual_token;             // V_L (1 x d), invalid for the baseline
    Var<T> textual_token;            // T_{L-1} (1 x d), when TTCA ran
    std::vector<double> layer1_attention;                 // length M, sums to 1
    std::vector<std::vector<double>> visual_attention;    // per VTCA layer
    std::vector<std::vector<double>> textual_attention;   // per TTCA layer
    std::optional<RetrievedKnowledge> knowledge;
    int vtca_applications = 0;
    int ttca_applications = 0;
};

template <class T>
class BiModalEncoder {
   public:
    BiModalEncoder(ParamFactory<T>& factory, const EncoderConfig& config, int dim, int input_dim, int bank_dim);

    // bank may be null when KR is off.
    EncoderOutput<T> encode(Graph<T>& g, const CaseInput& in, const KnowledgeBank* bank,
                            const RetrievalConfig& retrieval) const;

    const EncoderConfig& config() const noexcept { return config_; }
    int dim() const noexcept { return dim_; }

    // Distinct cross-attention layer sets used by the two token branches.
    std::vector<std::shared_ptr<CrossAttnParams<T>>> branch_layer_sets() const;
    // Parameters inside those sets, each counted once.
    std::size_t branch_parameter_count() const;

    const std::vector<std::shared_ptr<CrossAttnParams<T>>>& visual_layers() const noexcept { return visual_; }
    const std::vector<std::shared_ptr<CrossAttnParams<T>>>& textual_layers() const noexcept { return textual_; }

   private:
    EncoderOutput<T> encode_baseline(Graph<T>& g, Var<T> x) const;

    EncoderConfig config_;
    int dim_, input_dim_, bank_dim_;
    ParamPtr<T> patch_w_, patch_b_;
    ParamPtr<T> know_w_, know_b_;
    ParamPtr<T> visual_token_, textual_token_;
    std::vector<std::shared_ptr<CrossAttnParams<T>>> visual_;
    std::vector<std::shared_ptr<CrossAttnParams<T>>> textual_;
    std::vector<std::shared_ptr<CrossAttnParams<T>>> self_;
};

// Attention over the case grid as an 8-bit binary PGM. Values are min-max
// scaled to 0..255; grid cells past the last patch are written as 0.
void write_heatmap_pgm(const std::filesystem::path& path, std::span<const double> attention, int grid_rows,
                       int grid_cols);

}  // namespace bigen
