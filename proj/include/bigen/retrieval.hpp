#pragma once

// Attention-guided knowledge retrieval:
//   1. keep the ceil(M*k) patches with the highest layer-1 attention, restored to
//      spatial (row-major) order;
//   2. average consecutive runs of m selected retrieval embeddings into region
//      features (the last region may be partial);
//   3. for each region, average the v bank rows with the highest cosine
//      similarity.
// Retrieval is frozen: nothing here carries gradient.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bigen/error.hpp"
#include "bigen/knowledge_bank.hpp"

namespace bigen {

struct RetrievalConfig {
    double k = 0.4;  // selection ratio in (0, 1]
    int m = 20;      // region size
    int v = 3;       // neighbours per region

    void validate() const;
};

std::size_t selection_count(std::size_t patch_count, double k);

// Indices of the top ceil(M*k) scores in ascending index order. Ties keep the
// lower index.
std::vector<std::size_t> select_top_k(std::span<const double> attention, double k);

// rows x dim row-major input; returns ceil(rows/m) x dim region means.
std::vector<float> partition_regions(std::span<const float> embeddings, std::size_t dim, int m);

struct RegionRetrieval {
    std::vector<std::size_t> indices;  // bank rows, similarity non-increasing
    std::vector<double> similarities;
    std::vector<float> feature;        // mean of the selected rows
};

RegionRetrieval retrieve_region(std::span<const float> query, const KnowledgeBank& bank, int v);

struct RetrievedKnowledge {
    std::size_t dim = 0;
    std::vector<std::size_t> selected_patches;
    std::vector<float> region_features;  // regions x dim
    std::vector<float> features;         // R: regions x dim
    std::vector<RegionRetrieval> regions;

    std::size_t region_count() const noexcept { return regions.size(); }
};

// retrieval_embeddings is M x dim (row-major, spatial order).
RetrievedKnowledge retrieve_all(std::span<const float> retrieval_embeddings, std::size_t dim,
                                std::span<const double> attention, const KnowledgeBank& bank,
                                const RetrievalConfig& config);

// One JSON line per region: case id, region index, retrieved sentences and
// similarities.
void write_retrieval_debug(std::ostream& out, const std::string& case_id, const RetrievedKnowledge& rk,
                           const KnowledgeBank& bank);

}  // namespace bigen
