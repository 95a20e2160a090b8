#include "bigen/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

namespace bigen {

void RetrievalConfig::validate() const {
    if (!(k > 0.0 && k <= 1.0)) throw UsageError("retrieval k must be in (0, 1], got " + std::to_string(k));
    if (m < 1) throw UsageError("retrieval region size m must be >= 1, got " + std::to_string(m));
    if (v < 1) throw UsageError("retrieval v must be >= 1, got " + std::to_string(v));
}

std::size_t selection_count(std::size_t patch_count, double k) {
    // The tolerance keeps products like 10 * 0.4 = 4.000000000000001 at 4.
    const double raw = static_cast<double>(patch_count) * k;
    const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::clamp<std::size_t>(n, 1, patch_count);
}

std::vector<std::size_t> select_top_k(std::span<const double> attention, double k) {
    if (attention.empty()) throw DataError("select_top_k: no patches (M = 0)");
    if (!(k > 0.0 && k <= 1.0)) throw UsageError("select_top_k: k must be in (0, 1], got " + std::to_string(k));
    const double total = std::accumulate(attention.begin(), attention.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-5) {
        throw DataError("select_top_k: attention sums to " + std::to_string(total) + ", expected 1");
    }
    const std::size_t n = selection_count(attention.size(), k);
    std::vector<std::size_t> idx(attention.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + n, idx.end(), [&](std::size_t a, std::size_t b) {
        return attention[a] != attention[b] ? attention[a] > attention[b] : a < b;
    });
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<float> partition_regions(std::span<const float> embeddings, std::size_t dim, int m) {
    if (m < 1) throw UsageError("partition_regions: region size m must be >= 1, got " + std::to_string(m));
    if (dim == 0 || embeddings.empty() || embeddings.size() % dim != 0) {
        throw DataError("partition_regions: need at least one embedding row of width " + std::to_string(dim));
    }
    const std::size_t rows = embeddings.size() / dim;
    const std::size_t size = static_cast<std::size_t>(m);
    const std::size_t regions = (rows + size - 1) / size;
    std::vector<float> out(regions * dim);
    std::vector<double> acc(dim);
    for (std::size_t r = 0; r < regions; ++r) {
        const std::size_t begin = r * size, end = std::min(rows, begin + size);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = begin; i < end; ++i)
            for (std::size_t j = 0; j < dim; ++j) acc[j] += embeddings[i * dim + j];
        for (std::size_t j = 0; j < dim; ++j) out[r * dim + j] = static_cast<float>(acc[j] / double(end - begin));
    }
    return out;
}

RegionRetrieval retrieve_region(std::span<const float> query, const KnowledgeBank& bank, int v) {
    if (bank.empty()) throw DataError("retrieve_region: knowledge bank is empty");
    if (v < 1 || static_cast<std::size_t>(v) > bank.size()) {
        throw UsageError("retrieve_region: v = " + std::to_string(v) + " outside [1, T = " +
                         std::to_string(bank.size()) + "]");
    }
    const std::size_t d = bank.dim();
    if (query.size() != d) {
        throw DataError("retrieve_region: query width " + std::to_string(query.size()) + " vs bank d " +
                        std::to_string(d));
    }
    double qn = 0;
    for (float x : query) qn += double(x) * x;
    qn = std::sqrt(qn);

    // Bank rows are unit norm, so cosine = dot / |q|.
    std::vector<double> sims(bank.size(), 0.0);
    if (qn > 0) {
        for (std::size_t t = 0; t < bank.size(); ++t) {
            const auto row = bank.row(t);
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += double(query[j]) * row[j];
            sims[t] = dot / qn;
        }
    }
    std::vector<std::size_t> idx(bank.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + v, idx.end(), [&](std::size_t a, std::size_t b) {
        return sims[a] != sims[b] ? sims[a] > sims[b] : a < b;
    });
    idx.resize(v);

    RegionRetrieval out;
    std::vector<double> acc(d, 0.0);
    for (auto t : idx) {
        out.indices.push_back(t);
        out.similarities.push_back(sims[t]);
        const auto row = bank.row(t);
        for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
    }
    out.feature.resize(d);
    for (std::size_t j = 0; j < d; ++j) out.feature[j] = static_cast<float>(acc[j] / v);
    return out;
}

RetrievedKnowledge retrieve_all(std::span<const float> retrieval_embeddings, std::size_t dim,
                                std::span<const double> attention, const KnowledgeBank& bank,
                                const RetrievalConfig& config) {
    config.validate();
    if (dim != static_cast<std::size_t>(bank.dim())) {
        throw DataError("retrieve_all: retrieval embedding width " + std::to_string(dim) + " vs bank d " +
                        std::to_string(bank.dim()));
    }
    if (retrieval_embeddings.size() != attention.size() * dim) {
        throw DataError("retrieve_all: " + std::to_string(attention.size()) + " attention weights for " +
                        std::to_string(retrieval_embeddings.size() / std::max<std::size_t>(dim, 1)) + " patches");
    }
    RetrievedKnowledge rk;
    rk.dim = dim;
    rk.selected_patches = select_top_k(attention, config.k);
    std::vector<float> selected;
    selected.reserve(rk.selected_patches.size() * dim);
    for (auto p : rk.selected_patches) {
        selected.insert(selected.end(), retrieval_embeddings.begin() + p * dim,
                        retrieval_embeddings.begin() + (p + 1) * dim);
    }
    rk.region_features = partition_regions(selected, dim, config.m);
    const std::size_t regions = rk.region_features.size() / dim;
    for (std::size_t r = 0; r < regions; ++r) {
        auto hit = retrieve_region(std::span<const float>(rk.region_features).subspan(r * dim, dim), bank, config.v);
        rk.features.insert(rk.features.end(), hit.feature.begin(), hit.feature.end());
        rk.regions.push_back(std::move(hit));
    }
    return rk;
}

void write_retrieval_debug(std::ostream& out, const std::string& case_id, const RetrievedKnowledge& rk,
                           const KnowledgeBank& bank) {
    for (std::size_t r = 0; r < rk.regions.size(); ++r) {
        const auto& hit = rk.regions[r];
        std::vector<std::string> texts;
        for (auto i : hit.indices) texts.push_back(bank.sentences()[i]);
        out << nlohmann::json{{"case_id", case_id},
                              {"region", r},
                              {"bank_indices", hit.indices},
                              {"sentences", texts},
                              {"similarities", hit.similarities}}
                   .dump()
            << '\n';
    }
}

}  // namespace bigen
