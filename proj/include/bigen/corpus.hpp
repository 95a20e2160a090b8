#pragma once

// Synthetic paired (patch features, report) corpus in a shared latent space.
//
// Every tissue type owns a unit prototype vector. A patch's visual feature and
// its retrieval embedding are two independent noisy views of its tissue
// prototype, and the text embedder maps each report sentence to a noisy view of
// the prototype of the tissue it describes. Image-text alignment therefore holds
// by construction.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bigen {

enum class Her2Influence { kPositive, kNegative, kNone };

struct TissuePrototype {
    int tissue_id = 0;
    std::string name;
    std::vector<float> prototype;        // unit norm, width dim
    std::vector<std::string> templates;  // report sentences describing this tissue
    std::vector<std::string> entities;   // clinical terms used by fact_ent
    Her2Influence her2 = Her2Influence::kNone;
};

// Latent space shared by the corpus and the sentence embedder.
struct TissueAtlas {
    std::uint64_t seed = 0;
    int dim = 0;
    std::vector<TissuePrototype> tissues;
    std::vector<float> her2_positive;  // embedding base of "her-2 status: positive."
    std::vector<float> her2_negative;

    static TissueAtlas make(std::uint64_t seed, int tissue_count, int dim);

    // Entity dictionary: tissue terms plus "her-2".
    std::vector<std::string> entity_dictionary() const;
};

std::string her2_sentence(bool positive);

// Maximum number of built-in tissue types.
int max_tissue_types();

struct CorpusConfig {
    std::uint64_t seed = 1;
    int n_cases = 977;
    int tissue_count = 8;
    int patches_min = 64;
    int patches_max = 256;
    int dim = 512;
    int max_cases_per_patient = 1;
    int min_tissues_per_case = 2;
    int max_tissues_per_case = 4;
    // Probability that a patch copies a left/up neighbour's tissue instead of
    // sampling from the case mixture.
    double neighbor_bias = 0.6;
    // Tissues covering at least this fraction of a slide are mentioned.
    double mention_threshold = 0.1;
    // Expected L2 norm of the noise added to unit prototypes.
    double visual_noise = 1.0;
    double retrieval_noise = 0.5;
    double text_noise = 0.6;

    void validate() const;
};

struct Case {
    std::string case_id;
    std::string patient_id;
    int grid_rows = 0;
    int grid_cols = 0;
    int dim = 0;
    std::vector<int> tissue_ids;   // per patch, row-major grid order
    std::vector<float> visual;     // M x dim, model input X
    std::vector<float> retrieval;  // M x dim, retrieval embeddings
    std::string report;

    std::size_t patch_count() const noexcept { return tissue_ids.size(); }
    // Fraction of patches per tissue id (length = tissue count of the atlas).
    std::vector<double> tissue_fractions(int tissue_count) const;
};

struct Corpus {
    CorpusConfig config;
    TissueAtlas atlas;
    std::vector<Case> cases;

    const Case& find(const std::string& case_id) const;
};

Corpus generate_corpus(const CorpusConfig& config);

// Tissues mentioned in a report for the given composition, in tissue-id order.
std::vector<int> mentioned_tissues(const std::vector<double>& fractions, double threshold);
bool her2_positive_for(const std::vector<double>& fractions, const TissueAtlas& atlas);

struct Splits {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    const std::vector<std::string>& get(const std::string& name) const;
};

// Patient-disjoint split, sizes proportional to 796:88:93. Depends only on the
// set of cases and the seed, not on input order.
Splits split_dataset(const std::vector<Case>& cases, std::uint64_t seed);

std::vector<const Case*> select_cases(const Corpus& corpus, const std::vector<std::string>& ids);

// Line-delimited JSON: one atlas header record, then one record per case.
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& path);

void save_splits(const std::filesystem::path& path, const Splits& splits);
Splits load_splits(const std::filesystem::path& path);

}  // namespace bigen
