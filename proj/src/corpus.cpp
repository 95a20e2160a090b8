#include "bigen/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <limits>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "bigen/error.hpp"
#include "bigen/rng.hpp"

namespace bigen {

using nlohmann::json;

namespace {

struct TissueSpec {
    const char* name;
    Her2Influence her2;
    std::vector<std::string> templates;
    std::vector<std::string> entities;
};

const std::vector<TissueSpec>& tissue_catalog() {
    static const std::vector<TissueSpec> catalog = {
        {"tumor",
         Her2Influence::kPositive,
         {"invasive ductal carcinoma is present, m-8500/3.", "primary invasive carcinoma of the breast is identified.",
          "tumor cells form irregular nests and cords."},
         {"invasive ductal carcinoma", "invasive carcinoma", "m-8500/3", "nests"}},
        {"stroma",
         Her2Influence::kNone,
         {"desmoplastic stroma with reactive fibroblasts is seen.", "the stroma shows dense fibrosis."},
         {"stroma", "fibroblasts", "fibrosis"}},
        {"lymphocytes",
         Her2Influence::kNegative,
         {"a dense lymphocytic infiltrate is noted.", "tumor infiltrating lymphocytes are prominent."},
         {"lymphocytic", "lymphocytes"}},
        {"adipose",
         Her2Influence::kNone,
         {"mature adipose tissue is identified.", "fatty breast tissue is present."},
         {"adipose", "fatty"}},
        {"necrosis",
         Her2Influence::kPositive,
         {"foci of tumor necrosis are present.", "comedo necrosis is identified."},
         {"necrosis"}},
        {"dcis",
         Her2Influence::kPositive,
         {"ductal carcinoma in situ is present, m-8500/2.", "high grade ductal carcinoma in situ is noted."},
         {"carcinoma in situ", "m-8500/2"}},
        {"benign_ducts",
         Her2Influence::kNegative,
         {"benign breast ducts and lobules are seen.", "normal terminal duct lobular units are present."},
         {"ducts", "lobules", "lobular units"}},
        {"vessels",
         Her2Influence::kNone,
         {"blood vessels are unremarkable.", "lymphovascular invasion is not identified."},
         {"vessels", "lymphovascular"}},
        {"mucin",
         Her2Influence::kNone,
         {"extracellular mucin pools are present, m-8480/3.", "mucinous features are seen."},
         {"mucin", "m-8480/3", "mucinous"}},
        {"calcification",
         Her2Influence::kNone,
         {"microcalcifications are identified.", "calcifications are associated with the ducts."},
         {"microcalcifications", "calcifications"}},
        {"lobular_carcinoma",
         Her2Influence::kNegative,
         {"invasive lobular carcinoma is present, m-8520/3.", "discohesive tumor cells in single files are seen."},
         {"invasive lobular carcinoma", "discohesive", "m-8520/3"}},
        {"skin",
         Her2Influence::kNone,
         {"the overlying skin is unremarkable.", "skin with dermal appendages is present."},
         {"skin", "dermal"}},
    };
    return catalog;
}

std::vector<float> unit_gaussian(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0;
    do {
        norm = 0;
        for (auto& x : v) {
            x = nd(rng);
            norm += x * x;
        }
    } while (norm == 0);
    norm = std::sqrt(norm);
    std::vector<float> out(dim);
    for (int i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    return dot / std::sqrt(na * nb);
}

// Prototypes with pairwise cosine < 0.5: Gram-Schmidt while the count fits in
// the dimension, rejection sampling beyond that.
std::vector<std::vector<float>> make_prototypes(std::mt19937_64& rng, int count, int dim) {
    std::vector<std::vector<float>> out;
    for (int t = 0; t < count; ++t) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            std::vector<float> v = unit_gaussian(rng, dim);
            if (t < dim) {
                std::vector<double> w(v.begin(), v.end());
                for (const auto& u : out) {
                    double dot = 0;
                    for (int i = 0; i < dim; ++i) dot += w[i] * u[i];
                    for (int i = 0; i < dim; ++i) w[i] -= dot * u[i];
                }
                double n = 0;
                for (double x : w) n += x * x;
                n = std::sqrt(n);
                if (n < 1e-6) continue;
                for (int i = 0; i < dim; ++i) v[i] = static_cast<float>(w[i] / n);
            }
            placed = std::all_of(out.begin(), out.end(), [&](const auto& u) { return cosine(u, v) < 0.5; });
            if (placed) out.push_back(std::move(v));
        }
        if (!placed) {
            throw UsageError("cannot place " + std::to_string(count) + " distinguishable prototypes in dim " +
                             std::to_string(dim));
        }
    }
    return out;
}

void add_noise(std::mt19937_64& rng, const std::vector<float>& base, double noise_norm, float* out) {
    const std::size_t d = base.size();
    std::normal_distribution<double> nd(0.0, noise_norm / std::sqrt(static_cast<double>(d)));
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(base[i] + nd(rng));
}

const char* her2_name(Her2Influence h) {
    switch (h) {
        case Her2Influence::kPositive:
            return "positive";
        case Her2Influence::kNegative:
            return "negative";
        case Her2Influence::kNone:
            break;
    }
    return "none";
}

Her2Influence parse_her2(const std::string& s) {
    if (s == "positive") return Her2Influence::kPositive;
    if (s == "negative") return Her2Influence::kNegative;
    if (s == "none") return Her2Influence::kNone;
    throw DataError("corpus: invalid field 'her2' value '" + s + "'");
}

}  // namespace

int max_tissue_types() { return static_cast<int>(tissue_catalog().size()); }

std::string her2_sentence(bool positive) {
    return positive ? "her-2 status: positive." : "her-2 status: negative.";
}

TissueAtlas TissueAtlas::make(std::uint64_t seed, int tissue_count, int dim) {
    if (tissue_count < 1) throw UsageError("tissue_count must be >= 1, got " + std::to_string(tissue_count));
    if (tissue_count > max_tissue_types()) {
        throw UsageError("tissue_count must be <= " + std::to_string(max_tissue_types()));
    }
    if (dim < 4) throw UsageError("dim must be >= 4, got " + std::to_string(dim));
    auto rng = make_rng({seed, std::uint64_t{0xA71A5}});
    TissueAtlas atlas;
    atlas.seed = seed;
    atlas.dim = dim;
    auto protos = make_prototypes(rng, tissue_count, dim);
    for (int t = 0; t < tissue_count; ++t) {
        const auto& spec = tissue_catalog()[t];
        atlas.tissues.push_back({t, spec.name, std::move(protos[t]), spec.templates, spec.entities, spec.her2});
    }
    atlas.her2_positive = unit_gaussian(rng, dim);
    atlas.her2_negative = unit_gaussian(rng, dim);
    return atlas;
}

std::vector<std::string> TissueAtlas::entity_dictionary() const {
    std::set<std::string> terms{"her-2"};
    for (const auto& t : tissues) terms.insert(t.entities.begin(), t.entities.end());
    return {terms.begin(), terms.end()};
}

void CorpusConfig::validate() const {
    if (n_cases < 1) throw UsageError("n_cases must be >= 1");
    if (tissue_count < 1) throw UsageError("degenerate corpus config: tissue_count must be >= 1");
    if (dim < 4) throw UsageError("dim must be >= 4");
    if (patches_min < 1 || patches_max < patches_min) throw UsageError("invalid patches range");
    if (max_cases_per_patient < 1) throw UsageError("max_cases_per_patient must be >= 1");
    if (min_tissues_per_case < 1 || max_tissues_per_case < min_tissues_per_case) {
        throw UsageError("invalid tissues-per-case range");
    }
    if (neighbor_bias < 0 || neighbor_bias >= 1) throw UsageError("neighbor_bias must be in [0,1)");
    if (mention_threshold <= 0 || mention_threshold > 1) throw UsageError("mention_threshold must be in (0,1]");
    if (visual_noise < 0 || retrieval_noise < 0 || text_noise < 0) throw UsageError("noise levels must be >= 0");
}

std::vector<double> Case::tissue_fractions(int tissue_count) const {
    std::vector<double> f(tissue_count, 0.0);
    for (int t : tissue_ids) f.at(t) += 1.0;
    for (auto& x : f) x /= static_cast<double>(tissue_ids.size());
    return f;
}

std::vector<int> mentioned_tissues(const std::vector<double>& fractions, double threshold) {
    std::vector<int> out;
    for (std::size_t t = 0; t < fractions.size(); ++t)
        if (fractions[t] >= threshold) out.push_back(static_cast<int>(t));
    if (out.empty()) {
        out.push_back(static_cast<int>(std::max_element(fractions.begin(), fractions.end()) - fractions.begin()));
    }
    return out;
}

bool her2_positive_for(const std::vector<double>& fractions, const TissueAtlas& atlas) {
    double pos = 0, neg = 0;
    for (const auto& t : atlas.tissues) {
        if (t.her2 == Her2Influence::kPositive) pos += fractions[t.tissue_id];
        if (t.her2 == Her2Influence::kNegative) neg += fractions[t.tissue_id];
    }
    return pos > neg;
}

const Case& Corpus::find(const std::string& case_id) const {
    for (const auto& c : cases)
        if (c.case_id == case_id) return c;
    throw DataError("unknown case id '" + case_id + "'");
}

namespace {

std::string padded(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05d", prefix, i);
    return buf;
}

Case make_case(const CorpusConfig& cfg, const TissueAtlas& atlas, int index) {
    auto rng = make_rng({cfg.seed, static_cast<std::uint64_t>(index), std::uint64_t{0xCA5E}});
    const int tissue_count = static_cast<int>(atlas.tissues.size());

    std::uniform_int_distribution<int> m_dist(cfg.patches_min, cfg.patches_max);
    const int m = m_dist(rng);
    Case c;
    c.dim = atlas.dim;
    c.grid_cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));
    c.grid_rows = (m + c.grid_cols - 1) / c.grid_cols;

    // Case mixture over a random tissue subset with flat Dirichlet weights.
    const int lo = std::min(cfg.min_tissues_per_case, tissue_count);
    const int hi = std::min(cfg.max_tissues_per_case, tissue_count);
    const int present = std::uniform_int_distribution<int>(lo, hi)(rng);
    std::vector<int> order(tissue_count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> weights(tissue_count, 0.0);
    std::gamma_distribution<double> gamma(1.0, 1.0);
    for (int i = 0; i < present; ++i) weights[order[i]] = gamma(rng) + 1e-3;
    std::discrete_distribution<int> mixture(weights.begin(), weights.end());

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    c.tissue_ids.resize(m);
    for (int i = 0; i < m; ++i) {
        const int r = i / c.grid_cols, col = i % c.grid_cols;
        std::vector<int> neighbours;
        if (col > 0) neighbours.push_back(c.tissue_ids[i - 1]);
        if (r > 0) neighbours.push_back(c.tissue_ids[i - c.grid_cols]);
        if (!neighbours.empty() && u01(rng) < cfg.neighbor_bias) {
            c.tissue_ids[i] = neighbours[std::uniform_int_distribution<std::size_t>(0, neighbours.size() - 1)(rng)];
        } else {
            c.tissue_ids[i] = mixture(rng);
        }
    }

    c.visual.resize(static_cast<std::size_t>(m) * atlas.dim);
    c.retrieval.resize(static_cast<std::size_t>(m) * atlas.dim);
    for (int i = 0; i < m; ++i) {
        const auto& proto = atlas.tissues[c.tissue_ids[i]].prototype;
        add_noise(rng, proto, cfg.visual_noise, c.visual.data() + static_cast<std::size_t>(i) * atlas.dim);
        add_noise(rng, proto, cfg.retrieval_noise, c.retrieval.data() + static_cast<std::size_t>(i) * atlas.dim);
    }

    const auto fractions = c.tissue_fractions(tissue_count);
    std::string report;
    for (int t : mentioned_tissues(fractions, cfg.mention_threshold)) {
        const auto& tpl = atlas.tissues[t].templates;
        if (!report.empty()) report += ' ';
        report += tpl[std::uniform_int_distribution<std::size_t>(0, tpl.size() - 1)(rng)];
    }
    report += ' ';
    report += her2_sentence(her2_positive_for(fractions, atlas));
    c.report = std::move(report);
    c.case_id = padded("case", index);
    return c;
}

}  // namespace

Corpus generate_corpus(const CorpusConfig& config) {
    config.validate();
    Corpus corpus;
    corpus.config = config;
    corpus.atlas = TissueAtlas::make(config.seed, config.tissue_count, config.dim);
    corpus.cases.reserve(config.n_cases);
    for (int i = 0; i < config.n_cases; ++i) corpus.cases.push_back(make_case(config, corpus.atlas, i));

    // Patient assignment: consecutive cases share a patient, 1..max cases each.
    auto rng = make_rng({config.seed, std::uint64_t{0x9A7}});
    std::uniform_int_distribution<int> per_patient(1, config.max_cases_per_patient);
    int patient = 0;
    for (std::size_t i = 0; i < corpus.cases.size();) {
        const int n = per_patient(rng);
        for (int j = 0; j < n && i < corpus.cases.size(); ++j, ++i) corpus.cases[i].patient_id = padded("patient", patient);
        ++patient;
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Splits

const std::vector<std::string>& Splits::get(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw UsageError("unknown split '" + name + "' (expected train, val or test)");
}

Splits split_dataset(const std::vector<Case>& cases, std::uint64_t seed) {
    std::map<std::string, std::vector<std::string>> by_patient;
    for (const auto& c : cases) {
        if (c.patient_id.empty()) throw DataError("case '" + c.case_id + "' has no patient_id");
        by_patient[c.patient_id].push_back(c.case_id);
    }
    if (by_patient.size() < 3) {
        throw DataError("split_dataset needs at least 3 patients, got " + std::to_string(by_patient.size()));
    }
    std::vector<std::string> patients;
    for (auto& [p, ids] : by_patient) {
        std::sort(ids.begin(), ids.end());
        patients.push_back(p);
    }
    auto rng = make_rng({seed, std::uint64_t{0x5917}});
    std::shuffle(patients.begin(), patients.end(), rng);

    const double n = static_cast<double>(cases.size());
    const double total = 796.0 + 88.0 + 93.0;
    const long val_target = std::max(1L, std::lround(n * 88.0 / total));
    const long test_target = std::max(1L, std::lround(n * 93.0 / total));
    const long train_target = std::max(1L, static_cast<long>(cases.size()) - val_target - test_target);
    std::array<long, 3> target{train_target, val_target, test_target};
    std::array<long, 3> filled{0, 0, 0};

    Splits s;
    std::array<std::vector<std::string>*, 3> dst{&s.train, &s.val, &s.test};
    // Every split first receives one patient, then each patient goes to the
    // split with the largest remaining deficit (ties favour train, val, test).
    for (std::size_t i = 0; i < patients.size(); ++i) {
        std::size_t pick = 0;
        if (i < 3) {
            pick = i;
        } else {
            long best = std::numeric_limits<long>::min();
            for (std::size_t k = 0; k < 3; ++k) {
                if (target[k] - filled[k] > best) {
                    best = target[k] - filled[k];
                    pick = k;
                }
            }
        }
        const auto& ids = by_patient[patients[i]];
        dst[pick]->insert(dst[pick]->end(), ids.begin(), ids.end());
        filled[pick] += static_cast<long>(ids.size());
    }
    for (auto* v : dst) std::sort(v->begin(), v->end());
    return s;
}

std::vector<const Case*> select_cases(const Corpus& corpus, const std::vector<std::string>& ids) {
    std::map<std::string, const Case*> index;
    for (const auto& c : corpus.cases) index.emplace(c.case_id, &c);
    std::vector<const Case*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) throw DataError("split references unknown case id '" + id + "'");
        out.push_back(it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// IO

namespace {

json config_to_json(const CorpusConfig& c) {
    return {{"seed", c.seed},
            {"n_cases", c.n_cases},
            {"tissue_count", c.tissue_count},
            {"patches_min", c.patches_min},
            {"patches_max", c.patches_max},
            {"dim", c.dim},
            {"max_cases_per_patient", c.max_cases_per_patient},
            {"min_tissues_per_case", c.min_tissues_per_case},
            {"max_tissues_per_case", c.max_tissues_per_case},
            {"neighbor_bias", c.neighbor_bias},
            {"mention_threshold", c.mention_threshold},
            {"visual_noise", c.visual_noise},
            {"retrieval_noise", c.retrieval_noise},
            {"text_noise", c.text_noise}};
}

CorpusConfig config_from_json(const json& j) {
    CorpusConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.n_cases = j.at("n_cases").get<int>();
    c.tissue_count = j.at("tissue_count").get<int>();
    c.patches_min = j.at("patches_min").get<int>();
    c.patches_max = j.at("patches_max").get<int>();
    c.dim = j.at("dim").get<int>();
    c.max_cases_per_patient = j.at("max_cases_per_patient").get<int>();
    c.min_tissues_per_case = j.at("min_tissues_per_case").get<int>();
    c.max_tissues_per_case = j.at("max_tissues_per_case").get<int>();
    c.neighbor_bias = j.at("neighbor_bias").get<double>();
    c.mention_threshold = j.at("mention_threshold").get<double>();
    c.visual_noise = j.at("visual_noise").get<double>();
    c.retrieval_noise = j.at("retrieval_noise").get<double>();
    c.text_noise = j.at("text_noise").get<double>();
    return c;
}

std::vector<float> floats_at(const json& j, const char* key, std::size_t expect) {
    auto v = j.at(key).get<std::vector<float>>();
    if (v.size() != expect) {
        throw DataError(std::string("corpus: field '") + key + "' has length " + std::to_string(v.size()) +
                        ", expected " + std::to_string(expect));
    }
    return v;
}

}  // namespace

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    json header{{"type", "atlas"},
                {"config", config_to_json(corpus.config)},
                {"dim", corpus.atlas.dim},
                {"her2_positive", corpus.atlas.her2_positive},
                {"her2_negative", corpus.atlas.her2_negative}};
    json tissues = json::array();
    for (const auto& t : corpus.atlas.tissues) {
        tissues.push_back({{"tissue_id", t.tissue_id},
                           {"name", t.name},
                           {"prototype", t.prototype},
                           {"templates", t.templates},
                           {"entities", t.entities},
                           {"her2", her2_name(t.her2)}});
    }
    header["tissues"] = std::move(tissues);
    out << header.dump() << '\n';
    for (const auto& c : corpus.cases) {
        json patches = json::array();
        const std::size_t d = c.dim;
        for (std::size_t i = 0; i < c.patch_count(); ++i) {
            patches.push_back({{"tissue_id", c.tissue_ids[i]},
                               {"visual", std::vector<float>(c.visual.begin() + i * d, c.visual.begin() + (i + 1) * d)},
                               {"retrieval", std::vector<float>(c.retrieval.begin() + i * d,
                                                                c.retrieval.begin() + (i + 1) * d)}});
        }
        json rec{{"type", "case"},
                 {"case_id", c.case_id},
                 {"patient_id", c.patient_id},
                 {"grid", {c.grid_rows, c.grid_cols}},
                 {"patches", std::move(patches)},
                 {"report", c.report}};
        out << rec.dump() << '\n';
    }
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus '" + path.string() + "'");
    Corpus corpus;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    try {
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j = json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "atlas") {
                corpus.config = config_from_json(j.at("config"));
                auto& a = corpus.atlas;
                a.seed = corpus.config.seed;
                a.dim = j.at("dim").get<int>();
                a.her2_positive = floats_at(j, "her2_positive", a.dim);
                a.her2_negative = floats_at(j, "her2_negative", a.dim);
                for (const auto& t : j.at("tissues")) {
                    a.tissues.push_back({t.at("tissue_id").get<int>(), t.at("name").get<std::string>(),
                                         floats_at(t, "prototype", a.dim),
                                         t.at("templates").get<std::vector<std::string>>(),
                                         t.at("entities").get<std::vector<std::string>>(),
                                         parse_her2(t.at("her2").get<std::string>())});
                }
                have_header = true;
            } else if (type == "case") {
                if (!have_header) throw DataError("case record before atlas header");
                Case c;
                c.dim = corpus.atlas.dim;
                c.case_id = j.at("case_id").get<std::string>();
                c.patient_id = j.at("patient_id").get<std::string>();
                const auto grid = j.at("grid").get<std::vector<int>>();
                if (grid.size() != 2) throw DataError("field 'grid' must hold two extents");
                c.grid_rows = grid[0];
                c.grid_cols = grid[1];
                for (const auto& p : j.at("patches")) {
                    const int t = p.at("tissue_id").get<int>();
                    if (t < 0 || t >= static_cast<int>(corpus.atlas.tissues.size())) {
                        throw DataError("field 'tissue_id' out of range");
                    }
                    c.tissue_ids.push_back(t);
                    auto v = floats_at(p, "visual", c.dim);
                    auto r = floats_at(p, "retrieval", c.dim);
                    c.visual.insert(c.visual.end(), v.begin(), v.end());
                    c.retrieval.insert(c.retrieval.end(), r.begin(), r.end());
                }
                if (c.tissue_ids.empty()) throw DataError("case has no patches");
                if (static_cast<std::size_t>(c.grid_rows) * c.grid_cols < c.tissue_ids.size()) {
                    throw DataError("field 'grid' smaller than patch count");
                }
                c.report = j.at("report").get<std::string>();
                corpus.cases.push_back(std::move(c));
            } else {
                throw DataError("unknown record type '" + type + "'");
            }
        }
    } catch (const json::exception& e) {
        throw DataError("corpus '" + path.string() + "' line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError("corpus '" + path.string() + "' line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!have_header) throw DataError("corpus '" + path.string() + "' has no atlas header");
    return corpus;
}

void save_splits(const std::filesystem::path& path, const Splits& splits) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << json{{"train", splits.train}, {"val", splits.val}, {"test", splits.test}}.dump(2) << '\n';
}

Splits load_splits(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open split manifest '" + path.string() + "'");
    try {
        json j = json::parse(in);
        return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
                j.at("test").get<std::vector<std::string>>()};
    } catch (const json::exception& e) {
        throw DataError("split manifest '" + path.string() + "': " + e.what());
    }
}

}  // namespace bigen
