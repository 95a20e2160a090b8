#include "bigen/knowledge_bank.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "bigen/binary_io.hpp"
#include "bigen/rng.hpp"
#include "bigen/text.hpp"

namespace bigen {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string normalize(std::string_view s) { return text::lowercase(trim(s)); }

std::filesystem::path provenance_path(const std::filesystem::path& bank) {
    return bank.string() + ".provenance.json";
}

}  // namespace

std::vector<std::string> split_sentences(std::string_view report) {
    std::vector<std::string> out;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        auto s = trim(report.substr(start, end - start));
        if (!s.empty()) out.emplace_back(s);
        start = end;
    };
    for (std::size_t i = 0; i < report.size(); ++i) {
        const char c = report[i];
        if (c == '\n') {
            flush(i);
            start = i + 1;
        } else if ((c == '.' || c == ';') && (i + 1 == report.size() || is_space(report[i + 1]))) {
            flush(i + 1);
        }
    }
    flush(report.size());
    return out;
}

// ---------------------------------------------------------------------------

SentenceEmbedder::SentenceEmbedder(TissueAtlas atlas, double text_noise)
    : atlas_(std::move(atlas)), text_noise_(text_noise) {
    for (const auto& t : atlas_.tissues)
        for (const auto& s : t.templates) template_tissue_.emplace(normalize(s), t.tissue_id);
}

std::optional<int> SentenceEmbedder::source_tissue(std::string_view sentence) const {
    auto it = template_tissue_.find(normalize(sentence));
    if (it == template_tissue_.end()) return std::nullopt;
    return it->second;
}

std::vector<float> SentenceEmbedder::embed(std::string_view sentence) const {
    const std::string key = normalize(sentence);
    const std::size_t d = atlas_.dim;
    auto rng = make_rng({atlas_.seed, fnv1a(key.data(), key.size())});

    const std::vector<float>* base = nullptr;
    if (auto t = source_tissue(key)) {
        base = &atlas_.tissues[*t].prototype;
    } else if (key == her2_sentence(true)) {
        base = &atlas_.her2_positive;
    } else if (key == her2_sentence(false)) {
        base = &atlas_.her2_negative;
    }

    std::vector<double> v(d, 0.0);
    if (base != nullptr) {
        std::normal_distribution<double> nd(0.0, text_noise_ / std::sqrt(static_cast<double>(d)));
        for (std::size_t i = 0; i < d; ++i) v[i] = (*base)[i] + nd(rng);
    } else {
        std::normal_distribution<double> nd(0.0, 1.0);
        for (auto& x : v) x = nd(rng);
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    std::vector<float> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(norm > 0 ? v[i] / norm : 0.0);
    return out;
}

// ---------------------------------------------------------------------------

KnowledgeBank::KnowledgeBank(int dim, std::vector<float> embeddings, std::vector<std::string> sentences,
                             BankProvenance provenance)
    : dim_(dim), embeddings_(std::move(embeddings)), sentences_(std::move(sentences)),
      provenance_(std::move(provenance)) {
    if (dim_ < 1) throw DataError("knowledge bank: dim must be positive");
    if (embeddings_.size() != sentences_.size() * static_cast<std::size_t>(dim_)) {
        throw DataError("knowledge bank: " + std::to_string(sentences_.size()) + " sentences but " +
                        std::to_string(embeddings_.size()) + " embedding values at d=" + std::to_string(dim_));
    }
    for (float v : embeddings_)
        if (!std::isfinite(v)) throw NumericalFault("knowledge bank: non-finite embedding value");
}

std::string corpus_fingerprint(const Corpus& corpus) {
    std::uint64_t h = fnv1a(&corpus.atlas.seed, sizeof corpus.atlas.seed);
    for (const auto& c : corpus.cases) {
        h = fnv1a(c.case_id.data(), c.case_id.size(), h);
        h = fnv1a(c.report.data(), c.report.size(), h);
        h = fnv1a(c.visual.data(), c.visual.size() * sizeof(float), h);
        h = fnv1a(c.retrieval.data(), c.retrieval.size() * sizeof(float), h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

KnowledgeBank build_bank(const std::vector<const Case*>& train_cases, const SentenceEmbedder& embedder,
                         BankProvenance provenance) {
    if (train_cases.empty()) throw DataError("build_bank: training split is empty");
    std::vector<float> emb;
    std::vector<std::string> sentences;
    for (const Case* c : train_cases) {
        for (auto& s : split_sentences(c->report)) {
            auto e = embedder.embed(s);
            emb.insert(emb.end(), e.begin(), e.end());
            sentences.push_back(std::move(s));
        }
    }
    if (sentences.empty()) throw DataError("build_bank: training reports contain no sentences");
    return {embedder.dim(), std::move(emb), std::move(sentences), std::move(provenance)};
}

KnowledgeBank build_bank(const Corpus& corpus, const Splits& splits, const std::string& split,
                         const SentenceEmbedder& embedder) {
    if (split != "train") {
        throw UsageError("knowledge bank must be built from the train split only, got '" + split + "'");
    }
    return build_bank(select_cases(corpus, splits.train), embedder, {corpus_fingerprint(corpus), "train"});
}

void require_training_provenance(const KnowledgeBank& bank, const Corpus& corpus) {
    const auto& p = bank.provenance();
    if (p.split != "train") {
        throw DataError("knowledge bank provenance split is '" + p.split + "', expected 'train'");
    }
    if (p.corpus_fingerprint != corpus_fingerprint(corpus)) {
        throw DataError("knowledge bank was built from a different corpus (fingerprint " + p.corpus_fingerprint +
                        ")");
    }
}

std::vector<char> encode_bank(const KnowledgeBank& bank) {
    io::ByteWriter w;
    w.magic("BGKB");
    w.u16(kBankVersion);
    w.u32(static_cast<std::uint32_t>(bank.dim()));
    w.u32(static_cast<std::uint32_t>(bank.size()));
    for (std::size_t i = 0; i < bank.size(); ++i) {
        for (float v : bank.row(i)) w.f32(v);
        w.str(bank.sentences()[i]);
    }
    return std::move(w.buffer());
}

KnowledgeBank decode_bank(const std::vector<char>& bytes, std::optional<int> expected_dim) {
    io::ByteReader r(bytes, "knowledge bank");
    r.expect_magic("BGKB");
    const auto version = r.u16("version");
    if (version != kBankVersion) {
        throw DataError("knowledge bank: unsupported field 'version' = " + std::to_string(version));
    }
    const auto d = r.u32("d");
    if (d == 0) throw DataError("knowledge bank: field 'd' is zero");
    if (expected_dim && static_cast<int>(d) != *expected_dim) {
        throw DataError("knowledge bank: field 'd' = " + std::to_string(d) + " does not match expected " +
                        std::to_string(*expected_dim));
    }
    const auto t = r.u32("T");
    std::vector<float> emb;
    std::vector<std::string> sentences;
    emb.reserve(static_cast<std::size_t>(t) * d);
    for (std::uint32_t i = 0; i < t; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) emb.push_back(r.f32("embedding"));
        sentences.push_back(r.str("text"));
    }
    if (!r.at_end()) throw DataError("knowledge bank: trailing bytes after T records");
    return {static_cast<int>(d), std::move(emb), std::move(sentences), {}};
}

void save_bank(const std::filesystem::path& path, const KnowledgeBank& bank) {
    io::write_file(path, encode_bank(bank));
    std::ofstream out(provenance_path(path), std::ios::trunc);
    out << nlohmann::json{{"corpus_fingerprint", bank.provenance().corpus_fingerprint},
                          {"split", bank.provenance().split}}
               .dump()
        << '\n';
}

KnowledgeBank load_bank(const std::filesystem::path& path, std::optional<int> expected_dim) {
    KnowledgeBank b = decode_bank(io::read_file(path), expected_dim);
    BankProvenance prov;
    if (std::ifstream in(provenance_path(path)); in) {
        try {
            auto j = nlohmann::json::parse(in);
            prov = {j.at("corpus_fingerprint").get<std::string>(), j.at("split").get<std::string>()};
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bank provenance sidecar: " + std::string(e.what()));
        }
    }
    return {b.dim(), b.embeddings(), b.sentences(), std::move(prov)};
}

}  // namespace bigen
