#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "bigen/corpus.hpp"
#include "bigen/knowledge_bank.hpp"
#include "bigen/text.hpp"
#include "bigen/vocab.hpp"
#include "support.hpp"

using namespace bigen;

namespace {

CorpusConfig cheap(int cases, std::uint64_t seed = 3) {
    CorpusConfig cc;
    cc.n_cases = cases;
    cc.dim = 4;
    cc.patches_min = 1;
    cc.patches_max = 3;
    cc.seed = seed;
    return cc;
}

bool same_case(const Case& a, const Case& b) {
    return a.case_id == b.case_id && a.patient_id == b.patient_id && a.report == b.report && a.visual == b.visual &&
           a.retrieval == b.retrieval && a.tissue_ids == b.tissue_ids && a.grid_rows == b.grid_rows &&
           a.grid_cols == b.grid_cols;
}

}  // namespace

TEST_CASE("default case count splits 796/88/93, patient-disjoint") {
    const auto corpus = generate_corpus(cheap(977));
    REQUIRE(corpus.cases.size() == 977);
    const auto s = split_dataset(corpus.cases, 1);
    CHECK(s.train.size() == 796);
    CHECK(s.val.size() == 88);
    CHECK(s.test.size() == 93);

    std::map<std::string, std::string> patient_split;
    for (const auto& [name, ids] : {std::pair{"train", &s.train}, {"val", &s.val}, {"test", &s.test}}) {
        for (const auto& id : *ids) {
            const auto& p = corpus.find(id).patient_id;
            auto [it, fresh] = patient_split.emplace(p, name);
            CHECK((fresh || it->second == name));
        }
    }
}

TEST_CASE("small corpora keep every split non-empty with rounded ratios") {
    const auto s10 = split_dataset(generate_corpus(cheap(10)).cases, 1);
    CHECK(s10.train.size() == 8);
    CHECK(s10.val.size() == 1);
    CHECK(s10.test.size() == 1);
    const auto s256 = split_dataset(generate_corpus(cheap(256)).cases, 1);
    CHECK(s256.val.size() == 23);   // round(256 * 88 / 977)
    CHECK(s256.test.size() == 24);  // round(256 * 93 / 977)
    CHECK(s256.train.size() == 209);
    CHECK_THROWS_AS(split_dataset(generate_corpus(cheap(2)).cases, 1), DataError);
}

TEST_CASE("split depends on the case set, not on input order") {
    auto cases = generate_corpus(cheap(40)).cases;
    const auto a = split_dataset(cases, 9);
    std::mt19937_64 rng(4);
    std::shuffle(cases.begin(), cases.end(), rng);
    const auto b = split_dataset(cases, 9);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
}

TEST_CASE("generation is deterministic per seed and differs across seeds") {
    const auto cc = bigen::testing::tiny_corpus_config(12, 8, 21);
    const auto a = generate_corpus(cc);
    const auto b = generate_corpus(cc);
    REQUIRE(a.cases.size() == b.cases.size());
    for (std::size_t i = 0; i < a.cases.size(); ++i) CHECK(same_case(a.cases[i], b.cases[i]));
    auto other = cc;
    other.seed = 22;
    CHECK(generate_corpus(other).cases[0].visual != a.cases[0].visual);
}

TEST_CASE("reports mention tissues above threshold in id order and end with the her-2 status") {
    const auto corpus = generate_corpus(bigen::testing::tiny_corpus_config(30, 16, 4));
    const SentenceEmbedder embedder(corpus);
    const int tc = corpus.config.tissue_count;
    for (const auto& c : corpus.cases) {
        CHECK(c.patch_count() * c.dim == c.visual.size());
        CHECK(c.retrieval.size() == c.visual.size());
        CHECK(c.grid_cols == static_cast<int>(std::ceil(std::sqrt(double(c.patch_count())))));
        CHECK(c.grid_rows * c.grid_cols >= static_cast<int>(c.patch_count()));
        const auto fractions = c.tissue_fractions(tc);
        const auto mentioned = mentioned_tissues(fractions, corpus.config.mention_threshold);
        auto sentences = split_sentences(c.report);
        REQUIRE(sentences.size() == mentioned.size() + 1);
        CHECK(sentences.back() == her2_sentence(her2_positive_for(fractions, corpus.atlas)));
        for (std::size_t i = 0; i < mentioned.size(); ++i) {
            auto src = embedder.source_tissue(sentences[i]);
            REQUIRE(src.has_value());
            CHECK(*src == mentioned[i]);
        }
    }
}

TEST_CASE("tissue prototypes are unit norm with pairwise cosine below 0.5") {
    for (int dim : {8, 32}) {
        const auto atlas = TissueAtlas::make(3, 12, dim);
        for (std::size_t i = 0; i < atlas.tissues.size(); ++i) {
            double n = 0;
            for (float x : atlas.tissues[i].prototype) n += double(x) * x;
            CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
            for (std::size_t j = 0; j < i; ++j) {
                double dot = 0;
                for (int k = 0; k < dim; ++k) dot += double(atlas.tissues[i].prototype[k]) * atlas.tissues[j].prototype[k];
                CHECK(dot < 0.5);
            }
        }
    }
}

TEST_CASE("her-2 status follows the balance of influencing tissues") {
    const auto atlas = TissueAtlas::make(1, 8, 16);
    std::vector<double> f(8, 0.0);
    int pos = -1, neg = -1;
    for (const auto& t : atlas.tissues) {
        if (t.her2 == Her2Influence::kPositive && pos < 0) pos = t.tissue_id;
        if (t.her2 == Her2Influence::kNegative && neg < 0) neg = t.tissue_id;
    }
    REQUIRE(pos >= 0);
    REQUIRE(neg >= 0);
    f[pos] = 0.6;
    f[neg] = 0.4;
    CHECK(her2_positive_for(f, atlas));
    f[pos] = 0.4;
    f[neg] = 0.6;
    CHECK_FALSE(her2_positive_for(f, atlas));
}

TEST_CASE("corpus and splits round-trip through disk") {
    const auto corpus = generate_corpus(bigen::testing::tiny_corpus_config(9, 8, 2));
    const auto splits = split_dataset(corpus.cases, 2);
    const auto dir = std::filesystem::temp_directory_path() / "bigen_test_corpus";
    std::filesystem::create_directories(dir);
    save_corpus(dir / "c.jsonl", corpus);
    save_splits(dir / "s.json", splits);
    const auto back = load_corpus(dir / "c.jsonl");
    REQUIRE(back.cases.size() == corpus.cases.size());
    for (std::size_t i = 0; i < back.cases.size(); ++i) CHECK(same_case(back.cases[i], corpus.cases[i]));
    CHECK(back.atlas.tissues.size() == corpus.atlas.tissues.size());
    CHECK(back.atlas.tissues[0].prototype == corpus.atlas.tissues[0].prototype);
    const auto sb = load_splits(dir / "s.json");
    CHECK(sb.train == splits.train);
    CHECK(sb.test == splits.test);
    std::filesystem::remove_all(dir);
}

TEST_CASE("invalid corpus configurations are usage errors") {
    auto cc = cheap(10);
    cc.tissue_count = 0;
    CHECK_THROWS_AS(generate_corpus(cc), UsageError);
    cc = cheap(10);
    cc.tissue_count = max_tissue_types() + 1;
    CHECK_THROWS_AS(generate_corpus(cc), UsageError);
    cc = cheap(10);
    cc.patches_min = 5;
    cc.patches_max = 2;
    CHECK_THROWS_AS(generate_corpus(cc), UsageError);
    cc = cheap(0);
    CHECK_THROWS_AS(generate_corpus(cc), UsageError);
}

TEST_CASE("tokenizer keeps codes whole and splits punctuation") {
    CHECK(text::tokenize("Invasive carcinoma, M-8500/3.") ==
          std::vector<std::string>{"invasive", "carcinoma", ",", "m-8500/3", "."});
    CHECK(text::tokenize("size 1.5 cm; her-2 status: positive.") ==
          std::vector<std::string>{"size", "1.5", "cm", ";", "her-2", "status", ":", "positive", "."});
    CHECK(text::words("her-2 status: positive.") == std::vector<std::string>{"her-2", "status", "positive"});
    const std::string canonical = "the stroma shows dense fibrosis. her-2 status: negative.";
    CHECK(text::detokenize(text::tokenize(canonical)) == canonical);
}

TEST_CASE("vocab: specials first, words sorted, unknowns map to UNK") {
    const auto v = Vocab::build({"b a c.", "a a"});
    CHECK(v.token(Vocab::kPad) == "<pad>");
    CHECK(v.token(Vocab::kBos) == "<bos>");
    CHECK(v.token(Vocab::kEos) == "<eos>");
    CHECK(v.token(Vocab::kUnk) == "<unk>");
    CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", ".", "a", "b", "c"});
    const auto ids = v.encode("a zebra.");
    CHECK(ids == std::vector<int>{Vocab::kBos, v.id("a"), Vocab::kUnk, v.id("."), Vocab::kEos});
    CHECK(v.decode(ids) == "a <unk>.");
    const std::vector<int> bad{99};
    CHECK_THROWS_AS(v.decode(bad), DataError);
    const auto path = std::filesystem::temp_directory_path() / "bigen_test_vocab.txt";
    v.save(path);
    CHECK(Vocab::load(path) == v);
    std::filesystem::remove(path);
}
