#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "bigen/corpus.hpp"
#include "bigen/text.hpp"
#include "metric_goldens.hpp"
#include "support.hpp"

using namespace bigen;
using namespace bigen::metrics;

TEST_CASE("frozen metric goldens reproduce to 1e-9") {
    for (const auto& g : bigen::testing::metric_goldens()) {
        INFO(g.name << " = " << g.actual << ", expected " << g.expected);
        CHECK(std::abs(g.actual - g.expected) < 1e-9);
    }
}

TEST_CASE("identical corpora score 1.0 on every metric") {
    const auto corpus = generate_corpus(bigen::testing::tiny_corpus_config(20, 8, 2));
    Texts refs;
    for (const auto& c : corpus.cases) refs.push_back(c.report);
    const auto r = evaluate(refs, refs, corpus.atlas.entity_dictionary());
    for (const auto& [key, value] : r.fields()) {
        INFO(key);
        CHECK(value == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("disjoint texts score zero") {
    const Texts c{"alpha beta gamma"}, r{"delta epsilon zeta"};
    for (int n = 1; n <= 4; ++n) CHECK(bleu(c, r, n) == 0.0);
    CHECK(rouge_l(c, r) == 0.0);
    CHECK(meteor_simplified(c, r) == 0.0);
    CHECK(fact_ent({"nothing here"}, {"carcinoma"}, {"carcinoma"}) == 0.0);
    CHECK(fact_ent({"nothing here"}, {"nor here"}, {"carcinoma"}) == 1.0);
}

TEST_CASE("metrics are permutation invariant and drop below 1 on any content change") {
    const auto corpus = generate_corpus(bigen::testing::tiny_corpus_config(30, 8, 6));
    Texts refs, cands;
    for (const auto& c : corpus.cases) refs.push_back(c.report);
    // Candidates: references of the neighbouring case, a realistic mismatch.
    for (std::size_t i = 0; i < refs.size(); ++i) cands.push_back(refs[(i + 1) % refs.size()]);
    const auto dict = corpus.atlas.entity_dictionary();
    const auto base = evaluate(cands, refs, dict).fields();
    std::vector<std::size_t> perm(refs.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    Texts pc, pr;
    for (auto i : perm) {
        pc.push_back(cands[i]);
        pr.push_back(refs[i]);
    }
    const auto shuffled = evaluate(pc, pr, dict).fields();
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(shuffled[i].second == doctest::Approx(base[i].second).epsilon(1e-12));

    auto one_off = refs;
    one_off[4] = "the stroma shows xyz.";
    const auto r = evaluate(one_off, refs, dict);
    for (int n = 0; n < 4; ++n) CHECK(r.bleu[n] < 1.0);
    CHECK(r.rouge_l < 1.0);
    CHECK(r.meteor < 1.0);
}

TEST_CASE("higher-order BLEU never exceeds lower order on random corpora") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> words{"a", "b", "c", "d", "e", "f"};
    std::uniform_int_distribution<std::size_t> w(0, words.size() - 1), len(6, 14);
    for (int trial = 0; trial < 30; ++trial) {
        Texts c, r;
        for (int i = 0; i < 8; ++i) {
            std::string a, b;
            const std::size_t la = len(rng), lb = len(rng);
            for (std::size_t k = 0; k < la; ++k) a += words[w(rng)] + " ";
            for (std::size_t k = 0; k < lb; ++k) b += words[w(rng)] + " ";
            c.push_back(a);
            r.push_back(b);
        }
        for (int n = 1; n < 4; ++n) CHECK(bleu(c, r, n + 1) <= bleu(c, r, n) + 1e-12);
    }
}

TEST_CASE("truncating every candidate to half length lowers BLEU-4 on a pinned corpus") {
    const auto corpus = generate_corpus(bigen::testing::tiny_corpus_config(40, 8, 13));
    Texts refs, cands, half;
    for (const auto& c : corpus.cases) refs.push_back(c.report);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        cands.push_back(refs[(i + 3) % refs.size()]);
        const auto w = text::words(cands.back());
        std::string h;
        for (std::size_t k = 0; k < w.size() / 2; ++k) h += w[k] + " ";
        half.push_back(h);
    }
    CHECK(bleu(half, refs, 4) <= bleu(cands, refs, 4));
}

TEST_CASE("her-2 status parsing") {
    CHECK(her2_status("her-2 status: positive.") == true);
    CHECK(her2_status("HER-2 is NEGATIVE") == false);
    CHECK(her2_status("tumor; her-2 negative; positive margins.") == false);
    CHECK_FALSE(her2_status("her-2 status pending. positive margins.").has_value());
    CHECK_FALSE(her2_status("positive for her-2").has_value());
    CHECK_THROWS_AS(her2_metrics({"her-2 positive"}, {"no status"}), DataError);
    const auto none = her2_metrics({"her-2 negative"}, {"her-2 negative"});
    CHECK(none.precision == 1.0);
    CHECK(none.recall == 1.0);
    CHECK(none.f1 == 1.0);
}

TEST_CASE("entity extraction prefers the longest dictionary match") {
    const std::vector<std::string> dict{"carcinoma", "invasive carcinoma", "her-2"};
    CHECK(extract_entities("Invasive carcinoma with carcinoma; her-2 positive.", dict) ==
          std::vector<std::string>{"invasive carcinoma", "carcinoma", "her-2"});
    CHECK_THROWS_AS(fact_ent({"a"}, {"a"}, {}), DataError);
}

TEST_CASE("stemmer strips common suffixes") {
    CHECK(stem("cells") == stem("cell"));
    CHECK(stem("infiltrating") == stem("infiltrated"));
    CHECK(stem("is") == "is");
}

TEST_CASE("empty or misaligned corpora are data errors") {
    CHECK_THROWS_AS(bleu({}, {}, 4), DataError);
    CHECK_THROWS_AS(rouge_l({"a"}, {"a", "b"}), DataError);
    CHECK_THROWS_AS(meteor_simplified({}, {}), DataError);
    CHECK_THROWS_AS(bleu({"a"}, {"a"}, 5), UsageError);
}

TEST_CASE("report renders a table and key-value lines with simplified markers") {
    const auto r = evaluate({"her-2 status: positive."}, {"her-2 status: positive."}, {"her-2"});
    const auto kv = r.key_values();
    for (const char* key : {"bleu_1=", "bleu_4=", "meteor_simplified=", "rouge_l=", "fact_ent_simplified=",
                            "her2_precision=", "her2_recall=", "her2_f1="})
        CHECK(kv.find(key) != std::string::npos);
    CHECK(r.table().find("meteor_simplified") != std::string::npos);
    CHECK(r.fields().size() == 10);
}
