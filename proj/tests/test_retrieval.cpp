#include <doctest.h>

#include <sstream>

#include "bigen/retrieval.hpp"
#include "oracles.hpp"

using namespace bigen;

TEST_CASE("selection count rounds M*k up and stays within [1, M]") {
    CHECK(selection_count(100, 0.4) == 40);
    CHECK(selection_count(10, 0.4) == 4);
    CHECK(selection_count(3, 0.33) == 1);
    CHECK(selection_count(3, 0.34) == 2);
    CHECK(selection_count(1, 0.01) == 1);
    CHECK(selection_count(7, 1.0) == 7);
}

TEST_CASE("top-k keeps the highest weights in spatial order") {
    const std::vector<double> a{0.1, 0.4, 0.2, 0.3};
    CHECK(select_top_k(a, 0.5) == std::vector<std::size_t>{1, 3});
    const std::vector<double> three{0.2, 0.5, 0.3};
    CHECK(select_top_k(three, 0.33) == std::vector<std::size_t>{1});
    CHECK(select_top_k(three, 0.34) == std::vector<std::size_t>{1, 2});
    const std::vector<double> tied{0.25, 0.25, 0.25, 0.25};
    CHECK(select_top_k(tied, 0.5) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("top-k rejects empty, unnormalised or out-of-range input") {
    CHECK_THROWS_AS(select_top_k(std::vector<double>{}, 0.4), DataError);
    CHECK_THROWS_AS(select_top_k(std::vector<double>{0.5, 0.2}, 0.4), DataError);
    CHECK_THROWS_AS(select_top_k(std::vector<double>{1.0}, 0.0), UsageError);
    CHECK_THROWS_AS(select_top_k(std::vector<double>{1.0}, 1.5), UsageError);
}

TEST_CASE("regions average consecutive runs with a partial tail") {
    const std::vector<float> e{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};  // 5 rows, d = 2
    CHECK(partition_regions(e, 2, 2) == std::vector<float>{2, 3, 6, 7, 9, 10});
    CHECK(partition_regions(e, 2, 5) == std::vector<float>{5, 6});
    CHECK(partition_regions(e, 2, 9) == std::vector<float>{5, 6});
    CHECK_THROWS_AS(partition_regions(e, 2, 0), UsageError);
    CHECK_THROWS_AS(partition_regions(e, 3, 2), DataError);
}

TEST_CASE("region retrieval ranks by cosine and breaks ties by bank order") {
    const KnowledgeBank bank(2, {1, 0, 0, 1, 1, 0, -1, 0}, {"a.", "b.", "c.", "d."}, {});
    const std::vector<float> q{3, 1};
    const auto hit = retrieve_region(q, bank, 3);
    CHECK(hit.indices == std::vector<std::size_t>{0, 2, 1});
    CHECK(hit.feature[0] == doctest::Approx(2.0 / 3.0));
    CHECK(hit.feature[1] == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(retrieve_region(q, bank, 5), UsageError);
    CHECK_THROWS_AS(retrieve_region(std::vector<float>{1, 0, 0}, bank, 1), DataError);
}

TEST_CASE("M = 100, k = 0.4, m = 20 yields two knowledge rows") {
    auto rng = make_rng({1, 2});
    const auto bank = bigen::testing::random_bank(rng, 30, 4);
    std::vector<float> emb(100 * 4);
    std::normal_distribution<float> nd;
    for (auto& x : emb) x = nd(rng);
    const auto attn = bigen::testing::random_attention(rng, 100);
    const auto rk = retrieve_all(emb, 4, attn, bank, {0.4, 20, 3});
    CHECK(rk.selected_patches.size() == 40);
    CHECK(rk.region_count() == 2);
    CHECK(rk.features.size() == 2 * 4);
}

TEST_CASE("retrieve_all agrees with a brute-force oracle") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto rng = make_rng({s, 0x0AC1});
        std::uniform_int_distribution<int> Md(1, 90), md(1, 25), vd(1, 5);
        std::uniform_real_distribution<double> kd(0.05, 1.0);
        const std::size_t M = Md(rng), d = 8;
        const double k = kd(rng);
        const int m = md(rng), v = vd(rng);
        const auto bank = bigen::testing::random_bank(rng, 60, d);
        std::vector<float> emb(M * d);
        std::normal_distribution<float> nd;
        for (auto& x : emb) x = nd(rng);
        const auto attn = bigen::testing::random_attention(rng, M);
        const auto rk = retrieve_all(emb, d, attn, bank, {k, m, v});
        const auto ref = bigen::testing::oracle_retrieve(emb, d, attn, bank, k, m, v);
        INFO("seed " << s);
        CHECK(rk.selected_patches == ref.selected);
        REQUIRE(rk.region_count() == ref.neighbours.size());
        for (std::size_t r = 0; r < ref.neighbours.size(); ++r) CHECK(rk.regions[r].indices == ref.neighbours[r]);
        for (std::size_t i = 0; i < ref.features.size(); ++i) CHECK(std::abs(rk.features[i] - ref.features[i]) < 1e-6);
    }
}

TEST_CASE("retrieval debug output has one JSON line per region") {
    auto rng = make_rng({3});
    const auto bank = bigen::testing::random_bank(rng, 10, 4);
    std::vector<float> emb(30 * 4, 0.5f);
    const auto attn = bigen::testing::random_attention(rng, 30);
    const auto rk = retrieve_all(emb, 4, attn, bank, {0.5, 5, 2});
    std::ostringstream os;
    write_retrieval_debug(os, "case-1", rk, bank);
    std::size_t lines = 0;
    for (char c : os.str()) lines += c == '\n';
    CHECK(lines == rk.region_count());
    CHECK(os.str().find("\"case-1\"") != std::string::npos);
}
