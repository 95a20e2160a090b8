#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bigen/checkpoint.hpp"
#include "bigen/optim.hpp"
#include "support.hpp"

using namespace bigen;
using bigen::testing::check_gradients;
using bigen::testing::random_param;

namespace {

constexpr int kSeeds = 20;

// Weighted sum so every output entry influences the loss differently.
Var<double> reduce(Graph<double>& g, Var<double> x, std::uint64_t seed) {
    auto rng = make_rng({seed, 99});
    auto w = bigen::testing::random_tensor(rng, x.rows(), x.cols());
    if (x.value().rank() == 1) w = Tensor<double>(x.value().shape(), std::vector<double>(w.values().begin(), w.values().end()));
    return ops::sum(ops::mul(x, g.constant(w)));
}

void fd_op(const char* name, int inputs, std::size_t rows, std::size_t cols,
           const std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)>& op) {
    for (int s = 0; s < kSeeds; ++s) {
        auto rng = make_rng({std::uint64_t(s), 7});
        std::vector<ParamPtr<double>> ps;
        for (int i = 0; i < inputs; ++i) ps.push_back(random_param(rng, "p" + std::to_string(i), rows, cols));
        auto r = check_gradients(ps, [&](Graph<double>& g) {
            std::vector<Var<double>> vs;
            for (auto& p : ps) vs.push_back(g.param(p));
            return reduce(g, op(g, vs), s);
        });
        INFO(name << " seed " << s);
        CHECK(r.relative_error < 1e-7);
    }
}

}  // namespace

TEST_CASE("elementwise and reduction ops match finite differences over 20 seeds") {
    fd_op("add", 2, 3, 4, [](auto&, auto& v) { return ops::add(v[0], v[1]); });
    fd_op("mul", 2, 3, 4, [](auto&, auto& v) { return ops::mul(v[0], v[1]); });
    fd_op("scale", 1, 3, 4, [](auto&, auto& v) { return ops::scale(v[0], 0.7); });
    fd_op("relu", 1, 3, 4, [](auto&, auto& v) { return ops::relu(v[0]); });
    fd_op("log", 1, 3, 4, [](auto&, auto& v) { return ops::log(ops::add(ops::mul(v[0], v[0]), v[0].graph->constant(Tensor<double>({3, 4}, 0.5)))); });
    fd_op("softmax", 1, 3, 5, [](auto&, auto& v) { return ops::softmax(v[0]); });
    fd_op("mean0", 1, 4, 3, [](auto&, auto& v) { return ops::mean(v[0], 0); });
    fd_op("mean1", 1, 4, 3, [](auto&, auto& v) { return ops::mean(v[0], 1); });
    fd_op("slice_cols", 1, 3, 6, [](auto&, auto& v) { return ops::slice_cols(v[0], 2, 3); });
    fd_op("slice_rows", 1, 5, 3, [](auto&, auto& v) { return ops::slice_rows(v[0], 1, 3); });
    fd_op("concat_rows", 2, 2, 3, [](auto&, auto& v) { return ops::concat_rows<double>(v); });
    fd_op("concat_cols", 2, 2, 3, [](auto&, auto& v) { return ops::concat_cols<double>(v); });
    fd_op("masked_fill", 1, 3, 3, [](auto&, auto& v) {
        static const std::vector<std::uint8_t> mask{0, 1, 1, 0, 0, 1, 0, 0, 0};
        return ops::softmax(ops::masked_fill(v[0], std::span<const std::uint8_t>(mask), -1e9));
    });
}

TEST_CASE("matrix ops, layer norm, embedding and cross entropy match finite differences") {
    for (int s = 0; s < kSeeds; ++s) {
        auto rng = make_rng({std::uint64_t(s), 11});
        auto a = random_param(rng, "a", 3, 4), b = random_param(rng, "b", 4, 5), c = random_param(rng, "c", 5, 4);
        auto bias = random_param(rng, "bias", 1, 5);
        auto gain = random_param(rng, "gain", 1, 4), beta = random_param(rng, "beta", 1, 4);
        auto table = random_param(rng, "table", 6, 4);
        INFO("seed " << s);
        CHECK(check_gradients({a, b}, [&](Graph<double>& g) { return reduce(g, ops::matmul(g.param(a), g.param(b)), s); })
                  .relative_error < 1e-7);
        CHECK(check_gradients({a, c}, [&](Graph<double>& g) { return reduce(g, ops::matmul_bt(g.param(a), g.param(c)), s); })
                  .relative_error < 1e-7);
        CHECK(check_gradients({a, b, bias}, [&](Graph<double>& g) {
                  return reduce(g, ops::add_bias(ops::matmul(g.param(a), g.param(b)), g.param(bias)), s);
              }).relative_error < 1e-7);
        CHECK(check_gradients({a, gain, beta}, [&](Graph<double>& g) {
                  return reduce(g, ops::layer_norm(g.param(a), g.param(gain), g.param(beta)), s);
              }).relative_error < 1e-6);
        const std::vector<int> ids{0, 3, 3, 5};
        CHECK(check_gradients({table}, [&](Graph<double>& g) {
                  return reduce(g, ops::embedding(g.param(table), std::span<const int>(ids)), s);
              }).relative_error < 1e-7);
        const std::vector<int> targets{1, 0, 4};
        CHECK(check_gradients({a, b}, [&](Graph<double>& g) {
                  return ops::cross_entropy(ops::matmul(g.param(a), g.param(b)), std::span<const int>(targets), 0);
              }).relative_error < 1e-7);
    }
}

TEST_CASE("a parameter used twice accumulates through one leaf") {
    auto p = std::make_shared<Parameter<double>>("p", Tensor<double>({1, 2}, std::vector<double>{2.0, -1.0}));
    Graph<double> g;
    auto x = g.param(p);
    auto y = g.param(p);
    CHECK(x.id == y.id);
    g.backward(ops::sum(ops::mul(x, y)));
    CHECK(p->grad[0] == doctest::Approx(4.0));
    CHECK(p->grad[1] == doctest::Approx(-2.0));
}

TEST_CASE("backward runs once per graph") {
    auto p = std::make_shared<Parameter<double>>("p", Tensor<double>({1, 1}, 1.0));
    Graph<double> g;
    auto loss = ops::sum(g.param(p));
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), DataError);
}

TEST_CASE("backward needs a scalar and a recording graph") {
    auto p = std::make_shared<Parameter<double>>("p", Tensor<double>({2, 2}, 1.0));
    Graph<double> g;
    CHECK_THROWS_AS(g.backward(g.param(p)), DataError);
    Graph<double> frozen(false);
    CHECK_THROWS_AS(frozen.backward(ops::sum(frozen.param(p))), DataError);
}

TEST_CASE("non-finite values raise a numerical fault naming the op") {
    Graph<float> g;
    auto x = g.constant(Tensor<float>({1, 2}, std::vector<float>{0.0f, 1.0f}));
    try {
        ops::log(x);
        FAIL("expected a numerical fault");
    } catch (const NumericalFault& e) {
        CHECK(std::string(e.what()).find("'log'") != std::string::npos);
        CHECK(e.code() == ExitCode::kNumerical);
    }
}

TEST_CASE("shape mismatches are data errors") {
    Graph<double> g;
    auto a = g.constant(Tensor<double>::matrix(2, 3));
    auto b = g.constant(Tensor<double>::matrix(2, 3));
    CHECK_THROWS_AS(ops::matmul(a, b), DataError);
    CHECK_THROWS_AS(ops::add(a, g.constant(Tensor<double>::matrix(3, 2))), DataError);
    const std::vector<int> bad{7};
    CHECK_THROWS_AS(ops::embedding(a, std::span<const int>(bad)), DataError);
    CHECK_THROWS_AS(Tensor<double>({0, 3}), DataError);
}

TEST_CASE("cross entropy ignores the pad target and matches the analytic uniform value") {
    Graph<double> g;
    auto logits = g.constant(Tensor<double>::matrix(2, 4));
    const std::vector<int> t{2, 0};
    CHECK(ops::cross_entropy(logits, std::span<const int>(t), 0).value()[0] == doctest::Approx(std::log(4.0)));
}

TEST_CASE("adam update matches a scalar recomputation") {
    AdamConfig cfg{0.01, 0.1, 0.9, 0.999, 1e-8};
    Tensor<double> p({1, 2}, std::vector<double>{1.0, -2.0});
    std::vector<double> m(2, 0), v(2, 0);
    double pm[2] = {0, 0}, pv[2] = {0, 0}, pp[2] = {1.0, -2.0};
    for (std::uint64_t step = 1; step <= 5; ++step) {
        Tensor<double> g({1, 2}, std::vector<double>{0.5 * double(step), -0.25});
        adam_update(p, g, m, v, step, cfg, 0.5);
        for (int i = 0; i < 2; ++i) {
            const double gi = g[i] * 0.5;
            pm[i] = 0.9 * pm[i] + 0.1 * gi;
            pv[i] = 0.999 * pv[i] + 0.001 * gi * gi;
            const double mh = pm[i] / (1 - std::pow(0.9, double(step)));
            const double vh = pv[i] / (1 - std::pow(0.999, double(step)));
            pp[i] -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * pp[i]);
            CHECK(p[i] == doctest::Approx(pp[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("adam deduplicates shared parameters") {
    auto p = std::make_shared<Parameter<float>>("p", Tensor<float>({1, 1}, 1.0f));
    p->grad[0] = 1.0f;
    Adam<float> adam({p, p}, {0.1, 1e-9});
    CHECK(adam.params().size() == 1);
    adam.step();
    // One update of magnitude ~lr, not two.
    CHECK(p->value[0] == doctest::Approx(0.9f).epsilon(1e-4));
}

TEST_CASE("checkpoint round-trips bit-exactly and names the broken field") {
    std::vector<NamedTensor> entries{{"a.w", Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, -6.5f})},
                                     {"b", Tensor<float>({4}, 0.25f)}};
    const auto bytes = encode_checkpoint(entries);
    CHECK(decode_checkpoint(bytes) == entries);
    CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);

    const auto path = std::filesystem::temp_directory_path() / "bigen_test_ckpt.bgck";
    save_checkpoint(path, entries);
    CHECK(load_checkpoint(path) == entries);
    std::filesystem::remove(path);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), DataError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    try {
        decode_checkpoint(truncated);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("values") != std::string::npos);
    }
    auto bad_version = bytes;
    bad_version[4] = 9;
    try {
        decode_checkpoint(bad_version);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
}
