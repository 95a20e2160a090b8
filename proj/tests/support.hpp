#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "bigen/graph.hpp"
#include "bigen/rng.hpp"
#include "bigen/trainer.hpp"

namespace bigen::testing {

inline Tensor<double> random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Tensor<double> t = Tensor<double>::matrix(rows, cols);
    for (auto& v : t.values()) v = nd(rng);
    return t;
}

inline ParamPtr<double> random_param(std::mt19937_64& rng, const std::string& name, std::size_t rows,
                                     std::size_t cols, double scale = 1.0) {
    return std::make_shared<Parameter<double>>(name, random_tensor(rng, rows, cols, scale));
}

using LossBuilder = std::function<Var<double>(Graph<double>&)>;

struct GradCheck {
    double relative_error = 0;  // ||analytic - numeric|| / (||analytic|| + ||numeric||)
    double max_abs_error = 0;
    std::size_t entries = 0;
};

// Central differences over every entry of every parameter (or a seeded random
// subset of at most max_entries).
inline GradCheck check_gradients(const std::vector<ParamPtr<double>>& params, const LossBuilder& build,
                                 double h = 1e-6, std::size_t max_entries = std::numeric_limits<std::size_t>::max(),
                                 std::uint64_t seed = 0) {
    for (const auto& p : params) p->zero_grad();
    {
        Graph<double> g;
        g.backward(build(g));
    }
    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i]->numel(); ++j) entries.emplace_back(i, j);
    if (entries.size() > max_entries) {
        auto rng = make_rng({seed, 0xFD});
        std::shuffle(entries.begin(), entries.end(), rng);
        entries.resize(max_entries);
    }
    auto eval = [&] {
        Graph<double> g(false);
        return build(g).value()[0];
    };
    double diff2 = 0, a2 = 0, n2 = 0;
    GradCheck out;
    for (auto [i, j] : entries) {
        auto& v = params[i]->value[j];
        const double orig = v;
        v = orig + h;
        const double lp = eval();
        v = orig - h;
        const double lm = eval();
        v = orig;
        const double num = (lp - lm) / (2 * h);
        const double ana = params[i]->grad[j];
        diff2 += (ana - num) * (ana - num);
        a2 += ana * ana;
        n2 += num * num;
        out.max_abs_error = std::max(out.max_abs_error, std::abs(ana - num));
    }
    out.entries = entries.size();
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    out.relative_error = denom > 0 ? std::sqrt(diff2) / denom : 0.0;
    return out;
}

// Small aligned corpus for fast tests.
inline CorpusConfig tiny_corpus_config(int cases = 24, int dim = 8, std::uint64_t seed = 5) {
    CorpusConfig cc;
    cc.seed = seed;
    cc.n_cases = cases;
    cc.dim = dim;
    cc.patches_min = 8;
    cc.patches_max = 24;
    return cc;
}

// Everything needed to train or evaluate on a generated corpus.
struct Fixture {
    Corpus corpus;
    Splits splits;
    Vocab vocab;
    KnowledgeBank bank;

    explicit Fixture(const CorpusConfig& cc) : corpus(generate_corpus(cc)), splits(split_dataset(corpus.cases, cc.seed)) {
        std::vector<std::string> reports;
        for (const Case* c : select_cases(corpus, splits.train)) reports.push_back(c->report);
        vocab = Vocab::build(reports);
        bank = build_bank(corpus, splits, "train", SentenceEmbedder(corpus));
    }

    std::vector<const Case*> train() const { return select_cases(corpus, splits.train); }
    std::vector<const Case*> val() const { return select_cases(corpus, splits.val); }
    std::vector<const Case*> test() const { return select_cases(corpus, splits.test); }

    ModelConfig model_config(const EncoderConfig& enc, int dim = 8, std::uint64_t seed = 1) const {
        ModelConfig mc;
        mc.dim = dim;
        mc.input_dim = corpus.config.dim;
        mc.bank_dim = corpus.config.dim;
        mc.vocab_size = static_cast<int>(vocab.size());
        mc.seed = seed;
        mc.encoder = enc;
        return mc;
    }
};

}  // namespace bigen::testing
