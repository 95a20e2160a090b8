// Acceptance run: one PASS/FAIL line per top-level criterion. Exits non-zero
// when any criterion fails. `acceptance <name>...` runs a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "bigen/checkpoint.hpp"
#include "bigen/text.hpp"
#include "bigen/trainer.hpp"
#include "metric_goldens.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace bigen;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Desk-scale corpus used by the training-based criteria.
CorpusConfig desk_corpus(std::uint64_t seed) {
    CorpusConfig cc;
    cc.seed = seed;
    cc.n_cases = 256;
    cc.dim = 32;
    cc.patches_min = 64;
    cc.patches_max = 128;
    return cc;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    const auto t0 = Clock::now();
    const int vocab = 10;
    const std::size_t M = 4, in_dim = 8;
    auto rng = make_rng({0xACC, 1});
    std::normal_distribution<float> nd;
    std::vector<float> visual(M * in_dim), retrieval(M * in_dim);
    for (auto& v : visual) v = nd(rng);
    const CaseInput in{visual, retrieval, M};
    const std::vector<int> ids{Vocab::kBos, 5, 7, 4, 9, 6, Vocab::kEos};
    double worst = 0;
    std::ostringstream rows;
    for (int row : {1, 2, 3}) {
        ModelConfig mc;
        mc.dim = 8;
        mc.input_dim = mc.bank_dim = int(in_dim);
        mc.vocab_size = vocab;
        mc.seed = 40 + row;
        mc.encoder = EncoderConfig::ablation_row(row);
        mc.encoder.heads = 2;
        BiGenModel<double> model(mc);
        const auto res = bigen::testing::check_gradients(model.parameters(), [&](Graph<double>& g) {
            return model.forward(g, in, nullptr, ids).loss;
        });
        worst = std::max(worst, res.relative_error);
        rows << " row" << row << "=" << fmt("%.2e", res.relative_error) << "(" << res.entries << " entries)";
    }
    const double t = seconds_since(t0);
    return {worst < 1e-4 && t < 60, "max rel err " + fmt("%.2e", worst) + rows.str() + fmt(", %.1fs", t)};
}

Outcome retrieval_oracle() {
    const auto t0 = Clock::now();
    int index_mismatch = 0;
    double worst = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto rng = make_rng({s, 0x0AC1E});
        std::uniform_int_distribution<int> Md(1, 200), md(1, 30), vd(1, 8);
        std::uniform_real_distribution<double> kd(0.01, 1.0);
        const std::size_t M = Md(rng), d = 16;
        const double k = kd(rng);
        const int m = md(rng), v = vd(rng);
        const auto bank = bigen::testing::random_bank(rng, 200, d);
        std::vector<float> emb(M * d);
        std::normal_distribution<float> nd;
        for (auto& x : emb) x = nd(rng);
        const auto attn = bigen::testing::random_attention(rng, M);
        const auto got = retrieve_all(emb, d, attn, bank, {k, m, v});
        const auto ref = bigen::testing::oracle_retrieve(emb, d, attn, bank, k, m, v);
        bool same = got.selected_patches == ref.selected && got.region_count() == ref.neighbours.size();
        for (std::size_t r = 0; same && r < ref.neighbours.size(); ++r) same = got.regions[r].indices == ref.neighbours[r];
        if (!same) {
            ++index_mismatch;
            continue;
        }
        for (std::size_t i = 0; i < ref.features.size(); ++i)
            worst = std::max(worst, std::abs(double(got.features[i]) - ref.features[i]));
    }
    const double t = seconds_since(t0);
    return {index_mismatch == 0 && worst < 1e-6 && t < 10,
            fmt("50 instances, index mismatches %d, max feature diff %.2e, %.2fs", index_mismatch, worst, t)};
}

Outcome arithmetic_contract() {
    auto rng = make_rng({0xA71});
    const auto bank = bigen::testing::random_bank(rng, 50, 8);
    std::vector<float> emb(100 * 8);
    std::normal_distribution<float> nd;
    for (auto& x : emb) x = nd(rng);
    const auto attn = bigen::testing::random_attention(rng, 100);
    const auto rk = retrieve_all(emb, 8, attn, bank, {0.4, 20, 3});

    ModelConfig mc;
    mc.dim = 8;
    mc.input_dim = mc.bank_dim = 8;
    mc.vocab_size = 10;
    mc.encoder.heads = 2;
    BiGenModel<float> model(mc);
    std::vector<float> vis(100 * 8);
    for (auto& x : vis) x = nd(rng);
    Graph<float> g(false);
    const auto out = model.encoder().encode(g, {vis, emb, 100}, &bank, mc.retrieval);
    const bool ok = rk.region_count() == 2 && rk.features.size() == 16 && out.ttca_applications == 2 &&
                    out.vtca_applications == 3 && out.knowledge->region_count() == 2;
    return {ok, fmt("M=100 k=0.4 m=20 -> %zu selected, %zu knowledge rows; L=3 -> VTCA %d, TTCA %d",
                    rk.selected_patches.size(), rk.region_count(), out.vtca_applications, out.ttca_applications)};
}

Outcome weight_sharing() {
    bigen::testing::Fixture fx(bigen::testing::tiny_corpus_config(12, 8, 5));
    auto mc = fx.model_config(EncoderConfig::ablation_row(6), 8);
    mc.encoder.heads = 2;
    BiGenModel<float> model(mc);
    ParamFactory<float> lone(99);
    const auto single = make_cross_attn(lone, "x", 8, 32, true)->numel();
    const auto shared_count = model.encoder().branch_parameter_count();

    // One step must move the shared matrix by exactly one Adam update.
    const auto& shared = model.encoder().visual_layers()[0]->attn.wk;
    const Case* c = fx.train().front();
    Graph<float> g;
    g.backward(model.forward(g, case_input(*c), &fx.bank, fx.vocab.encode(c->report)).loss);
    auto expected = shared->value;
    std::vector<double> m(expected.numel(), 0.0), v(expected.numel(), 0.0);
    const AdamConfig ac{1e-3, 5e-5};
    adam_update(expected, shared->grad, m, v, 1, ac);
    Adam<float> adam(model.parameters(), ac);
    std::size_t references = 0;
    for (const auto& p : adam.params()) references += p == shared;
    adam.step();
    const bool once = shared->value == expected && references == 1;
    return {shared_count == single && once,
            fmt("two-branch count %zu vs single layer set %zu; shared tensor updated once: %s", shared_count, single,
                once ? "yes" : "no")};
}

Outcome overfit() {
    const auto t0 = Clock::now();
    CorpusConfig cc = desk_corpus(3);
    cc.n_cases = 12;
    const auto corpus = generate_corpus(cc);
    std::vector<const Case*> four;
    metrics::Texts refs;
    for (int i = 0; i < 4; ++i) {
        four.push_back(&corpus.cases[i]);
        refs.push_back(corpus.cases[i].report);
    }
    const auto vocab = Vocab::build(refs);
    const auto bank = build_bank(four, SentenceEmbedder(corpus), {corpus_fingerprint(corpus), "train"});
    ModelConfig mc;
    mc.dim = mc.input_dim = mc.bank_dim = 32;
    mc.vocab_size = int(vocab.size());
    BiGenModel<float> model(mc);
    Adam<float> adam(model.parameters(), {1e-3, 5e-5});
    std::vector<std::vector<int>> ids;
    for (const Case* c : four) ids.push_back(vocab.encode(c->report));
    double acc = 0, b4 = 0;
    int step = 0;
    while (step < 300) {
        for (std::size_t i = 0; i < four.size(); ++i) {
            Graph<float> g;
            g.backward(model.forward(g, case_input(*four[i]), &bank, ids[i]).loss);
            adam.step();
            adam.zero_grad();
            ++step;
        }
        if (step % 20 == 0) {
            acc = teacher_forced_accuracy(model, four, &bank, vocab);
            b4 = metrics::bleu(generate_reports(model, four, &bank, vocab, 1), refs, 4);
            if (acc == 1.0 && b4 == 1.0) break;
        }
    }
    const double t = seconds_since(t0);
    return {acc == 1.0 && b4 == 1.0 && t < 300,
            fmt("teacher-forced acc %.4f, greedy BLEU-4 %.4f after %d steps, %.1fs", acc, b4, step, t)};
}

Outcome directional_ablation() {
    const auto t0 = Clock::now();
    const auto cc = desk_corpus(7);
    const auto corpus = generate_corpus(cc);
    const auto splits = split_dataset(corpus.cases, cc.seed);
    std::vector<std::string> train_reports;
    for (const Case* c : select_cases(corpus, splits.train)) train_reports.push_back(c->report);
    const auto vocab = Vocab::build(train_reports);
    const auto bank = build_bank(corpus, splits, "train", SentenceEmbedder(corpus));

    AblationConfig ac;
    ac.base.model.dim = ac.base.model.input_dim = ac.base.model.bank_dim = 32;
    ac.base.model.vocab_size = int(vocab.size());
    ac.base.lr = 1e-3;
    ac.base.epochs = 40;
    ac.seeds = {1, 2, 3};
    ac.rows = {1, 2, 3, 4, 5, 6};
    const auto rows = run_ablation(ac, {&corpus, &splits, &vocab, &bank}, [](const std::string& s) {
        std::cerr << "  ablation " << s << "\n";
    });
    std::cout << ablation_table(rows);
    std::map<int, double> b4;
    for (const auto& r : rows) b4[r.row] = r.mean[3];
    const double t = seconds_since(t0);
    const bool ok = b4[6] >= b4[5] && b4[5] >= b4[1] && b4[2] > b4[1] && t < 1800;
    return {ok, fmt("mean BLEU-4 row1 %.4f row2 %.4f row5 %.4f row6 %.4f, %.0fs", b4[1], b4[2], b4[5], b4[6], t)};
}

Outcome metric_goldens() {
    int bad = 0;
    std::string names;
    const auto goldens = bigen::testing::metric_goldens();
    for (const auto& g : goldens) {
        if (!(std::abs(g.actual - g.expected) < 1e-9)) {
            ++bad;
            names += " " + g.name;
        }
    }
    const auto corpus = generate_corpus(bigen::testing::tiny_corpus_config(30, 8, 1));
    metrics::Texts refs;
    for (const auto& c : corpus.cases) refs.push_back(c.report);
    int not_one = 0;
    for (const auto& [k, v] : metrics::evaluate(refs, refs, corpus.atlas.entity_dictionary()).fields())
        if (v != 1.0) {
            ++not_one;
            names += " identical:" + k;
        }
    return {bad == 0 && not_one == 0,
            fmt("%zu goldens, %d off; identical corpus metrics below 1: %d", goldens.size(), bad, not_one) + names};
}

Outcome decoding_equivalence() {
    int differ = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto rng = make_rng({s, 0xBEA});
        std::uniform_int_distribution<int> vocab_d(5, 20);
        ParamFactory<float> f(1000 + s);
        ReportDecoder<float> dec(f, 8, 2, 2, vocab_d(rng));
        for (const auto& p : f.created())
            if (p->name == "dec.out.w")
                for (auto& v : p->value.values()) v *= 5.0f;
        Tensor<float> mem = Tensor<float>::matrix(2, 8);
        std::normal_distribution<float> nd;
        for (auto& v : mem.values()) v = nd(rng);
        const DecodeLimits lim{1, 2, 20, {0, 1}};
        const auto g = dec.greedy(mem, lim);
        const auto b = dec.beam(mem, 1, lim);
        differ += g.tokens != b.tokens;
    }
    int off_optimum = 0;
    const DecodeLimits toy{1, 2, 4, {0, 1}};
    for (std::uint64_t s = 0; s < 30; ++s) {
        ParamFactory<double> f(5000 + s);
        ReportDecoder<double> dec(f, 8, 1, 2, 5);
        for (const auto& p : f.created())
            if (p->name == "dec.out.w")
                for (auto& v : p->value.values()) v *= 4.0;
        auto rng = make_rng({s, 0x70});
        Tensor<double> mem = Tensor<double>::matrix(2, 8);
        std::normal_distribution<double> nd;
        for (auto& v : mem.values()) v = nd(rng);
        const auto ref = bigen::testing::exhaustive_best(dec.start(mem), toy,
                                                         [&](DecoderState<double>& st, int t) { return dec.step(st, t); });
        const auto got = dec.beam(mem, 25, toy);
        off_optimum += got.tokens != ref.tokens;
    }
    return {differ == 0 && off_optimum == 0,
            fmt("beam=1 vs greedy: %d/100 differ; beam=25 vs exhaustive (vocab 5, max_len 4): %d/30 differ", differ,
                off_optimum)};
}

Outcome semantic_fidelity() {
    double rate_sum = 0;
    std::string per_seed;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto cc = desk_corpus(seed);
        const auto corpus = generate_corpus(cc);
        const auto splits = split_dataset(corpus.cases, seed);
        const SentenceEmbedder embedder(corpus);
        const auto bank = build_bank(corpus, splits, "train", embedder);
        ModelConfig mc;
        mc.dim = mc.input_dim = mc.bank_dim = 32;
        mc.vocab_size = 10;
        mc.seed = seed;
        BiGenModel<float> model(mc);
        std::size_t hits = 0, total = 0;
        for (const Case* c : select_cases(corpus, splits.test)) {
            Graph<float> g(false);
            const auto out = model.encoder().encode(g, case_input(*c), &bank, mc.retrieval);
            const auto& rk = *out.knowledge;
            const std::size_t m = std::size_t(mc.retrieval.m);
            for (std::size_t r = 0; r < rk.region_count(); ++r) {
                std::map<int, int> counts;
                for (std::size_t i = r * m; i < std::min(rk.selected_patches.size(), (r + 1) * m); ++i)
                    ++counts[c->tissue_ids[rk.selected_patches[i]]];
                const int dominant = std::max_element(counts.begin(), counts.end(), [](auto& a, auto& b) {
                                         return a.second < b.second;
                                     })->first;
                for (auto idx : rk.regions[r].indices) {
                    const auto src = embedder.source_tissue(bank.sentences()[idx]);
                    hits += src && *src == dominant;
                    ++total;
                }
            }
        }
        const double rate = double(hits) / double(total);
        rate_sum += rate;
        per_seed += fmt(" seed%d=%.3f", int(seed), rate);
    }
    const double mean = rate_sum / 3;
    return {mean > 0.7, fmt("retrieved sentences matching the region's dominant tissue: %.3f", mean) + per_seed};
}

Outcome determinism() {
    bigen::testing::Fixture fx(bigen::testing::tiny_corpus_config(24, 16, 11));
    TrainConfig tc;
    tc.model = fx.model_config(EncoderConfig::ablation_row(6), 16);
    tc.model.encoder.heads = 2;
    tc.epochs = 3;
    tc.lr = 1e-3;
    std::string logs[2];
    std::vector<char> ckpt[2];
    for (int run = 0; run < 2; ++run) {
        BiGenModel<float> model(tc.model);
        std::ostringstream log;
        train(model, tc, {&fx.vocab, &fx.bank, fx.train(), fx.val()},
              [&](const EpochRecord& r) { write_epoch_jsonl(log, r); });
        logs[run] = log.str();
        ckpt[run] = encode_checkpoint(model.state());
    }
    const auto dir = std::filesystem::temp_directory_path() / "bigen_acceptance";
    std::filesystem::create_directories(dir);
    save_bank(dir / "bank.bin", fx.bank);
    const bool bank_ok = encode_bank(load_bank(dir / "bank.bin")) == encode_bank(fx.bank);
    save_checkpoint(dir / "model.ckpt", decode_checkpoint(ckpt[0]));
    const bool ckpt_ok = encode_checkpoint(load_checkpoint(dir / "model.ckpt")) == ckpt[0];
    std::filesystem::remove_all(dir);
    const bool logs_ok = !logs[0].empty() && logs[0] == logs[1];
    const bool weights_ok = ckpt[0] == ckpt[1];
    return {logs_ok && weights_ok && bank_ok && ckpt_ok,
            fmt("logs identical: %s; weights identical: %s; bank round-trip: %s; checkpoint round-trip: %s",
                logs_ok ? "yes" : "no", weights_ok ? "yes" : "no", bank_ok ? "yes" : "no", ckpt_ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient_integrity", gradient_integrity},
        {"retrieval_oracle_equivalence", retrieval_oracle},
        {"arithmetic_contract", arithmetic_contract},
        {"weight_sharing_semantics", weight_sharing},
        {"overfit_sanity", overfit},
        {"directional_ablation", directional_ablation},
        {"metric_goldens", metric_goldens},
        {"decoding_equivalence", decoding_equivalence},
        {"retrieval_semantic_fidelity", semantic_fidelity},
        {"determinism_and_persistence", determinism},
    };
    std::vector<std::string> only(argv + 1, argv + argc);
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
