#include "bigen/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bigen/binary_io.hpp"
#include "bigen/rng.hpp"
#include "bigen/trainer.hpp"

namespace bigen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Plumbing

bool quiet() {
    const char* v = std::getenv("BIGEN_LOG");
    return v != nullptr && std::string(v) == "quiet";
}

void progress(std::ostream& err, const std::string& msg) {
    if (!quiet()) err << "bigen: " << msg << '\n';
}

std::string hash_file(const fs::path& p) {
    const auto bytes = io::read_file(p);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
    return buf;
}

// Refuses to clobber an existing file unless forced.
void guard_file(const fs::path& p, bool force) {
    if (fs::exists(p) && !force) {
        throw UsageError("output '" + p.string() + "' already exists; pass --force to overwrite");
    }
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void guard_dir(const fs::path& p, bool force) {
    if (fs::exists(p)) {
        if (!fs::is_directory(p)) throw UsageError("output '" + p.string() + "' exists and is not a directory");
        if (!fs::is_empty(p) && !force) {
            throw UsageError("output directory '" + p.string() + "' is not empty; pass --force to overwrite");
        }
    }
    fs::create_directories(p);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class N>
std::vector<N> parse_numbers(const std::string& s, const std::string& what) {
    std::vector<N> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            double v = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            if constexpr (std::is_integral_v<N>) {
                if (v != static_cast<double>(static_cast<long long>(v))) throw std::invalid_argument(item);
            }
            out.push_back(static_cast<N>(v));
        } catch (const std::logic_error&) {
            throw UsageError(what + ": '" + item + "' is not a valid number");
        }
    }
    if (out.empty()) throw UsageError(what + ": empty list");
    return out;
}

json option_snapshot(const CLI::App* sub) {
    json cfg = json::object();
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string name = opt->get_lnames().front();
        if (name == "help") continue;
        const auto& res = opt->results();
        if (!res.empty()) {
            std::string joined;
            for (const auto& r : res) joined += (joined.empty() ? "" : ",") + r;
            cfg[name] = joined;
        } else {
            cfg[name] = opt->get_default_str();
        }
    }
    return cfg;
}

struct Manifest {
    std::string subcommand;
    json config;
    std::uint64_t seed = 0;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;

    void write(const fs::path& path) const {
        json in = json::array(), out = json::array();
        for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"fnv1a64", hash_file(p)}});
        for (const auto& p : outputs) out.push_back({{"path", p.string()}, {"fnv1a64", hash_file(p)}});
        json j{{"tool", "bigen"}, {"subcommand", subcommand}, {"seed", seed},
               {"config", config}, {"inputs", in}, {"outputs", out}};
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw DataError("cannot write manifest '" + path.string() + "'");
        f << j.dump(2) << '\n';
    }
};

// ---------------------------------------------------------------------------
// Shared loaders

struct CorpusDir {
    Corpus corpus;
    Splits splits;
    fs::path corpus_file, splits_file;
};

CorpusDir load_corpus_dir(const fs::path& dir) {
    CorpusDir c;
    c.corpus_file = dir / "corpus.jsonl";
    c.splits_file = dir / "splits.json";
    if (!fs::exists(c.corpus_file)) throw DataError("no corpus at '" + c.corpus_file.string() + "'");
    c.corpus = load_corpus(c.corpus_file);
    c.splits = load_splits(c.splits_file);
    return c;
}

std::vector<std::string> split_reports(const CorpusDir& c, const std::string& split) {
    std::vector<std::string> out;
    for (const Case* k : select_cases(c.corpus, c.splits.get(split))) out.push_back(k->report);
    return out;
}

struct ModelDir {
    ModelConfig config;
    Vocab vocab;
    std::unique_ptr<BiGenModel<float>> model;
    std::vector<fs::path> files;
};

ModelDir load_model_dir(const fs::path& dir) {
    ModelDir m;
    m.files = {dir / "model.cfg", dir / "vocab.txt", dir / "model.ckpt"};
    m.config = ModelConfig::load(m.files[0]);
    m.vocab = Vocab::load(m.files[1]);
    if (static_cast<int>(m.vocab.size()) != m.config.vocab_size) {
        throw DataError("vocab.txt holds " + std::to_string(m.vocab.size()) + " tokens, model.cfg says " +
                        std::to_string(m.config.vocab_size));
    }
    m.model = std::make_unique<BiGenModel<float>>(m.config);
    m.model->load_state(load_checkpoint(m.files[2]));
    return m;
}

std::optional<KnowledgeBank> load_checked_bank(const std::string& path, const Corpus& corpus, bool required) {
    if (path.empty()) {
        if (required) throw UsageError("--bank is required when kr is on");
        return std::nullopt;
    }
    auto bank = load_bank(path, corpus.config.dim);
    require_training_provenance(bank, corpus);
    return bank;
}

// ---------------------------------------------------------------------------
// Training options shared by train, ablate and sweep.

struct TrainOptions {
    int dim = 512;
    int layers = 3;
    int heads = 4;
    int decoder_layers = 3;
    std::string flags = "ws+wsl+vtca+kr+ttca";
    double k = 0.4;
    int m = 20;
    int v = 3;
    double lr = 1e-4;
    double wd = 5e-5;
    int epochs = 30;
    int accumulation = 8;
    int patience = 10;
    int val_beam = 1;
    int max_len = 80;
    std::uint64_t seed = 1;
};

void add_train_options(CLI::App* sub, TrainOptions& o, bool with_flags) {
    sub->add_option("--dim", o.dim, "Model width d");
    sub->add_option("--layers", o.layers, "Encoder layers L");
    sub->add_option("--heads", o.heads, "Attention heads");
    sub->add_option("--decoder-layers", o.decoder_layers, "Decoder layers");
    if (with_flags) {
        sub->add_option("--encoder-flags", o.flags,
                        "Encoder components joined by '+': ws, wsl, vtca, kr, ttca; or 'baseline'");
    }
    sub->add_option("--k", o.k, "Patch selection ratio");
    sub->add_option("--m", o.m, "Region size");
    sub->add_option("--v", o.v, "Sentences retrieved per region");
    sub->add_option("--lr", o.lr, "Adam learning rate");
    sub->add_option("--wd", o.wd, "Decoupled weight decay");
    sub->add_option("--epochs", o.epochs, "Maximum epochs");
    sub->add_option("--accumulation", o.accumulation, "Cases per optimizer step");
    sub->add_option("--patience", o.patience, "Early-stopping patience in epochs");
    sub->add_option("--val-beam", o.val_beam, "Beam width for validation decoding");
    sub->add_option("--max-len", o.max_len, "Maximum generated tokens");
    sub->add_option("--seed", o.seed, "Initialisation and shuffling seed");
}

EncoderConfig parse_flags(const std::string& s, int layers, int heads) {
    EncoderConfig c;
    c.ws = c.wsl = c.vtca = c.kr = c.ttca = false;
    c.layers = layers;
    c.heads = heads;
    if (s != "baseline" && s != "none") {
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, '+')) {
            if (item == "ws") c.ws = true;
            else if (item == "wsl") c.wsl = true;
            else if (item == "vtca") c.vtca = true;
            else if (item == "kr") c.kr = true;
            else if (item == "ttca") c.ttca = true;
            else throw UsageError("unknown encoder flag '" + item + "' in '" + s + "'");
        }
    }
    return c;
}

TrainConfig make_train_config(const TrainOptions& o, const Corpus& corpus, int vocab_size, int bank_dim) {
    TrainConfig tc;
    tc.model.dim = o.dim;
    tc.model.input_dim = corpus.config.dim;
    tc.model.bank_dim = bank_dim > 0 ? bank_dim : corpus.config.dim;
    tc.model.vocab_size = vocab_size;
    tc.model.decoder_layers = o.decoder_layers;
    tc.model.max_len = o.max_len;
    tc.model.seed = o.seed;
    tc.model.encoder = parse_flags(o.flags, o.layers, o.heads);
    tc.model.retrieval = {o.k, o.m, o.v};
    tc.epochs = o.epochs;
    tc.accumulation = o.accumulation;
    tc.lr = o.lr;
    tc.weight_decay = o.wd;
    tc.patience = o.patience;
    tc.val_beam = o.val_beam;
    tc.seed = o.seed;
    tc.validate();
    return tc;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Context {
    std::ostream& out;
    std::ostream& err;
    bool force = false;
};

struct GenCorpus {
    CorpusConfig cc;
    std::string out;

    void add(CLI::App* s) {
        s->add_option("--seed", cc.seed, "Corpus seed");
        s->add_option("--cases", cc.n_cases, "Number of cases");
        s->add_option("--tissues", cc.tissue_count, "Tissue types in the atlas");
        s->add_option("--patches-min", cc.patches_min, "Minimum patches per case");
        s->add_option("--patches-max", cc.patches_max, "Maximum patches per case");
        s->add_option("--dim", cc.dim, "Feature and embedding width");
        s->add_option("--out", out, "Output directory")->required();
    }

    void run(Context& ctx, const CLI::App* s) {
        cc.validate();
        const fs::path dir = out;
        guard_dir(dir, ctx.force);
        const Corpus corpus = generate_corpus(cc);
        const Splits splits = split_dataset(corpus.cases, cc.seed);
        save_corpus(dir / "corpus.jsonl", corpus);
        save_splits(dir / "splits.json", splits);
        Manifest{"gen-corpus", option_snapshot(s), cc.seed, {}, {dir / "corpus.jsonl", dir / "splits.json"}}.write(
            dir / "manifest.json");
        ctx.out << "cases=" << corpus.cases.size() << " train=" << splits.train.size() << " val=" << splits.val.size()
                << " test=" << splits.test.size() << '\n';
    }
};

struct BuildBank {
    std::string corpus, split = "train", out;

    void add(CLI::App* s) {
        s->add_option("--corpus", corpus, "Corpus directory")->required();
        s->add_option("--split", split, "Split to build from (only 'train' is accepted)");
        s->add_option("--out", out, "Output bank file")->required();
    }

    void run(Context& ctx, const CLI::App* s) {
        const auto cd = load_corpus_dir(corpus);
        const SentenceEmbedder embedder(cd.corpus);
        const auto bank = build_bank(cd.corpus, cd.splits, split, embedder);
        guard_file(out, ctx.force);
        save_bank(out, bank);
        Manifest{"build-bank", option_snapshot(s), cd.corpus.config.seed, {cd.corpus_file, cd.splits_file},
                 {out, fs::path(out + ".provenance.json")}}
            .write(out + ".manifest.json");
        ctx.out << "T=" << bank.size() << " d=" << bank.dim() << '\n';
    }
};

struct Train {
    TrainOptions o;
    std::string corpus, bank, out;

    void add(CLI::App* s) {
        s->add_option("--corpus", corpus, "Corpus directory")->required();
        s->add_option("--bank", bank, "Knowledge bank file (required when kr is on)");
        s->add_option("--out", out, "Output model directory")->required();
        add_train_options(s, o, true);
    }

    void run(Context& ctx, const CLI::App* s) {
        const auto cd = load_corpus_dir(corpus);
        const Vocab vocab = Vocab::build(split_reports(cd, "train"));
        const bool needs_bank = parse_flags(o.flags, o.layers, o.heads).kr;
        const auto kb = load_checked_bank(needs_bank ? bank : "", cd.corpus, needs_bank);
        const TrainConfig tc = make_train_config(o, cd.corpus, static_cast<int>(vocab.size()), kb ? kb->dim() : 0);
        const fs::path dir = out;
        guard_dir(dir, ctx.force);

        BiGenModel<float> model(tc.model);
        TrainData td{&vocab, kb ? &*kb : nullptr, select_cases(cd.corpus, cd.splits.train),
                     select_cases(cd.corpus, cd.splits.val)};
        std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
        const auto result = train(model, tc, td, [&](const EpochRecord& r) {
            write_epoch_jsonl(log, r);
            log.flush();
            progress(ctx.err, "epoch " + std::to_string(r.epoch) + " loss=" + std::to_string(r.train_loss) +
                                  " val_bleu_4=" + std::to_string(r.val_bleu4));
        });
        log.close();
        tc.model.save(dir / "model.cfg");
        vocab.save(dir / "vocab.txt");
        save_checkpoint(dir / "model.ckpt", model.state());

        Manifest m{"train", option_snapshot(s), tc.seed, {cd.corpus_file, cd.splits_file}, {}};
        if (kb) m.inputs.push_back(bank);
        m.outputs = {dir / "model.cfg", dir / "vocab.txt", dir / "model.ckpt", dir / "train_log.jsonl"};
        m.write(dir / "manifest.json");
        ctx.out << "best_epoch=" << result.best_epoch << " val_bleu_4=" << result.best_val_bleu4
                << " params=" << model.parameter_count() << '\n';
    }
};

struct Generate {
    std::string model, corpus, bank, split = "test", out, debug;
    int beam = 3;

    void add(CLI::App* s) {
        s->add_option("--model", model, "Model directory")->required();
        s->add_option("--corpus", corpus, "Corpus directory")->required();
        s->add_option("--bank", bank, "Knowledge bank file (required when kr is on)");
        s->add_option("--split", split, "Split to generate for");
        s->add_option("--beam", beam, "Beam width (1 = greedy)");
        s->add_option("--out", out, "Output JSONL file")->required();
        s->add_option("--retrieval-debug", debug, "Optional JSONL dump of retrieved sentences per region");
    }

    void run(Context& ctx, const CLI::App* s) {
        if (beam < 1) throw UsageError("--beam must be >= 1");
        const auto cd = load_corpus_dir(corpus);
        auto md = load_model_dir(model);
        const auto kb = load_checked_bank(md.config.encoder.kr ? bank : "", cd.corpus, md.config.encoder.kr);
        const KnowledgeBank* bp = kb ? &*kb : nullptr;
        guard_file(out, ctx.force);
        if (!debug.empty()) guard_file(debug, ctx.force);

        std::ofstream f(out, std::ios::trunc);
        std::ofstream dbg;
        if (!debug.empty()) dbg.open(debug, std::ios::trunc);
        for (const Case* c : select_cases(cd.corpus, cd.splits.get(split))) {
            const auto hyp = md.model->generate(case_input(*c), bp, beam);
            json rec{{"case_id", c->case_id},
                     {"text", md.vocab.decode(hyp.tokens)},
                     {"tokens", hyp.tokens},
                     {"token_logprobs", hyp.logprobs}};
            f << rec.dump() << '\n';
            if (dbg.is_open() && bp) {
                Graph<float> g(false);
                const auto enc = md.model->encoder().encode(g, case_input(*c), bp, md.config.retrieval);
                if (enc.knowledge) write_retrieval_debug(dbg, c->case_id, *enc.knowledge, *bp);
            }
        }
        f.close();
        Manifest m{"generate", option_snapshot(s), md.config.seed, md.files, {out}};
        m.inputs.push_back(cd.corpus_file);
        m.inputs.push_back(cd.splits_file);
        if (bp) m.inputs.push_back(bank);
        if (dbg.is_open()) {
            dbg.close();
            m.outputs.push_back(debug);
        }
        m.write(out + ".manifest.json");
        ctx.out << "generated=" << cd.splits.get(split).size() << '\n';
    }
};

struct Evaluate {
    std::string generations, corpus, out;

    void add(CLI::App* s) {
        s->add_option("--generations", generations, "JSONL file written by generate")->required();
        s->add_option("--corpus", corpus, "Corpus directory")->required();
        s->add_option("--out", out, "Output key=value metric file")->required();
    }

    void run(Context& ctx, const CLI::App* s) {
        const auto cd = load_corpus_dir(corpus);
        std::ifstream in(generations);
        if (!in) throw DataError("cannot read generations '" + generations + "'");
        metrics::Texts cands, refs;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                const auto j = json::parse(line);
                const auto id = j.at("case_id").get<std::string>();
                cands.push_back(j.at("text").get<std::string>());
                refs.push_back(cd.corpus.find(id).report);
            } catch (const json::exception& e) {
                throw DataError("generations line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        const auto report = metrics::evaluate(cands, refs, cd.corpus.atlas.entity_dictionary());
        guard_file(out, ctx.force);
        {
            std::ofstream f(out, std::ios::trunc);
            f << "cases=" << cands.size() << '\n' << report.key_values();
        }
        Manifest{"evaluate", option_snapshot(s), 0, {generations, cd.corpus_file}, {out}}.write(out + ".manifest.json");
        ctx.out << report.table();
    }
};

json report_json(const metrics::MetricReport& r) {
    json j = json::object();
    for (const auto& [k, v] : r.fields()) j[k] = v;
    return j;
}

struct Ablate {
    TrainOptions o;
    std::string corpus, bank, out, seeds = "1,2,3", rows = "1,2,3,4,5,6";
    int beam = 3;

    void add(CLI::App* s) {
        s->add_option("--corpus", corpus, "Corpus directory")->required();
        s->add_option("--bank", bank, "Knowledge bank file")->required();
        s->add_option("--out", out, "Output directory")->required();
        s->add_option("--seeds", seeds, "Comma-separated seeds");
        s->add_option("--rows", rows, "Comma-separated ablation rows (1 = vanilla, 6 = full)");
        s->add_option("--beam", beam, "Beam width for test decoding");
        add_train_options(s, o, false);
    }

    void run(Context& ctx, const CLI::App* s) {
        const auto cd = load_corpus_dir(corpus);
        const Vocab vocab = Vocab::build(split_reports(cd, "train"));
        const auto kb = load_checked_bank(bank, cd.corpus, true);
        AblationConfig ac;
        ac.base = make_train_config(o, cd.corpus, static_cast<int>(vocab.size()), kb->dim());
        ac.seeds = parse_numbers<std::uint64_t>(seeds, "--seeds");
        ac.rows = parse_numbers<int>(rows, "--rows");
        ac.test_beam = beam;
        const fs::path dir = out;
        guard_dir(dir, ctx.force);
        const auto result = run_ablation(ac, {&cd.corpus, &cd.splits, &vocab, &*kb},
                                         [&](const std::string& msg) { progress(ctx.err, msg); });
        const std::string table = ablation_table(result);
        {
            std::ofstream f(dir / "ablation.txt", std::ios::trunc);
            f << table;
        }
        json j = json::array();
        for (const auto& r : result) {
            json per = json::array();
            for (const auto& rep : r.per_seed) per.push_back(report_json(rep));
            j.push_back({{"row", r.row}, {"flags", r.flags.flags_string()}, {"mean", r.mean},
                         {"avg_delta", r.avg_delta}, {"per_seed", per}});
        }
        {
            std::ofstream f(dir / "ablation.json", std::ios::trunc);
            f << j.dump(2) << '\n';
        }
        Manifest{"ablate", option_snapshot(s), o.seed, {cd.corpus_file, cd.splits_file, bank},
                 {dir / "ablation.txt", dir / "ablation.json"}}
            .write(dir / "manifest.json");
        ctx.out << table;
    }
};

struct Sweep {
    TrainOptions o;
    std::string corpus, bank, out, param = "k", values = "0.2,0.4,0.6,0.8,1.0";
    int beam = 3;

    void add(CLI::App* s) {
        s->add_option("--corpus", corpus, "Corpus directory")->required();
        s->add_option("--bank", bank, "Knowledge bank file")->required();
        s->add_option("--out", out, "Output directory")->required();
        s->add_option("--param", param, "Swept parameter: k, v or m");
        s->add_option("--values", values, "Comma-separated values");
        s->add_option("--beam", beam, "Beam width for test decoding");
        add_train_options(s, o, true);
    }

    void run(Context& ctx, const CLI::App* s) {
        const auto cd = load_corpus_dir(corpus);
        const Vocab vocab = Vocab::build(split_reports(cd, "train"));
        const auto kb = load_checked_bank(bank, cd.corpus, true);
        const TrainConfig tc = make_train_config(o, cd.corpus, static_cast<int>(vocab.size()), kb->dim());
        const auto vals = parse_numbers<double>(values, "--values");
        const fs::path dir = out;
        guard_dir(dir, ctx.force);
        const auto points = run_sweep(tc, param, vals, {&cd.corpus, &cd.splits, &vocab, &*kb}, beam,
                                      [&](const std::string& msg) { progress(ctx.err, msg); });
        std::ostringstream tsv;
        tsv << param;
        for (const auto& [k, v] : metrics::MetricReport{}.fields()) tsv << '\t' << k;
        tsv << '\n';
        json j = json::array();
        for (const auto& p : points) {
            tsv << p.value;
            for (const auto& [k, v] : p.report.fields()) tsv << '\t' << v;
            tsv << '\n';
            j.push_back({{"param", param}, {"value", p.value}, {"metrics", report_json(p.report)}});
        }
        {
            std::ofstream f(dir / "sweep.tsv", std::ios::trunc);
            f << tsv.str();
        }
        {
            std::ofstream f(dir / "sweep.json", std::ios::trunc);
            f << j.dump(2) << '\n';
        }
        Manifest{"sweep", option_snapshot(s), o.seed, {cd.corpus_file, cd.splits_file, bank},
                 {dir / "sweep.tsv", dir / "sweep.json"}}
            .write(dir / "manifest.json");
        ctx.out << tsv.str();
    }
};

struct Heatmap {
    std::string model, corpus, bank, cases, out;

    void add(CLI::App* s) {
        s->add_option("--model", model, "Model directory")->required();
        s->add_option("--corpus", corpus, "Corpus directory")->required();
        s->add_option("--bank", bank, "Knowledge bank file (required when kr is on)");
        s->add_option("--cases", cases, "Comma-separated case ids")->required();
        s->add_option("--out", out, "Output directory")->required();
    }

    void run(Context& ctx, const CLI::App* s) {
        const auto cd = load_corpus_dir(corpus);
        auto md = load_model_dir(model);
        const auto kb = load_checked_bank(md.config.encoder.kr ? bank : "", cd.corpus, md.config.encoder.kr);
        const auto ids = split_list(cases);
        if (ids.empty()) throw UsageError("--cases: no case ids given");
        std::vector<const Case*> selected;
        for (const auto& id : ids) selected.push_back(&cd.corpus.find(id));
        const fs::path dir = out;
        guard_dir(dir, ctx.force);
        Manifest m{"heatmap", option_snapshot(s), md.config.seed, md.files, {}};
        m.inputs.push_back(cd.corpus_file);
        for (const Case* c : selected) {
            Graph<float> g(false);
            const auto enc = md.model->encoder().encode(g, case_input(*c), kb ? &*kb : nullptr, md.config.retrieval);
            const fs::path p = dir / (c->case_id + ".pgm");
            write_heatmap_pgm(p, enc.layer1_attention, c->grid_rows, c->grid_cols);
            m.outputs.push_back(p);
        }
        m.write(dir / "manifest.json");
        ctx.out << "heatmaps=" << selected.size() << '\n';
    }
};

const char* kind_name(ExitCode c) {
    switch (c) {
        case ExitCode::kUsage: return "usage";
        case ExitCode::kData: return "data";
        case ExitCode::kNumerical: return "numerical";
        default: return "ok";
    }
}

int fail(std::ostream& err, ExitCode code, std::string msg) {
    for (char& ch : msg)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::string escaped;
    for (char ch : msg) {
        if (ch == '"' || ch == '\\') escaped += '\\';
        escaped += ch;
    }
    err << "bigen: error kind=" << kind_name(code) << " code=" << static_cast<int>(code) << " message=\"" << escaped
        << "\"\n";
    return static_cast<int>(code);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_flat_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config " + path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        key.erase(key.find_last_not_of(" \t") + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        out.emplace_back(key, value);
    }
    return out;
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
    CLI::App app{"BiGen pathology report generation pipeline", "bigen"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();
    Context ctx{out, err};
    std::string config_path;
    app.add_option("--config", config_path, "Flat key = value file supplying defaults for any subcommand flag");
    app.add_flag("--force", ctx.force, "Overwrite existing outputs");

    GenCorpus gen;
    BuildBank bb;
    Train tr;
    Generate ge;
    Evaluate ev;
    Ablate ab;
    Sweep sw;
    Heatmap hm;
    std::map<std::string, CLI::App*> subs;
    auto add = [&](const std::string& name, const std::string& desc, auto& cmd) {
        CLI::App* s = app.add_subcommand(name, desc);
        cmd.add(s);
        subs[name] = s;
    };
    add("gen-corpus", "Generate a synthetic paired corpus and its patient-disjoint split", gen);
    add("build-bank", "Build the sentence knowledge bank from training reports", bb);
    add("train", "Train a model with validation-based model selection", tr);
    add("generate", "Generate reports for a split", ge);
    add("evaluate", "Score generated reports against references", ev);
    add("ablate", "Run the component ablation grid", ab);
    add("sweep", "Sweep a retrieval hyperparameter", sw);
    add("heatmap", "Export layer-1 attention heatmaps as PGM images", hm);

    try {
        std::vector<std::string> args = args_in;
        // Config values become flags of the selected subcommand unless given explicitly.
        std::string cfg, sub_name;
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
            else if (args[i].rfind("--config=", 0) == 0) cfg = args[i].substr(9);
            else if (sub_name.empty() && subs.count(args[i])) sub_name = args[i];
        }
        if (!cfg.empty() && !sub_name.empty()) {
            for (const auto& [key, value] : read_flat_config(cfg)) {
                if (key == "config" || key == "force") throw UsageError("config key '" + key + "' is not allowed");
                bool known = false;
                for (const auto& [n, s] : subs) known = known || s->get_option_no_throw("--" + key) != nullptr;
                if (!known) throw UsageError("config key '" + key + "' matches no option");
                if (subs[sub_name]->get_option_no_throw("--" + key) == nullptr) continue;
                const std::string flag = "--" + key;
                const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
                    return a == flag || a.rfind(flag + "=", 0) == 0;
                });
                if (!given) args.push_back(flag + "=" + value);
            }
        }
        std::vector<const char*> argv{"bigen"};
        for (const auto& a : args) argv.push_back(a.c_str());
        try {
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::CallForHelp&) {
            out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
            return 0;
        } catch (const CLI::CallForAllHelp&) {
            out << app.help("", CLI::AppFormatMode::All);
            return 0;
        } catch (const CLI::ParseError& e) {
            return fail(err, ExitCode::kUsage, e.what());
        }

        CLI::App* s = app.get_subcommands().front();
        const std::string name = s->get_name();
        if (name == "gen-corpus") gen.run(ctx, s);
        else if (name == "build-bank") bb.run(ctx, s);
        else if (name == "train") tr.run(ctx, s);
        else if (name == "generate") ge.run(ctx, s);
        else if (name == "evaluate") ev.run(ctx, s);
        else if (name == "ablate") ab.run(ctx, s);
        else if (name == "sweep") sw.run(ctx, s);
        else if (name == "heatmap") hm.run(ctx, s);
        return 0;
    } catch (const Error& e) {
        return fail(err, e.code(), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(err, ExitCode::kData, e.what());
    } catch (const std::exception& e) {
        return fail(err, ExitCode::kData, e.what());
    }
}

}  // namespace bigen::cli
