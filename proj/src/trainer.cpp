#include "bigen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bigen/rng.hpp"

namespace bigen {

void TrainConfig::validate() const {
    model.validate();
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (accumulation < 1) throw UsageError("accumulation must be >= 1");
    if (!(lr > 0)) throw UsageError("learning rate must be > 0");
    if (!(weight_decay > 0)) throw UsageError("weight decay must be > 0");
    if (patience < 1) throw UsageError("patience must be >= 1");
    if (val_beam < 1) throw UsageError("validation beam must be >= 1");
}

template <class T>
Var<T> nll_loss(Var<T> logits, std::span<const int> targets) {
    return ops::cross_entropy(logits, targets, Vocab::kPad);
}

template Var<float> nll_loss<float>(Var<float>, std::span<const int>);
template Var<double> nll_loss<double>(Var<double>, std::span<const int>);

namespace {

const KnowledgeBank* bank_for(const ModelConfig& mc, const KnowledgeBank* bank) {
    if (mc.encoder.kr && bank == nullptr) throw DataError("kr is on but no knowledge bank was provided");
    return mc.encoder.kr ? bank : nullptr;
}

std::vector<std::string> references(const std::vector<const Case*>& cases) {
    std::vector<std::string> out;
    for (const Case* c : cases) out.push_back(c->report);
    return out;
}

}  // namespace

void write_epoch_jsonl(std::ostream& out, const EpochRecord& r) {
    out << nlohmann::json{{"epoch", r.epoch},
                          {"train_loss", r.train_loss},
                          {"val_bleu_4", r.val_bleu4},
                          {"improved", r.improved},
                          {"steps", r.steps}}
               .dump()
        << '\n';
}

TrainResult train(BiGenModel<float>& model, const TrainConfig& config, const TrainData& data,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (data.vocab == nullptr) throw DataError("train: no vocabulary");
    if (data.train.empty()) throw DataError("train: training split is empty");
    if (data.val.empty()) throw DataError("train: validation split is empty");
    const KnowledgeBank* bank = bank_for(model.config(), data.bank);

    std::vector<std::vector<int>> targets;
    for (const Case* c : data.train) targets.push_back(data.vocab->encode(c->report));

    Adam<float> adam(model.parameters(), {config.lr, config.weight_decay});
    adam.zero_grad();

    TrainResult result;
    int since_best = 0;
    std::vector<std::size_t> order(data.train.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto rng = make_rng({config.seed, 0x7EA1, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0, token_count = 0;
        int pending = 0;
        for (std::size_t idx : order) {
            const Case& c = *data.train[idx];
            const auto& ids = targets[idx];
            try {
                Graph<float> g;
                auto f = model.forward(g, case_input(c), bank, ids);
                const double loss = f.loss.value()[0];
                if (!std::isfinite(loss)) throw NumericalFault("loss is not finite");
                g.backward(f.loss);
                loss_sum += loss;
                token_count += double(ids.size() - 1);
            } catch (const NumericalFault& e) {
                throw NumericalFault("non-finite training loss on case " + c.case_id + " (epoch " +
                                     std::to_string(epoch) + "): " + e.what());
            }
            if (++pending == config.accumulation) {
                adam.step(1.0f / float(pending));
                adam.zero_grad();
                pending = 0;
            }
        }
        if (pending > 0) {
            adam.step(1.0f / float(pending));
            adam.zero_grad();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / token_count;
        rec.steps = adam.step_count();
        rec.val_bleu4 =
            metrics::bleu(generate_reports(model, data.val, bank, *data.vocab, config.val_beam), references(data.val), 4);
        if (rec.val_bleu4 > result.best_val_bleu4) {
            rec.improved = true;
            result.best_val_bleu4 = rec.val_bleu4;
            result.best_epoch = epoch;
            result.best_state = model.state();
            since_best = 0;
        } else {
            ++since_best;
        }
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (since_best >= config.patience) break;
    }
    model.load_state(result.best_state);
    return result;
}

std::vector<std::string> generate_reports(const BiGenModel<float>& model, const std::vector<const Case*>& cases,
                                          const KnowledgeBank* bank, const Vocab& vocab, int beam) {
    bank = bank_for(model.config(), bank);
    std::vector<std::string> out;
    out.reserve(cases.size());
    for (const Case* c : cases) out.push_back(vocab.decode(model.generate(case_input(*c), bank, beam).tokens));
    return out;
}

double teacher_forced_accuracy(const BiGenModel<float>& model, const std::vector<const Case*>& cases,
                               const KnowledgeBank* bank, const Vocab& vocab) {
    bank = bank_for(model.config(), bank);
    std::size_t correct = 0, total = 0;
    for (const Case* c : cases) {
        const auto ids = vocab.encode(c->report);
        Graph<float> g(false);
        auto f = model.forward(g, case_input(*c), bank, ids);
        const auto& L = f.logits.value();
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            const auto row = L.row(i);
            const auto best = std::max_element(row.begin(), row.end()) - row.begin();
            correct += best == ids[i + 1];
            ++total;
        }
    }
    return total == 0 ? 0.0 : double(correct) / double(total);
}

metrics::MetricReport evaluate_model(const BiGenModel<float>& model, const std::vector<const Case*>& cases,
                                     const KnowledgeBank* bank, const Vocab& vocab, int beam,
                                     const std::vector<std::string>& dictionary) {
    return metrics::evaluate(generate_reports(model, cases, bank, vocab, beam), references(cases), dictionary);
}

std::array<double, 7> table_metrics(const metrics::MetricReport& r) {
    return {r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.meteor, r.rouge_l, r.fact_ent};
}

namespace {

metrics::MetricReport train_and_test(const TrainConfig& tc, const ExperimentData& data, int test_beam) {
    if (!data.corpus || !data.splits || !data.vocab) throw DataError("experiment: corpus, splits and vocab required");
    BiGenModel<float> model(tc.model);
    TrainData td{data.vocab, data.bank, select_cases(*data.corpus, data.splits->train),
                 select_cases(*data.corpus, data.splits->val)};
    train(model, tc, td);
    return evaluate_model(model, select_cases(*data.corpus, data.splits->test), data.bank, *data.vocab, test_beam,
                          data.corpus->atlas.entity_dictionary());
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationConfig& config, const ExperimentData& data,
                                      const ProgressCallback& progress) {
    if (config.seeds.empty()) throw UsageError("ablation needs at least one seed");
    if (config.rows.empty()) throw UsageError("ablation needs at least one row");
    // Check every flag combination before spending time on training.
    for (int row : config.rows) EncoderConfig::ablation_row(row).validate(config.base.model.dim);

    std::vector<AblationRow> out;
    for (int row : config.rows) {
        AblationRow r;
        r.row = row;
        r.flags = EncoderConfig::ablation_row(row);
        r.flags.layers = config.base.model.encoder.layers;
        r.flags.heads = config.base.model.encoder.heads;
        r.flags.validate(config.base.model.dim);
        for (auto seed : config.seeds) {
            TrainConfig tc = config.base;
            tc.model.encoder = r.flags;
            tc.model.seed = seed;
            tc.seed = seed;
            r.per_seed.push_back(train_and_test(tc, data, config.test_beam));
            if (progress) {
                progress("row " + std::to_string(row) + " seed " + std::to_string(seed) +
                         " bleu_4=" + std::to_string(r.per_seed.back().bleu[3]));
            }
        }
        for (const auto& rep : r.per_seed) {
            const auto m = table_metrics(rep);
            for (std::size_t i = 0; i < m.size(); ++i) r.mean[i] += m[i] / double(r.per_seed.size());
        }
        out.push_back(std::move(r));
    }
    const auto base = std::find_if(out.begin(), out.end(), [](const AblationRow& r) { return r.row == 1; });
    if (base != out.end()) {
        for (auto& r : out) {
            double sum = 0;
            for (std::size_t i = 0; i < r.mean.size(); ++i)
                sum += base->mean[i] > 0 ? (r.mean[i] - base->mean[i]) / base->mean[i] : 0.0;
            r.avg_delta = sum / double(r.mean.size());
        }
    }
    return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream o;
    o << "row  WS  WSL VTCA KR  TTCA  BLEU-1 BLEU-2 BLEU-3 BLEU-4 METEOR_s ROUGE-L FACT_s  AVG_DELTA\n";
    char buf[256];
    for (const auto& r : rows) {
        auto f = [](bool b) { return b ? "x" : "-"; };
        std::snprintf(buf, sizeof buf, "%-4d %-3s %-3s %-4s %-3s %-5s", r.row, f(r.flags.ws), f(r.flags.wsl),
                      f(r.flags.vtca), f(r.flags.kr), f(r.flags.ttca));
        o << buf;
        for (double v : r.mean) {
            std::snprintf(buf, sizeof buf, " %6.4f", v);
            o << buf;
        }
        if (r.row == 1) {
            o << "   -\n";
        } else {
            std::snprintf(buf, sizeof buf, "   %+.2f%%\n", 100.0 * r.avg_delta);
            o << buf;
        }
    }
    return o.str();
}

std::vector<SweepPoint> run_sweep(const TrainConfig& base, const std::string& param, const std::vector<double>& values,
                                  const ExperimentData& data, int test_beam, const ProgressCallback& progress) {
    if (param != "k" && param != "v" && param != "m") {
        throw UsageError("sweep parameter must be one of k, v, m; got '" + param + "'");
    }
    if (values.empty()) throw UsageError("sweep needs at least one value");
    if (!base.model.encoder.kr) throw UsageError("sweeping retrieval parameters requires kr on");
    if (data.bank == nullptr) throw DataError("sweep: knowledge bank required");
    for (double x : values) {
        if (param == "k" && !(x > 0 && x <= 1)) throw UsageError("sweep: k must be in (0, 1], got " + std::to_string(x));
        if (param != "k" && (x < 1 || x != std::floor(x))) {
            throw UsageError("sweep: " + param + " must be a positive integer, got " + std::to_string(x));
        }
        if (param == "v" && x > double(data.bank->size())) {
            throw UsageError("sweep: v = " + std::to_string(x) + " exceeds bank size T = " +
                             std::to_string(data.bank->size()));
        }
    }
    std::vector<SweepPoint> out;
    for (double x : values) {
        TrainConfig tc = base;
        if (param == "k") tc.model.retrieval.k = x;
        if (param == "v") tc.model.retrieval.v = static_cast<int>(x);
        if (param == "m") tc.model.retrieval.m = static_cast<int>(x);
        out.push_back({x, train_and_test(tc, data, test_beam)});
        if (progress) progress(param + "=" + std::to_string(x) + " bleu_4=" + std::to_string(out.back().report.bleu[3]));
    }
    return out;
}

}  // namespace bigen
